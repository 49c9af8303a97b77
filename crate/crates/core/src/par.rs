//! Order-preserving data parallelism over contiguous blocks.

/// Maps `f` over `items` on up to `workers` threads, each taking a
/// contiguous block. Output order matches input order.
pub fn par_map<T: Sync, U: Send, E: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<U, E> + Sync,
) -> Result<Vec<U>, E> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<Vec<U>, E>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(f).collect::<Result<Vec<U>, E>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<usize> = (0..37).collect();
        let out: Result<Vec<usize>, ()> = par_map(&v, 4, |x| Ok(x * 2));
        assert_eq!(out.unwrap(), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
