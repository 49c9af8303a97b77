//! Adaptive local-mean binarization and Otsu's global threshold.

use std::ops::{Add, Sub};

use crate::image::{GrayImage, Image};

use super::MarkerError;

/// Window and offset for [`binarize_adaptive`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveParams {
    /// Odd window side in pixels.
    pub window: usize,
    /// Gray levels below the local mean a pixel must sit to be foreground.
    pub offset: u32,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            window: 15,
            offset: 7,
        }
    }
}

/// Marks dark pixels: foreground iff `value < local_mean - offset`.
///
/// The mean is taken over the part of the `window x window` neighbourhood
/// that lies inside the image.
pub fn binarize_adaptive(img: &GrayImage, params: AdaptiveParams) -> Image<bool> {
    let (w, h) = img.dims();
    if w == 0 || h == 0 {
        return Image::new(w, h, false);
    }
    // u32 sums are exact below 2^24 pixels
    if w * h < 1 << 24 {
        binarize_with::<u32>(img, params)
    } else {
        binarize_with::<u64>(img, params)
    }
}

fn binarize_with<T>(img: &GrayImage, params: AdaptiveParams) -> Image<bool>
where
    T: Copy + Default + From<u8> + Into<u64> + Add<Output = T> + Sub<Output = T>,
{
    let (w, h) = img.dims();
    // Summed-area table with a zero row/column in front.
    let stride = w + 1;
    let mut integral = vec![T::default(); stride * (h + 1)];
    let src = img.as_slice();
    for y in 0..h {
        let mut row_sum = T::default();
        let (above, below) = integral.split_at_mut((y + 1) * stride);
        let above = &above[y * stride..];
        for x in 0..w {
            row_sum = row_sum + T::from(src[y * w + x]);
            below[x + 1] = above[x + 1] + row_sum;
        }
    }
    let r = params.window / 2;
    let offset = params.offset as u64;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        let top = &integral[y0 * stride..(y0 + 1) * stride];
        let bottom = &integral[y1 * stride..(y1 + 1) * stride];
        let row = &src[y * w..(y + 1) * w];
        for (x, &v) in row.iter().enumerate() {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let sum: u64 = (bottom[x1] + top[x0] - top[x1] - bottom[x0]).into();
            let count = ((x1 - x0) * (y1 - y0)) as u64;
            // v < sum/count - offset, kept in integers
            out.push((v as u64 + offset) * count < sum);
        }
    }
    Image::from_vec(w, h, out)
}

/// 256-bin histogram.
pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.as_slice() {
        hist[v as usize] += 1;
    }
    hist
}

/// Otsu's level on a precomputed histogram: pixels `<= level` form the dark
/// class. Ties go to the lowest level. Exact for fewer than 2^28 pixels.
pub fn otsu_level_from_histogram(hist: &[u64; 256]) -> Result<u8, MarkerError> {
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if occupied < 2 {
        return Err(MarkerError::DegenerateHistogram);
    }
    let total: u64 = hist.iter().sum();
    let total_sum: u128 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as u128 * c as u128)
        .sum();
    let mut n0: u64 = 0;
    let mut s0: u128 = 0;
    let mut best_level = 0u8;
    // Between-class variance up to the constant factor 1/N^2 is
    // (S0*N - S*n0)^2 / (n0*n1); candidates are compared as exact fractions.
    let mut best: Option<(u128, u128)> = None;
    for (level, &count) in hist.iter().enumerate().take(255) {
        n0 += count;
        s0 += level as u128 * count as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (s0 * total as u128).abs_diff(total_sum * n0 as u128);
        let num = diff * diff;
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => true,
            Some((bn, bd)) => wide_mul(num, bd) > wide_mul(bn, den),
        };
        if better {
            best = Some((num, den));
            best_level = level as u8;
        }
    }
    Ok(best_level)
}

/// Full 256-bit product as (high, low) halves.
fn wide_mul(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a1, a0) = (a >> 64, a & MASK);
    let (b1, b0) = (b >> 64, b & MASK);
    let lo = a0 * b0;
    let mid1 = a1 * b0;
    let mid2 = a0 * b1;
    let hi = a1 * b1;
    let (mid, carry) = mid1.overflowing_add(mid2);
    let (low, c2) = lo.overflowing_add(mid << 64);
    let high = hi + (mid >> 64) + ((carry as u128) << 64) + c2 as u128;
    (high, low)
}

/// Otsu's threshold of an 8-bit image.
pub fn otsu_threshold(img: &GrayImage) -> Result<u8, MarkerError> {
    otsu_level_from_histogram(&histogram(img))
}
