//! Log compression, 3x3 median filtering, range clamping and the chained
//! per-frame preprocessing.

use crate::image::{FloatImage, GrayImage, Image};

use super::clahe::{clahe, ClaheParams};
use super::{require_size, ImgprocError};

/// `log(1 + alpha * x / xmax) / log(1 + alpha)`, with `xmax` the image
/// maximum (1 for an all-zero image).
pub fn log_compress(img: &FloatImage, alpha: f64) -> Result<FloatImage, ImgprocError> {
    if !(alpha > 0.0) {
        return Err(ImgprocError::InvalidParameter("alpha must be positive"));
    }
    let xmax = img.as_slice().iter().fold(0.0f32, |m, &v| m.max(v));
    let xmax = if xmax > 0.0 { xmax as f64 } else { 1.0 };
    let denom = alpha.ln_1p();
    Ok(img.map(|v| {
        let x = (v.max(0.0) as f64 / xmax).min(1.0);
        ((alpha * x).ln_1p() / denom) as f32
    }))
}

/// 3x3 median with edge replication.
pub fn median3<T: Copy + PartialOrd>(img: &Image<T>) -> Result<Image<T>, ImgprocError> {
    let (w, h) = img.dims();
    require_size(w, h, 3, 3)?;
    let mut window = [img.get(0, 0); 9];
    Ok(Image::from_fn(w, h, |x, y| {
        let mut k = 0;
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                window[k] = img.get_clamped(x as isize + dx, y as isize + dy);
                k += 1;
            }
        }
        // Partial insertion sort up to the median.
        for i in 0..=4 {
            let mut m = i;
            for j in i + 1..9 {
                if window[j] < window[m] {
                    m = j;
                }
            }
            window.swap(i, m);
        }
        window[4]
    }))
}

/// Clips to `[lo, hi]` and rescales that interval onto `[0, 1]`.
pub fn clamp_range(img: &FloatImage, lo: f64, hi: f64) -> Result<FloatImage, ImgprocError> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(ImgprocError::BadRange { lo, hi });
    }
    let span = hi - lo;
    Ok(img.map(|v| ((v as f64).clamp(lo, hi) - lo) as f32 / span as f32))
}

/// Fine histogram over `[0, 1]` for percentile estimates pooled over many
/// frames.
#[derive(Debug, Clone)]
pub struct PercentileHistogram {
    bins: Vec<u64>,
    total: u64,
}

impl Default for PercentileHistogram {
    fn default() -> Self {
        Self::new()
    }
}

impl PercentileHistogram {
    pub const BINS: usize = 65536;

    pub fn new() -> Self {
        Self {
            bins: vec![0; Self::BINS],
            total: 0,
        }
    }

    pub fn add(&mut self, img: &FloatImage) {
        let top = (Self::BINS - 1) as f32;
        for &v in img.as_slice() {
            let b = (v.clamp(0.0, 1.0) * top + 0.5).floor() as usize;
            self.bins[b] += 1;
        }
        self.total += img.len() as u64;
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Smallest bin value whose cumulative count reaches `q * total`.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        if self.total == 0 {
            return None;
        }
        let target = ((q.clamp(0.0, 1.0) * self.total as f64).ceil() as u64).max(1);
        let mut cum = 0;
        for (i, &c) in self.bins.iter().enumerate() {
            cum += c;
            if cum >= target {
                return Some(i as f64 / (Self::BINS - 1) as f64);
            }
        }
        Some(1.0)
    }
}

/// 1st/99th percentile pair over all given images, or `(0, 1)` when the
/// data cannot separate them.
pub fn pooled_percentiles<'a>(images: impl IntoIterator<Item = &'a FloatImage>) -> (f64, f64) {
    let mut hist = PercentileHistogram::new();
    for img in images {
        hist.add(img);
    }
    match (hist.quantile(0.01), hist.quantile(0.99)) {
        (Some(lo), Some(hi)) if lo < hi => (lo, hi),
        _ => (0.0, 1.0),
    }
}

/// Parameters of the enhancement chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessParams {
    pub log_alpha: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub clahe: ClaheParams,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            log_alpha: 255.0,
            clamp_lo: 0.0,
            clamp_hi: 1.0,
            clahe: ClaheParams::default(),
        }
    }
}

/// Log compression and median filtering; the stage before clamping.
pub fn compress_and_denoise(raw: &GrayImage, alpha: f64) -> Result<FloatImage, ImgprocError> {
    median3(&log_compress(&raw.to_unit_float(), alpha)?)
}

/// Full chain. Returns the clamped 8-bit image (used for segmentation) and
/// the CLAHE output.
pub fn preprocess(
    raw: &GrayImage,
    params: &PreprocessParams,
) -> Result<(GrayImage, GrayImage), ImgprocError> {
    let filtered = compress_and_denoise(raw, params.log_alpha)?;
    let clamped = clamp_range(&filtered, params.clamp_lo, params.clamp_hi)?.to_gray();
    let enhanced = clahe(&clamped, params.clahe)?;
    Ok((clamped, enhanced))
}
