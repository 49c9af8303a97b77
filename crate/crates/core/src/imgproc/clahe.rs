//! Contrast limited adaptive histogram equalization.

use crate::image::GrayImage;

use super::{require_size, ImgprocError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    /// Tile grid `(columns, rows)`.
    pub tiles: (usize, usize),
    /// Clip limit in multiples of the uniform bin height.
    pub clip: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles: (8, 8),
            clip: 2.0,
        }
    }
}

fn tile_bounds(len: usize, tiles: usize, i: usize) -> (usize, usize) {
    (i * len / tiles, (i + 1) * len / tiles)
}

fn clipped_lut(hist: &mut [u32; 256], n: usize, clip: f64) -> [u8; 256] {
    let limit = ((clip * n as f64 / 256.0).floor() as u32).max(1);
    let mut excess = 0u32;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let batch = excess / 256;
    let mut residual = excess % 256;
    for h in hist.iter_mut() {
        *h += batch;
    }
    if residual > 0 {
        let step = (256 / residual as usize).max(1);
        let mut i = 0;
        while i < 256 && residual > 0 {
            hist[i] += 1;
            residual -= 1;
            i += step;
        }
    }
    let mut lut = [0u8; 256];
    let mut cdf = 0u64;
    for (v, &h) in hist.iter().enumerate() {
        cdf += h as u64;
        lut[v] = ((255 * cdf as u128 * 2 + n as u128) / (2 * n as u128)).min(255) as u8;
    }
    lut
}

/// Per-tile lookup tables in row-major tile order.
pub fn clahe_luts(img: &GrayImage, params: ClaheParams) -> Result<Vec<[u8; 256]>, ImgprocError> {
    let (w, h) = img.dims();
    let (tx, ty) = params.tiles;
    if tx == 0 || ty == 0 {
        return Err(ImgprocError::InvalidParameter("tile grid must be non-empty"));
    }
    if !(params.clip >= 1.0) {
        return Err(ImgprocError::InvalidParameter("clip limit must be at least 1"));
    }
    require_size(w, h, tx, ty)?;
    let mut luts = Vec::with_capacity(tx * ty);
    for j in 0..ty {
        let (y0, y1) = tile_bounds(h, ty, j);
        for i in 0..tx {
            let (x0, x1) = tile_bounds(w, tx, i);
            let mut hist = [0u32; 256];
            for y in y0..y1 {
                for &v in &img.row(y)[x0..x1] {
                    hist[v as usize] += 1;
                }
            }
            luts.push(clipped_lut(&mut hist, (x1 - x0) * (y1 - y0), params.clip));
        }
    }
    Ok(luts)
}

/// Tile index pair and blend weight for a coordinate, interpolating between
/// tile centres and clamping outside the outermost centres.
fn blend(coord: usize, len: usize, tiles: usize) -> (usize, usize, f64) {
    let f = (coord as f64 + 0.5) * tiles as f64 / len as f64 - 0.5;
    if f <= 0.0 {
        return (0, 0, 0.0);
    }
    let last = tiles - 1;
    if f >= last as f64 {
        return (last, last, 0.0);
    }
    let lo = f.floor() as usize;
    (lo, lo + 1, f - lo as f64)
}

/// CLAHE with bilinear blending of the four surrounding tile mappings.
pub fn clahe(img: &GrayImage, params: ClaheParams) -> Result<GrayImage, ImgprocError> {
    let luts = clahe_luts(img, params)?;
    let (w, h) = img.dims();
    let (tx, ty) = params.tiles;
    let cols: Vec<_> = (0..w).map(|x| blend(x, w, tx)).collect();
    let rows: Vec<_> = (0..h).map(|y| blend(y, h, ty)).collect();
    Ok(GrayImage::from_fn(w, h, |x, y| {
        let v = img.get(x, y) as usize;
        let (i0, i1, a) = cols[x];
        let (j0, j1, b) = rows[y];
        let l = |i: usize, j: usize| luts[j * tx + i][v] as f64;
        let top = l(i0, j0) * (1.0 - a) + l(i1, j0) * a;
        let bottom = l(i0, j1) * (1.0 - a) + l(i1, j1) * a;
        let out = top * (1.0 - b) + bottom * b;
        (out + 0.5).floor().clamp(0.0, 255.0) as u8
    }))
}
