//! Single-scale structural similarity with an 11x11 Gaussian window.

use crate::image::GrayImage;

use super::{require_same_shape, require_size, ImgprocError};

const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_kernel() -> [f64; WIN] {
    let mut k = [0.0; WIN];
    let c = (WIN / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable filtering over positions where the window fits entirely.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64; WIN]) -> Vec<f64> {
    let ow = w - WIN + 1;
    let oh = h - WIN + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = (0..WIN).map(|i| k[i] * src[x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WIN).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained windows.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, ImgprocError> {
    require_same_shape(a, b)?;
    let (w, h) = a.dims();
    require_size(w, h, WIN, WIN)?;
    let k = gaussian_kernel();
    let fa: Vec<f64> = a.as_slice().iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.as_slice().iter().map(|&v| v as f64).collect();
    let aa: Vec<f64> = fa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = fb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&fa, w, h, &k);
    let mu_b = filter_valid(&fb, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
            / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / mu_a.len() as f64)
}
