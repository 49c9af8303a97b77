//! B-mode-like frame rendering.

use nalgebra::Vector3;
use rand::Rng;

use crate::geometry::Pose;
use crate::image::GrayImage;
use crate::imgproc::{PixelPitch, UsFrame};

use super::Phantom;

/// Rows on each side of an axial membership change that render as bright
/// interface.
pub const INTERFACE_PX: usize = 2;
/// Echogenicity of the interface band.
pub const INTERFACE_ECHO: f64 = 1.0;
/// Scale of the Rayleigh speckle before normalization to unit mean.
pub const SPECKLE_SIGMA: f64 = 0.25;

/// Frame-local position of pixel `(c, r)`: lateral centred on the array,
/// axial from the transducer face.
pub fn pixel_local(c: f64, r: f64, width: usize, pitch: PixelPitch) -> Vector3<f64> {
    Vector3::new((c - (width as f64 - 1.0) / 2.0) * pitch.lateral, r * pitch.axial, 0.0)
}

/// Unit-mean Rayleigh variate.
pub fn rayleigh_unit_mean<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let r = SPECKLE_SIGMA * (-2.0 * (1.0 - u).ln()).sqrt();
    r / (SPECKLE_SIGMA * (std::f64::consts::PI / 2.0).sqrt())
}

/// Renders one frame. `pose` maps frame-local millimetres to the phantom
/// frame. Without `speckle` the noiseless echogenicity map is returned.
pub fn simulate_frame<R: Rng + ?Sized>(
    ph: &Phantom,
    pose: &Pose,
    shape: (usize, usize),
    pitch: PixelPitch,
    speckle: Option<&mut R>,
) -> UsFrame {
    let (w, h) = shape;
    let pad = INTERFACE_PX;
    // membership for rows -pad..h+pad so the band is right at the edges
    let rows = h + 2 * pad;
    let mut inside = vec![false; w * rows];
    let mut echo = vec![0.0; w * h];
    for rr in 0..rows {
        let r = rr as f64 - pad as f64;
        for c in 0..w {
            let p = pose.transform(pixel_local(c as f64, r, w, pitch));
            inside[rr * w + c] = ph.inside(&p);
            if (pad..pad + h).contains(&rr) {
                echo[(rr - pad) * w + c] = ph.echogenicity(&p);
            }
        }
    }
    for r in 0..h {
        let rr = r + pad;
        for c in 0..w {
            let here = inside[rr * w + c];
            if !here {
                continue;
            }
            let changed = (1..=pad).any(|d| inside[(rr - d) * w + c] != here || inside[(rr + d) * w + c] != here);
            if changed {
                echo[r * w + c] = INTERFACE_ECHO;
            }
        }
    }
    let pixels = match speckle {
        Some(rng) => GrayImage::from_vec(
            w,
            h,
            echo.iter()
                .map(|&e| (255.0 * (e * rayleigh_unit_mean(rng)).min(1.0)).round() as u8)
                .collect(),
        ),
        None => GrayImage::from_vec(w, h, echo.iter().map(|&e| (255.0 * e.min(1.0)).round() as u8).collect()),
    };
    UsFrame {
        pixels,
        pitch_lateral: pitch.lateral,
        pitch_axial: pitch.axial,
        timestamp: 0.0,
    }
}
