//! Linear interpolation of an ordered frame stack onto uniformly spaced
//! planes.
//!
//! Scan coordinates are quantized to integer nanometres and all plane and
//! weight arithmetic is done in integers, so the output does not depend on
//! evaluation order, worker count or the direction the stack is given in.

use crate::image::GrayImage;
use crate::imgproc::PixelPitch;

use super::{ReconError, VolumeGrid};

/// Quantization of scan coordinates.
pub const NM_PER_MM: f64 = 1e6;

pub fn to_nm(mm: f64) -> i64 {
    (mm * NM_PER_MM).round() as i64
}

/// Plane layout for a scan range: `nz` planes `step` apart, centred on the
/// range. Positions are kept doubled so the centre is always an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneLayout {
    pub nz: usize,
    /// Twice the position of plane 0, nm.
    pub first_x2: i64,
    /// Plane pitch, nm.
    pub step: i64,
}

impl PlaneLayout {
    pub fn new(first_nm: i64, last_nm: i64, step_nm: i64) -> Self {
        let span = last_nm - first_nm;
        let nz = (span / step_nm) as usize + 1;
        let first_x2 = first_nm + last_nm - (nz as i64 - 1) * step_nm;
        Self {
            nz,
            first_x2,
            step: step_nm,
        }
    }

    /// Twice the position of plane `k`, nm.
    pub fn plane_x2(&self, k: usize) -> i64 {
        self.first_x2 + 2 * k as i64 * self.step
    }

    pub fn first_mm(&self) -> f64 {
        self.first_x2 as f64 / (2.0 * NM_PER_MM)
    }
}

/// Slice count for a scan length and pitch under the nanometre
/// quantization: `floor(L / sz) + 1`.
pub fn slice_count(length_mm: f64, sz: f64) -> usize {
    (to_nm(length_mm) / to_nm(sz)) as usize + 1
}

fn validate(frames: &[GrayImage], s: &[f64], sz: f64, workers: usize) -> Result<Vec<i64>, ReconError> {
    if workers == 0 {
        return Err(ReconError::InvalidWorkers);
    }
    if frames.len() != s.len() {
        return Err(ReconError::LengthMismatch {
            frames: frames.len(),
            positions: s.len(),
        });
    }
    if frames.len() < 2 {
        return Err(ReconError::TooFewFrames);
    }
    if !(sz > 0.0) || to_nm(sz) < 1 {
        return Err(ReconError::InvalidGrid("slice pitch must be at least 1 nm"));
    }
    let shape = frames[0].dims();
    for f in frames {
        if f.dims() != shape {
            return Err(ReconError::ShapeMismatch {
                expected: shape,
                found: f.dims(),
            });
        }
    }
    if shape.0 == 0 || shape.1 == 0 {
        return Err(ReconError::InvalidGrid("frames are empty"));
    }
    let mut q = Vec::with_capacity(s.len());
    for (i, &v) in s.iter().enumerate() {
        if !v.is_finite() {
            return Err(ReconError::NotMonotonic { index: i });
        }
        let n = to_nm(v);
        if q.last().is_some_and(|&prev| n <= prev) {
            return Err(ReconError::NotMonotonic { index: i });
        }
        q.push(n);
    }
    Ok(q)
}

fn fill_plane(out: &mut [u8], z_x2: i64, frames: &[GrayImage], s_x2: &[i64]) {
    let n = s_x2.len();
    let i = s_x2.partition_point(|&v| v <= z_x2).clamp(1, n - 1) - 1;
    let a = z_x2 - s_x2[i];
    let b = s_x2[i + 1] - z_x2;
    if a == 0 {
        out.copy_from_slice(frames[i].as_slice());
        return;
    }
    if b == 0 {
        out.copy_from_slice(frames[i + 1].as_slice());
        return;
    }
    let den = a + b;
    for ((o, &f0), &f1) in out
        .iter_mut()
        .zip(frames[i].as_slice())
        .zip(frames[i + 1].as_slice())
    {
        let num = b * f0 as i64 + a * f1 as i64;
        // round half up of num / den
        *o = ((2 * num + den) / (2 * den)) as u8;
    }
}

/// Builds the volume from frames ordered by strictly increasing scan
/// coordinate `s` (mm). Plane `k` blends its two bracketing frames with
/// weights proportional to distance; `workers` threads each fill a
/// contiguous block of planes.
pub fn interpolate_slices(
    frames: &[GrayImage],
    s: &[f64],
    sz: f64,
    pitch: PixelPitch,
    workers: usize,
) -> Result<VolumeGrid, ReconError> {
    let q = validate(frames, s, sz, workers)?;
    if !(pitch.lateral > 0.0 && pitch.axial > 0.0) {
        return Err(ReconError::InvalidGrid("pixel pitch must be positive"));
    }
    let layout = PlaneLayout::new(q[0], q[q.len() - 1], to_nm(sz));
    let s_x2: Vec<i64> = q.iter().map(|v| 2 * v).collect();
    let (w, h) = frames[0].dims();
    let plane_len = w * h;
    let origin = [-((w - 1) as f64) / 2.0 * pitch.lateral, 0.0, layout.first_mm()];
    let mut volume = VolumeGrid::new([w, h, layout.nz], [pitch.lateral, pitch.axial, sz], origin)?;
    let planes_per_worker = layout.nz.div_ceil(workers);
    let voxels = volume.voxels_mut();
    if workers == 1 {
        for (k, plane) in voxels.chunks_mut(plane_len).enumerate() {
            fill_plane(plane, layout.plane_x2(k), frames, &s_x2);
        }
    } else {
        std::thread::scope(|scope| {
            for (c, block) in voxels.chunks_mut(plane_len * planes_per_worker).enumerate() {
                let s_x2 = &s_x2;
                scope.spawn(move || {
                    for (j, plane) in block.chunks_mut(plane_len).enumerate() {
                        let k = c * planes_per_worker + j;
                        fill_plane(plane, layout.plane_x2(k), frames, s_x2);
                    }
                });
            }
        });
    }
    Ok(volume)
}
