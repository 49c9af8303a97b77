//! Simulated acquisitions with known ground truth: analytic phantoms,
//! B-mode-like frames, marker camera renders and complete datasets.

pub mod camera;
mod phantom;
mod scan;
mod ultrasound;

use nalgebra::Vector3;

use crate::io::IoError;
use crate::recon::{ReconError, VolumeGrid};

pub use phantom::{ground_truth_volume, Phantom, Primitive, Shape};
pub use scan::{
    scan_aligned_truth, simulate_scan, world_to_camera, ScanSpec, SimulatedScan, Tracking, TrajectorySpec, Truth,
};
pub use ultrasound::{pixel_local, rayleigh_unit_mean, simulate_frame, INTERFACE_PX, SPECKLE_SIGMA};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// [`ground_truth_volume`] with plane `k` placed at world `z = z_map(origin_z
/// + k * sz)`.
pub fn ground_truth_volume_mapped(
    ph: &Phantom,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    z_map: impl Fn(f64) -> f64,
) -> Result<VolumeGrid, ReconError> {
    let mut v = VolumeGrid::new(dims, spacing, origin)?;
    let [nx, ny, _] = dims;
    for (z, chunk) in v.voxels_mut().chunks_mut(nx * ny).enumerate() {
        let wz = z_map(origin[2] + z as f64 * spacing[2]);
        for y in 0..ny {
            for x in 0..nx {
                let p = Vector3::new(origin[0] + x as f64 * spacing[0], origin[1] + y as f64 * spacing[1], wz);
                if ph.inside(&p) {
                    chunk[y * nx + x] = 255;
                }
            }
        }
    }
    Ok(v)
}
