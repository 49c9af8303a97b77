//! Regular 8-bit voxel grid, orthogonal slicing and projections.

use serde::{Deserialize, Serialize};

use crate::image::GrayImage;

use super::ReconError;

/// Voxel grid with `x` lateral (frame columns), `y` axial (frame rows) and
/// `z` along the scan. Storage is `x` fastest, `z` slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    dims: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
    /// Position of voxel `(0, 0, 0)` in mm.
    pub origin: [f64; 3],
    voxels: Vec<u8>,
}

/// Orthogonal slice orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// Fixed `z`: the original frame orientation.
    Transverse,
    /// Fixed `y` (depth): columns along `x`, rows along `z`.
    Coronal,
    /// Fixed `x`: columns along `z`, rows along `y`.
    Sagittal,
}

impl std::str::FromStr for Plane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transverse" => Ok(Plane::Transverse),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            other => Err(format!("unknown plane '{other}' (transverse, coronal, sagittal)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// 2D slice with its pixel pitches in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub image: GrayImage,
    pub pitch_x: f64,
    pub pitch_y: f64,
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, ReconError> {
        Self::from_voxels(dims, spacing, origin, vec![0; dims[0] * dims[1] * dims[2]])
    }

    pub fn from_voxels(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        voxels: Vec<u8>,
    ) -> Result<Self, ReconError> {
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(ReconError::InvalidGrid("spacing must be positive"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(ReconError::InvalidGrid("dimensions must be non-zero"));
        }
        if voxels.len() != dims[0] * dims[1] * dims[2] {
            return Err(ReconError::InvalidGrid("voxel count does not match dimensions"));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            voxels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn nx(&self) -> usize {
        self.dims[0]
    }

    pub fn ny(&self) -> usize {
        self.dims[1]
    }

    pub fn nz(&self) -> usize {
        self.dims[2]
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [u8] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<u8> {
        self.voxels
    }

    #[inline]
    fn offset(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.voxels[self.offset(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: u8) {
        let o = self.offset(x, y, z);
        self.voxels[o] = v;
    }

    /// Centre of voxel `(x, y, z)` in mm.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    /// Same grid with the plane order reversed.
    pub fn flip_z(&self) -> Self {
        let plane = self.dims[0] * self.dims[1];
        let mut voxels = Vec::with_capacity(self.voxels.len());
        for chunk in self.voxels.chunks(plane).rev() {
            voxels.extend_from_slice(chunk);
        }
        Self {
            voxels,
            ..self.clone()
        }
    }

    /// Number of voxels at or above `threshold`.
    pub fn count_at_least(&self, threshold: u8) -> usize {
        self.voxels.iter().filter(|&&v| v >= threshold).count()
    }

    /// Orthogonal slice copy.
    pub fn extract_mpr(&self, plane: Plane, index: usize) -> Result<Slice, ReconError> {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing;
        let extent = self.plane_count(plane);
        if index >= extent {
            return Err(ReconError::IndexOutOfRange { index, extent });
        }
        Ok(match plane {
            Plane::Transverse => Slice {
                image: GrayImage::from_fn(nx, ny, |x, y| self.get(x, y, index)),
                pitch_x: sx,
                pitch_y: sy,
            },
            Plane::Coronal => Slice {
                image: GrayImage::from_fn(nx, nz, |x, z| self.get(x, index, z)),
                pitch_x: sx,
                pitch_y: sz,
            },
            Plane::Sagittal => Slice {
                image: GrayImage::from_fn(nz, ny, |z, y| self.get(index, y, z)),
                pitch_x: sz,
                pitch_y: sy,
            },
        })
    }

    /// Number of slices available in the given orientation.
    pub fn plane_count(&self, plane: Plane) -> usize {
        match plane {
            Plane::Transverse => self.dims[2],
            Plane::Coronal => self.dims[1],
            Plane::Sagittal => self.dims[0],
        }
    }

    /// Maximum intensity projection along `axis`. The image axes follow
    /// [`Plane`] for the matching orientation.
    pub fn mip(&self, axis: Axis) -> GrayImage {
        let [nx, ny, nz] = self.dims;
        match axis {
            Axis::Z => GrayImage::from_fn(nx, ny, |x, y| (0..nz).map(|z| self.get(x, y, z)).max().unwrap_or(0)),
            Axis::Y => GrayImage::from_fn(nx, nz, |x, z| (0..ny).map(|y| self.get(x, y, z)).max().unwrap_or(0)),
            Axis::X => GrayImage::from_fn(nz, ny, |z, y| (0..nx).map(|x| self.get(x, y, z)).max().unwrap_or(0)),
        }
    }
}

/// Dice overlap of `a >= ta` and `b >= tb`; 1 when both are empty.
pub fn dice(a: &VolumeGrid, ta: u8, b: &VolumeGrid, tb: u8) -> Result<f64, ReconError> {
    if a.dims != b.dims {
        return Err(ReconError::GridMismatch {
            a: a.dims,
            b: b.dims,
        });
    }
    let mut both = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&va, &vb) in a.voxels.iter().zip(&b.voxels) {
        let ia = va >= ta;
        let ib = vb >= tb;
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}
