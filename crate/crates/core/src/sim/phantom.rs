//! Analytic phantoms built from cylinders, ellipsoids and boxes.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::recon::{ReconError, VolumeGrid};

use super::SimError;

/// Shape in its local frame, centred on the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Axis along local `z`.
    Cylinder { radius: f64, length: f64 },
    Ellipsoid { radii: [f64; 3] },
    Box { size: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    /// World position of the local origin, mm.
    pub center: Vector3<f64>,
    /// Local-to-world rotation.
    pub rotation: Matrix3<f64>,
    pub echogenicity: f64,
}

impl Primitive {
    pub fn new(shape: Shape, center: Vector3<f64>, echogenicity: f64) -> Self {
        Self {
            shape,
            center,
            rotation: Matrix3::identity(),
            echogenicity,
        }
    }

    pub fn with_rotation(mut self, rotation: Matrix3<f64>) -> Self {
        self.rotation = rotation;
        self
    }

    /// Closed membership test.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let l = self.rotation.transpose() * (p - self.center);
        match self.shape {
            Shape::Cylinder { radius, length } => l.x * l.x + l.y * l.y <= radius * radius && l.z.abs() <= length / 2.0,
            Shape::Ellipsoid { radii } => (l.x / radii[0]).powi(2) + (l.y / radii[1]).powi(2) + (l.z / radii[2]).powi(2) <= 1.0,
            Shape::Box { size } => l.x.abs() <= size[0] / 2.0 && l.y.abs() <= size[1] / 2.0 && l.z.abs() <= size[2] / 2.0,
        }
    }

    /// Enclosed volume, mm³.
    pub fn volume(&self) -> f64 {
        match self.shape {
            Shape::Cylinder { radius, length } => std::f64::consts::PI * radius * radius * length,
            Shape::Ellipsoid { radii } => 4.0 / 3.0 * std::f64::consts::PI * radii[0] * radii[1] * radii[2],
            Shape::Box { size } => size[0] * size[1] * size[2],
        }
    }

    fn sizes(&self) -> Vec<f64> {
        match self.shape {
            Shape::Cylinder { radius, length } => vec![radius, length],
            Shape::Ellipsoid { radii } => radii.to_vec(),
            Shape::Box { size } => size.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub primitives: Vec<Primitive>,
    pub background: f64,
}

impl Phantom {
    pub fn empty(background: f64) -> Self {
        Self {
            primitives: Vec::new(),
            background,
        }
    }

    /// Cylinder of radius 6 mm and length 60 mm lying along the scan
    /// direction, centred 19 mm deep and half way along a 91 mm scan.
    pub fn default_cylinder() -> Self {
        Self {
            primitives: vec![Primitive::new(
                Shape::Cylinder {
                    radius: 6.0,
                    length: 60.0,
                },
                Vector3::new(0.0, 19.0, 45.5),
                0.9,
            )],
            background: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.background) {
            return Err(SimError::Invalid("background echogenicity must lie in [0, 1]".into()));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if !p.sizes().iter().all(|&s| s > 0.0 && s.is_finite()) {
                return Err(SimError::Invalid(format!("primitive {i}: sizes must be positive")));
            }
            if !(0.0..=1.0).contains(&p.echogenicity) {
                return Err(SimError::Invalid(format!("primitive {i}: echogenicity must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn inside(&self, p: &Vector3<f64>) -> bool {
        self.primitives.iter().any(|q| q.contains(p))
    }

    /// Highest echogenicity of the primitives containing `p`, or the
    /// background.
    pub fn echogenicity(&self, p: &Vector3<f64>) -> f64 {
        self.primitives
            .iter()
            .filter(|q| q.contains(p))
            .map(|q| q.echogenicity)
            .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))))
            .unwrap_or(self.background)
    }
}

/// Binary volume on the given grid (world coordinates): 255 where the voxel
/// centre lies inside any primitive.
pub fn ground_truth_volume(
    ph: &Phantom,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
) -> Result<VolumeGrid, ReconError> {
    super::ground_truth_volume_mapped(ph, dims, spacing, origin, |z| z)
}
