//! Pinhole camera with Brown–Conrady distortion, planar marker pose recovery
//! and tilt-angle extraction.
//!
//! Conventions used throughout the crate:
//!
//! * Camera frame: `x` right, `y` down, `z` along the optical axis, millimetres.
//! * Normalized coordinates are `(x / z, y / z)` before distortion.
//! * "Ideal" pixels are normalized coordinates mapped through the intrinsic
//!   matrix without distortion; image pixels include distortion.
//! * A marker lies in its own `z = 0` plane with corners at
//!   `(-s/2, -s/2)`, `(s/2, -s/2)`, `(s/2, s/2)`, `(-s/2, s/2)`; a marker whose
//!   rotation is the identity is seen fronto-parallel with its top-left corner
//!   at the top-left of the image.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("undistortion did not converge (residual {residual:e} after {iterations} iterations)")]
    NonConvergent { residual: f64, iterations: usize },
    #[error("degenerate quad: {0}")]
    DegenerateQuad(&'static str),
    #[error("homography is singular")]
    SingularHomography,
    #[error("invalid camera model: {0}")]
    InvalidCamera(&'static str),
}

/// Radial (`k1`, `k2`, `k3`) and tangential (`p1`, `p2`) distortion, stored in
/// the usual `(k1, k2, p1, p2, k3)` order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl From<[f64; 5]> for Distortion {
    fn from(d: [f64; 5]) -> Self {
        Self {
            k1: d[0],
            k2: d[1],
            p1: d[2],
            p2: d[3],
            k3: d[4],
        }
    }
}

impl From<Distortion> for [f64; 5] {
    fn from(d: Distortion) -> Self {
        [d.k1, d.k2, d.p1, d.p2, d.k3]
    }
}

impl Distortion {
    pub const NONE: Distortion = Distortion {
        k1: 0.0,
        k2: 0.0,
        p1: 0.0,
        p2: 0.0,
        k3: 0.0,
    };

    /// Coefficients of the Intel RealSense D435 RGB sensor used on the rig.
    pub const REALSENSE_D435: Distortion = Distortion {
        k1: 0.00690,
        k2: 0.8118,
        p1: 0.0,
        p2: 0.0,
        k3: -2.6234,
    };
}

/// Intrinsics plus distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub dist: Distortion,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::realsense_d435()
    }
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, dist: Distortion) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, dist };
        cam.validate()?;
        Ok(cam)
    }

    /// Calibration of the RealSense D435 colour stream (848x480).
    pub fn realsense_d435() -> Self {
        Self {
            fx: 422.451,
            fy: 422.451,
            cx: 427.466,
            cy: 241.239,
            dist: Distortion::REALSENSE_D435,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidCamera("principal point must be finite"));
        }
        Ok(())
    }

    /// Checks that the principal point lies inside an image of the given size.
    pub fn fits_image(&self, width: usize, height: usize) -> bool {
        (0.0..width as f64).contains(&self.cx) && (0.0..height as f64).contains(&self.cy)
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inv(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn normalized_to_ideal(&self, n: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * n.x + self.cx, self.fy * n.y + self.cy)
    }

    pub fn ideal_to_normalized(&self, px: Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    /// Image pixel to undistorted normalized coordinates.
    pub fn pixel_to_normalized(&self, px: Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        undistort_normalized(self.ideal_to_normalized(px), &self.dist)
    }

    /// Image pixel to ideal (distortion-free) pixel.
    pub fn undistort_pixel(&self, px: Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        Ok(self.normalized_to_ideal(self.pixel_to_normalized(px)?))
    }

    /// Ideal pixel to image pixel.
    pub fn distort_pixel(&self, ideal: Vector2<f64>) -> Vector2<f64> {
        self.normalized_to_ideal(distort_normalized(self.ideal_to_normalized(ideal), &self.dist))
    }
}

/// Applies the radial/tangential model to a normalized point.
pub fn distort_normalized(p: Vector2<f64>, d: &Distortion) -> Vector2<f64> {
    let (x, y) = (p.x, p.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
    Vector2::new(
        x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x),
        y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y,
    )
}

fn distortion_jacobian(p: Vector2<f64>, d: &Distortion) -> nalgebra::Matrix2<f64> {
    let (x, y) = (p.x, p.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
    // d(radial)/d(r2)
    let dr = d.k1 + r2 * (2.0 * d.k2 + 3.0 * d.k3 * r2);
    let xy = 2.0 * x * y * dr;
    nalgebra::Matrix2::new(
        radial + 2.0 * x * x * dr + 2.0 * d.p1 * y + 6.0 * d.p2 * x,
        xy + 2.0 * d.p1 * x + 2.0 * d.p2 * y,
        xy + 2.0 * d.p1 * x + 2.0 * d.p2 * y,
        radial + 2.0 * y * y * dr + 6.0 * d.p1 * y + 2.0 * d.p2 * x,
    )
}

pub const UNDISTORT_TOLERANCE: f64 = 1e-9;
pub const UNDISTORT_MAX_ITERATIONS: usize = 50;

/// Inverts [`distort_normalized`] with a damped Newton iteration.
pub fn undistort_normalized(p: Vector2<f64>, d: &Distortion) -> Result<Vector2<f64>, GeometryError> {
    let mut q = p;
    let mut residual = (distort_normalized(q, d) - p).norm();
    let mut iterations = 0;
    while iterations < UNDISTORT_MAX_ITERATIONS && residual > 1e-15 {
        iterations += 1;
        let err = distort_normalized(q, d) - p;
        let step = match distortion_jacobian(q, d).try_inverse() {
            Some(inv) => inv * err,
            None => err,
        };
        // Halve the step until the residual decreases.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = q - step * scale;
            let r = (distort_normalized(candidate, d) - p).norm();
            if r < residual {
                q = candidate;
                residual = r;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if residual > UNDISTORT_TOLERANCE || !q.x.is_finite() || !q.y.is_finite() {
        return Err(GeometryError::NonConvergent {
            residual,
            iterations,
        });
    }
    Ok(q)
}

/// Projects a camera-frame point (mm) to image pixels.
pub fn project(point: &Vector3<f64>, cam: &CameraModel) -> Result<Vector2<f64>, GeometryError> {
    if point.z <= 0.0 {
        return Err(GeometryError::BehindCamera(point.z));
    }
    let n = Vector2::new(point.x / point.z, point.y / point.z);
    let d = distort_normalized(n, &cam.dist);
    Ok(Vector2::new(cam.fx * d.x + cam.cx, cam.fy * d.y + cam.cy))
}

/// Four pixel corners, in the order top-left, top-right, bottom-right,
/// bottom-left of the marker. With `y` pointing down this order has positive
/// signed area, i.e. it is counter-clockwise in the coordinate algebra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub corners: [Vector2<f64>; 4],
}

impl Quad {
    pub fn new(corners: [Vector2<f64>; 4]) -> Self {
        Self { corners }
    }

    pub fn from_xy(c: [(f64, f64); 4]) -> Self {
        Self {
            corners: c.map(|(x, y)| Vector2::new(x, y)),
        }
    }

    /// Shoelace area; positive for the canonical corner order.
    pub fn signed_area(&self) -> f64 {
        let c = &self.corners;
        let mut a = 0.0;
        for i in 0..4 {
            let j = (i + 1) % 4;
            a += c[i].x * c[j].y - c[j].x * c[i].y;
        }
        0.5 * a
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        (0..4)
            .map(|i| (self.corners[(i + 1) % 4] - self.corners[i]).norm())
            .sum()
    }

    /// All turns have the same strictly non-zero orientation. A strictly
    /// convex quadrilateral is also simple.
    pub fn is_strictly_convex(&self) -> bool {
        let c = &self.corners;
        let mut sign = 0.0f64;
        for i in 0..4 {
            let a = c[(i + 1) % 4] - c[i];
            let b = c[(i + 2) % 4] - c[(i + 1) % 4];
            let cross = a.x * b.y - a.y * b.x;
            let scale = a.norm() * b.norm();
            if scale == 0.0 || cross.abs() <= 1e-12 * scale {
                return false;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        // Four equal-sign turns can still wind twice (a bow-tie cannot, but a
        // star-shaped winding can); the angle sum settles it.
        let mut total = 0.0;
        for i in 0..4 {
            let a = c[(i + 1) % 4] - c[i];
            let b = c[(i + 2) % 4] - c[(i + 1) % 4];
            total += (a.x * b.y - a.y * b.x).atan2(a.dot(&b));
        }
        (total.abs() - std::f64::consts::TAU).abs() < 1e-6
    }

    pub fn validate(&self, min_area: f64) -> Result<(), GeometryError> {
        if !self.corners.iter().all(|c| c.x.is_finite() && c.y.is_finite()) {
            return Err(GeometryError::DegenerateQuad("non-finite corner"));
        }
        if !self.is_strictly_convex() {
            return Err(GeometryError::DegenerateQuad("not strictly convex"));
        }
        if self.area() <= min_area {
            return Err(GeometryError::DegenerateQuad("area below minimum"));
        }
        Ok(())
    }

    /// Intersection of the diagonals, which is the image of the marker centre
    /// when the corners are undistorted.
    pub fn diagonal_intersection(&self) -> Option<Vector2<f64>> {
        line_intersection(
            self.corners[0],
            self.corners[2],
            self.corners[1],
            self.corners[3],
        )
    }

    /// Corners rotated so that `corners[k] = old[(k + shift) % 4]`.
    pub fn rotated(&self, shift: usize) -> Self {
        Self {
            corners: std::array::from_fn(|k| self.corners[(k + shift) % 4]),
        }
    }
}

/// Intersection of the infinite lines `a0-a1` and `b0-b1`.
pub fn line_intersection(
    a0: Vector2<f64>,
    a1: Vector2<f64>,
    b0: Vector2<f64>,
    b1: Vector2<f64>,
) -> Option<Vector2<f64>> {
    let da = a1 - a0;
    let db = b1 - b0;
    let denom = da.x * db.y - da.y * db.x;
    if denom.abs() < 1e-12 * da.norm() * db.norm() {
        return None;
    }
    let t = ((b0.x - a0.x) * db.y - (b0.y - a0.y) * db.x) / denom;
    Some(a0 + da * t)
}

/// Marker-plane corner coordinates (mm) in canonical order.
pub fn marker_corners(side: f64) -> [Vector2<f64>; 4] {
    let h = side / 2.0;
    [
        Vector2::new(-h, -h),
        Vector2::new(h, -h),
        Vector2::new(h, h),
        Vector2::new(-h, h),
    ]
}

/// Condition number above which the corner system counts as singular.
pub const HOMOGRAPHY_MAX_CONDITION: f64 = 1e12;

fn hartley(points: &[Vector2<f64>; 4]) -> Matrix3<f64> {
    let centroid = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / 4.0;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / 4.0;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: Vector2<f64>) -> Vector2<f64> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(v.x / v.z, v.y / v.z)
}

/// Maps a point through a homography.
pub fn transform_point(h: &Matrix3<f64>, p: Vector2<f64>) -> Vector2<f64> {
    apply_h(h, p)
}

/// Direct linear transform on four correspondences, `src -> dst`, with
/// Hartley normalization. `H[2][2]` is scaled to 1.
pub fn homography_from_points(
    src: &[Vector2<f64>; 4],
    dst: &[Vector2<f64>; 4],
) -> Result<Matrix3<f64>, GeometryError> {
    let ts = hartley(src);
    let td = hartley(dst);
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let s = apply_h(&ts, src[i]);
        let d = apply_h(&td, dst[i]);
        let r = 2 * i;
        a[(r, 0)] = s.x;
        a[(r, 1)] = s.y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -d.x * s.x;
        a[(r, 7)] = -d.x * s.y;
        b[r] = d.x;
        a[(r + 1, 3)] = s.x;
        a[(r + 1, 4)] = s.y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -d.y * s.x;
        a[(r + 1, 7)] = -d.y * s.y;
        b[r + 1] = d.y;
    }
    let sv = a.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 0.0) || smax / smin > HOMOGRAPHY_MAX_CONDITION {
        return Err(GeometryError::DegenerateQuad("corner system is singular"));
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or(GeometryError::DegenerateQuad("corner system is singular"))?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let td_inv = td
        .try_inverse()
        .ok_or(GeometryError::DegenerateQuad("degenerate normalization"))?;
    let full = td_inv * hn * ts;
    if full[(2, 2)].abs() < 1e-300 {
        return Err(GeometryError::DegenerateQuad("homography at infinity"));
    }
    Ok(full / full[(2, 2)])
}

/// Homography from marker-plane millimetres to the given (undistorted) image
/// corners.
pub fn homography_from_corners(img: &Quad, side: f64) -> Result<Matrix3<f64>, GeometryError> {
    if !(side > 0.0) {
        return Err(GeometryError::DegenerateQuad("side must be positive"));
    }
    if !img.is_strictly_convex() {
        return Err(GeometryError::DegenerateQuad("not strictly convex"));
    }
    homography_from_points(&marker_corners(side), &img.corners)
}

/// Position (mm, camera frame) and marker-to-camera rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        Self { position, rotation }
    }

    pub fn identity_at(position: Vector3<f64>) -> Self {
        Self {
            position,
            rotation: Matrix3::identity(),
        }
    }

    /// `true` when the rotation is orthonormal with determinant +1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() <= tol
            && (r.determinant() - 1.0).abs() <= tol
            && self.position.iter().all(|v| v.is_finite())
    }

    /// Marker-plane point (mm) to camera frame.
    pub fn transform(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.position
    }
}

/// Projects the nearest rotation matrix onto `m` (orthogonal Procrustes).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Decomposes a marker-to-image homography into a pose.
pub fn pose_from_homography(h: &Matrix3<f64>, cam: &CameraModel) -> Result<Pose, GeometryError> {
    if !h.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::SingularHomography);
    }
    let scale = h.abs().max();
    if scale == 0.0 || (h / scale).determinant().abs() < 1e-12 {
        return Err(GeometryError::SingularHomography);
    }
    let m = cam.k_inv() * h;
    let c1 = m.column(0).into_owned();
    let c2 = m.column(1).into_owned();
    let c3 = m.column(2).into_owned();
    let lambda = 0.5 * (c1.norm() + c2.norm());
    if lambda == 0.0 {
        return Err(GeometryError::SingularHomography);
    }
    for sign in [1.0, -1.0] {
        let l = sign * lambda;
        let t = c3 / l;
        if t.z <= 0.0 {
            continue;
        }
        let r1 = c1 / l;
        let r2 = c2 / l;
        let r3 = r1.cross(&r2);
        let approx = Matrix3::from_columns(&[r1, r2, r3]);
        return Ok(Pose::new(t, nearest_rotation(&approx)));
    }
    Err(GeometryError::BehindCamera((c3 / lambda).z))
}

/// Intrinsic X-Y-Z Euler angles, `R = Rx(x) * Ry(y) * Rz(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tilt {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Set when `|cos y| < 1e-9`; `x` is then 0 and `z` carries the rest.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gimbal_lock: bool,
}

impl Tilt {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            gimbal_lock: false,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

fn wrap_half_open(a: f64) -> f64 {
    // atan2 can return -pi; fold it into (-pi, pi].
    if a <= -std::f64::consts::PI {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

pub fn rotation_to_tilt(r: &Matrix3<f64>) -> Tilt {
    let sy = r[(0, 2)].clamp(-1.0, 1.0);
    let cy = (r[(1, 2)] * r[(1, 2)] + r[(2, 2)] * r[(2, 2)]).sqrt();
    if cy < 1e-9 {
        let y = if sy > 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        return Tilt {
            x: 0.0,
            y,
            z: wrap_half_open(r[(1, 0)].atan2(r[(1, 1)])),
            gimbal_lock: true,
        };
    }
    Tilt {
        x: wrap_half_open((-r[(1, 2)]).atan2(r[(2, 2)])),
        y: wrap_half_open(sy.atan2(cy)),
        z: wrap_half_open((-r[(0, 1)]).atan2(r[(0, 0)])),
        gimbal_lock: false,
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Inverse of [`rotation_to_tilt`].
pub fn tilt_to_rotation(t: &Tilt) -> Matrix3<f64> {
    rot_x(t.x) * rot_y(t.y) * rot_z(t.z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_cam() -> CameraModel {
        CameraModel::realsense_d435()
    }

    #[test]
    fn distortion_fixes_origin() {
        let d = Distortion::from([0.3, -1.0, 0.02, -0.01, 4.0]);
        assert_eq!(distort_normalized(Vector2::zeros(), &d), Vector2::zeros());
    }

    #[test]
    fn distortion_k1_only() {
        let d = Distortion::from([1.0, 0.0, 0.0, 0.0, 0.0]);
        let out = distort_normalized(Vector2::new(0.1, 0.0), &d);
        assert!((out.x - 0.101).abs() < 1e-15);
        assert_eq!(out.y, 0.0);
    }

    #[test]
    fn distortion_matches_scalar_evaluation() {
        // Plain scalar evaluation of the polynomial, written out term by term.
        let (x, y) = (0.1f64, 0.05f64);
        let (k1, k2, p1, p2, k3) = (0.00690f64, 0.8118f64, 0.0f64, 0.0f64, -2.6234f64);
        let r2 = x * x + y * y;
        let r4 = r2 * r2;
        let r6 = r4 * r2;
        let f = 1.0 + k1 * r2 + k2 * r4 + k3 * r6;
        let ex = x * f + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
        let ey = y * f + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
        let got = distort_normalized(Vector2::new(x, y), &Distortion::REALSENSE_D435);
        assert!((got.x - ex).abs() < 1e-15 && (got.y - ey).abs() < 1e-15);
        // frozen from an independent double-precision evaluation
        assert!((got.x - 0.10002079699218752).abs() < 1e-15);
        assert!((got.y - 0.05001039849609376).abs() < 1e-15);
    }

    #[test]
    fn tangential_terms_present() {
        let d = Distortion::from([0.0, 0.0, 0.01, 0.02, 0.0]);
        let (x, y) = (0.2, -0.1);
        let r2: f64 = x * x + y * y;
        let out = distort_normalized(Vector2::new(x, y), &d);
        assert!((out.x - (x + 2.0 * 0.01 * x * y + 0.02 * (r2 + 2.0 * x * x))).abs() < 1e-15);
        assert!((out.y - (y + 0.01 * (r2 + 2.0 * y * y) + 2.0 * 0.02 * x * y)).abs() < 1e-15);
    }

    #[test]
    fn undistort_examples() {
        let d = Distortion::REALSENSE_D435;
        assert_eq!(undistort_normalized(Vector2::zeros(), &d).unwrap(), Vector2::zeros());
        let q = Vector2::new(0.1, 0.05);
        let back = undistort_normalized(distort_normalized(q, &d), &d).unwrap();
        assert!((back - q).norm() < 1e-9);
        let k1 = Distortion::from([1.0, 0.0, 0.0, 0.0, 0.0]);
        let inv = undistort_normalized(Vector2::new(0.101, 0.0), &k1).unwrap();
        assert!((inv - Vector2::new(0.1, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn undistort_reports_non_convergence() {
        // The RealSense polynomial folds over past r ~ 0.9, so points far out
        // on the distorted side have no preimage.
        let d = Distortion::REALSENSE_D435;
        let err = undistort_normalized(Vector2::new(5.0, 5.0), &d).unwrap_err();
        assert!(matches!(err, GeometryError::NonConvergent { .. }));
    }

    #[test]
    fn projection_examples() {
        let px = project(&Vector3::new(0.0, 0.0, 1000.0), &reference_cam()).unwrap();
        assert!((px - Vector2::new(427.466, 241.239)).norm() < 1e-12);

        let plain = CameraModel::new(1000.0, 1000.0, 0.0, 0.0, Distortion::NONE).unwrap();
        let px = project(&Vector3::new(100.0, 0.0, 1000.0), &plain).unwrap();
        assert!((px - Vector2::new(100.0, 0.0)).norm() < 1e-12);

        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, 0.0), &plain),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn projection_matches_hand_composition() {
        // x' = 50/800 = 0.0625, y' = -30/800 = -0.0375
        // r2 = 0.00390625 + 0.00140625 = 0.0053125
        let (xn, yn) = (0.0625f64, -0.0375f64);
        let r2 = 0.0053125f64;
        let f = 1.0 + 0.00690 * r2 + 0.8118 * r2 * r2 + -2.6234 * r2 * r2 * r2;
        let u = 422.451 * xn * f + 427.466;
        let v = 422.451 * yn * f + 241.239;
        let px = project(&Vector3::new(50.0, -30.0, 800.0), &reference_cam()).unwrap();
        assert!((px.x - u).abs() < 1e-9 && (px.y - v).abs() < 1e-9);
        assert!((px.x - 453.8707498840251).abs() < 1e-9);
        assert!((px.y - 225.39615006958496).abs() < 1e-9);
    }

    #[test]
    fn fronto_parallel_square_gives_scaled_k() {
        let cam = CameraModel::new(500.0, 500.0, 320.0, 240.0, Distortion::NONE).unwrap();
        let half = 25.0;
        let quad = Quad::from_xy([
            (320.0 - half, 240.0 - half),
            (320.0 + half, 240.0 - half),
            (320.0 + half, 240.0 + half),
            (320.0 - half, 240.0 + half),
        ]);
        let h = homography_from_corners(&quad, 50.0).unwrap();
        // Marker mm -> pixel with unit scale: H = [[1,0,cx],[0,1,cy],[0,0,1]].
        assert!(h[(0, 1)].abs() < 1e-9 && h[(1, 0)].abs() < 1e-9);
        assert!(h[(2, 0)].abs() < 1e-9 && h[(2, 1)].abs() < 1e-9);
        assert!((h[(0, 0)] - h[(1, 1)]).abs() < 1e-9);
        assert!((h[(0, 2)] - 320.0).abs() < 1e-9 && (h[(1, 2)] - 240.0).abs() < 1e-9);
        // K^-1 H is then diag(1/f, 1/f, 1) times that matrix: scale 1 mm/px at z = f.
        let m = cam.k_inv() * h;
        assert!((m[(0, 0)] * 500.0 - h[(0, 0)]).abs() < 1e-9);
        assert!(m[(0, 2)].abs() < 1e-12 && m[(1, 2)].abs() < 1e-12);
    }

    #[test]
    fn collinear_corners_are_degenerate() {
        let quad = Quad::from_xy([(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        assert!(matches!(
            homography_from_corners(&quad, 10.0),
            Err(GeometryError::DegenerateQuad(_))
        ));
    }

    #[test]
    fn homography_reproduces_projected_corners() {
        let cam = reference_cam();
        let pose = Pose::new(
            Vector3::new(12.0, -7.0, 450.0),
            tilt_to_rotation(&Tilt::new(0.2, -0.15, 0.4)),
        );
        let side = 40.0;
        let ideal: [Vector2<f64>; 4] = marker_corners(side).map(|c| {
            let p = pose.transform(Vector3::new(c.x, c.y, 0.0));
            cam.normalized_to_ideal(Vector2::new(p.x / p.z, p.y / p.z))
        });
        let h = homography_from_corners(&Quad::new(ideal), side).unwrap();
        for (m, px) in marker_corners(side).iter().zip(ideal.iter()) {
            assert!((transform_point(&h, *m) - px).norm() < 1e-6);
        }
    }

    #[test]
    fn fronto_parallel_pose_recovered() {
        let cam = reference_cam();
        let side = 40.0;
        let ideal = marker_corners(side).map(|c| {
            cam.normalized_to_ideal(Vector2::new(c.x / 500.0, c.y / 500.0))
        });
        let h = homography_from_corners(&Quad::new(ideal), side).unwrap();
        let pose = pose_from_homography(&h, &cam).unwrap();
        assert!((pose.position - Vector3::new(0.0, 0.0, 500.0)).norm() < 1e-3);
        assert!((pose.rotation - Matrix3::identity()).abs().max() < 1e-6);
        assert!(pose.is_valid(1e-9));
    }

    #[test]
    fn singular_homography_rejected() {
        let h = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0);
        assert_eq!(
            pose_from_homography(&h, &reference_cam()),
            Err(GeometryError::SingularHomography)
        );
    }

    #[test]
    fn tilt_examples() {
        let t = rotation_to_tilt(&Matrix3::identity());
        assert_eq!((t.x, t.y, t.z), (0.0, 0.0, 0.0));
        let t = rotation_to_tilt(&rot_x(0.3));
        assert!((t.x - 0.3).abs() < 1e-12 && t.y.abs() < 1e-12 && t.z.abs() < 1e-12);
        let t = rotation_to_tilt(&rot_y(std::f64::consts::FRAC_PI_2));
        assert!(t.gimbal_lock);
        assert_eq!(t.x, 0.0);
    }

    #[test]
    fn tilt_angles_stay_in_half_open_range() {
        let t = rotation_to_tilt(&rot_z(std::f64::consts::PI));
        assert!(t.z > -std::f64::consts::PI && t.z <= std::f64::consts::PI);
    }

    #[test]
    fn quad_checks() {
        let sq = Quad::from_xy([(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]);
        assert!(sq.signed_area() > 0.0);
        assert!(sq.validate(50.0).is_ok());
        assert!(sq.validate(150.0).is_err());
        let bowtie = Quad::from_xy([(0.0, 0.0), (10.0, 10.0), (10.0, 0.0), (0.0, 10.0)]);
        assert!(!bowtie.is_strictly_convex());
        let c = sq.diagonal_intersection().unwrap();
        assert!((c - Vector2::new(5.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn camera_json_layout() {
        let json = r#"{"fx": 422.451, "fy": 422.451, "cx": 427.466, "cy": 241.239,
                       "dist": [0.0069, 0.8118, 0.0, 0.0, -2.6234]}"#;
        let cam: CameraModel = serde_json::from_str(json).unwrap();
        assert_eq!(cam, CameraModel::realsense_d435());
        assert!(cam.fits_image(848, 480));
    }
}
