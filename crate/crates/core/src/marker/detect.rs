//! Canonical resampling, bit decoding and the per-frame detection pipeline.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::geometry::{
    homography_from_corners, homography_from_points, line_intersection, pose_from_homography,
    transform_point, CameraModel, Pose, Quad,
};
use crate::image::{GrayImage, Image};

use super::contour::{find_quad_candidates, QuadParams};
use super::dictionary::{match_dictionary, BitMatrix, MarkerDictionary};
use super::threshold::{binarize_adaptive, histogram, otsu_level_from_histogram, AdaptiveParams};
use super::MarkerError;

/// Canonical pixels per marker cell.
pub const CELL_PIXELS: usize = 8;

/// Detector tuning. The defaults suit clean renders and typical camera frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub adaptive: AdaptiveParams,
    pub quads: QuadParams,
    /// Black border width in cells.
    pub border_cells: usize,
    /// Fraction of border cells that must read black.
    pub min_border_black: f64,
    /// Rounds of sub-pixel edge refinement (0 disables it).
    pub refine_rounds: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            adaptive: AdaptiveParams::default(),
            quads: QuadParams::default(),
            border_cells: 1,
            min_border_black: 0.8,
            refine_rounds: 2,
        }
    }
}

/// One decoded marker in one camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    pub id: u32,
    /// Image corners, reordered so that `corners[0]` is the marker's own
    /// top-left corner.
    pub corners: Quad,
    /// Image of the marker centre.
    pub center_px: Vector2<f64>,
    /// Seconds.
    pub timestamp: f64,
    pub pose: Pose,
}

/// Depth channel registered to the color image; 0 marks missing data.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub image: Image<u16>,
    /// Millimetres per stored unit.
    pub mm_per_unit: f64,
}

impl DepthMap {
    pub fn new(image: Image<u16>, mm_per_unit: f64) -> Self {
        Self { image, mm_per_unit }
    }

    /// Bilinear depth in millimetres; `None` if any contributing sample is
    /// missing or the point is outside the image.
    pub fn depth_at(&self, p: Vector2<f64>) -> Option<f64> {
        let (w, h) = self.image.dims();
        if !(p.x >= 0.0 && p.y >= 0.0) || p.x > (w - 1) as f64 || p.y > (h - 1) as f64 {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(w.saturating_sub(2));
        let y0 = (p.y.floor() as usize).min(h.saturating_sub(2));
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let v = [
            self.image.get(x0, y0),
            self.image.get(x1, y0),
            self.image.get(x0, y1),
            self.image.get(x1, y1),
        ];
        if v.contains(&0) {
            return None;
        }
        let d = self.image.sample_bilinear(p.x, p.y)?;
        Some(d * self.mm_per_unit)
    }
}

/// Resamples the quad interior into an `n x n` fronto-parallel image.
///
/// `n` must be at least `8 * (grid + 2)`.
pub fn canonicalize(
    img: &GrayImage,
    quad: &Quad,
    grid: usize,
    n: usize,
) -> Result<GrayImage, MarkerError> {
    let min = CELL_PIXELS * (grid + 2);
    if n < min {
        return Err(MarkerError::CanonicalTooSmall { n, min });
    }
    quad.validate(0.0)?;
    let s = n as f64;
    let square = [
        Vector2::new(0.0, 0.0),
        Vector2::new(s, 0.0),
        Vector2::new(s, s),
        Vector2::new(0.0, s),
    ];
    let h = homography_from_points(&square, &quad.corners)?;
    let (w, ht) = img.dims();
    Ok(Image::from_fn(n, n, |i, j| {
        let p = transform_point(&h, Vector2::new(i as f64 + 0.5, j as f64 + 0.5));
        let x = p.x.clamp(0.0, (w - 1) as f64);
        let y = p.y.clamp(0.0, (ht - 1) as f64);
        let v = img.sample_bilinear(x, y).unwrap_or(0.0);
        (v + 0.5).floor().clamp(0.0, 255.0) as u8
    }))
}

/// Payload bits plus the border check outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedBits {
    pub bits: BitMatrix,
    pub border_black_fraction: f64,
}

/// Otsu-binarizes the canonical image and votes each cell by majority.
pub fn decode_bits(
    canonical: &GrayImage,
    grid: usize,
    border: usize,
    min_border_black: f64,
) -> Result<DecodedBits, MarkerError> {
    let cells = grid + 2 * border;
    let n = canonical.width();
    if canonical.height() != n || n == 0 || n % cells != 0 {
        return Err(MarkerError::CanonicalNotDivisible { n, cells });
    }
    let level = match otsu_level_from_histogram(&histogram(canonical)) {
        Ok(t) => t,
        Err(MarkerError::DegenerateHistogram) => 127,
        Err(e) => return Err(e),
    };
    let cell = n / cells;
    let mut white = vec![false; cells * cells];
    for cr in 0..cells {
        for cc in 0..cells {
            let mut count = 0usize;
            for y in cr * cell..(cr + 1) * cell {
                for x in cc * cell..(cc + 1) * cell {
                    if canonical.get(x, y) > level {
                        count += 1;
                    }
                }
            }
            white[cr * cells + cc] = 2 * count > cell * cell;
        }
    }
    let mut border_total = 0usize;
    let mut border_black = 0usize;
    for cr in 0..cells {
        for cc in 0..cells {
            let inner = (border..border + grid).contains(&cr) && (border..border + grid).contains(&cc);
            if !inner {
                border_total += 1;
                if !white[cr * cells + cc] {
                    border_black += 1;
                }
            }
        }
    }
    let fraction = if border_total == 0 {
        1.0
    } else {
        border_black as f64 / border_total as f64
    };
    if fraction < min_border_black {
        return Err(MarkerError::BorderInvalid);
    }
    let mut bits = BitMatrix::zeros(grid);
    for r in 0..grid {
        for c in 0..grid {
            bits.set(r, c, white[(r + border) * cells + c + border]);
        }
    }
    Ok(DecodedBits {
        bits,
        border_black_fraction: fraction,
    })
}

const PROFILE_HALF: f64 = 3.0;
const PROFILE_STEP: f64 = 0.25;

/// Edge offset along `normal` (pointing from dark to bright) relative to
/// `p`, from the area under the normalized intensity profile.
fn edge_offset(img: &GrayImage, p: Vector2<f64>, normal: Vector2<f64>) -> Option<f64> {
    let steps = (2.0 * PROFILE_HALF / PROFILE_STEP).round() as usize;
    let mut profile = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let o = -PROFILE_HALF + k as f64 * PROFILE_STEP;
        let q = p + normal * o;
        profile.push(img.sample_bilinear(q.x, q.y)?);
    }
    let ends = 3;
    let dark = profile[..ends].iter().sum::<f64>() / ends as f64;
    let bright = profile[steps + 1 - ends..].iter().sum::<f64>() / ends as f64;
    if bright - dark < 20.0 {
        return None;
    }
    // f = 1 on the dark side, 0 on the bright side; its integral is the
    // distance from the profile start to the edge.
    let f: Vec<f64> = profile.iter().map(|v| (bright - v) / (bright - dark)).collect();
    let mut area = 0.0;
    for k in 0..steps {
        area += 0.5 * (f[k] + f[k + 1]) * PROFILE_STEP;
    }
    Some(-PROFILE_HALF + area)
}

/// Total least squares line through points: returns (centroid, direction).
fn fit_line(points: &[Vector2<f64>]) -> Option<(Vector2<f64>, Vector2<f64>)> {
    if points.len() < 2 {
        return None;
    }
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / points.len() as f64;
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let i = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    Some((c, eig.eigenvectors.column(i).into_owned()))
}

/// Sub-pixel corner estimate from the four marker edges: edge points are
/// located on intensity profiles, undistorted, fitted with lines and the
/// line intersections are distorted back.
///
/// Returns `None` when an edge cannot be measured.
pub fn refine_corners(img: &GrayImage, quad: &Quad, cam: &CameraModel) -> Option<Quad> {
    let c = quad.corners;
    let centroid = c.iter().fold(Vector2::zeros(), |a, p| a + p) / 4.0;
    let mut lines = Vec::with_capacity(4);
    for k in 0..4 {
        let a = c[k];
        let b = c[(k + 1) % 4];
        let along = b - a;
        let len = along.norm();
        if len < 4.0 {
            return None;
        }
        let dir = along / len;
        let mut normal = Vector2::new(-dir.y, dir.x);
        if normal.dot(&(a - centroid)) < 0.0 {
            normal = -normal;
        }
        let samples = (len.ceil() as usize).max(8);
        let mut points = Vec::with_capacity(samples);
        for i in 0..samples {
            let t = 0.15 + 0.7 * (i as f64 + 0.5) / samples as f64;
            let p = a + along * t;
            if let Some(o) = edge_offset(img, p, normal) {
                if let Ok(u) = cam.undistort_pixel(p + normal * o) {
                    points.push(u);
                }
            }
        }
        if points.len() < samples / 2 || points.len() < 3 {
            return None;
        }
        lines.push(fit_line(&points)?);
    }
    let mut out = [Vector2::zeros(); 4];
    for k in 0..4 {
        // corner k joins edge k-1 and edge k
        let (p0, d0) = lines[(k + 3) % 4];
        let (p1, d1) = lines[k];
        let ideal = line_intersection(p0, p0 + d0, p1, p1 + d1)?;
        out[k] = cam.distort_pixel(ideal);
    }
    let refined = Quad::new(out);
    let moved = (0..4).map(|k| (out[k] - c[k]).norm()).fold(0.0, f64::max);
    if moved > 3.0 || refined.validate(0.0).is_err() {
        return None;
    }
    Some(refined)
}

/// Marker detector bound to one camera, dictionary and marker size.
#[derive(Debug, Clone)]
pub struct MarkerDetector {
    pub camera: CameraModel,
    pub dictionary: MarkerDictionary,
    /// Marker side length in millimetres, outer border included.
    pub side_mm: f64,
    pub config: DetectorConfig,
}

impl MarkerDetector {
    pub fn new(camera: CameraModel, dictionary: MarkerDictionary, side_mm: f64) -> Self {
        Self {
            camera,
            dictionary,
            side_mm,
            config: DetectorConfig::default(),
        }
    }

    pub fn with_config(mut self, config: DetectorConfig) -> Self {
        self.config = config;
        self
    }

    /// Runs the whole pipeline on one frame. Candidates that fail decoding
    /// are dropped silently.
    pub fn detect(
        &self,
        img: &GrayImage,
        depth: Option<&DepthMap>,
        timestamp: f64,
    ) -> Vec<MarkerObservation> {
        if img.is_empty() {
            return Vec::new();
        }
        let grid = self.dictionary.grid();
        let cells = grid + 2 * self.config.border_cells;
        let n = CELL_PIXELS * cells;
        let bin = binarize_adaptive(img, self.config.adaptive);
        let mut out: Vec<MarkerObservation> = Vec::new();
        for candidate in find_quad_candidates(&bin, self.config.quads) {
            let mut quad = candidate;
            for _ in 0..self.config.refine_rounds {
                match refine_corners(img, &quad, &self.camera) {
                    Some(q) => quad = q,
                    None => break,
                }
            }
            let Ok(canonical) = canonicalize(img, &quad, grid, n) else {
                continue;
            };
            let Ok(decoded) = decode_bits(
                &canonical,
                grid,
                self.config.border_cells,
                self.config.min_border_black,
            ) else {
                continue;
            };
            let Ok(m) = match_dictionary(&decoded.bits, &self.dictionary) else {
                continue;
            };
            let corners = quad.rotated(m.quarter_turns);
            let Some(obs) = self.observation(m.id, corners, depth, timestamp) else {
                continue;
            };
            // Nested contours (e.g. a marker's inner blob) can decode twice.
            if out.iter().any(|o| o.id == obs.id && (o.center_px - obs.center_px).norm() < 2.0) {
                continue;
            }
            out.push(obs);
        }
        out
    }

    fn observation(
        &self,
        id: u32,
        corners: Quad,
        depth: Option<&DepthMap>,
        timestamp: f64,
    ) -> Option<MarkerObservation> {
        let mut ideal = [Vector2::zeros(); 4];
        for k in 0..4 {
            ideal[k] = self.camera.undistort_pixel(corners.corners[k]).ok()?;
        }
        let ideal = Quad::new(ideal);
        let h = homography_from_corners(&ideal, self.side_mm).ok()?;
        let mut pose = pose_from_homography(&h, &self.camera).ok()?;
        let center_ideal = ideal.diagonal_intersection()?;
        let center_px = self.camera.distort_pixel(center_ideal);
        if let Some(z) = depth.and_then(|d| d.depth_at(center_px)) {
            if z > 0.0 && pose.position.z > 0.0 {
                // Stay on the viewing ray through the estimated centre.
                pose.position *= z / pose.position.z;
            }
        }
        Some(MarkerObservation {
            id,
            corners,
            center_px,
            timestamp,
            pose,
        })
    }
}

/// Convenience wrapper around [`MarkerDetector::detect`] with default tuning.
pub fn detect_markers(
    img: &GrayImage,
    cam: &CameraModel,
    dict: &MarkerDictionary,
    side_mm: f64,
    depth: Option<&DepthMap>,
) -> Vec<MarkerObservation> {
    MarkerDetector::new(*cam, dict.clone(), side_mm).detect(img, depth, 0.0)
}
