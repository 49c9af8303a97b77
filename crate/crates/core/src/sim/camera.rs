//! Synthetic marker camera: colour (gray) and depth renders of square
//! markers seen through a distorting lens.
//!
//! Each pixel is split into 4x4 subsamples. A subsample's ray is intersected
//! with the marker plane and its footprint there is box-filtered against the
//! cell grid exactly, so edge positions are not quantized to the subsample
//! lattice.

use nalgebra::{Vector2, Vector3};

use crate::geometry::{project, CameraModel, Pose};
use crate::image::{GrayImage, Image};
use crate::marker::BitMatrix;

pub const CAMERA_SIZE: (usize, usize) = (848, 480);
pub const BACKGROUND: f64 = 190.0;
pub const BLACK: f64 = 20.0;
pub const WHITE: f64 = 235.0;
const SUBSAMPLES: usize = 4;
/// The marker is printed on a plate this much wider than the marker;
/// depth is only reported on the plate.
pub const PLATE_SCALE: f64 = 1.5;

/// One marker in the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerPlacement {
    /// Payload; the one-cell black border is added around it.
    pub bits: BitMatrix,
    pub side_mm: f64,
    /// Marker-to-camera pose.
    pub pose: Pose,
}

impl MarkerPlacement {
    fn cells(&self) -> usize {
        self.bits.size() + 2
    }

    fn cell_color(&self, col: usize, row: usize) -> f64 {
        let n = self.cells();
        if col == 0 || row == 0 || col == n - 1 || row == n - 1 {
            BLACK
        } else if self.bits.get(row - 1, col - 1) {
            WHITE
        } else {
            BLACK
        }
    }

    /// Colour of the box `centre ± (ru, rv)` on the marker plane if it only
    /// covers cells of one colour or misses the marker entirely.
    fn uniform_color(&self, centre: Vector2<f64>, ru: f64, rv: f64) -> Option<f64> {
        let half = self.side_mm / 2.0;
        let (u0, u1, v0, v1) = (centre.x - ru, centre.x + ru, centre.y - rv, centre.y + rv);
        if u1 < -half || u0 > half || v1 < -half || v0 > half {
            return Some(BACKGROUND);
        }
        let n = self.cells();
        let step = self.side_mm / n as f64;
        let cell = |a: f64| ((a + half) / step).floor();
        let (c0, c1, r0, r1) = (cell(u0), cell(u1), cell(v0), cell(v1));
        let inside = |k: f64| k >= 0.0 && k < n as f64;
        if !(inside(c0) && inside(c1) && inside(r0) && inside(r1)) {
            return None;
        }
        let first = self.cell_color(c0 as usize, r0 as usize);
        for r in r0 as usize..=r1 as usize {
            for c in c0 as usize..=c1 as usize {
                if self.cell_color(c, r) != first {
                    return None;
                }
            }
        }
        Some(first)
    }

    /// Marker-plane coordinates hit by the ray through normalized point `n`.
    fn hit(&self, n: Vector2<f64>) -> Option<(Vector2<f64>, f64)> {
        let rt = self.pose.rotation.transpose();
        let ray = rt * Vector3::new(n.x, n.y, 1.0);
        let t = rt * self.pose.position;
        if ray.z.abs() < 1e-12 {
            return None;
        }
        let lambda = t.z / ray.z;
        if !(lambda > 0.0) {
            return None;
        }
        let p = ray * lambda - t;
        Some((Vector2::new(p.x, p.y), lambda))
    }

    /// Pixel bounding box of the marker grown by `scale`, padded, clipped
    /// to the image.
    fn pixel_bounds(&self, cam: &CameraModel, (w, h): (usize, usize), scale: f64) -> Option<(usize, usize, usize, usize)> {
        let half = self.side_mm * scale / 2.0;
        let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let steps = 32;
        for k in 0..4 * steps {
            let side = k / steps;
            let f = (k % steps) as f64 / steps as f64 * 2.0 - 1.0;
            let (u, v) = match side {
                0 => (f * half, -half),
                1 => (half, f * half),
                2 => (-f * half, half),
                _ => (-half, -f * half),
            };
            let p = self.pose.transform(Vector3::new(u, v, 0.0));
            let px = project(&p, cam).ok()?;
            lo = lo.inf(&px);
            hi = hi.sup(&px);
        }
        let x0 = (lo.x - 3.0).floor().max(0.0) as usize;
        let y0 = (lo.y - 3.0).floor().max(0.0) as usize;
        let x1 = ((hi.x + 3.0).ceil().max(0.0) as usize).min(w);
        let y1 = ((hi.y + 3.0).ceil().max(0.0) as usize).min(h);
        (x0 < x1 && y0 < y1).then_some((x0, y0, x1, y1))
    }
}

/// Normalized coordinates of pixel centres over a window, one pixel wider
/// than requested on the right and bottom.
struct RayMap {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    rays: Vec<Option<Vector2<f64>>>,
}

impl RayMap {
    fn new(cam: &CameraModel, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let w = x1 - x0 + 1;
        let h = y1 - y0 + 1;
        let mut rays = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                rays.push(cam.pixel_to_normalized(Vector2::new(x as f64, y as f64)).ok());
            }
        }
        Self { x0, y0, w, h, rays }
    }

    fn at(&self, x: usize, y: usize) -> Option<Vector2<f64>> {
        self.rays[(y - self.y0) * self.w + (x - self.x0)]
    }

    /// Bilinear interpolation at a fractional pixel position inside the map.
    fn sample(&self, x: f64, y: f64) -> Option<Vector2<f64>> {
        let fx = (x - self.x0 as f64).clamp(0.0, (self.w - 1) as f64);
        let fy = (y - self.y0 as f64).clamp(0.0, (self.h - 1) as f64);
        let ix = (fx.floor() as usize).min(self.w.saturating_sub(2));
        let iy = (fy.floor() as usize).min(self.h.saturating_sub(2));
        let ax = fx - ix as f64;
        let ay = fy - iy as f64;
        let get = |dx: usize, dy: usize| self.rays[((iy + dy).min(self.h - 1)) * self.w + (ix + dx).min(self.w - 1)];
        let (a, b, c, d) = (get(0, 0)?, get(1, 0)?, get(0, 1)?, get(1, 1)?);
        Some(a * ((1.0 - ax) * (1.0 - ay)) + b * (ax * (1.0 - ay)) + c * ((1.0 - ax) * ay) + d * (ax * ay))
    }
}

/// Fraction of `[c - width/2, c + width/2]` falling in each of `cells`
/// equal intervals spanning `[-side/2, side/2]`.
fn overlap_weights(c: f64, width: f64, side: f64, cells: usize, out: &mut [f64]) {
    let step = side / cells as f64;
    if !(width > 0.0) {
        out.fill(0.0);
        let k = ((c + side / 2.0) / step).floor();
        if k >= 0.0 && (k as usize) < cells {
            out[k as usize] = 1.0;
        }
        return;
    }
    let lo = c - width / 2.0;
    let hi = c + width / 2.0;
    for (k, o) in out.iter_mut().enumerate().take(cells) {
        let b0 = -side / 2.0 + k as f64 * step;
        let b1 = b0 + step;
        *o = (hi.min(b1) - lo.max(b0)).max(0.0) / width;
    }
}

/// Renders the markers over a uniform background.
pub fn render_markers(cam: &CameraModel, markers: &[MarkerPlacement], size: (usize, usize)) -> GrayImage {
    let (w, h) = size;
    let mut img = Image::new(w, h, BACKGROUND as u8);
    for m in markers {
        let Some((x0, y0, x1, y1)) = m.pixel_bounds(cam, size, 1.0) else {
            continue;
        };
        let map = RayMap::new(cam, x0, y0, x1, y1);
        let cells = m.cells();
        let mut wu = vec![0.0; cells];
        let mut wv = vec![0.0; cells];
        let uv_at = |x: f64, y: f64| map.sample(x, y).and_then(|n| m.hit(n)).map(|(p, _)| p);
        for y in y0..y1 {
            for x in x0..x1 {
                let (Some(c), Some(cx), Some(cy)) = (
                    map.at(x, y).and_then(|n| m.hit(n)),
                    map.at(x + 1, y).and_then(|n| m.hit(n)),
                    map.at(x, y + 1).and_then(|n| m.hit(n)),
                ) else {
                    continue;
                };
                let jx = cx.0 - c.0;
                let jy = cy.0 - c.0;
                let fw_u = (jx.x.abs() + jy.x.abs()) / SUBSAMPLES as f64;
                let fw_v = (jx.y.abs() + jy.y.abs()) / SUBSAMPLES as f64;
                if let Some(v) = m.uniform_color(c.0, fw_u * 2.5, fw_v * 2.5) {
                    img.set(x, y, v as u8);
                    continue;
                }
                let mut acc = 0.0;
                for sy in 0..SUBSAMPLES {
                    for sx in 0..SUBSAMPLES {
                        let ox = (sx as f64 + 0.5) / SUBSAMPLES as f64 - 0.5;
                        let oy = (sy as f64 + 0.5) / SUBSAMPLES as f64 - 0.5;
                        let Some(uv) = uv_at(x as f64 + ox, y as f64 + oy) else {
                            acc += BACKGROUND;
                            continue;
                        };
                        if let Some(v) = m.uniform_color(uv, fw_u / 2.0, fw_v / 2.0) {
                            acc += v;
                            continue;
                        }
                        overlap_weights(uv.x, fw_u, m.side_mm, cells, &mut wu);
                        overlap_weights(uv.y, fw_v, m.side_mm, cells, &mut wv);
                        let mut inside = 0.0;
                        let mut value = 0.0;
                        for (row, &b) in wv.iter().enumerate() {
                            if b == 0.0 {
                                continue;
                            }
                            for (col, &a) in wu.iter().enumerate() {
                                if a == 0.0 {
                                    continue;
                                }
                                inside += a * b;
                                value += a * b * m.cell_color(col, row);
                            }
                        }
                        acc += value + (1.0 - inside) * BACKGROUND;
                    }
                }
                img.set(x, y, (acc / (SUBSAMPLES * SUBSAMPLES) as f64).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    img
}

/// Depth (camera `z`, in `mm_per_unit` steps) of the marker plate; 0 where
/// the plate is not hit or the value would overflow.
pub fn render_depth(cam: &CameraModel, marker: &MarkerPlacement, size: (usize, usize), mm_per_unit: f64) -> Image<u16> {
    let (w, h) = size;
    let mut depth = Image::new(w, h, 0u16);
    let Some((x0, y0, x1, y1)) = marker.pixel_bounds(cam, size, PLATE_SCALE) else {
        return depth;
    };
    let half = marker.side_mm * PLATE_SCALE / 2.0;
    for y in y0..y1 {
        for x in x0..x1 {
            let Some(n) = cam.pixel_to_normalized(Vector2::new(x as f64, y as f64)).ok() else {
                continue;
            };
            let Some((uv, z)) = marker.hit(n) else {
                continue;
            };
            if uv.x.abs() <= half && uv.y.abs() <= half {
                let units = (z / mm_per_unit).round();
                if units >= 1.0 && units <= u16::MAX as f64 {
                    depth.set(x, y, units as u16);
                }
            }
        }
    }
    depth
}
