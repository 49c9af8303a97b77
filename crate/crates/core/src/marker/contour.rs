//! Outer-border tracing of foreground blobs and quadrilateral extraction.

use nalgebra::Vector2;

use crate::geometry::Quad;
use crate::image::Image;

/// Clockwise (y down) 8-neighbourhood starting east.
const DIRS: [(isize, isize); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Connected foreground blob.
#[derive(Debug, Clone)]
pub struct Blob {
    pub label: u32,
    pub area: usize,
    pub min: (usize, usize),
    pub max: (usize, usize),
    /// First pixel in raster order; always on the outer border.
    pub start: (usize, usize),
}

impl Blob {
    pub fn touches_border(&self, width: usize, height: usize) -> bool {
        self.min.0 == 0 || self.min.1 == 0 || self.max.0 + 1 == width || self.max.1 + 1 == height
    }
}

/// 8-connected component labelling. Label 0 is background; blob `i` carries
/// label `i + 1`.
pub fn label_components(bin: &Image<bool>) -> (Image<u32>, Vec<Blob>) {
    let (w, h) = bin.dims();
    let mut labels = Image::new(w, h, 0u32);
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !bin.get(x, y) || labels.get(x, y) != 0 {
                continue;
            }
            let label = blobs.len() as u32 + 1;
            let mut blob = Blob {
                label,
                area: 0,
                min: (x, y),
                max: (x, y),
                start: (x, y),
            };
            labels.set(x, y, label);
            stack.push((x, y));
            while let Some((px, py)) = stack.pop() {
                blob.area += 1;
                blob.min = (blob.min.0.min(px), blob.min.1.min(py));
                blob.max = (blob.max.0.max(px), blob.max.1.max(py));
                for (dx, dy) in DIRS {
                    let nx = px as isize + dx;
                    let ny = py as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if bin.get(nx, ny) && labels.get(nx, ny) == 0 {
                        labels.set(nx, ny, label);
                        stack.push((nx, ny));
                    }
                }
            }
            blobs.push(blob);
        }
    }
    (labels, blobs)
}

/// Moore-neighbour trace of a blob's outer border, returned as pixel centres.
pub fn trace_outer_border(labels: &Image<u32>, blob: &Blob) -> Vec<(usize, usize)> {
    let (w, h) = labels.dims();
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && x < w as isize && y < h as isize && labels.get(x as usize, y as usize) == blob.label
    };
    let start = (blob.start.0 as isize, blob.start.1 as isize);
    let mut contour = vec![blob.start];
    // The raster-first pixel has background to its west.
    let mut backtrack_dir = 4usize;
    let mut current = start;
    let mut first_move: Option<(isize, isize)> = None;
    let limit = 4 * blob.area + 8;
    for _ in 0..limit {
        let mut next = None;
        for k in 1..=8 {
            let d = (backtrack_dir + k) % 8;
            let cand = (current.0 + DIRS[d].0, current.1 + DIRS[d].1);
            if inside(cand.0, cand.1) {
                next = Some((cand, d));
                break;
            }
        }
        let Some((cand, d)) = next else {
            // isolated pixel
            return contour;
        };
        if current == start {
            match first_move {
                None => first_move = Some(cand),
                Some(m) if m == cand => {
                    contour.pop();
                    return contour;
                }
                _ => {}
            }
        }
        // The previously examined neighbour becomes the backtrack pixel; seen
        // from `cand` it lies in direction (d + 5) or (d + 6) mod 8.
        let prev = (current.0 + DIRS[(d + 7) % 8].0, current.1 + DIRS[(d + 7) % 8].1);
        let rel = (prev.0 - cand.0, prev.1 - cand.1);
        backtrack_dir = DIRS.iter().position(|&dd| dd == rel).unwrap_or((d + 4) % 8);
        current = cand;
        contour.push((cand.0 as usize, cand.1 as usize));
    }
    contour
}

fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn douglas_peucker_open(points: &[Vector2<f64>], eps: f64, keep: &mut Vec<usize>, lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let (mut best, mut best_d) = (lo, -1.0);
    for i in lo + 1..hi {
        let d = point_segment_distance(points[i], points[lo], points[hi]);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    if best_d > eps {
        douglas_peucker_open(points, eps, keep, lo, best);
        keep.push(best);
        douglas_peucker_open(points, eps, keep, best, hi);
    }
}

/// Douglas–Peucker simplification of a closed polygon.
pub fn simplify_closed(points: &[Vector2<f64>], eps: f64) -> Vec<Vector2<f64>> {
    let n = points.len();
    if n < 3 {
        return points.to_vec();
    }
    // Split at two mutually distant points; both are vertices of any
    // polygon the contour approximates.
    let farthest = |from: Vector2<f64>| {
        (0..n)
            .max_by(|&a, &b| (points[a] - from).norm_squared().total_cmp(&(points[b] - from).norm_squared()))
            .unwrap_or(0)
    };
    let start = farthest(points[0]);
    let mut ring: Vec<Vector2<f64>> = points[start..].iter().chain(&points[..start]).copied().collect();
    let far = (1..n)
        .max_by(|&a, &b| (ring[a] - ring[0]).norm_squared().total_cmp(&(ring[b] - ring[0]).norm_squared()))
        .unwrap_or(1);
    ring.push(ring[0]);
    let mut keep = vec![0];
    douglas_peucker_open(&ring, eps, &mut keep, 0, far);
    keep.push(far);
    douglas_peucker_open(&ring, eps, &mut keep, far, n);
    keep.sort_unstable();
    keep.dedup();
    keep.into_iter().filter(|&i| i < n).map(|i| ring[i]).collect()
}

fn contour_perimeter(points: &[Vector2<f64>]) -> f64 {
    let n = points.len();
    (0..n).map(|i| (points[(i + 1) % n] - points[i]).norm()).sum()
}

/// Parameters for [`find_quad_candidates`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadParams {
    /// Simplification tolerance as a fraction of the contour perimeter.
    pub epsilon_fraction: f64,
    /// Minimum quad area in square pixels.
    pub min_area: f64,
    /// Ignore blobs that touch the image border.
    pub skip_border_blobs: bool,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            epsilon_fraction: 0.03,
            min_area: 300.0,
            skip_border_blobs: true,
        }
    }
}

/// Orders corners with positive signed area, starting from the corner with
/// the smallest `x + y`.
pub fn canonical_corner_order(mut corners: [Vector2<f64>; 4]) -> [Vector2<f64>; 4] {
    if Quad::new(corners).signed_area() < 0.0 {
        corners.reverse();
    }
    let first = (0..4)
        .min_by(|&a, &b| {
            (corners[a].x + corners[a].y).total_cmp(&(corners[b].x + corners[b].y))
        })
        .unwrap_or(0);
    std::array::from_fn(|k| corners[(k + first) % 4])
}

/// Convex four-vertex outer contours of foreground blobs.
pub fn find_quad_candidates(bin: &Image<bool>, params: QuadParams) -> Vec<Quad> {
    let (w, h) = bin.dims();
    let (labels, blobs) = label_components(bin);
    let mut quads = Vec::new();
    for blob in &blobs {
        if params.skip_border_blobs && blob.touches_border(w, h) {
            continue;
        }
        let bw = (blob.max.0 - blob.min.0 + 1) as f64;
        let bh = (blob.max.1 - blob.min.1 + 1) as f64;
        if bw * bh < params.min_area {
            continue;
        }
        let contour: Vec<Vector2<f64>> = trace_outer_border(&labels, blob)
            .into_iter()
            .map(|(x, y)| Vector2::new(x as f64, y as f64))
            .collect();
        if contour.len() < 4 {
            continue;
        }
        let eps = params.epsilon_fraction * contour_perimeter(&contour);
        let poly = simplify_closed(&contour, eps);
        if poly.len() != 4 {
            continue;
        }
        let quad = Quad::new(canonical_corner_order([poly[0], poly[1], poly[2], poly[3]]));
        if quad.validate(params.min_area).is_ok() {
            quads.push(quad);
        }
    }
    quads
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> Image<bool> {
        Image::from_fn(w, h, |x, y| {
            (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)
        })
    }

    #[test]
    fn blank_has_no_quads() {
        let bin = Image::new(50, 40, false);
        assert!(find_quad_candidates(&bin, QuadParams::default()).is_empty());
    }

    #[test]
    fn filled_square_yields_its_corners() {
        let bin = square(100, 80, 20, 15, 40);
        let quads = find_quad_candidates(&bin, QuadParams::default());
        assert_eq!(quads.len(), 1);
        let expect = [(20.0, 15.0), (59.0, 15.0), (59.0, 54.0), (20.0, 54.0)];
        for (c, e) in quads[0].corners.iter().zip(expect) {
            assert!((c.x - e.0).abs() <= 1.0 && (c.y - e.1).abs() <= 1.0, "{c:?} vs {e:?}");
        }
        assert!(quads[0].signed_area() > 0.0);
    }

    #[test]
    fn trace_visits_every_border_pixel_of_a_square() {
        let bin = square(20, 20, 5, 5, 6);
        let (labels, blobs) = label_components(&bin);
        let c = trace_outer_border(&labels, &blobs[0]);
        assert_eq!(c.len(), 20);
        assert_eq!(c[0], (5, 5));
    }

    #[test]
    fn single_pixel_and_line_contours() {
        let mut bin = Image::new(10, 10, false);
        bin.set(4, 4, true);
        let (labels, blobs) = label_components(&bin);
        assert_eq!(trace_outer_border(&labels, &blobs[0]), vec![(4, 4)]);
        let bin = Image::from_fn(10, 10, |x, y| y == 3 && (2..7).contains(&x));
        let (labels, blobs) = label_components(&bin);
        let c = trace_outer_border(&labels, &blobs[0]);
        // out along the line and back
        assert_eq!(c.len(), 8);
    }

    #[test]
    fn ring_shaped_blob_gives_outer_square() {
        let bin = Image::from_fn(80, 80, |x, y| {
            let outer = (10..60).contains(&x) && (10..60).contains(&y);
            let inner = (20..50).contains(&x) && (20..50).contains(&y);
            outer && !inner
        });
        let quads = find_quad_candidates(&bin, QuadParams::default());
        assert_eq!(quads.len(), 1);
        assert!((quads[0].area() - 49.0 * 49.0).abs() < 60.0);
    }

    #[test]
    fn two_disjoint_squares() {
        let a = square(120, 60, 10, 10, 30);
        let b = square(120, 60, 70, 15, 30);
        let bin = Image::from_fn(120, 60, |x, y| a.get(x, y) || b.get(x, y));
        assert_eq!(find_quad_candidates(&bin, QuadParams::default()).len(), 2);
    }

    #[test]
    fn disk_is_not_a_quad() {
        let bin = Image::from_fn(100, 100, |x, y| {
            let dx = x as f64 - 50.0;
            let dy = y as f64 - 50.0;
            dx * dx + dy * dy < 30.0 * 30.0
        });
        assert!(find_quad_candidates(&bin, QuadParams::default()).is_empty());
    }

    #[test]
    fn slightly_rotated_square_is_a_quad() {
        // top edge rises one pixel to the right, so tracing starts mid-edge
        let bin = Image::from_fn(80, 80, |x, y| {
            let (x, y) = (x as f64 - 40.0, y as f64 - 40.0);
            let a: f64 = -0.025;
            let (u, v) = (a.cos() * x + a.sin() * y, -a.sin() * x + a.cos() * y);
            u.abs() <= 20.0 && v.abs() <= 20.0
        });
        let (labels, blobs) = label_components(&bin);
        let start = trace_outer_border(&labels, &blobs[0])[0];
        assert!(start.0 > 25, "{start:?}");
        assert_eq!(find_quad_candidates(&bin, QuadParams::default()).len(), 1);
    }
}
