//! Minimal row-major single-channel image buffer shared by every stage.

use std::fmt;

/// Row-major single-channel image.
#[derive(Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// 8-bit grayscale image.
pub type GrayImage = Image<u8>;

/// Floating point image, typically normalized to `[0, 1]`.
pub type FloatImage = Image<f32>;

impl<T> fmt::Debug for Image<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl<T: Copy> Image<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    /// Wraps an existing buffer.
    ///
    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            width * height,
            "buffer length does not match {width}x{height}"
        );
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel access with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl<T: Copy + Into<f64>> Image<T> {
    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integers). Returns `None` outside the convex hull of pixel centers.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if x > max_x || y > max_y {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let v00: f64 = self.get(x0, y0).into();
        let v10: f64 = self.get(x1, y0).into();
        let v01: f64 = self.get(x0, y1).into();
        let v11: f64 = self.get(x1, y1).into();
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        Some(top + (bottom - top) * fy)
    }
}

impl GrayImage {
    /// Converts to floats in `[0, 1]`.
    pub fn to_unit_float(&self) -> FloatImage {
        self.map(|v| v as f32 / 255.0)
    }
}

impl FloatImage {
    /// Quantizes a `[0, 1]` image to 8 bits, rounding half up.
    pub fn to_gray(&self) -> GrayImage {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_matches_pixels_at_centers_and_midpoints() {
        let img = Image::from_vec(2, 2, vec![0u8, 10, 20, 30]);
        assert_eq!(img.sample_bilinear(0.0, 0.0), Some(0.0));
        assert_eq!(img.sample_bilinear(1.0, 1.0), Some(30.0));
        assert_eq!(img.sample_bilinear(0.5, 0.5), Some(15.0));
        assert_eq!(img.sample_bilinear(1.5, 0.0), None);
        assert_eq!(img.sample_bilinear(-0.1, 0.0), None);
    }

    #[test]
    fn clamped_access_replicates_edges() {
        let img = Image::from_fn(3, 2, |x, y| (x + 10 * y) as u8);
        assert_eq!(img.get_clamped(-5, 0), 0);
        assert_eq!(img.get_clamped(7, 9), 12);
    }

    #[test]
    #[should_panic]
    fn from_vec_rejects_wrong_length() {
        let _ = Image::from_vec(3, 3, vec![0u8; 8]);
    }
}
