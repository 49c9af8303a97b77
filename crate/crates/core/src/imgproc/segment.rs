//! Otsu + morphology baseline segmentation and mask application.

use crate::image::{GrayImage, Image};
use crate::marker::contour::label_components;
use crate::marker::otsu_threshold;

use super::{require_same_shape, ImgprocError};

/// Binary mask; `true` keeps a pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask(pub Image<bool>);

impl Mask {
    pub fn full(width: usize, height: usize) -> Self {
        Self(Image::new(width, height, true))
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self(Image::new(width, height, false))
    }

    pub fn image(&self) -> &Image<bool> {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn area(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v).count()
    }

    /// Reads an 8-bit mask: any non-zero pixel is foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self(img.map(|v| v > 0))
    }

    /// 0 / 255 encoding used for mask files.
    pub fn to_gray(&self) -> GrayImage {
        self.0.map(|v| if v { 255 } else { 0 })
    }

    /// Nearest-neighbour resampling to another resolution.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        let (w, h) = self.dims();
        if (w, h) == (width, height) {
            return self.clone();
        }
        Self(Image::from_fn(width, height, |x, y| {
            let sx = ((x as f64 + 0.5) * w as f64 / width as f64).floor() as usize;
            let sy = ((y as f64 + 0.5) * h as f64 / height as f64).floor() as usize;
            self.0.get(sx.min(w - 1), sy.min(h - 1))
        }))
    }
}

fn erode(m: &Image<bool>) -> Image<bool> {
    let (w, h) = m.dims();
    Image::from_fn(w, h, |x, y| {
        (-1..=1isize).all(|dy| (-1..=1isize).all(|dx| m.get_clamped(x as isize + dx, y as isize + dy)))
    })
}

fn dilate(m: &Image<bool>) -> Image<bool> {
    let (w, h) = m.dims();
    Image::from_fn(w, h, |x, y| {
        (-1..=1isize).any(|dy| (-1..=1isize).any(|dx| m.get_clamped(x as isize + dx, y as isize + dy)))
    })
}

/// Thresholds at `level` (foreground is `> level`), opens and closes with a
/// 3x3 square and keeps the largest 8-connected component. Fails with
/// `EmptyMask` when that component is smaller than `min_area`.
pub fn segment_with_level(img: &GrayImage, level: u8, min_area: usize) -> Result<Mask, ImgprocError> {
    let bin = img.map(|v| v > level);
    let opened = dilate(&erode(&bin));
    let closed = erode(&dilate(&opened));
    let (labels, blobs) = label_components(&closed);
    let Some(best) = blobs.iter().max_by(|a, b| a.area.cmp(&b.area).then(b.label.cmp(&a.label))) else {
        return Err(ImgprocError::EmptyMask);
    };
    if best.area < min_area.max(1) {
        return Err(ImgprocError::EmptyMask);
    }
    Ok(Mask(labels.map(|l| l == best.label)))
}

/// Otsu threshold of the image itself, then [`segment_with_level`].
pub fn segment_baseline(img: &GrayImage) -> Result<Mask, ImgprocError> {
    let level = otsu_threshold(img).map_err(|_| ImgprocError::EmptyMask)?;
    segment_with_level(img, level, 1)
}

/// Zeroes every pixel outside the mask.
pub fn apply_mask(img: &GrayImage, mask: &Mask) -> Result<GrayImage, ImgprocError> {
    require_same_shape(img, &mask.0)?;
    let data = img
        .as_slice()
        .iter()
        .zip(mask.0.as_slice())
        .map(|(&v, &m)| if m { v } else { 0 })
        .collect();
    Ok(GrayImage::from_vec(img.width(), img.height(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bright_disk_area_within_five_percent() {
        let (cx, cy, r) = (40.0, 35.0, 18.0);
        let img = GrayImage::from_fn(90, 70, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            if d2 <= r * r {
                200
            } else {
                30
            }
        });
        let mask = segment_baseline(&img).unwrap();
        let truth = std::f64::consts::PI * r * r;
        assert!((mask.area() as f64 - truth).abs() / truth < 0.05);
    }

    #[test]
    fn all_dark_is_empty() {
        assert_eq!(
            segment_baseline(&GrayImage::new(20, 20, 0)),
            Err(ImgprocError::EmptyMask)
        );
        // a single bright pixel is removed by the opening
        let mut img = GrayImage::new(20, 20, 0);
        img.set(10, 10, 255);
        assert_eq!(segment_baseline(&img), Err(ImgprocError::EmptyMask));
    }

    #[test]
    fn keeps_largest_component() {
        let img = GrayImage::from_fn(60, 30, |x, y| {
            let big = (5..25).contains(&x) && (5..25).contains(&y);
            let small = (40..46).contains(&x) && (10..16).contains(&y);
            if big || small {
                220
            } else {
                10
            }
        });
        let m = segment_baseline(&img).unwrap();
        assert_eq!(m.area(), 400);
        assert!(!m.image().get(42, 12));
    }

    #[test]
    fn mask_application() {
        let ramp = GrayImage::from_fn(8, 8, |x, y| (x + 8 * y) as u8);
        assert_eq!(apply_mask(&ramp, &Mask::full(8, 8)).unwrap(), ramp);
        assert!(apply_mask(&ramp, &Mask::empty(8, 8))
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0));
        let checker = Mask(Image::from_fn(8, 8, |x, y| (x / 2 + y / 2) % 2 == 0));
        let out = apply_mask(&ramp, &checker).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = if checker.image().get(x, y) { ramp.get(x, y) } else { 0 };
                assert_eq!(out.get(x, y), expect);
            }
        }
        assert!(apply_mask(&ramp, &Mask::full(7, 8)).is_err());
    }

    #[test]
    fn nearest_resize_of_blocks() {
        let m = Mask(Image::from_fn(2, 2, |x, y| x == y));
        let big = m.resize_nearest(4, 4);
        assert!(big.image().get(0, 0) && big.image().get(1, 1) && !big.image().get(2, 1));
        assert_eq!(big.area(), 8);
    }
}
