//! B-mode enhancement chain, classical segmentation, masking and SSIM.

pub mod clahe;
pub mod enhance;
pub mod segment;
pub mod ssim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{GrayImage, Image};

pub use clahe::{clahe, clahe_luts, ClaheParams};
pub use enhance::{
    clamp_range, log_compress, median3, pooled_percentiles, preprocess, PercentileHistogram,
    PreprocessParams,
};
pub use segment::{apply_mask, segment_baseline, segment_with_level, Mask};
pub use ssim::ssim;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImgprocError {
    #[error("image is {width}x{height}, need at least {min_width}x{min_height}")]
    TooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },
    #[error("invalid clamp range [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error("shape mismatch: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("no foreground survives segmentation")]
    EmptyMask,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

pub(crate) fn require_size(
    w: usize,
    h: usize,
    min_width: usize,
    min_height: usize,
) -> Result<(), ImgprocError> {
    if w < min_width || h < min_height {
        return Err(ImgprocError::TooSmall {
            width: w,
            height: h,
            min_width,
            min_height,
        });
    }
    Ok(())
}

pub(crate) fn require_same_shape<A: Copy, B: Copy>(
    a: &Image<A>,
    b: &Image<B>,
) -> Result<(), ImgprocError> {
    if !a.same_shape(b) {
        return Err(ImgprocError::ShapeMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    Ok(())
}

/// One 2D ultrasound frame with its physical pixel size.
#[derive(Debug, Clone, PartialEq)]
pub struct UsFrame {
    pub pixels: GrayImage,
    /// Millimetres per column.
    pub pitch_lateral: f64,
    /// Millimetres per row.
    pub pitch_axial: f64,
    /// Seconds.
    pub timestamp: f64,
}

impl UsFrame {
    pub fn new(
        pixels: GrayImage,
        pitch_lateral: f64,
        pitch_axial: f64,
        timestamp: f64,
    ) -> Result<Self, ImgprocError> {
        if !(pitch_lateral > 0.0 && pitch_axial > 0.0) {
            return Err(ImgprocError::InvalidParameter("pixel pitch must be positive"));
        }
        Ok(Self {
            pixels,
            pitch_lateral,
            pitch_axial,
            timestamp,
        })
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }
}

/// Physical pixel size of a frame stream, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPitch {
    pub lateral: f64,
    pub axial: f64,
}
