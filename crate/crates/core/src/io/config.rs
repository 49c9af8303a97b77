use serde::{Deserialize, Serialize};

use crate::imgproc::{ClaheParams, PixelPitch};
use crate::tracking::DEFAULT_DUPLICATE_EPS_MM;

/// `config.toml`. Absent keys take their defaults; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub marker_side_mm: f64,
    /// Marker to track; `None` takes the first one decoded in each capture.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marker_id: Option<u32>,
    pub clahe_tiles: [usize; 2],
    pub clahe_clip: f64,
    /// Fixed clamp window; when absent the 1st/99th percentiles pooled over
    /// all frames are used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clamp_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clamp_hi: Option<f64>,
    pub log_alpha: f64,
    pub slice_pitch_mm: f64,
    pub duplicate_eps_mm: f64,
    pub pixel_pitch_lateral_mm: f64,
    pub pixel_pitch_axial_mm: f64,
    /// Smallest connected region kept by the baseline segmentation.
    pub seg_min_area_px: usize,
    pub depth_mm_per_unit: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            marker_side_mm: 40.0,
            marker_id: None,
            clahe_tiles: [8, 8],
            clahe_clip: 2.0,
            clamp_lo: None,
            clamp_hi: None,
            log_alpha: 255.0,
            slice_pitch_mm: 0.1,
            duplicate_eps_mm: DEFAULT_DUPLICATE_EPS_MM,
            pixel_pitch_lateral_mm: 0.15,
            pixel_pitch_axial_mm: 0.2,
            seg_min_area_px: 50,
            depth_mm_per_unit: 0.02,
        }
    }
}

impl Config {
    pub fn pixel_pitch(&self) -> PixelPitch {
        PixelPitch {
            lateral: self.pixel_pitch_lateral_mm,
            axial: self.pixel_pitch_axial_mm,
        }
    }

    pub fn clahe(&self) -> ClaheParams {
        ClaheParams {
            tiles: (self.clahe_tiles[0], self.clahe_tiles[1]),
            clip: self.clahe_clip,
        }
    }

    /// Fixed clamp window, if both ends are configured.
    pub fn clamp(&self) -> Option<(f64, f64)> {
        self.clamp_lo.zip(self.clamp_hi)
    }

    /// Range checks; each problem is returned as a message.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        };
        positive("marker_side_mm", self.marker_side_mm);
        positive("clahe_clip", self.clahe_clip);
        positive("log_alpha", self.log_alpha);
        positive("slice_pitch_mm", self.slice_pitch_mm);
        positive("pixel_pitch_lateral_mm", self.pixel_pitch_lateral_mm);
        positive("pixel_pitch_axial_mm", self.pixel_pitch_axial_mm);
        positive("depth_mm_per_unit", self.depth_mm_per_unit);
        if !(self.duplicate_eps_mm >= 0.0) {
            out.push(format!("duplicate_eps_mm must be non-negative, got {}", self.duplicate_eps_mm));
        }
        if self.clahe_tiles.contains(&0) {
            out.push("clahe_tiles entries must be at least 1".into());
        }
        match (self.clamp_lo, self.clamp_hi) {
            (Some(lo), Some(hi)) if !(lo < hi) => out.push(format!("clamp_lo {lo} must be below clamp_hi {hi}")),
            (Some(_), None) | (None, Some(_)) => out.push("clamp_lo and clamp_hi must be set together".into()),
            _ => {}
        }
        out
    }
}
