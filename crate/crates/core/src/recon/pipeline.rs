//! End-to-end reconstruction of a loaded dataset.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_to_tilt, Tilt};
use crate::image::{FloatImage, GrayImage};
use crate::imgproc::enhance::compress_and_denoise;
use crate::imgproc::{apply_mask, clahe, clamp_range, pooled_percentiles, segment_with_level, ImgprocError, Mask};
use crate::io::{create_dir, write_json, write_mhd, Dataset, IoError};
use crate::marker::{histogram, otsu_level_from_histogram};
use crate::par::par_map;
use crate::tracking::{
    inter_frame_spacing, monotonic_reorder, sync_poses_to_frames, tilt_statistics, FrameIndex, TrackingError,
};

use super::{interpolate_slices, ReconError, VolumeGrid};

/// Failure of one pipeline stage.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("sync: {0}")]
    Sync(TrackingError),
    #[error("spacing: {0}")]
    Spacing(TrackingError),
    #[error("reorder: {0}")]
    Reorder(TrackingError),
    #[error("preprocess: {0}")]
    Preprocess(ImgprocError),
    #[error("segment: {0}")]
    Segment(ImgprocError),
    #[error("interpolate: {0}")]
    Interpolate(ReconError),
    #[error("worker count must be at least 1")]
    InvalidWorkers,
    #[error("output with {workers} workers differs from the serial output")]
    WorkerMismatch { workers: usize },
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Sync(_) => "sync",
            PipelineError::Spacing(_) => "spacing",
            PipelineError::Reorder(_) => "reorder",
            PipelineError::Preprocess(_) => "preprocess",
            PipelineError::Segment(_) => "segment",
            PipelineError::Interpolate(_) => "interpolate",
            PipelineError::InvalidWorkers => "setup",
            PipelineError::WorkerMismatch { .. } => "interpolate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltSigma {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<Tilt> for TiltSigma {
    fn from(t: Tilt) -> Self {
        Self { x: t.x, y: t.y, z: t.z }
    }
}

/// Wall-clock timings, milliseconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WallTime {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub serial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel: Option<f64>,
    pub workers: usize,
    /// `serial / parallel` when both were measured.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
}

/// Summary written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames_in: usize,
    pub frames_kept: usize,
    pub dropped_frames: Vec<usize>,
    pub scan_length_mm: f64,
    pub mean_spacing_mm: f64,
    pub slice_pitch_mm: f64,
    pub dims: [usize; 3],
    pub tilt_sigma_rad: TiltSigma,
    /// Number of pose samples behind `tilt_sigma_rad`.
    pub tilt_samples: usize,
    pub clamp: [f64; 2],
    /// `"masks"` when masks were supplied, otherwise `"otsu"`.
    pub segmentation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub otsu_level: Option<u8>,
    pub wall_time_ms: WallTime,
}

/// Frames after enhancement and masking, in scan order.
#[derive(Debug, Clone)]
pub struct ProcessedFrames {
    pub index: FrameIndex,
    pub frames: Vec<GrayImage>,
    pub masks: Vec<Mask>,
    pub clamp: (f64, f64),
    pub otsu_level: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub volume: VolumeGrid,
    /// Interpolated masks (0/255); occupancy is `>= 128`.
    pub mask_volume: VolumeGrid,
    pub processed: ProcessedFrames,
    pub report: RunReport,
}

/// Occupancy threshold for [`Reconstruction::mask_volume`].
pub const OCCUPANCY_LEVEL: u8 = 128;

/// Everything up to the masked, enhanced frames.
pub fn process_frames(ds: &Dataset, workers: usize) -> Result<ProcessedFrames, PipelineError> {
    if workers == 0 {
        return Err(PipelineError::InvalidWorkers);
    }
    let cfg = &ds.config;
    let poses = sync_poses_to_frames(&ds.poses, &ds.frame_times).map_err(PipelineError::Sync)?;
    let index = FrameIndex::from_poses(&poses, &ds.frame_times).map_err(PipelineError::Spacing)?;
    let index = monotonic_reorder(&index, cfg.duplicate_eps_mm).map_err(PipelineError::Reorder)?;

    let kept: Vec<&GrayImage> = index.frames.iter().map(|r| &ds.frames[r.frame]).collect();
    let shape = kept[0].dims();
    if let Some(bad) = kept.iter().find(|f| f.dims() != shape) {
        return Err(PipelineError::Preprocess(ImgprocError::ShapeMismatch {
            a: shape,
            b: bad.dims(),
        }));
    }
    let filtered: Vec<FloatImage> =
        par_map(&kept, workers, |f| compress_and_denoise(f, cfg.log_alpha)).map_err(PipelineError::Preprocess)?;
    let (lo, hi) = cfg.clamp().unwrap_or_else(|| pooled_percentiles(&filtered));
    let clamped: Vec<GrayImage> = par_map(&filtered, workers, |f| clamp_range(f, lo, hi).map(|c| c.to_gray()))
        .map_err(PipelineError::Preprocess)?;
    drop(filtered);
    let enhanced: Vec<GrayImage> =
        par_map(&clamped, workers, |c| clahe(c, cfg.clahe())).map_err(PipelineError::Preprocess)?;

    let (masks, otsu_level) = match &ds.masks {
        Some(masks) => {
            let (w, h) = shape;
            let m = index.frames.iter().map(|r| masks[r.frame].resize_nearest(w, h)).collect();
            (m, None)
        }
        None => {
            let mut hist = [0u64; 256];
            for c in &clamped {
                for (a, b) in hist.iter_mut().zip(histogram(c)) {
                    *a += b;
                }
            }
            match otsu_level_from_histogram(&hist) {
                Ok(level) => {
                    let m = par_map(&clamped, workers, |c| match segment_with_level(c, level, cfg.seg_min_area_px) {
                        Err(ImgprocError::EmptyMask) => Ok(Mask::empty(c.width(), c.height())),
                        other => other,
                    })
                    .map_err(PipelineError::Segment)?;
                    (m, Some(level))
                }
                // Nothing to separate: no foreground anywhere.
                Err(_) => (clamped.iter().map(|c| Mask::empty(c.width(), c.height())).collect(), None),
            }
        }
    };
    let frames = enhanced
        .iter()
        .zip(&masks)
        .map(|(e, m)| apply_mask(e, m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(PipelineError::Segment)?;
    Ok(ProcessedFrames {
        index,
        frames,
        masks,
        clamp: (lo, hi),
        otsu_level,
    })
}

/// Serial reconstruction.
pub fn reconstruct(ds: &Dataset) -> Result<Reconstruction, PipelineError> {
    reconstruct_parallel(ds, 1)
}

/// Reconstruction with frame processing and plane interpolation split
/// across `workers` threads. The result does not depend on `workers`.
pub fn reconstruct_parallel(ds: &Dataset, workers: usize) -> Result<Reconstruction, PipelineError> {
    let start = Instant::now();
    let processed = process_frames(ds, workers)?;
    let cfg = &ds.config;
    let records = &processed.index.frames;
    // Absolute projections keep the grid independent of which end the scan
    // started from.
    let u: Vec<f64> = records.iter().map(|r| r.position.dot(&processed.index.axis)).collect();
    let pitch = cfg.pixel_pitch();
    let volume = interpolate_slices(&processed.frames, &u, cfg.slice_pitch_mm, pitch, workers)
        .map_err(PipelineError::Interpolate)?;
    let mask_images: Vec<GrayImage> = processed.masks.iter().map(Mask::to_gray).collect();
    let mask_volume = interpolate_slices(&mask_images, &u, cfg.slice_pitch_mm, pitch, workers)
        .map_err(PipelineError::Interpolate)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;

    let positions: Vec<_> = records.iter().map(|r| r.position).collect();
    let spacing = inter_frame_spacing(&positions).map_err(PipelineError::Spacing)?;
    let (tilt, tilt_samples) = tilt_sigma(ds, &processed.index)?;
    let mut wall = WallTime {
        workers,
        ..WallTime::default()
    };
    if workers == 1 {
        wall.serial = Some(elapsed);
    } else {
        wall.parallel = Some(elapsed);
    }
    let report = RunReport {
        frames_in: ds.frames.len(),
        frames_kept: records.len(),
        dropped_frames: processed.index.dropped.clone(),
        scan_length_mm: processed.index.scan_length(),
        mean_spacing_mm: spacing.iter().sum::<f64>() / spacing.len() as f64,
        slice_pitch_mm: cfg.slice_pitch_mm,
        dims: volume.dims(),
        tilt_sigma_rad: tilt.into(),
        tilt_samples,
        clamp: [processed.clamp.0, processed.clamp.1],
        segmentation: if ds.masks.is_some() { "masks" } else { "otsu" }.into(),
        otsu_level: processed.otsu_level,
        wall_time_ms: wall,
    };
    Ok(Reconstruction {
        volume,
        mask_volume,
        processed,
        report,
    })
}

/// Serial run followed by a `workers`-thread run; the report carries both
/// timings. Fails if the two outputs differ.
pub fn reconstruct_benchmark(ds: &Dataset, workers: usize) -> Result<Reconstruction, PipelineError> {
    let serial = reconstruct_parallel(ds, 1)?;
    let mut out = reconstruct_parallel(ds, workers)?;
    if serial.volume != out.volume || serial.mask_volume != out.mask_volume {
        return Err(PipelineError::WorkerMismatch { workers });
    }
    let t_serial = serial.report.wall_time_ms.serial;
    let wall = &mut out.report.wall_time_ms;
    let t_parallel = wall.parallel.or(wall.serial);
    wall.serial = t_serial;
    wall.parallel = t_parallel;
    wall.speedup = t_serial.zip(t_parallel).map(|(s, p)| s / p);
    Ok(out)
}

/// Writes `volume.mhd`, `mask.mhd` (with their `.raw` files) and
/// `report.json` into `dir`.
pub fn write_reconstruction(r: &Reconstruction, dir: &std::path::Path) -> Result<(), IoError> {
    create_dir(dir)?;
    write_mhd(&r.volume, &dir.join("volume.mhd"))?;
    write_mhd(&r.mask_volume, &dir.join("mask.mhd"))?;
    write_json(&dir.join("report.json"), &r.report)
}

/// Tilt spread over the tracker samples recorded while frames were being
/// acquired. Interpolated per-frame tilts would understate it, so the raw
/// samples are used; the frame tilts are the fallback for very short scans.
fn tilt_sigma(ds: &Dataset, index: &FrameIndex) -> Result<(Tilt, usize), PipelineError> {
    let (t0, t1) = ds
        .frame_times
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let tilts: Vec<Tilt> = ds
        .poses
        .samples()
        .iter()
        .filter(|s| s.t >= t0 && s.t <= t1)
        .map(|s| rotation_to_tilt(&s.pose.rotation))
        .collect();
    if tilts.len() >= 2 {
        let sigma = tilt_statistics(&tilts).map_err(PipelineError::Spacing)?;
        return Ok((sigma, tilts.len()));
    }
    let tilts: Vec<Tilt> = index.frames.iter().map(|r| r.tilt).collect();
    let sigma = tilt_statistics(&tilts).map_err(PipelineError::Spacing)?;
    Ok((sigma, tilts.len()))
}
