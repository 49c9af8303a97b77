//! Dataset folder contract, CSV/JSON/PNG readers and writers, and MHD/RAW
//! volume export.
//!
//! Dataset layout:
//!
//! ```text
//! root/
//!   frames/frame_00000.png ...     8-bit B-mode frames
//!   masks/mask_00000.png ...       optional, non-zero = foreground
//!   calib/camera.json              intrinsics + distortion
//!   camera/cam_00000.png ...       optional marker camera captures
//!   camera/depth_00000.png ...     optional 16-bit depth, 0 = no data
//!   camera/times.csv               index,t
//!   poses.csv                      t,px,py,pz,r00..r22 (camera frame, mm)
//!   frame_times.csv                frame,t
//!   config.toml
//!   out/                           results
//! ```

mod config;
mod dataset;
mod mhd;
mod slices;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::image::{GrayImage, Image};

pub use config::Config;
pub use dataset::{
    frame_file_name, load_camera_captures, load_dataset, load_tracking_inputs, mask_file_name, read_frame_times, read_poses,
    write_camera_capture, write_camera_times, write_dataset, write_frame_times, write_poses, CameraCaptures,
    Dataset,
};
pub use mhd::{read_mhd, write_mhd};
pub use slices::{export_slices, read_slice_index, SliceIndex};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Validation(ValidationReport),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, message: impl fmt::Display) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

/// One problem found while validating a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    /// Path relative to the dataset root.
    pub path: PathBuf,
    /// 1-based line for text files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Every problem found in one pass over a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub root: PathBuf,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            issues: Vec::new(),
        }
    }

    pub fn push(&mut self, path: impl Into<PathBuf>, line: Option<u64>, message: impl Into<String>) {
        self.issues.push(Issue {
            path: path.into(),
            line,
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    /// Issues mentioning `path` (relative to the root).
    pub fn for_path<'a>(&'a self, path: &'a str) -> impl Iterator<Item = &'a Issue> + 'a {
        self.issues.iter().filter(move |i| i.path == Path::new(path))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "dataset {} failed validation ({} issues):",
            self.root.display(),
            self.issues.len()
        )?;
        for issue in &self.issues {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(path).map_err(|e| IoError::io(path, e))
}

pub fn read_png_gray(path: &Path) -> Result<GrayImage, IoError> {
    let img = image::open(path).map_err(|e| IoError::format(path, e))?;
    let g = img.into_luma8();
    let (w, h) = g.dimensions();
    Ok(GrayImage::from_vec(w as usize, h as usize, g.into_raw()))
}

pub fn write_png_gray(path: &Path, img: &GrayImage) -> Result<(), IoError> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.as_slice().to_vec())
        .expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| IoError::format(path, e))
}

pub fn read_png_u16(path: &Path) -> Result<Image<u16>, IoError> {
    let img = image::open(path).map_err(|e| IoError::format(path, e))?;
    let g = img.into_luma16();
    let (w, h) = g.dimensions();
    Ok(Image::from_vec(w as usize, h as usize, g.into_raw()))
}

pub fn write_png_u16(path: &Path, img: &Image<u16>) -> Result<(), IoError> {
    let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.as_slice().to_vec())
            .expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| IoError::format(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::format(path, e))
}
