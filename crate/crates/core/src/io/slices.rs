use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::recon::{Plane, VolumeGrid};

use super::{create_dir, read_json, write_json, write_png_gray, IoError};

/// `index.json` written next to exported slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceIndex {
    pub plane: Plane,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub pitch_x_mm: f64,
    pub pitch_y_mm: f64,
    pub pattern: String,
}

/// Writes every slice of one orientation as `slice_%05d.png` into `dir`,
/// creating it if needed.
pub fn export_slices(v: &VolumeGrid, plane: Plane, dir: &Path) -> Result<SliceIndex, IoError> {
    create_dir(dir)?;
    let count = v.plane_count(plane);
    let mut first = None;
    for k in 0..count {
        let slice = v.extract_mpr(plane, k).expect("index below plane count");
        write_png_gray(&dir.join(format!("slice_{k:05}.png")), &slice.image)?;
        first.get_or_insert(slice);
    }
    let first = first.expect("volumes have at least one slice");
    let index = SliceIndex {
        plane,
        count,
        width: first.image.width(),
        height: first.image.height(),
        pitch_x_mm: first.pitch_x,
        pitch_y_mm: first.pitch_y,
        pattern: "slice_%05d.png".into(),
    };
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}

pub fn read_slice_index(dir: &Path) -> Result<SliceIndex, IoError> {
    read_json(&dir.join("index.json"))
}
