//! MetaImage (`.mhd` header + `.raw` data) for 8-bit volumes.

use std::path::Path;

use crate::recon::VolumeGrid;

use super::IoError;

fn join(v: &[impl std::fmt::Display]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Writes `path` (the header) and the raw file next to it, named after the
/// header with a `.raw` extension.
pub fn write_mhd(v: &VolumeGrid, path: &Path) -> Result<(), IoError> {
    let raw_path = path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| IoError::format(path, "header path has no file name"))?;
    let header = format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         DimSize = {}\n\
         ElementSpacing = {}\n\
         Offset = {}\n\
         ElementType = MET_UCHAR\n\
         ElementByteOrderMSB = False\n\
         ElementDataFile = {raw_name}\n",
        join(&v.dims()),
        join(&v.spacing),
        join(&v.origin),
    );
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        super::create_dir(dir)?;
    }
    std::fs::write(&raw_path, v.voxels()).map_err(|e| IoError::io(&raw_path, e))?;
    std::fs::write(path, header).map_err(|e| IoError::io(path, e))
}

fn parse_triple<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<[T; 3], IoError> {
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|p| p.parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| IoError::format(path, format!("{key}: cannot parse '{value}'")))?;
    parts
        .try_into()
        .map_err(|_| IoError::format(path, format!("{key}: expected 3 values")))
}

/// Reads a header written by [`write_mhd`] (or any 3D `MET_UCHAR` file with
/// a local data file).
pub fn read_mhd(path: &Path) -> Result<VolumeGrid, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = [0.0; 3];
    let mut data_file = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let Some((key, value)) = line.split_once('=') else {
            return Err(IoError::format(path, format!("malformed line '{line}'")));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "NDims" if value != "3" => return Err(IoError::format(path, "only 3D volumes are supported")),
            "ElementType" if value != "MET_UCHAR" => {
                return Err(IoError::format(path, format!("unsupported element type {value}")))
            }
            "DimSize" => dims = Some(parse_triple::<usize>(path, key, value)?),
            "ElementSpacing" => spacing = Some(parse_triple::<f64>(path, key, value)?),
            "Offset" => origin = parse_triple::<f64>(path, key, value)?,
            "ElementDataFile" => data_file = Some(value.to_string()),
            _ => {}
        }
    }
    let dims = dims.ok_or_else(|| IoError::format(path, "missing DimSize"))?;
    let spacing = spacing.unwrap_or([1.0; 3]);
    let data_file = data_file.ok_or_else(|| IoError::format(path, "missing ElementDataFile"))?;
    let raw_path = path.parent().unwrap_or(Path::new("")).join(data_file);
    let voxels = std::fs::read(&raw_path).map_err(|e| IoError::io(&raw_path, e))?;
    VolumeGrid::from_voxels(dims, spacing, origin, voxels).map_err(|e| IoError::format(&raw_path, e))
}
