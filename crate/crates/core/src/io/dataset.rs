use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{CameraModel, Pose};
use crate::image::{GrayImage, Image};
use crate::imgproc::Mask;
use crate::tracking::{PoseSample, PoseTrack, SYNC_PADDING_S};

use super::{
    create_dir, read_png_gray, read_png_u16, write_json, write_png_gray, write_png_u16, Config, IoError,
    ValidationReport,
};

const POSE_HEADER: [&str; 13] = [
    "t", "px", "py", "pz", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
];
const ROTATION_TOL: f64 = 1e-6;

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}

pub fn mask_file_name(i: usize) -> String {
    format!("mask_{i:05}.png")
}

/// A validated acquisition, fully loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub config: Config,
    pub camera: CameraModel,
    pub frames: Vec<GrayImage>,
    pub frame_times: Vec<f64>,
    pub poses: PoseTrack,
    pub masks: Option<Vec<Mask>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.root.join("out")
    }
}

/// Marker camera captures stored under `camera/`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCaptures {
    pub times: Vec<f64>,
    pub images: Vec<PathBuf>,
    /// Per capture, when a depth file exists.
    pub depth: Vec<Option<PathBuf>>,
}

impl CameraCaptures {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn image(&self, i: usize) -> Result<GrayImage, IoError> {
        read_png_gray(&self.images[i])
    }

    pub fn depth(&self, i: usize) -> Result<Option<Image<u16>>, IoError> {
        self.depth[i].as_deref().map(read_png_u16).transpose()
    }
}

/// Numbered files `prefix_NNNNN.png` in `dir`, by index. Other names are
/// reported when `strict`.
fn numbered_files(
    dir: &Path,
    rel: &str,
    prefix: &str,
    strict: bool,
    report: &mut ValidationReport,
) -> Option<BTreeMap<usize, PathBuf>> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) => {
            report.push(rel, None, format!("cannot list directory: {e}"));
            return None;
        }
    };
    let mut out = BTreeMap::new();
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        let index = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_suffix(".png"))
            .filter(|d| d.len() >= 5 && d.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|d| d.parse::<usize>().ok());
        match index {
            Some(i) => {
                out.insert(i, entry.path());
            }
            None if strict => report.push(format!("{rel}/{name}"), None, format!("unexpected file (expected {prefix}NNNNN.png)")),
            None => {}
        }
    }
    Some(out)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_f64(field: &str) -> Option<f64> {
    field.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn check_header(rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<(), String> {
    let header = rdr.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(format!("header must be '{}'", expected.join(",")));
    }
    Ok(())
}

type Located<T> = Vec<(u64, T)>;

/// Parses `poses.csv`; problems are pushed to `report` with line numbers.
fn parse_poses(path: &Path, rel: &str, report: &mut ValidationReport) -> Option<Located<PoseSample>> {
    let mut rdr = match csv_reader(path) {
        Ok(r) => r,
        Err(e) => {
            report.push(rel, None, e.to_string());
            return None;
        }
    };
    if let Err(msg) = check_header(&mut rdr, &POSE_HEADER) {
        report.push(rel, Some(1), msg);
        return None;
    }
    let before = report.issues.len();
    let mut out: Located<PoseSample> = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line());
                report.push(rel, line, e.to_string());
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let values: Option<Vec<f64>> = rec.iter().map(parse_f64).collect();
        let Some(v) = values.filter(|v| v.len() == 13) else {
            report.push(rel, Some(line), "expected 13 finite numbers");
            continue;
        };
        let pose = Pose::new(
            Vector3::new(v[1], v[2], v[3]),
            Matrix3::new(v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11], v[12]),
        );
        if !pose.is_valid(ROTATION_TOL) {
            report.push(rel, Some(line), "rotation is not orthonormal");
        }
        if let Some((_, prev)) = out.last() {
            if !(v[0] > prev.t) {
                report.push(
                    rel,
                    Some(line),
                    format!("timestamp {} is not after the previous one ({})", v[0], prev.t),
                );
            }
        }
        out.push((line, PoseSample { t: v[0], pose }));
    }
    if out.len() < 2 {
        report.push(rel, None, "need at least two pose samples");
    }
    (report.issues.len() == before).then_some(out)
}

/// Rows of a two-column `index,t` table.
struct TimesTable {
    /// `None` if any row was rejected.
    times: Option<Vec<f64>>,
    /// Data rows, parseable or not; `None` if the table could not be read.
    rows: Option<usize>,
}

fn parse_times(path: &Path, rel: &str, header: [&str; 2], report: &mut ValidationReport) -> Option<Vec<f64>> {
    parse_times_table(path, rel, header, report).times
}

/// Parses a two-column `index,t` table whose first column must count up
/// from 0.
fn parse_times_table(path: &Path, rel: &str, header: [&str; 2], report: &mut ValidationReport) -> TimesTable {
    let unreadable = TimesTable { times: None, rows: None };
    let mut rdr = match csv_reader(path) {
        Ok(r) => r,
        Err(e) => {
            report.push(rel, None, e.to_string());
            return unreadable;
        }
    };
    if let Err(msg) = check_header(&mut rdr, &header) {
        report.push(rel, Some(1), msg);
        return unreadable;
    }
    let before = report.issues.len();
    let mut out: Vec<f64> = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        rows += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.push(rel, e.position().map(|p| p.line()), e.to_string());
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let index = rec.get(0).and_then(|f| f.parse::<usize>().ok());
        let t = rec.get(1).and_then(parse_f64);
        match (index, t) {
            (Some(i), Some(t)) => {
                if i != out.len() {
                    report.push(rel, Some(line), format!("{} {i} out of sequence (expected {})", header[0], out.len()));
                }
                if out.last().is_some_and(|&p| !(t > p)) {
                    report.push(rel, Some(line), format!("timestamp {t} is not after the previous one"));
                }
                out.push(t);
            }
            _ => report.push(rel, Some(line), "expected an integer index and a finite time"),
        }
    }
    TimesTable {
        times: (report.issues.len() == before).then_some(out),
        rows: Some(rows),
    }
}

fn load_images(
    files: &BTreeMap<usize, PathBuf>,
    rel: &str,
    root: &Path,
    report: &mut ValidationReport,
) -> Vec<Option<GrayImage>> {
    files
        .values()
        .map(|p| match read_png_gray(p) {
            Ok(img) => Some(img),
            Err(e) => {
                let name = p.strip_prefix(root).map_or_else(|_| PathBuf::from(rel), Path::to_path_buf);
                report.push(name, None, format!("cannot decode PNG: {e}"));
                None
            }
        })
        .collect()
}

/// Checks that indices are exactly `0..expected`, naming every gap.
fn check_sequence(files: &BTreeMap<usize, PathBuf>, expected: usize, rel: &str, name: fn(usize) -> String, report: &mut ValidationReport) {
    for i in 0..expected {
        if !files.contains_key(&i) {
            report.push(format!("{rel}/{}", name(i)), None, format!("missing (index {i} of {expected})"));
        }
    }
    for &i in files.keys().filter(|&&i| i >= expected) {
        report.push(format!("{rel}/{}", name(i)), None, format!("index {i} beyond the {expected} timed frames"));
    }
}

fn read_config(root: &Path, report: &mut ValidationReport) -> Option<Config> {
    let config_path = root.join("config.toml");
    if config_path.exists() {
        match std::fs::read_to_string(&config_path)
            .map_err(|e| e.to_string())
            .and_then(|t| toml::from_str::<Config>(&t).map_err(|e| e.to_string()))
        {
            Ok(c) => {
                for p in c.problems() {
                    report.push("config.toml", None, p);
                }
                Some(c)
            }
            Err(e) => {
                report.push("config.toml", None, e.trim().to_string());
                None
            }
        }
    } else {
        report.push("config.toml", None, "missing");
        None
    }
}

fn read_camera(root: &Path, report: &mut ValidationReport) -> Option<CameraModel> {
    let camera_path = root.join("calib/camera.json");
    if camera_path.exists() {
        match super::read_json::<CameraModel>(&camera_path) {
            Ok(c) => match c.validate() {
                Ok(()) => Some(c),
                Err(e) => {
                    report.push("calib/camera.json", None, e.to_string());
                    None
                }
            },
            Err(e) => {
                report.push("calib/camera.json", None, e.to_string());
                None
            }
        }
    } else {
        report.push("calib/camera.json", None, "missing");
        None
    }
}

/// Configuration, calibration and camera captures: what marker tracking
/// needs, without the ultrasound side of the dataset.
pub fn load_tracking_inputs(root: &Path) -> Result<(Config, CameraModel, CameraCaptures), IoError> {
    let mut report = ValidationReport::new(root);
    if !root.is_dir() {
        report.push("", None, "dataset root does not exist or is not a directory");
        return Err(IoError::Validation(report));
    }
    let config = read_config(root, &mut report);
    let camera = read_camera(root, &mut report);
    let captures = match load_camera_captures(root) {
        Ok(c) => Some(c),
        Err(IoError::Validation(r)) => {
            report.issues.extend(r.issues);
            None
        }
        Err(e) => return Err(e),
    };
    match (config, camera, captures) {
        (Some(a), Some(b), Some(c)) if report.is_empty() => Ok((a, b, c)),
        _ => Err(IoError::Validation(report)),
    }
}

/// Loads and validates a dataset. Any problem fails the whole load; the
/// error lists all of them.
pub fn load_dataset(root: &Path) -> Result<Dataset, IoError> {
    let mut report = ValidationReport::new(root);
    if !root.is_dir() {
        report.push("", None, "dataset root does not exist or is not a directory");
        return Err(IoError::Validation(report));
    }

    let config = read_config(root, &mut report);
    let camera = read_camera(root, &mut report);

    let times_path = root.join("frame_times.csv");
    let (frame_times, frame_rows) = if times_path.exists() {
        let table = parse_times_table(&times_path, "frame_times.csv", ["frame", "t"], &mut report);
        (table.times, table.rows)
    } else {
        report.push("frame_times.csv", None, "missing");
        (None, None)
    };

    let poses_path = root.join("poses.csv");
    let poses = if poses_path.exists() {
        parse_poses(&poses_path, "poses.csv", &mut report)
    } else {
        report.push("poses.csv", None, "missing");
        None
    };

    let frames_dir = root.join("frames");
    let frame_files = if frames_dir.is_dir() {
        numbered_files(&frames_dir, "frames", "frame_", true, &mut report)
    } else {
        report.push("frames", None, "missing");
        None
    };

    let masks_dir = root.join("masks");
    let mask_files = if masks_dir.is_dir() {
        numbered_files(&masks_dir, "masks", "mask_", true, &mut report)
    } else {
        None
    };

    // Cross-file checks.
    // Row count, so file checks still run when some rows are bad.
    let expected = frame_rows;
    if let (Some(files), Some(n)) = (&frame_files, expected) {
        if files.len() != n {
            report.push("frames", None, format!("{} frame files but {n} rows in frame_times.csv", files.len()));
        }
        check_sequence(files, n, "frames", frame_file_name, &mut report);
    }
    if let (Some(files), Some(n)) = (&mask_files, expected) {
        if files.len() != n {
            report.push("masks", None, format!("{} mask files but {n} frames", files.len()));
        }
        check_sequence(files, n, "masks", mask_file_name, &mut report);
    }
    if let (Some(times), Some(samples)) = (&frame_times, &poses) {
        if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
            let lo = first.1.t - SYNC_PADDING_S;
            let hi = last.1.t + SYNC_PADDING_S;
            let outside: Vec<usize> = (0..times.len()).filter(|&i| !(times[i] >= lo && times[i] <= hi)).collect();
            if !outside.is_empty() {
                let shown: Vec<String> = outside.iter().take(10).map(|i| i.to_string()).collect();
                report.push(
                    "frame_times.csv",
                    None,
                    format!(
                        "{} frames outside the pose time range [{lo}, {hi}]: {}{}",
                        outside.len(),
                        shown.join(", "),
                        if outside.len() > 10 { ", ..." } else { "" }
                    ),
                );
            }
        }
    }

    let frames = frame_files
        .as_ref()
        .map(|files| load_images(files, "frames", root, &mut report));
    let masks = mask_files
        .as_ref()
        .map(|files| load_images(files, "masks", root, &mut report));
    if !report.is_empty() {
        return Err(IoError::Validation(report));
    }
    let samples = poses.expect("checked").into_iter().map(|(_, s)| s).collect();
    let poses = PoseTrack::new(samples).map_err(|e| IoError::format(&poses_path, e))?;
    Ok(Dataset {
        root: root.to_path_buf(),
        config: config.expect("checked"),
        camera: camera.expect("checked"),
        frames: frames.expect("checked").into_iter().map(|f| f.expect("checked")).collect(),
        frame_times: frame_times.expect("checked"),
        poses,
        masks: masks.map(|m| m.into_iter().map(|g| Mask::from_gray(&g.expect("checked"))).collect()),
    })
}

/// Reads `poses.csv` on its own.
pub fn read_poses(path: &Path) -> Result<PoseTrack, IoError> {
    let mut report = ValidationReport::new(path);
    let rel = path.file_name().map_or("poses.csv".into(), |n| n.to_string_lossy().into_owned());
    match parse_poses(path, &rel, &mut report) {
        Some(v) => PoseTrack::new(v.into_iter().map(|(_, s)| s).collect()).map_err(|e| IoError::format(path, e)),
        None => Err(IoError::Validation(report)),
    }
}

pub fn read_frame_times(path: &Path) -> Result<Vec<f64>, IoError> {
    let mut report = ValidationReport::new(path);
    parse_times(path, "frame_times.csv", ["frame", "t"], &mut report).ok_or(IoError::Validation(report))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, IoError> {
    csv::Writer::from_path(path).map_err(|e| IoError::format(path, e))
}

/// Floats are written in shortest round-trip form.
pub fn write_poses(path: &Path, samples: &[PoseSample]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| IoError::format(path, e);
    w.write_record(POSE_HEADER).map_err(err)?;
    for s in samples {
        let p = &s.pose.position;
        let r = &s.pose.rotation;
        let mut row = vec![s.t.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string()];
        for i in 0..3 {
            for j in 0..3 {
                row.push(r[(i, j)].to_string());
            }
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

fn write_times(path: &Path, header: [&str; 2], times: &[f64]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| IoError::format(path, e);
    w.write_record(header).map_err(err)?;
    for (i, t) in times.iter().enumerate() {
        w.write_record([i.to_string(), t.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_frame_times(path: &Path, times: &[f64]) -> Result<(), IoError> {
    write_times(path, ["frame", "t"], times)
}

pub fn write_camera_times(root: &Path, times: &[f64]) -> Result<(), IoError> {
    let dir = root.join("camera");
    create_dir(&dir)?;
    write_times(&dir.join("times.csv"), ["index", "t"], times)
}

/// Writes one capture as `camera/cam_NNNNN.png` (+ `depth_NNNNN.png`).
pub fn write_camera_capture(root: &Path, index: usize, image: &GrayImage, depth: Option<&Image<u16>>) -> Result<(), IoError> {
    let dir = root.join("camera");
    create_dir(&dir)?;
    write_png_gray(&dir.join(format!("cam_{index:05}.png")), image)?;
    if let Some(d) = depth {
        write_png_u16(&dir.join(format!("depth_{index:05}.png")), d)?;
    }
    Ok(())
}

/// Lists the captures under `camera/`.
pub fn load_camera_captures(root: &Path) -> Result<CameraCaptures, IoError> {
    let mut report = ValidationReport::new(root);
    let dir = root.join("camera");
    let times_path = dir.join("times.csv");
    if !times_path.exists() {
        report.push("camera/times.csv", None, "missing");
        return Err(IoError::Validation(report));
    }
    let times = parse_times(&times_path, "camera/times.csv", ["index", "t"], &mut report);
    let files = numbered_files(&dir, "camera", "cam_", false, &mut report);
    let (Some(times), Some(files)) = (times, files) else {
        return Err(IoError::Validation(report));
    };
    check_sequence(&files, times.len(), "camera", |i| format!("cam_{i:05}.png"), &mut report);
    if !report.is_empty() {
        return Err(IoError::Validation(report));
    }
    let images: Vec<PathBuf> = (0..times.len()).map(|i| files[&i].clone()).collect();
    let depth = (0..times.len())
        .map(|i| Some(dir.join(format!("depth_{i:05}.png"))).filter(|p| p.exists()))
        .collect();
    Ok(CameraCaptures { times, images, depth })
}

/// Writes every part of `ds` under `ds.root`. Existing files are
/// overwritten.
pub fn write_dataset(ds: &Dataset) -> Result<(), IoError> {
    let root = &ds.root;
    create_dir(&root.join("frames"))?;
    create_dir(&root.join("calib"))?;
    create_dir(&root.join("out"))?;
    for (i, f) in ds.frames.iter().enumerate() {
        write_png_gray(&root.join("frames").join(frame_file_name(i)), f)?;
    }
    if let Some(masks) = &ds.masks {
        create_dir(&root.join("masks"))?;
        for (i, m) in masks.iter().enumerate() {
            write_png_gray(&root.join("masks").join(mask_file_name(i)), &m.to_gray())?;
        }
    }
    write_json(&root.join("calib/camera.json"), &ds.camera)?;
    write_poses(&root.join("poses.csv"), ds.poses.samples())?;
    write_frame_times(&root.join("frame_times.csv"), &ds.frame_times)?;
    let config_path = root.join("config.toml");
    let text = toml::to_string(&ds.config).map_err(|e| IoError::format(&config_path, e))?;
    std::fs::write(&config_path, text).map_err(|e| IoError::io(&config_path, e))
}
