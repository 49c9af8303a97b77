//! Whole acquisitions: a probe swept along a straight track with jitter,
//! B-mode frames at the frame rate and marker poses at the camera rate.
//!
//! World (phantom) axes: `x` lateral, `y` depth, `z` along the track. The
//! tracking camera looks at the probe marker from the side: camera `x` is
//! world `z`, camera `y` is world `x` and camera `z` is world `y`, and the
//! track passes `standoff_mm` in front of the lens, centred on the optical
//! axis.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_to_tilt, tilt_to_rotation, CameraModel, Pose, Tilt};
use crate::image::GrayImage;
use crate::imgproc::PixelPitch;
use crate::io::{write_camera_capture, write_camera_times, write_dataset, write_json, Config, Dataset};
use crate::marker::{DepthMap, MarkerDetector, MarkerDictionary};
use crate::par::par_map;
use crate::recon::{ReconError, Reconstruction, VolumeGrid};
use crate::tracking::{PoseSample, PoseTrack};

use super::camera::{render_depth, render_markers, MarkerPlacement, CAMERA_SIZE};
use super::{simulate_frame, Phantom, SimError};

/// Camera-from-world axis permutation.
pub fn world_to_camera() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    pub scan_length_mm: f64,
    pub speed_mm_s: f64,
    pub frame_rate_hz: f64,
    pub pose_rate_hz: f64,
    /// Per-axis standard deviation of the lateral and axial probe wobble.
    pub position_jitter_mm: f64,
    /// Standard deviation of the probe tilt about each camera axis.
    pub tilt_jitter_rad: [f64; 3],
    pub seed: u64,
    /// Traverse the same path, with the same wobble, from the far end.
    pub reverse: bool,
    pub standoff_mm: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            scan_length_mm: 91.0,
            speed_mm_s: 18.2,
            frame_rate_hz: 100.0,
            pose_rate_hz: 60.0,
            position_jitter_mm: 0.1,
            tilt_jitter_rad: [0.01; 3],
            seed: 0,
            reverse: false,
            standoff_mm: 400.0,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("scan_length_mm", self.scan_length_mm),
            ("speed_mm_s", self.speed_mm_s),
            ("frame_rate_hz", self.frame_rate_hz),
            ("pose_rate_hz", self.pose_rate_hz),
            ("standoff_mm", self.standoff_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Invalid(format!("{name} must be positive")));
            }
        }
        if !(self.position_jitter_mm >= 0.0 && self.tilt_jitter_rad.iter().all(|&t| t >= 0.0)) {
            return Err(SimError::Invalid("jitter must be non-negative".into()));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.scan_length_mm / self.speed_mm_s
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s() * self.frame_rate_hz + 1e-9).floor() as usize + 1
    }

    pub fn pose_count(&self) -> usize {
        (self.duration_s() * self.pose_rate_hz + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tracking {
    /// Write the true marker poses.
    Perfect,
    /// Render the marker and run the detector on it.
    Marker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    pub phantom: Phantom,
    pub trajectory: TrajectorySpec,
    pub camera: CameraModel,
    pub camera_size: (usize, usize),
    pub marker_id: u32,
    pub marker_side_mm: f64,
    pub frame_shape: (usize, usize),
    pub pitch: PixelPitch,
    pub tracking: Tracking,
    /// Seed of the speckle streams; the trajectory seed when `None`.
    pub speckle_seed: Option<u64>,
    /// `false` renders noiseless frames.
    pub speckle: bool,
    /// Feed a synthetic depth channel to the detector.
    pub depth: bool,
    pub depth_mm_per_unit: f64,
    pub workers: usize,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            phantom: Phantom::default_cylinder(),
            trajectory: TrajectorySpec::default(),
            camera: CameraModel::realsense_d435(),
            camera_size: CAMERA_SIZE,
            marker_id: 23,
            marker_side_mm: 40.0,
            frame_shape: (256, 190),
            pitch: PixelPitch {
                lateral: 0.15,
                axial: 0.2,
            },
            tracking: Tracking::Marker,
            speckle_seed: None,
            speckle: true,
            depth: true,
            depth_mm_per_unit: 0.02,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Ground truth written to `out/truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Track position (world `z`) of each frame, in acquisition order.
    pub s_mm: Vec<f64>,
    /// Probe tilt of each frame, camera axes.
    pub tilt_rad: Vec<[f64; 3]>,
    pub frame_times: Vec<f64>,
    pub pose_times: Vec<f64>,
    /// True marker position (camera frame) of each pose sample.
    pub pose_positions_mm: Vec<[f64; 3]>,
    pub pose_tilt_rad: Vec<[f64; 3]>,
    /// Pose samples the detector missed (absent from `poses.csv`).
    pub missed_poses: Vec<usize>,
    pub tracking: Tracking,
    pub marker_id: u32,
    pub marker_side_mm: f64,
    pub phantom: Phantom,
    pub trajectory: TrajectorySpec,
}

#[derive(Debug, Clone)]
pub struct SimulatedScan {
    pub dataset: Dataset,
    pub truth: Truth,
    pub spec: ScanSpec,
}

#[derive(Debug, Clone, Copy)]
struct Knot {
    offset: [f64; 2],
    tilt: [f64; 3],
}

/// Probe state along the track, indexed by forward time.
struct Motion<'a> {
    traj: &'a TrajectorySpec,
    knots: Vec<Knot>,
}

#[derive(Debug, Clone, Copy)]
struct ProbeState {
    s: f64,
    offset: [f64; 2],
    tilt: Tilt,
}

impl<'a> Motion<'a> {
    fn new(traj: &'a TrajectorySpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(traj.seed);
        let mut normal = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
        let knots = (0..traj.pose_count())
            .map(|_| {
                let offset = [normal(traj.position_jitter_mm), normal(traj.position_jitter_mm)];
                let tilt = traj.tilt_jitter_rad.map(&mut normal);
                Knot { offset, tilt }
            })
            .collect();
        Self { traj, knots }
    }

    fn at_knot(&self, j: usize) -> ProbeState {
        let k = self.knots[j];
        ProbeState {
            s: self.traj.speed_mm_s * (j as f64 / self.traj.pose_rate_hz),
            offset: k.offset,
            tilt: Tilt::new(k.tilt[0], k.tilt[1], k.tilt[2]),
        }
    }

    fn at_time(&self, tau: f64) -> ProbeState {
        let x = tau * self.traj.pose_rate_hz;
        let last = self.knots.len() - 1;
        let j = (x.floor().max(0.0) as usize).min(last);
        let f = if j == last { 0.0 } else { x - j as f64 };
        let a = self.knots[j];
        let b = self.knots[(j + 1).min(last)];
        let lerp = |p: f64, q: f64| p + (q - p) * f;
        ProbeState {
            s: self.traj.speed_mm_s * tau,
            offset: [lerp(a.offset[0], b.offset[0]), lerp(a.offset[1], b.offset[1])],
            tilt: Tilt::new(lerp(a.tilt[0], b.tilt[0]), lerp(a.tilt[1], b.tilt[1]), lerp(a.tilt[2], b.tilt[2])),
        }
    }
}

impl ProbeState {
    fn marker_pose(&self, traj: &TrajectorySpec) -> Pose {
        Pose::new(
            Vector3::new(self.s - traj.scan_length_mm / 2.0, self.offset[0], traj.standoff_mm + self.offset[1]),
            tilt_to_rotation(&self.tilt),
        )
    }

    /// Frame-local to world.
    fn frame_pose(&self) -> Pose {
        let a = world_to_camera();
        Pose::new(
            Vector3::new(self.offset[0], self.offset[1], self.s),
            a.transpose() * tilt_to_rotation(&self.tilt) * a,
        )
    }
}

/// Acquisition order to forward index.
fn physical(i: usize, count: usize, reverse: bool) -> usize {
    if reverse {
        count - 1 - i
    } else {
        i
    }
}

fn capture(spec: &ScanSpec, placement: &MarkerPlacement) -> (GrayImage, Option<crate::image::Image<u16>>) {
    let img = render_markers(&spec.camera, std::slice::from_ref(placement), spec.camera_size);
    let depth = spec
        .depth
        .then(|| render_depth(&spec.camera, placement, spec.camera_size, spec.depth_mm_per_unit));
    (img, depth)
}

fn placements(spec: &ScanSpec, motion: &Motion, dict: &MarkerDictionary) -> Result<Vec<MarkerPlacement>, SimError> {
    let bits = dict
        .code(spec.marker_id)
        .ok_or_else(|| SimError::Invalid(format!("marker id {} not in dictionary", spec.marker_id)))?;
    let n = spec.trajectory.pose_count();
    Ok((0..n)
        .map(|j| MarkerPlacement {
            bits,
            side_mm: spec.marker_side_mm,
            pose: motion.at_knot(physical(j, n, spec.trajectory.reverse)).marker_pose(&spec.trajectory),
        })
        .collect())
}

/// Runs the simulated acquisition in memory.
pub fn simulate_scan(spec: &ScanSpec) -> Result<SimulatedScan, SimError> {
    let traj = &spec.trajectory;
    traj.validate()?;
    spec.phantom.validate()?;
    if spec.workers == 0 {
        return Err(SimError::Invalid("workers must be at least 1".into()));
    }
    let n = traj.frame_count();
    let np = traj.pose_count();
    if n < 2 || np < 2 {
        return Err(SimError::Invalid("scan too short for two frames and two poses".into()));
    }
    let frame_end = (n - 1) as f64 / traj.frame_rate_hz;
    let pose_end = (np - 1) as f64 / traj.pose_rate_hz;
    if traj.reverse && (frame_end - pose_end).abs() > 1e-9 {
        return Err(SimError::Invalid(format!(
            "a reversed scan needs the last frame and last pose at the same time ({frame_end} s vs {pose_end} s)"
        )));
    }
    let motion = Motion::new(traj);
    let dict = MarkerDictionary::builtin_4x4_50();

    // B-mode frames
    let speckle_seed = spec.speckle_seed.unwrap_or(traj.seed);
    let frame_ids: Vec<usize> = (0..n).collect();
    let frame_states: Vec<ProbeState> = frame_ids
        .iter()
        .map(|&k| motion.at_time(physical(k, n, traj.reverse) as f64 / traj.frame_rate_hz))
        .collect();
    let frames: Vec<GrayImage> = par_map(&frame_ids, spec.workers, |&k| {
        let state = &frame_states[k];
        let pose = state.frame_pose();
        let frame = if spec.speckle {
            let mut rng = ChaCha8Rng::seed_from_u64(speckle_seed);
            rng.set_stream(physical(k, n, traj.reverse) as u64);
            simulate_frame(&spec.phantom, &pose, spec.frame_shape, spec.pitch, Some(&mut rng))
        } else {
            simulate_frame::<ChaCha8Rng>(&spec.phantom, &pose, spec.frame_shape, spec.pitch, None)
        };
        Ok::<_, SimError>(frame.pixels)
    })?;
    let frame_times: Vec<f64> = (0..n).map(|k| k as f64 / traj.frame_rate_hz).collect();

    // Pose log
    let pose_times: Vec<f64> = (0..np).map(|j| j as f64 / traj.pose_rate_hz).collect();
    let placements = placements(spec, &motion, &dict)?;
    let measured: Vec<Option<Pose>> = match spec.tracking {
        Tracking::Perfect => placements.iter().map(|p| Some(p.pose)).collect(),
        Tracking::Marker => {
            let detector = MarkerDetector::new(spec.camera, dict.clone(), spec.marker_side_mm);
            let ids: Vec<usize> = (0..np).collect();
            par_map(&ids, spec.workers, |&j| {
                let (img, depth) = capture(spec, &placements[j]);
                let depth = depth.map(|d| DepthMap::new(d, spec.depth_mm_per_unit));
                let obs = detector.detect(&img, depth.as_ref(), pose_times[j]);
                Ok::<_, SimError>(obs.into_iter().find(|o| o.id == spec.marker_id).map(|o| o.pose))
            })?
        }
    };
    let mut samples = Vec::with_capacity(np);
    let mut missed = Vec::new();
    for (j, m) in measured.iter().enumerate() {
        match m {
            Some(pose) => samples.push(PoseSample {
                t: pose_times[j],
                pose: *pose,
            }),
            None => missed.push(j),
        }
    }
    let poses = PoseTrack::new(samples)
        .map_err(|e| SimError::Invalid(format!("marker tracking failed ({} of {np} captures missed): {e}", missed.len())))?;

    let truth = Truth {
        s_mm: frame_states.iter().map(|s| s.s).collect(),
        tilt_rad: frame_states.iter().map(|s| s.tilt.as_array()).collect(),
        frame_times: frame_times.clone(),
        pose_times,
        pose_positions_mm: placements.iter().map(|p| p.pose.position.into()).collect(),
        pose_tilt_rad: placements.iter().map(|p| rotation_to_tilt(&p.pose.rotation).as_array()).collect(),
        missed_poses: missed,
        tracking: spec.tracking,
        marker_id: spec.marker_id,
        marker_side_mm: spec.marker_side_mm,
        phantom: spec.phantom.clone(),
        trajectory: traj.clone(),
    };
    let config = Config {
        marker_side_mm: spec.marker_side_mm,
        marker_id: Some(spec.marker_id),
        pixel_pitch_lateral_mm: spec.pitch.lateral,
        pixel_pitch_axial_mm: spec.pitch.axial,
        depth_mm_per_unit: spec.depth_mm_per_unit,
        ..Config::default()
    };
    let dataset = Dataset {
        root: PathBuf::new(),
        config,
        camera: spec.camera,
        frames,
        frame_times,
        poses,
        masks: None,
    };
    Ok(SimulatedScan {
        dataset,
        truth,
        spec: spec.clone(),
    })
}

impl SimulatedScan {
    /// Writes the dataset, `out/truth.json` and, optionally, the camera
    /// captures under `root`.
    pub fn write(&mut self, root: &Path, with_camera: bool) -> Result<(), SimError> {
        self.dataset.root = root.to_path_buf();
        write_dataset(&self.dataset)?;
        write_json(&root.join("out/truth.json"), &self.truth)?;
        if with_camera {
            let motion = Motion::new(&self.spec.trajectory);
            let dict = MarkerDictionary::builtin_4x4_50();
            let placements = placements(&self.spec, &motion, &dict)?;
            let ids: Vec<usize> = (0..placements.len()).collect();
            par_map(&ids, self.spec.workers, |&j| {
                let (img, depth) = capture(&self.spec, &placements[j]);
                write_camera_capture(root, j, &img, depth.as_ref())
            })?;
            write_camera_times(root, &self.truth.pose_times)?;
        }
        Ok(())
    }
}

/// Ground truth on the grid of a reconstruction of a simulated scan.
///
/// Plane positions are mapped to the track through the kept frames: the
/// measured scan coordinate and the true track position differ by a sign
/// and an offset, both estimated from the frames themselves.
pub fn scan_aligned_truth(ph: &Phantom, recon: &Reconstruction, truth: &Truth) -> Result<VolumeGrid, ReconError> {
    let index = &recon.processed.index;
    let u: Vec<f64> = index.frames.iter().map(|r| r.position.dot(&index.axis)).collect();
    let s: Vec<f64> = index.frames.iter().map(|r| truth.s_mm[r.frame]).collect();
    let n = u.len() as f64;
    let (mu, ms) = (u.iter().sum::<f64>() / n, s.iter().sum::<f64>() / n);
    let cov: f64 = u.iter().zip(&s).map(|(a, b)| (a - mu) * (b - ms)).sum();
    let sign = if cov < 0.0 { -1.0 } else { 1.0 };
    let offset = ms - sign * mu;
    let v = &recon.volume;
    super::ground_truth_volume_mapped(ph, v.dims(), v.spacing, v.origin, |z| sign * z + offset)
}
