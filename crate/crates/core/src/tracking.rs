//! Pose/frame synchronization, inter-frame spacing, scan coordinates,
//! monotonic reordering and tilt statistics.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_to_tilt, Pose, Tilt};
use crate::image::GrayImage;
use crate::imgproc::{ssim, ImgprocError};

/// Frames may lie this far (s) outside the pose time range.
pub const SYNC_PADDING_S: f64 = 0.05;

/// Default duplicate threshold for [`monotonic_reorder`], mm.
pub const DEFAULT_DUPLICATE_EPS_MM: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("frame {0} lies outside the pose time range")]
    OutOfRange(usize),
    #[error("need at least two frames")]
    TooFewFrames,
    #[error("positions do not move")]
    ZeroMotion,
    #[error("fewer than two frames survive duplicate removal")]
    AllDuplicates,
    #[error("runs have {a} and {b} frames")]
    LengthMismatch { a: usize, b: usize },
    #[error("invalid pose track: {0}")]
    InvalidTrack(String),
    #[error(transparent)]
    Image(#[from] ImgprocError),
}

/// One timestamped pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub pose: Pose,
}

/// Time-ordered pose stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    samples: Vec<PoseSample>,
}

impl PoseTrack {
    /// Validates strictly increasing, finite timestamps and at least two
    /// samples.
    pub fn new(samples: Vec<PoseSample>) -> Result<Self, TrackingError> {
        if samples.len() < 2 {
            return Err(TrackingError::InvalidTrack("need at least two samples".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.t.is_finite() {
                return Err(TrackingError::InvalidTrack(format!("sample {i}: timestamp not finite")));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(TrackingError::InvalidTrack(format!(
                    "sample {i}: timestamp {} not after {}",
                    s.t,
                    samples[i - 1].t
                )));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Pose at time `t`: linear in position, spherical in rotation. Times
    /// outside the sampled range hold the end sample.
    pub fn interpolate(&self, t: f64) -> Pose {
        let s = &self.samples;
        if t <= s[0].t {
            return s[0].pose;
        }
        if t >= s[s.len() - 1].t {
            return s[s.len() - 1].pose;
        }
        // first sample strictly after t
        let hi = s.partition_point(|p| p.t <= t);
        let a = &s[hi - 1];
        let b = &s[hi];
        if a.t == t {
            return a.pose;
        }
        let f = (t - a.t) / (b.t - a.t);
        let position = a.pose.position + (b.pose.position - a.pose.position) * f;
        let qa = to_quaternion(&a.pose.rotation);
        let qb = to_quaternion(&b.pose.rotation);
        let q = qa.try_slerp(&qb, f, 1e-12).unwrap_or(qa);
        Pose::new(position, q.to_rotation_matrix().into_inner())
    }
}

fn to_quaternion(r: &Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r))
}

/// Interpolated pose for each frame time.
pub fn sync_poses_to_frames(track: &PoseTrack, frame_times: &[f64]) -> Result<Vec<Pose>, TrackingError> {
    let lo = track.start() - SYNC_PADDING_S;
    let hi = track.end() + SYNC_PADDING_S;
    frame_times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if !(t >= lo && t <= hi) {
                return Err(TrackingError::OutOfRange(i));
            }
            Ok(track.interpolate(t))
        })
        .collect()
}

/// `|p[i+1] - p[i]|` for consecutive positions.
pub fn inter_frame_spacing(positions: &[Vector3<f64>]) -> Result<Vec<f64>, TrackingError> {
    if positions.len() < 2 {
        return Err(TrackingError::TooFewFrames);
    }
    Ok(positions.windows(2).map(|w| (w[1] - w[0]).norm()).collect())
}

/// Principal direction of the positions, oriented along the net motion, and
/// each position's coordinate along it relative to the first one.
pub fn scan_coordinates(positions: &[Vector3<f64>]) -> Result<(Vector3<f64>, Vec<f64>), TrackingError> {
    let n = positions.len();
    if n < 2 {
        return Err(TrackingError::TooFewFrames);
    }
    let extent = |p: &Vector3<f64>| positions.iter().map(|q| (p - q).norm()).fold(0.0, f64::max);
    // The distance to the first position only decides the clear cases.
    if extent(&positions[0]) < 1e-6 && positions.iter().all(|p| extent(p) < 1e-6) {
        return Err(TrackingError::ZeroMotion);
    }
    let mean = positions.iter().fold(Vector3::zeros(), |a, p| a + p) / n as f64;
    let mut cov = Matrix3::zeros();
    for p in positions {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imax();
    let mut axis: Vector3<f64> = eig.eigenvectors.column(k).into_owned().normalize();
    let mut s: Vec<f64> = positions.iter().map(|p| (p - positions[0]).dot(&axis)).collect();
    let net = s[n - 1] - s[0];
    let flip = if net != 0.0 {
        net < 0.0
    } else {
        // closed path: fall back to a canonical sign
        let m = axis.iamax();
        axis[m] < 0.0
    };
    if flip {
        axis = -axis;
        for v in &mut s {
            *v = -*v;
        }
    }
    Ok((axis, s))
}

/// Per-frame tracking record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Index into the original frame stream.
    pub frame: usize,
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub tilt: Tilt,
    /// Scan coordinate, mm.
    pub s: f64,
}

/// Frames kept after reordering, plus bookkeeping of what was dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIndex {
    pub frames: Vec<FrameRecord>,
    pub axis: Vector3<f64>,
    /// Original indices dropped as duplicates.
    pub dropped: Vec<usize>,
}

impl FrameIndex {
    /// Builds records from synchronized poses.
    pub fn from_poses(poses: &[Pose], times: &[f64]) -> Result<Self, TrackingError> {
        if poses.len() != times.len() {
            return Err(TrackingError::LengthMismatch {
                a: poses.len(),
                b: times.len(),
            });
        }
        let positions: Vec<_> = poses.iter().map(|p| p.position).collect();
        let (axis, s) = scan_coordinates(&positions)?;
        let frames = poses
            .iter()
            .enumerate()
            .map(|(i, p)| FrameRecord {
                frame: i,
                timestamp: times[i],
                position: p.position,
                tilt: rotation_to_tilt(&p.rotation),
                s: s[i],
            })
            .collect();
        Ok(Self {
            frames,
            axis,
            dropped: Vec::new(),
        })
    }

    pub fn scan_length(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.s - a.s,
            _ => 0.0,
        }
    }
}

/// Stable sort by scan coordinate, then drops every frame closer than
/// `duplicate_eps` to the last kept one, preferring the earliest frame of
/// each cluster.
pub fn monotonic_reorder(index: &FrameIndex, duplicate_eps: f64) -> Result<FrameIndex, TrackingError> {
    let mut sorted = index.frames.clone();
    sorted.sort_by(|a, b| a.s.total_cmp(&b.s));
    let mut kept: Vec<FrameRecord> = Vec::with_capacity(sorted.len());
    let mut dropped = index.dropped.clone();
    let mut i = 0;
    while i < sorted.len() {
        // cluster of frames within eps of the cluster start
        let start = sorted[i].s;
        let mut j = i + 1;
        while j < sorted.len() && sorted[j].s - start < duplicate_eps {
            j += 1;
        }
        let too_close = kept.last().is_some_and(|k| start - k.s < duplicate_eps);
        let cluster = &sorted[i..j];
        let earliest = cluster
            .iter()
            .min_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.frame.cmp(&b.frame)))
            .copied()
            .expect("cluster is non-empty");
        for f in cluster {
            if too_close || f.frame != earliest.frame {
                dropped.push(f.frame);
            }
        }
        if !too_close {
            kept.push(earliest);
        }
        i = j;
    }
    if kept.len() < 2 {
        return Err(TrackingError::AllDuplicates);
    }
    dropped.sort_unstable();
    Ok(FrameIndex {
        frames: kept,
        axis: index.axis,
        dropped,
    })
}

/// Per-axis sample standard deviation, angles unwrapped toward the running
/// mean first.
pub fn tilt_statistics(tilts: &[Tilt]) -> Result<Tilt, TrackingError> {
    if tilts.len() < 2 {
        return Err(TrackingError::TooFewFrames);
    }
    let axis_std = |get: fn(&Tilt) -> f64| {
        let mut values = Vec::with_capacity(tilts.len());
        let mut mean = 0.0;
        for (i, t) in tilts.iter().enumerate() {
            let mut v = get(t);
            if i > 0 {
                v -= std::f64::consts::TAU * ((v - mean) / std::f64::consts::TAU).round();
            }
            values.push(v);
            mean += (v - mean) / (i + 1) as f64;
        }
        // shifted by the first value so a constant series gives exactly 0
        let v0 = values[0];
        let m = values.iter().map(|v| v - v0).sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - v0 - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        var.sqrt()
    };
    Ok(Tilt::new(axis_std(|t| t.x), axis_std(|t| t.y), axis_std(|t| t.z)))
}

/// SSIM of corresponding frames of two runs.
pub fn repeatability_ssim(a: &[GrayImage], b: &[GrayImage]) -> Result<Vec<f64>, TrackingError> {
    if a.len() != b.len() {
        return Err(TrackingError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| ssim(x, y).map_err(TrackingError::from))
        .collect()
}

/// Median of a list of scores (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_x, rot_z};

    fn at(t: f64, x: f64) -> PoseSample {
        PoseSample {
            t,
            pose: Pose::identity_at(Vector3::new(x, 0.0, 0.0)),
        }
    }

    #[test]
    fn sync_examples() {
        let track = PoseTrack::new(vec![at(0.0, 0.0), at(10.0, 10.0)]).unwrap();
        let p = sync_poses_to_frames(&track, &[4.0, 0.0, 10.0, 10.04]).unwrap();
        assert!((p[0].position - Vector3::new(4.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(p[1], track.samples()[0].pose);
        assert_eq!(p[2], track.samples()[1].pose);
        assert_eq!(p[3], track.samples()[1].pose);
        assert_eq!(
            sync_poses_to_frames(&track, &[1.0, -1.0]),
            Err(TrackingError::OutOfRange(1))
        );
    }

    #[test]
    fn sync_slerps_rotation() {
        let a = PoseSample {
            t: 0.0,
            pose: Pose::new(Vector3::zeros(), Matrix3::identity()),
        };
        let b = PoseSample {
            t: 1.0,
            pose: Pose::new(Vector3::zeros(), rot_z(0.4)),
        };
        let track = PoseTrack::new(vec![a, b]).unwrap();
        let mid = track.interpolate(0.25);
        assert!((mid.rotation - rot_z(0.1)).abs().max() < 1e-12);
    }

    #[test]
    fn track_rejects_unordered_times() {
        assert!(PoseTrack::new(vec![at(1.0, 0.0), at(1.0, 1.0)]).is_err());
        assert!(PoseTrack::new(vec![at(0.0, 0.0)]).is_err());
    }

    #[test]
    fn spacing_examples() {
        let d = inter_frame_spacing(&[Vector3::zeros(), Vector3::new(3.0, 4.0, 0.0)]).unwrap();
        assert_eq!(d, vec![5.0]);
        let d = inter_frame_spacing(&[Vector3::new(1.0, 1.0, 1.0); 2]).unwrap();
        assert_eq!(d, vec![0.0]);
        assert_eq!(inter_frame_spacing(&[Vector3::zeros()]), Err(TrackingError::TooFewFrames));
    }

    #[test]
    fn scan_coordinates_follow_motion() {
        let fwd: Vec<_> = (0..3).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let (axis, s) = scan_coordinates(&fwd).unwrap();
        assert!((axis - Vector3::x()).norm() < 1e-12);
        assert_eq!(s, vec![0.0, 1.0, 2.0]);
        let rev: Vec<_> = fwd.iter().rev().copied().collect();
        let (axis, s) = scan_coordinates(&rev).unwrap();
        assert!((axis + Vector3::x()).norm() < 1e-12);
        assert_eq!(s, vec![0.0, 1.0, 2.0]);
        assert_eq!(
            scan_coordinates(&[Vector3::zeros(); 4]),
            Err(TrackingError::ZeroMotion)
        );
    }

    fn index_with(s: &[f64]) -> FrameIndex {
        FrameIndex {
            frames: s
                .iter()
                .enumerate()
                .map(|(i, &s)| FrameRecord {
                    frame: i,
                    timestamp: i as f64,
                    position: Vector3::new(s, 0.0, 0.0),
                    tilt: Tilt::default(),
                    s,
                })
                .collect(),
            axis: Vector3::x(),
            dropped: Vec::new(),
        }
    }

    #[test]
    fn reorder_examples() {
        let out = monotonic_reorder(&index_with(&[0.0, 2.0, 1.0]), 0.01).unwrap();
        assert_eq!(out.frames.iter().map(|f| f.frame).collect::<Vec<_>>(), vec![0, 2, 1]);
        assert_eq!(out.frames.iter().map(|f| f.s).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
        let out = monotonic_reorder(&index_with(&[0.0, 0.005, 1.0]), 0.01).unwrap();
        assert_eq!(out.frames.iter().map(|f| f.s).collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert_eq!(out.dropped, vec![1]);
        assert_eq!(
            monotonic_reorder(&index_with(&[0.0, 0.001, 0.002]), 0.01),
            Err(TrackingError::AllDuplicates)
        );
    }

    #[test]
    fn reorder_keeps_earliest_duplicate() {
        // frame 2 sorts first but frame 0 is earlier in time
        let out = monotonic_reorder(&index_with(&[0.004, 1.0, 0.0]), 0.01).unwrap();
        assert_eq!(out.frames[0].frame, 0);
        assert_eq!(out.dropped, vec![2]);
    }

    #[test]
    fn tilt_statistics_examples() {
        let constant = vec![Tilt::new(0.2, -0.1, 3.0); 10];
        let s = tilt_statistics(&constant).unwrap();
        assert_eq!((s.x, s.y, s.z), (0.0, 0.0, 0.0));
        let n = 1000;
        let alt: Vec<_> = (0..n)
            .map(|i| Tilt::new(if i % 2 == 0 { 0.1 } else { -0.1 }, 0.0, 0.0))
            .collect();
        let s = tilt_statistics(&alt).unwrap();
        let expect = 0.1 * (n as f64 / (n as f64 - 1.0)).sqrt();
        assert!((s.x - expect).abs() < 1e-12);
    }

    #[test]
    fn tilt_statistics_unwraps_near_pi() {
        let t: Vec<_> = (0..100)
            .map(|i| {
                let z = std::f64::consts::PI - 0.01 + 0.02 * (i % 2) as f64;
                rotation_to_tilt(&(rot_x(0.0) * rot_z(z)))
            })
            .collect();
        let s = tilt_statistics(&t).unwrap();
        assert!((s.z - 0.01 * (100.0f64 / 99.0).sqrt()).abs() < 1e-9, "{}", s.z);
    }

    #[test]
    fn repeatability_examples() {
        let a = vec![GrayImage::from_fn(16, 16, |x, y| (x * y) as u8); 3];
        assert_eq!(repeatability_ssim(&a, &a).unwrap(), vec![1.0; 3]);
        assert!(matches!(
            repeatability_ssim(&a, &a[..2]),
            Err(TrackingError::LengthMismatch { a: 3, b: 2 })
        ));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }
}
