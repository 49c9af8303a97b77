use std::collections::BTreeMap;
use std::path::Path;

use freehand3d::io::{load_dataset, read_json};
use freehand3d::sim::{simulate_scan, ScanSpec, Tracking, TrajectorySpec, Truth};
use proptest::prelude::*;

fn small_spec(seed: u64, workers: usize) -> ScanSpec {
    ScanSpec {
        trajectory: TrajectorySpec {
            scan_length_mm: 6.0,
            seed,
            ..TrajectorySpec::default()
        },
        frame_shape: (48, 40),
        workers,
        ..ScanSpec::default()
    }
}

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn written(spec: &ScanSpec) -> (tempfile::TempDir, BTreeMap<String, Vec<u8>>) {
    let dir = tempfile::tempdir().unwrap();
    simulate_scan(spec).unwrap().write(dir.path(), true).unwrap();
    let files = tree(dir.path());
    (dir, files)
}

#[test]
fn same_seed_gives_identical_files_for_any_worker_count() {
    let (_a, one) = written(&small_spec(5, 1));
    let (_b, again) = written(&small_spec(5, 1));
    let (_c, many) = written(&small_spec(5, 3));
    assert!(one.keys().any(|k| k.starts_with("camera")));
    assert_eq!(one, again);
    assert_eq!(one, many);
    let (_d, other) = written(&small_spec(6, 1));
    assert_ne!(one["frames/frame_00000.png"], other["frames/frame_00000.png"]);
}

#[test]
fn timestamps_interleave_at_the_exact_rate_ratio() {
    let spec = ScanSpec {
        tracking: Tracking::Perfect,
        ..small_spec(1, 1)
    };
    let dir = tempfile::tempdir().unwrap();
    simulate_scan(&spec).unwrap().write(dir.path(), false).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    let pose_t: Vec<f64> = ds.poses.samples().iter().map(|s| s.t).collect();
    for (k, &t) in ds.frame_times.iter().enumerate() {
        assert_eq!(t.to_bits(), (k as f64 / 100.0).to_bits());
    }
    for (j, &t) in pose_t.iter().enumerate() {
        assert_eq!(t.to_bits(), (j as f64 / 60.0).to_bits());
    }
    // 100 Hz against 60 Hz: frame k and pose j coincide when 3k = 5j
    for (k, &tf) in ds.frame_times.iter().enumerate() {
        for (j, &tp) in pose_t.iter().enumerate() {
            assert_eq!(tf.partial_cmp(&tp), (3 * k).partial_cmp(&(5 * j)), "frame {k} pose {j}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn marker_tracked_poses_stay_within_a_millimetre(
        seed in any::<u64>(),
        length in 3.0..15.0f64,
        speed in 5.0..30.0f64,
        standoff in 300.0..550.0f64,
        position_jitter in 0.0..0.5f64,
        tilt_jitter in prop::array::uniform3(0.0..0.08f64),
    ) {
        let spec = ScanSpec {
            trajectory: TrajectorySpec {
                scan_length_mm: length,
                speed_mm_s: speed,
                standoff_mm: standoff,
                position_jitter_mm: position_jitter,
                tilt_jitter_rad: tilt_jitter,
                seed,
                ..TrajectorySpec::default()
            },
            frame_shape: (32, 24),
            speckle: false,
            workers: 1,
            ..ScanSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        simulate_scan(&spec).unwrap().write(dir.path(), false).unwrap();
        let truth: Truth = read_json(&dir.path().join("out/truth.json")).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        prop_assert!(truth.missed_poses.is_empty(), "missed {:?}", truth.missed_poses);
        let samples = ds.poses.samples();
        prop_assert_eq!(samples.len(), truth.pose_positions_mm.len());
        let mut sq = 0.0;
        for (s, p) in samples.iter().zip(&truth.pose_positions_mm) {
            sq += (s.pose.position - nalgebra::Vector3::from(*p)).norm_squared();
        }
        let rms = (sq / samples.len() as f64).sqrt();
        prop_assert!(rms <= 1.0, "RMS {rms} mm");
    }
}
