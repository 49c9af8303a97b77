use std::path::Path;

use freehand3d::geometry::{CameraModel, Pose};
use freehand3d::image::{GrayImage, Image};
use freehand3d::imgproc::Mask;
use freehand3d::io::{
    export_slices, load_camera_captures, load_dataset, read_mhd, read_png_gray, read_slice_index,
    write_camera_capture, write_camera_times, write_dataset, write_mhd, Config, Dataset, IoError,
};
use freehand3d::recon::{Plane, VolumeGrid};
use freehand3d::tracking::{PoseSample, PoseTrack};
use nalgebra::{Rotation3, Unit, Vector3};
use proptest::prelude::*;

fn volume() -> impl Strategy<Value = VolumeGrid> {
    (
        prop::array::uniform3(1usize..8),
        prop::array::uniform3(0.001..5.0f64),
        prop::array::uniform3(-100.0..100.0f64),
    )
        .prop_flat_map(|(dims, spacing, origin)| {
            prop::collection::vec(any::<u8>(), dims[0] * dims[1] * dims[2])
                .prop_map(move |data| VolumeGrid::from_voxels(dims, spacing, origin, data).unwrap())
        })
}

fn pose() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-500.0..500.0f64),
        prop::array::uniform3(-1.0..1.0f64),
        -3.0..3.0f64,
    )
        .prop_map(|(p, axis, angle)| {
            let axis = Vector3::from(axis);
            let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
            Pose::new(Vector3::from(p), Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner())
        })
}

/// Increasing times with arbitrary (non-round) increments.
fn times(n: usize, start: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-4..0.05f64, n).prop_map(move |d| {
        d.iter()
            .scan(start, |t, dt| {
                *t += dt;
                Some(*t)
            })
            .collect()
    })
}

fn config() -> impl Strategy<Value = Config> {
    (
        prop::option::of(0u32..50),
        prop::option::of((0.0..0.4f64, 0.6..1.0f64)),
        1.0..8.0f64,
        0.01..1.0f64,
    )
        .prop_map(|(marker_id, clamp, clip, pitch)| Config {
            marker_id,
            clamp_lo: clamp.map(|c| c.0),
            clamp_hi: clamp.map(|c| c.1),
            clahe_clip: clip,
            slice_pitch_mm: pitch,
            ..Config::default()
        })
}

fn camera() -> impl Strategy<Value = CameraModel> {
    (100.0..1000.0f64, 100.0..1000.0f64, 0.0..848.0f64, 0.0..480.0f64, prop::array::uniform5(-0.1..0.1f64))
        .prop_map(|(fx, fy, cx, cy, d)| CameraModel::new(fx, fy, cx, cy, d.into()).unwrap())
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (2usize..6, 2usize..7, 1usize..6, 1usize..6, any::<bool>(), config(), camera()).prop_flat_map(
        |(n_frames, n_poses, w, h, with_masks, config, camera)| {
            (
                prop::collection::vec(prop::collection::vec(any::<u8>(), w * h), n_frames),
                prop::collection::vec(prop::collection::vec(any::<bool>(), w * h), n_frames),
                prop::collection::vec(pose(), n_poses),
                times(n_poses, 0.0),
            )
                .prop_flat_map(move |(frames, masks, poses, pose_t)| {
                    let (lo, hi) = (pose_t[0], pose_t[pose_t.len() - 1]);
                    let config = config.clone();
                    prop::collection::vec(lo..=hi, n_frames).prop_map(move |mut frame_times| {
                        frame_times.sort_by(f64::total_cmp);
                        frame_times.dedup();
                        let n = frame_times.len();
                        let samples = poses.iter().zip(&pose_t).map(|(&pose, &t)| PoseSample { t, pose }).collect();
                        Dataset {
                            root: Default::default(),
                            config: config.clone(),
                            camera,
                            frames: frames[..n].iter().map(|p| GrayImage::from_vec(w, h, p.clone())).collect(),
                            frame_times,
                            poses: PoseTrack::new(samples).unwrap(),
                            masks: with_masks
                                .then(|| masks[..n].iter().map(|m| Mask(Image::from_vec(w, h, m.clone()))).collect()),
                        }
                    })
                })
        },
    )
}

fn assert_same(a: &Dataset, b: &Dataset) -> Result<(), TestCaseError> {
    prop_assert_eq!(&a.config, &b.config);
    prop_assert_eq!(&a.camera, &b.camera);
    prop_assert_eq!(&a.frames, &b.frames);
    prop_assert_eq!(&a.masks, &b.masks);
    prop_assert_eq!(&a.poses, &b.poses);
    // bitwise, so -0.0 and NaN payloads would show up too
    let bits = |v: &[f64]| v.iter().map(|t| t.to_bits()).collect::<Vec<_>>();
    prop_assert_eq!(bits(&a.frame_times), bits(&b.frame_times));
    Ok(())
}

type Injection = fn(&Path, usize) -> std::io::Result<()>;

fn rewrite(path: &Path, f: impl Fn(Vec<String>) -> Vec<String>) -> std::io::Result<()> {
    let text = std::fs::read_to_string(path)?;
    let lines = f(text.lines().map(str::to_string).collect());
    std::fs::write(path, lines.join("\n") + "\n")
}

/// Single defects; the index picks a frame or a data row.
const INJECTIONS: [(&str, Injection); 9] = [
    ("missing frame", |r, i| std::fs::remove_file(r.join(format!("frames/frame_{i:05}.png")))),
    ("truncated frame", |r, i| {
        let p = r.join(format!("frames/frame_{i:05}.png"));
        let bytes = std::fs::read(&p)?;
        std::fs::write(&p, &bytes[..bytes.len() / 2])
    }),
    ("missing poses", |r, _| std::fs::remove_file(r.join("poses.csv"))),
    ("pose row dropped to one", |r, _| rewrite(&r.join("poses.csv"), |l| l[..2].to_vec())),
    ("frame time row removed", |r, i| {
        rewrite(&r.join("frame_times.csv"), |mut l| {
            l.remove(1 + i);
            l
        })
    }),
    ("frame time out of pose range", |r, i| {
        rewrite(&r.join("frame_times.csv"), |mut l| {
            let idx = l[1 + i].split(',').next().unwrap().to_string();
            l[1 + i] = format!("{idx},1000");
            l
        })
    }),
    ("non-finite pose value", |r, i| {
        rewrite(&r.join("poses.csv"), |mut l| {
            let row = 1 + i % (l.len() - 1);
            let mut f: Vec<String> = l[row].split(',').map(str::to_string).collect();
            f[2] = "NaN".into();
            l[row] = f.join(",");
            l
        })
    }),
    ("bad config value", |r, _| {
        let p = r.join("config.toml");
        let text = std::fs::read_to_string(&p)?.replace("slice_pitch_mm = ", "slice_pitch_mm = -");
        std::fs::write(p, text)
    }),
    ("garbage camera", |r, _| std::fs::write(r.join("calib/camera.json"), "{\"fx\": 1")),
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mhd_round_trips_bit_exactly(v in volume()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.mhd");
        write_mhd(&v, &path).unwrap();
        prop_assert_eq!(read_mhd(&path).unwrap(), v);
    }

    #[test]
    fn dataset_round_trips_bit_exactly(mut ds in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        ds.root = dir.path().to_path_buf();
        write_dataset(&ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_same(&ds, &back)?;
        // and once more through the writer
        write_dataset(&back).unwrap();
        assert_same(&ds, &load_dataset(dir.path()).unwrap())?;
    }

    #[test]
    fn slices_read_back_as_extracted(v in volume(), which in 0usize..3) {
        let plane = [Plane::Transverse, Plane::Sagittal, Plane::Coronal][which];
        let dir = tempfile::tempdir().unwrap();
        let index = export_slices(&v, plane, dir.path()).unwrap();
        prop_assert_eq!(read_slice_index(dir.path()).unwrap(), index.clone());
        prop_assert_eq!(index.count, v.plane_count(plane));
        for k in 0..index.count {
            let img = read_png_gray(&dir.path().join(format!("slice_{k:05}.png"))).unwrap();
            prop_assert_eq!(img, v.extract_mpr(plane, k).unwrap().image);
        }
    }

    #[test]
    fn camera_captures_round_trip(
        caps in prop::collection::vec((prop::collection::vec(any::<u8>(), 12), prop::option::of(prop::collection::vec(any::<u16>(), 12))), 1..5),
        t in times(5, 0.0),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let t = &t[..caps.len()];
        write_camera_times(dir.path(), t).unwrap();
        for (i, (img, depth)) in caps.iter().enumerate() {
            let depth = depth.as_ref().map(|d| Image::from_vec(4, 3, d.clone()));
            write_camera_capture(dir.path(), i, &GrayImage::from_vec(4, 3, img.clone()), depth.as_ref()).unwrap();
        }
        let back = load_camera_captures(dir.path()).unwrap();
        prop_assert_eq!(&back.times, &t.to_vec());
        for (i, (img, depth)) in caps.iter().enumerate() {
            prop_assert_eq!(back.image(i).unwrap().into_vec(), img.clone());
            prop_assert_eq!(back.depth(i).unwrap().map(Image::into_vec), depth.clone());
        }
    }

    #[test]
    fn load_is_all_or_nothing(mut ds in dataset(), which in 0..INJECTIONS.len(), pick in any::<prop::sample::Index>()) {
        let dir = tempfile::tempdir().unwrap();
        ds.root = dir.path().to_path_buf();
        write_dataset(&ds).unwrap();
        let (name, inject) = INJECTIONS[which];
        inject(dir.path(), pick.index(ds.len())).unwrap();
        match load_dataset(dir.path()) {
            Err(IoError::Validation(report)) => prop_assert!(!report.is_empty(), "{name}: empty report"),
            Err(e) => prop_assert!(false, "{name}: not a validation report: {e}"),
            Ok(_) => prop_assert!(false, "{name}: loaded"),
        }
    }
}
