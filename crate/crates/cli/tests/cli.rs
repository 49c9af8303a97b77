use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fh3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fh3d"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = fh3d(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// `--help` of the binary and each subcommand against the checked-in text.
/// Set `UPDATE_GOLDEN=1` to rewrite the files.
#[test]
fn help_matches_golden_files() {
    for sub in ["", "simulate", "detect", "reconstruct", "metrics", "export-slices"] {
        let mut args: Vec<&str> = if sub.is_empty() { vec![] } else { vec![sub] };
        args.push("--help");
        let text = run_ok(&args);
        let name = if sub.is_empty() { "fh3d" } else { sub };
        let path = golden_dir().join(format!("{name}.txt"));
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(text, expected, "help for '{name}' changed");
    }
}

#[test]
fn every_flag_is_documented() {
    let flags: &[(&str, &[&str])] = &[
        ("simulate", &["--phantom", "--out", "--seed", "--perfect-tracking", "--length", "--workers"]),
        ("detect", &["--in", "--workers"]),
        ("reconstruct", &["--in", "--workers", "--benchmark"]),
        ("metrics", &["--a", "--b", "--out", "--workers"]),
        ("export-slices", &["--in", "--plane", "--out"]),
    ];
    for (sub, names) in flags {
        let text = run_ok(&[sub, "--help"]);
        for n in *names {
            assert!(text.contains(n), "{sub} --help does not mention {n}");
        }
    }
}

#[test]
fn bad_command_lines_exit_1() {
    for args in [
        vec!["bogus"],
        vec!["reconstruct", "--in", "x", "--frobnicate"],
        vec!["simulate", "--phantom", "sphere", "--out", "x"],
        vec!["export-slices", "--in", "x", "--plane", "oblique"],
        vec!["simulate", "--out", "x"],
    ] {
        let out = fh3d(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(fh3d(&["--version"]).status.code(), Some(0));
}

#[test]
fn empty_dataset_exits_1_listing_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = fh3d(&["reconstruct", "--in", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for f in ["config.toml", "calib/camera.json", "frame_times.csv", "poses.csv", "frames"] {
        assert!(err.contains(f), "report does not list {f}:\n{err}");
    }
    let out = fh3d(&["detect", "--in", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("camera/times.csv"));
    let out = fh3d(&["export-slices", "--in", s(dir.path()), "--plane", "coronal"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out/volume.mhd"));
}

#[test]
fn lost_marker_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("d");
    run_ok(&["simulate", "--phantom", "cyl", "--out", s(&root), "--length", "4"]);
    // blank every capture
    let blank = std::fs::read(root.join("frames/frame_00000.png")).unwrap();
    for entry in std::fs::read_dir(root.join("camera")).unwrap() {
        let p = entry.unwrap().path();
        if p.file_name().unwrap().to_str().unwrap().starts_with("cam_") {
            std::fs::write(p, &blank).unwrap();
        }
    }
    let out = fh3d(&["detect", "--in", s(&root)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_same_files_for_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["simulate", "--phantom", "cyl", "--out", s(&a), "--length", "5", "--seed", "9", "--workers", "1"]);
    run_ok(&["simulate", "--phantom", "cyl", "--out", s(&b), "--length", "5", "--seed", "9", "--workers", "3"]);
    assert_eq!(tree(&a), tree(&b));
    for (root, w) in [(&a, "1"), (&b, "4")] {
        run_ok(&["detect", "--in", s(root), "--workers", w]);
        run_ok(&["reconstruct", "--in", s(root), "--workers", w]);
    }
    // report.json carries timings and the worker count
    let strip = |t: Vec<(PathBuf, Vec<u8>)>| -> Vec<_> { t.into_iter().filter(|(p, _)| !p.ends_with("report.json")).collect() };
    assert_eq!(strip(tree(&a)), strip(tree(&b)));
    let ra = json(&a.join("out/report.json"));
    let rb = json(&b.join("out/report.json"));
    assert_eq!(ra["dims"], rb["dims"]);
    assert_eq!(ra["scan_length_mm"], rb["scan_length_mm"]);
}

#[test]
fn default_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("scan");
    run_ok(&["simulate", "--phantom", "cyl", "--out", s(&root)]);
    let poses_before = std::fs::read(root.join("poses.csv")).unwrap();
    run_ok(&["detect", "--in", s(&root)]);
    // detection from the stored captures reproduces the simulator's log
    assert_eq!(std::fs::read(root.join("poses.csv")).unwrap(), poses_before);
    run_ok(&["reconstruct", "--in", s(&root), "--benchmark"]);
    let report = json(&root.join("out/report.json"));
    let length = report["scan_length_mm"].as_f64().unwrap();
    let nz = report["dims"][2].as_u64().unwrap();
    assert_eq!(nz, (length * 1e6).round() as u64 / 100_000 + 1);
    assert!((length - 91.0).abs() < 0.05, "{length}");
    assert!(report["wall_time_ms"]["speedup"].is_f64());
    for name in ["volume.mhd", "volume.raw", "mask.mhd", "mask.raw"] {
        assert!(root.join("out").join(name).exists(), "{name}");
    }

    let stdout = run_ok(&["export-slices", "--in", s(&root), "--plane", "transverse"]);
    assert!(stdout.contains(&format!("{nz} transverse")));
    let slices = root.join("out/slices_transverse");
    let pngs = std::fs::read_dir(&slices)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs as u64, nz);
    assert_eq!(json(&slices.join("index.json"))["count"].as_u64(), Some(nz));

    let out = dir.path().join("ssim.json");
    run_ok(&["metrics", "--a", s(&root), "--b", s(&root), "--out", s(&out)]);
    let m = json(&out);
    let scores = m["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 501);
    assert!(scores.iter().all(|v| v.as_f64() == Some(1.0)));
    assert_eq!(m["median"].as_f64(), Some(1.0));
}
