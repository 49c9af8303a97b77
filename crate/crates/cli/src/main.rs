use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use freehand3d::io::{
    export_slices, load_dataset, load_tracking_inputs, read_mhd, write_json, write_poses, IoError,
    ValidationReport,
};
use freehand3d::marker::{DepthMap, MarkerDetector, MarkerDictionary};
use freehand3d::par::par_map;
use freehand3d::recon::{
    process_frames, reconstruct_benchmark, reconstruct_parallel, write_reconstruction, Plane, PipelineError,
};
use freehand3d::sim::{simulate_scan, Phantom, ScanSpec, SimError, Tracking, TrajectorySpec};
use freehand3d::tracking::{median, repeatability_ssim, PoseSample};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "fh3d", version, about = "Track-constrained freehand 3D ultrasound")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an acquisition of a phantom and write it as a dataset
    Simulate(SimulateArgs),
    /// Rebuild poses.csv from the marker camera captures under camera/
    Detect(DetectArgs),
    /// Reconstruct the volume; writes out/volume.mhd, out/mask.mhd and out/report.json
    Reconstruct(ReconstructArgs),
    /// Frame-by-frame SSIM between two acquisitions of the same trajectory
    Metrics(MetricsArgs),
    /// Write every slice of out/volume.mhd in one orientation as PNG
    ExportSlices(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PhantomKind {
    /// Cylinder of radius 6 mm and length 60 mm along the scan direction
    Cyl,
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    /// Phantom to scan
    #[arg(long, value_enum)]
    phantom: PhantomKind,
    /// Dataset directory to create
    #[arg(long)]
    out: PathBuf,
    /// Seed for trajectory jitter and speckle
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Log the true poses instead of detecting the marker in camera renders
    #[arg(long)]
    perfect_tracking: bool,
    /// Scan length in mm
    #[arg(long, default_value_t = TrajectorySpec::default().scan_length_mm)]
    length: f64,
    /// Worker threads (defaults to the available cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, clap::Args)]
struct DetectArgs {
    /// Dataset directory
    #[arg(long = "in")]
    input: PathBuf,
    /// Worker threads (defaults to the available cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, clap::Args)]
struct ReconstructArgs {
    /// Dataset directory
    #[arg(long = "in")]
    input: PathBuf,
    /// Worker threads for preprocessing and interpolation (defaults to the available cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Also run serially, check the outputs match and record the speedup
    #[arg(long)]
    benchmark: bool,
}

#[derive(Debug, clap::Args)]
struct MetricsArgs {
    /// First dataset directory
    #[arg(long)]
    a: PathBuf,
    /// Second dataset directory
    #[arg(long)]
    b: PathBuf,
    /// Output file (defaults to <A>/out/ssim.json)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the available cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, clap::Args)]
struct ExportArgs {
    /// Dataset directory holding out/volume.mhd
    #[arg(long = "in")]
    input: PathBuf,
    /// Slice orientation
    #[arg(long, value_enum)]
    plane: PlaneArg,
    /// Output directory (defaults to <IN>/out/slices_<PLANE>)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlaneArg {
    /// Fixed scan position: the acquired frame orientation
    Transverse,
    /// Fixed lateral position
    Sagittal,
    /// Fixed depth
    Coronal,
}

impl PlaneArg {
    fn plane(self) -> Plane {
        match self {
            PlaneArg::Transverse => Plane::Transverse,
            PlaneArg::Sagittal => Plane::Sagittal,
            PlaneArg::Coronal => Plane::Coronal,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PlaneArg::Transverse => "transverse",
            PlaneArg::Sagittal => "sagittal",
            PlaneArg::Coronal => "coronal",
        }
    }
}

/// Exit 1 for bad input, exit 2 for everything else.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Validation(r) => Failure::Invalid(r.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Runtime(format!("reconstruction failed at stage {}: {e}", e.stage()))
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invalid(m) => Failure::Invalid(m),
            SimError::Io(e) => e.into(),
        }
    }
}

fn workers(requested: Option<usize>) -> Result<usize, Failure> {
    match requested {
        Some(0) => Err(Failure::Invalid("--workers must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let phantom = match args.phantom {
        PhantomKind::Cyl => Phantom::default_cylinder(),
    };
    let spec = ScanSpec {
        phantom,
        trajectory: TrajectorySpec {
            scan_length_mm: args.length,
            seed: args.seed,
            ..TrajectorySpec::default()
        },
        tracking: if args.perfect_tracking {
            Tracking::Perfect
        } else {
            Tracking::Marker
        },
        workers: workers(args.workers)?,
        ..ScanSpec::default()
    };
    let mut scan = simulate_scan(&spec)?;
    scan.write(&args.out, true)?;
    println!(
        "wrote {} frames and {} poses to {}",
        scan.dataset.len(),
        scan.dataset.poses.len(),
        args.out.display()
    );
    if !scan.truth.missed_poses.is_empty() {
        println!("marker not found in captures {:?}", scan.truth.missed_poses);
    }
    Ok(())
}

fn detect(args: DetectArgs) -> Result<(), Failure> {
    let (config, camera, captures) = load_tracking_inputs(&args.input)?;
    let detector = MarkerDetector::new(camera, MarkerDictionary::builtin_4x4_50(), config.marker_side_mm);
    let ids: Vec<usize> = (0..captures.len()).collect();
    let found = par_map(&ids, workers(args.workers)?, |&i| {
        let img = captures.image(i)?;
        let depth = captures.depth(i)?.map(|d| DepthMap::new(d, config.depth_mm_per_unit));
        let obs = detector.detect(&img, depth.as_ref(), captures.times[i]);
        let hit = obs.into_iter().find(|o| config.marker_id.is_none_or(|id| o.id == id));
        Ok::<_, IoError>(hit.map(|o| PoseSample {
            t: captures.times[i],
            pose: o.pose,
        }))
    })?;
    let missed: Vec<usize> = ids.iter().copied().filter(|&i| found[i].is_none()).collect();
    let samples: Vec<PoseSample> = found.into_iter().flatten().collect();
    if samples.len() < 2 {
        return Err(Failure::Runtime(format!(
            "marker found in {} of {} captures, need at least 2",
            samples.len(),
            captures.len()
        )));
    }
    write_poses(&args.input.join("poses.csv"), &samples)?;
    println!("tracked {} of {} captures", samples.len(), captures.len());
    if !missed.is_empty() {
        println!("marker not found in captures {missed:?}");
    }
    Ok(())
}

fn reconstruct(args: ReconstructArgs) -> Result<(), Failure> {
    let workers = workers(args.workers)?;
    let ds = load_dataset(&args.input)?;
    let r = if args.benchmark {
        reconstruct_benchmark(&ds, workers)?
    } else {
        reconstruct_parallel(&ds, workers)?
    };
    write_reconstruction(&r, &ds.out_dir())?;
    let rep = &r.report;
    println!(
        "{} of {} frames kept, scan length {:.3} mm, volume {}x{}x{}",
        rep.frames_kept, rep.frames_in, rep.scan_length_mm, rep.dims[0], rep.dims[1], rep.dims[2]
    );
    if let Some(s) = rep.wall_time_ms.speedup {
        println!("speedup with {workers} workers: {s:.2}x");
    }
    Ok(())
}

#[derive(Serialize)]
struct SsimReport<'a> {
    a: &'a Path,
    b: &'a Path,
    median: f64,
    scores: Vec<f64>,
}

fn metrics(args: MetricsArgs) -> Result<(), Failure> {
    let workers = workers(args.workers)?;
    let (a, b) = (load_dataset(&args.a), load_dataset(&args.b));
    let (a, b) = match (a, b) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => {
            let mut text = String::new();
            for e in [a.err(), b.err()].into_iter().flatten() {
                match Failure::from(e) {
                    Failure::Invalid(m) => text.push_str(&m),
                    f @ Failure::Runtime(_) => return Err(f),
                }
            }
            return Err(Failure::Invalid(text));
        }
    };
    let pa = process_frames(&a, workers)?;
    let pb = process_frames(&b, workers)?;
    let scores = repeatability_ssim(&pa.frames, &pb.frames).map_err(|e| Failure::Invalid(e.to_string()))?;
    let med = median(&scores).unwrap_or(f64::NAN);
    let out = args.out.unwrap_or_else(|| a.out_dir().join("ssim.json"));
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    write_json(
        &out,
        &SsimReport {
            a: &args.a,
            b: &args.b,
            median: med,
            scores,
        },
    )?;
    println!("median SSIM {med:.4}; wrote {}", out.display());
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), Failure> {
    let path = args.input.join("out/volume.mhd");
    if !path.exists() {
        let mut report = ValidationReport::new(&args.input);
        report.push("out/volume.mhd", None, "missing; run reconstruct first");
        return Err(IoError::Validation(report).into());
    }
    let volume = read_mhd(&path).map_err(|e| Failure::Invalid(e.to_string()))?;
    let dir = args
        .out
        .unwrap_or_else(|| args.input.join("out").join(format!("slices_{}", args.plane.name())));
    let index = export_slices(&volume, args.plane.plane(), &dir)?;
    println!("wrote {} {} slices to {}", index.count, args.plane.name(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Metrics(a) => metrics(a),
        Command::ExportSlices(a) => export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {}", m.trim_end());
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {}", m.trim_end());
            ExitCode::from(2)
        }
    }
}
