//! Segments moving objects in a directory of LiDAR scans and writes one
//! label file per scan.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use hmm_mos::evaluation::{accumulate, ConfusionCounts, ResultsTable};
use hmm_mos::integration::transform_scan;
use hmm_mos::io::{read_labels, read_poses, read_scan, write_debug_ply, write_labels, ScanFormat};
use hmm_mos::pipeline::{Pipeline, ScanOutput};
use hmm_mos::{Config, Error, Mode, Pose, Scan};

#[derive(Debug, Parser)]
#[command(
    name = "hmm-mos",
    version,
    about = "Learning-free moving object segmentation for LiDAR scans"
)]
struct Args {
    /// Directory of scans (`.bin` KITTI records or ascii `.ply`), processed in filename order.
    #[arg(long)]
    scans: PathBuf,
    /// Pose file with one row-major 3x4 sensor-to-map transform per scan.
    #[arg(long)]
    poses: PathBuf,
    /// Output directory for `<scan stem>.label` files.
    #[arg(long)]
    out: PathBuf,
    /// Directory of ground-truth `<scan stem>.label` files; scans without one are not scored.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// TOML parameter file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the mode from the config file.
    #[arg(long)]
    mode: Option<Mode>,
    /// Only score points within this sensor range, in meters.
    #[arg(long)]
    range_limit: Option<f64>,
    /// Also write a coloured `<scan stem>.ply` per scan into this directory.
    #[arg(long)]
    export_ply: Option<PathBuf>,
}

/// Why a run stopped; each kind maps to its own exit status.
#[derive(Debug)]
enum Failure {
    Manifest(String),
    Data(String),
    Invariant(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Manifest(_) => 1,
            Failure::Data(_) => 2,
            Failure::Invariant(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Manifest(m) | Failure::Data(m) | Failure::Invariant(m) => m,
        }
    }

    /// Classifies a library error raised while handling scan data.
    fn from_data(context: &str, e: Error) -> Self {
        let msg = format!("{context}: {e}");
        match e {
            Error::Invariant(_) => Failure::Invariant(msg),
            Error::Config(_) => Failure::Manifest(msg),
            _ => Failure::Data(msg),
        }
    }
}

struct Manifest {
    scans: Vec<PathBuf>,
    poses: Vec<Pose>,
    config: Config,
}

fn load_manifest(args: &Args) -> Result<Manifest, Failure> {
    let mut config = match &args.config {
        Some(path) => Config::from_file(path).map_err(|e| Failure::Manifest(e.to_string()))?,
        None => Config::default(),
    };
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    config
        .validate()
        .map_err(|e| Failure::Manifest(e.to_string()))?;
    if let Some(r) = args.range_limit {
        if r.is_nan() || r <= 0.0 {
            return Err(Failure::Manifest(format!(
                "range limit must be positive, got {r}"
            )));
        }
    }

    let entries = fs::read_dir(&args.scans)
        .map_err(|e| Failure::Manifest(format!("cannot list {}: {e}", args.scans.display())))?;
    let mut scans: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && ScanFormat::from_path(p).is_some())
        .collect();
    scans.sort();
    if scans.is_empty() {
        return Err(Failure::Manifest(format!(
            "no scans found in {}",
            args.scans.display()
        )));
    }

    let poses = read_poses(&args.poses).map_err(|e| match e {
        Error::Format { .. } => Failure::Data(e.to_string()),
        _ => Failure::Manifest(e.to_string()),
    })?;
    if poses.len() != scans.len() {
        return Err(Failure::Manifest(format!(
            "{} scans but {} poses",
            scans.len(),
            poses.len()
        )));
    }
    Ok(Manifest {
        scans,
        poses,
        config,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// A processed scan kept until its labels become final.
struct Pending {
    stem: String,
    scan: Scan,
    pose: Pose,
}

struct Run<'a> {
    args: &'a Args,
    pending: BTreeMap<u64, Pending>,
    counts: ConfusionCounts,
    scored: usize,
}

impl Run<'_> {
    fn emit(&mut self, outputs: Vec<ScanOutput>) -> Result<(), Failure> {
        for out in outputs {
            let p = self.pending.remove(&out.index).ok_or_else(|| {
                Failure::Invariant(format!("labels emitted for unknown scan {}", out.index))
            })?;
            let label_path = self.args.out.join(format!("{}.label", p.stem));
            write_labels(&label_path, &out.labels).map_err(|e| Failure::Manifest(e.to_string()))?;
            if let Some(dir) = &self.args.export_ply {
                let cloud = transform_scan(&p.scan, &p.pose);
                write_debug_ply(&dir.join(format!("{}.ply", p.stem)), &cloud, &out.labels)
                    .map_err(|e| Failure::Manifest(e.to_string()))?;
            }
            if let Some(gt_dir) = &self.args.gt {
                let gt_path = gt_dir.join(format!("{}.label", p.stem));
                if gt_path.is_file() {
                    let gt = read_labels(&gt_path).map_err(|e| Failure::Data(e.to_string()))?;
                    let c = accumulate(&gt, &out.labels, &p.scan, self.args.range_limit)
                        .map_err(|e| Failure::Data(format!("scan {}: {e}", p.stem)))?;
                    self.counts += c;
                    self.scored += 1;
                }
            }
        }
        Ok(())
    }
}

fn run(args: &Args) -> Result<(), Failure> {
    let manifest = load_manifest(args)?;
    for dir in std::iter::once(&args.out).chain(args.export_ply.as_ref()) {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Manifest(format!("cannot create {}: {e}", dir.display())))?;
    }
    log::info!(
        "{} scans, mode {}, voxel size {} m",
        manifest.scans.len(),
        manifest.config.mode,
        manifest.config.delta
    );

    let mut pipeline =
        Pipeline::new(manifest.config).map_err(|e| Failure::Manifest(e.to_string()))?;
    let mut state = Run {
        args,
        pending: BTreeMap::new(),
        counts: ConfusionCounts::default(),
        scored: 0,
    };
    for (i, (path, pose)) in manifest.scans.iter().zip(&manifest.poses).enumerate() {
        let index = i as u64;
        let scan = ScanFormat::from_path(path)
            .ok_or_else(|| Failure::Data(format!("unknown scan format: {}", path.display())))
            .and_then(|fmt| {
                read_scan(path, fmt, index)
                    .map_err(|e| Failure::from_data(&format!("scan {index}"), e))
            })?;
        let (report, outputs) = pipeline
            .process(&scan, pose)
            .map_err(|e| Failure::from_data(&format!("scan {index} ({})", path.display()), e))?;
        log::info!(
            "scan {index}: {} points, {} dynamic, {:.1} ms",
            scan.len(),
            report.dynamic_points,
            report.elapsed.as_secs_f64() * 1e3
        );
        state.pending.insert(
            index,
            Pending {
                stem: stem(path),
                scan,
                pose: *pose,
            },
        );
        state.emit(outputs)?;
    }
    state.emit(pipeline.finish())?;
    if !state.pending.is_empty() {
        return Err(Failure::Invariant(format!(
            "{} scans were never labelled",
            state.pending.len()
        )));
    }

    let latency = pipeline.latency();
    if args.gt.is_some() {
        let mut table = ResultsTable::default();
        let name = args
            .scans
            .canonicalize()
            .ok()
            .and_then(|p| {
                p.parent()
                    .and_then(|d| d.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
            })
            .unwrap_or_else(|| "sequence".into());
        table.push(name, state.counts, state.scored);
        print!("{}", table.to_tsv());
    }
    println!(
        "latency\tmean {:.1} ms\tp95 {:.1} ms\tmax {:.1} ms",
        latency.mean.as_secs_f64() * 1e3,
        latency.p95.as_secs_f64() * 1e3,
        latency.max.as_secs_f64() * 1e3
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
