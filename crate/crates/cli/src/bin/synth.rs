//! Writes the synthetic reference sequence (scans, exact labels, poses) to disk.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hmm_mos::synthetic::{generate, reference_scene, static_reference_scene};

#[derive(Debug, Parser)]
#[command(
    name = "hmm-mos-synth",
    version,
    about = "Generate the synthetic reference sequence"
)]
struct Args {
    /// Output directory; receives `scans/`, `labels/` and `poses.txt`.
    #[arg(long)]
    out: PathBuf,
    /// Leave out the moving objects.
    #[arg(long = "static")]
    static_world: bool,
    /// Generate only the first N scans.
    #[arg(long)]
    count: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let mut spec = if args.static_world {
        static_reference_scene()
    } else {
        reference_scene()
    };
    if let Some(n) = args.count {
        spec.count = n;
    }
    let result = generate(&spec).and_then(|seq| {
        seq.write_to(&args.out)?;
        Ok(seq.len())
    });
    match result {
        Ok(n) => {
            log::info!("wrote {n} scans to {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
