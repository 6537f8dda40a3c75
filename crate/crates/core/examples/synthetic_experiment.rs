//! Full desk-scale experiment on the synthetic corpus: the raw-feature GMM-UBM
//! baseline, bottleneck systems for three activations, and the noiseless
//! sanity run.
//!
//! Usage: `cargo run --release --example synthetic_experiment [STAGE_DIR]`

use std::path::PathBuf;
use std::time::Instant;

use bnsv::pipeline::{run_comparison, run_recipe, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let keep = std::env::args().nth(1).map(PathBuf::from);
    let tmp = tempfile::tempdir()?;
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());

    let cfg = ExperimentConfig::synthetic_benchmark();
    let started = Instant::now();
    let cmp = run_comparison(&cfg, &root, true)?;
    println!(
        "EER% / minDCF×100 per trial type ({:.1} s)\n",
        started.elapsed().as_secs_f64()
    );
    print!("{}", cmp.to_table());

    let mut clean = cfg.clone();
    clean.corpus.noise_scale = 0.0;
    clean.system = "noiseless".into();
    let report = run_recipe(&clean, &root.join("noiseless"), true)?;
    println!();
    print!("{}", report.to_table());
    Ok(())
}
