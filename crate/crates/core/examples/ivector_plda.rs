//! The i-vector/PLDA back end on the synthetic corpus, run through the staged
//! recipe on raw features.

use bnsv::pipeline::{run_recipe, BackendKind, ExperimentConfig, FeatureSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::synthetic_benchmark();
    cfg.system = "raw-ivector-plda".into();
    cfg.bottleneck.source = FeatureSource::Raw;
    cfg.backend.kind = BackendKind::IvectorPlda;
    cfg.backend.components = 32;
    cfg.backend.ivector_rank = 30;
    let dir = tempfile::tempdir()?;
    let report = run_recipe(&cfg, dir.path(), false)?;
    print!("{}", report.to_table());
    Ok(())
}
