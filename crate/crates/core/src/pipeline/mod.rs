//! Experiment orchestration: configuration, the synthetic corpus, network
//! training, model files and the staged recipe.

mod config;
mod gradcheck;
mod model;
mod stages;
mod synth;
mod train;

use std::path::Path;

pub use config::{
    BackendKind, BackendSection, BottleneckSection, ExperimentConfig, FeatureSource, FuseSection,
    LossSection, NetworkSection, PathsSection, TargetsSection,
};
pub use gradcheck::{
    all_combinations, check_combination, check_gru_l1, check_hyper, NetWithHead, GRAD_CHECK_EPS,
    GRAD_CHECK_SEED, GRAD_CHECK_TOL,
};
pub use model::{BnModel, Network};
pub use stages::{fnv1a, recipe, Layout, Pipeline, Stage, StageOutcome, TargetTable};
pub use synth::{
    model_id, phrase_id, speaker_id, synth_corpus, utterance_id, CorpusFiles, EnrollmentList,
    SyntheticCorpus, SyntheticCorpusSpec,
};
pub use train::{train_dense, train_gru, TrainingLog};

use crate::error::Result;
use crate::eval::MetricReport;
use crate::net::Activation;

/// Runs every stage of `cfg` in `stage_dir` and returns the report.
pub fn run_recipe(cfg: &ExperimentConfig, stage_dir: &Path, force: bool) -> Result<MetricReport> {
    Pipeline::new(cfg.clone(), stage_dir, force)?.run_all()
}

/// Systems run by [`run_comparison`].
#[derive(Debug, Clone)]
pub struct Comparison {
    /// GMM-UBM on the front-end features.
    pub baseline: MetricReport,
    /// One bottleneck system per hidden activation.
    pub activations: Vec<(Activation, MetricReport)>,
}

impl Comparison {
    /// Baseline row followed by one row per activation.
    pub fn to_table(&self) -> String {
        let mut out = self.baseline.to_table();
        for (_, r) in &self.activations {
            out.push_str(r.to_table().lines().nth(1).unwrap_or(""));
            out.push('\n');
        }
        out
    }
}

/// The raw-feature baseline and the sigmoid/ReLU/GELU bottleneck systems,
/// each in its own subdirectory of `root`.
pub fn run_comparison(cfg: &ExperimentConfig, root: &Path, force: bool) -> Result<Comparison> {
    let mut base = cfg.clone();
    base.bottleneck.source = FeatureSource::Raw;
    base.system = "raw-gmm-ubm".into();
    base.fuse = FuseSection::default();
    let baseline = run_recipe(&base, &root.join("raw"), force)?;
    let mut activations = Vec::new();
    for act in [Activation::Sigmoid, Activation::Relu, Activation::Gelu] {
        let mut c = cfg.clone();
        c.network.activation = act;
        c.bottleneck.source = FeatureSource::Bottleneck;
        c.system = format!("bn-{}", act.name());
        c.fuse = FuseSection::default();
        let report = run_recipe(&c, &root.join(act.name()), force)?;
        activations.push((act, report));
    }
    Ok(Comparison {
        baseline,
        activations,
    })
}
