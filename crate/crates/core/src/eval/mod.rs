//! Trials, detection metrics, score files and fusion.

mod metrics;
mod report;
mod trials;

pub use metrics::{
    compute_eer, compute_mindcf, det_export, sweep, CostParams, DcfResult, DetExport, EerResult,
    Histogram, OperatingPoint, HISTOGRAM_BINS,
};
pub use report::{evaluate_trials, MetricReport, TypeMetrics};
pub use trials::{fuse_scores, ScoreFile, Trial, TrialLabel, TrialList};
