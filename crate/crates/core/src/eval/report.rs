use std::fmt::Write as _;

use super::metrics::{compute_eer, compute_mindcf, CostParams};
use super::trials::{Trial, TrialLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TypeMetrics {
    pub label: TrialLabel,
    /// Percent.
    pub eer: f64,
    pub min_dcf: f64,
    pub eer_threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// Genuine trials against each non-target type separately, plus the
/// arithmetic mean over the types present.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub system: String,
    pub per_type: Vec<TypeMetrics>,
    pub avg_eer: f64,
    pub avg_min_dcf: f64,
}

pub fn evaluate_trials(system: &str, trials: &[Trial], cost: &CostParams) -> Result<MetricReport> {
    let scored = |label: TrialLabel| -> Result<Vec<f64>> {
        trials
            .iter()
            .filter(|t| t.label() == label)
            .map(|t| {
                t.score().ok_or_else(|| {
                    Error::EmptyInput(format!(
                        "trial {} / {} has no score",
                        t.enroll_id, t.test_id
                    ))
                })
            })
            .collect()
    };
    let genuine = scored(TrialLabel::Genuine)?;
    let mut per_type = Vec::new();
    for label in TrialLabel::NON_TARGET {
        let impostor = scored(label)?;
        if impostor.is_empty() {
            continue;
        }
        let eer = compute_eer(&genuine, &impostor)?;
        let dcf = compute_mindcf(&genuine, &impostor, cost)?;
        per_type.push(TypeMetrics {
            label,
            eer: eer.eer * 100.0,
            min_dcf: dcf.min_dcf,
            eer_threshold: eer.threshold,
            n_target: genuine.len(),
            n_nontarget: impostor.len(),
        });
    }
    if per_type.is_empty() {
        return Err(Error::EmptyInput("no non-target trials".into()));
    }
    let n = per_type.len() as f64;
    Ok(MetricReport {
        system: system.to_string(),
        avg_eer: per_type.iter().map(|m| m.eer).sum::<f64>() / n,
        avg_min_dcf: per_type.iter().map(|m| m.min_dcf).sum::<f64>() / n,
        per_type,
    })
}

impl MetricReport {
    pub fn get(&self, label: TrialLabel) -> Option<&TypeMetrics> {
        self.per_type.iter().find(|m| m.label == label)
    }

    /// `key=value` lines for machines.
    pub fn to_kv(&self) -> String {
        let mut out = format!("system={}\n", self.system);
        for m in &self.per_type {
            let k = m.label.short().to_lowercase();
            let _ = writeln!(out, "{k}.eer_percent={}", m.eer);
            let _ = writeln!(out, "{k}.min_dcf={}", m.min_dcf);
            let _ = writeln!(out, "{k}.eer_threshold={}", m.eer_threshold);
            let _ = writeln!(out, "{k}.n_target={}", m.n_target);
            let _ = writeln!(out, "{k}.n_nontarget={}", m.n_nontarget);
        }
        let _ = writeln!(out, "avg.eer_percent={}", self.avg_eer);
        let _ = writeln!(out, "avg.min_dcf={}", self.avg_min_dcf);
        out
    }

    /// Aligned table with `EER% / minDCF×100` per type.
    pub fn to_table(&self) -> String {
        let mut header = format!("{:<24}", "system");
        let mut row = format!("{:<24}", self.system);
        for m in &self.per_type {
            let _ = write!(header, "{:>16}", m.label.short());
            let _ = write!(
                row,
                "{:>16}",
                format!("{:.2}/{:.3}", m.eer, m.min_dcf * 100.0)
            );
        }
        let _ = write!(header, "{:>16}", "Avg");
        let _ = write!(
            row,
            "{:>16}",
            format!("{:.2}/{:.3}", self.avg_eer, self.avg_min_dcf * 100.0)
        );
        format!("{header}\n{row}\n")
    }
}
