use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_sides(genuine: &[f64], impostor: &[f64]) -> Result<()> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptyInput(format!(
            "need genuine and impostor scores, got {} and {}",
            genuine.len(),
            impostor.len()
        )));
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(Error::Numerical("NaN score".into()));
    }
    Ok(())
}

/// Error rates at one threshold, with acceptance meaning `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Fraction of impostor scores `>= threshold`.
    pub far: f64,
    /// Fraction of genuine scores `< threshold`.
    pub frr: f64,
}

/// Operating points at every distinct score, in ascending threshold order.
pub fn sweep(genuine: &[f64], impostor: &[f64]) -> Result<Vec<OperatingPoint>> {
    check_sides(genuine, impostor)?;
    let mut g = genuine.to_vec();
    let mut i = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = g.iter().chain(&i).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();

    let (ng, ni) = (g.len() as f64, i.len() as f64);
    let (mut gi, mut ii) = (0usize, 0usize);
    let mut points = Vec::with_capacity(all.len());
    for t in all {
        while gi < g.len() && g[gi] < t {
            gi += 1;
        }
        while ii < i.len() && i[ii] < t {
            ii += 1;
        }
        points.push(OperatingPoint {
            threshold: t,
            far: (i.len() - ii) as f64 / ni,
            frr: gi as f64 / ng,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    /// Fraction in `[0, 1]`.
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate: `(FAR + FRR) / 2` at the distinct-score threshold that
/// minimises `|FAR - FRR|`, preferring the lowest such threshold.
pub fn compute_eer(genuine: &[f64], impostor: &[f64]) -> Result<EerResult> {
    let points = sweep(genuine, impostor)?;
    let mut best = points[0];
    for p in &points[1..] {
        if (p.far - p.frr).abs() < (best.far - best.frr).abs() {
            best = *p;
        }
    }
    Ok(EerResult {
        eer: (best.far + best.frr) / 2.0,
        threshold: best.threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            c_miss: 10.0,
            c_fa: 1.0,
            p_target: 0.01,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) || !(self.p_target > 0.0 && self.p_target < 1.0)
        {
            return Err(Error::Config(format!(
                "invalid detection cost parameters {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfResult {
    /// Normalised by the cost of the best trivial decision.
    pub min_dcf: f64,
    pub threshold: f64,
}

/// Minimum normalised detection cost over all distinct-score thresholds and
/// `+∞` (reject everything).
pub fn compute_mindcf(genuine: &[f64], impostor: &[f64], cost: &CostParams) -> Result<DcfResult> {
    cost.validate()?;
    let mut points = sweep(genuine, impostor)?;
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    let norm = (cost.c_miss * cost.p_target).min(cost.c_fa * (1.0 - cost.p_target));
    let mut best = DcfResult {
        min_dcf: f64::INFINITY,
        threshold: f64::INFINITY,
    };
    for p in points {
        let dcf = (cost.c_miss * p.frr * cost.p_target + cost.c_fa * p.far * (1.0 - cost.p_target))
            / norm;
        if dcf < best.min_dcf {
            best = DcfResult {
                min_dcf: dcf,
                threshold: p.threshold,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub low: f64,
    pub high: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn new(scores: &[f64], low: f64, high: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        let width = (high - low) / bins as f64;
        for &s in scores {
            let b = if width > 0.0 {
                ((s - low) / width) as usize
            } else {
                0
            };
            counts[b.min(bins - 1)] += 1;
        }
        Histogram { low, high, counts }
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n)
            .map(|i| self.low + (self.high - self.low) * i as f64 / n as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetExport {
    pub points: Vec<OperatingPoint>,
    pub genuine: Histogram,
    pub impostor: Histogram,
}

pub const HISTOGRAM_BINS: usize = 50;

/// One operating point per distinct score plus score histograms over the
/// common score range.
pub fn det_export(genuine: &[f64], impostor: &[f64]) -> Result<DetExport> {
    let points = sweep(genuine, impostor)?;
    let low = points.first().unwrap().threshold;
    let high = points.last().unwrap().threshold;
    Ok(DetExport {
        points,
        genuine: Histogram::new(genuine, low, high, HISTOGRAM_BINS),
        impostor: Histogram::new(impostor, low, high, HISTOGRAM_BINS),
    })
}

impl DetExport {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# threshold\tfar\tfrr\n");
        for p in &self.points {
            out.push_str(&format!("{}\t{}\t{}\n", p.threshold, p.far, p.frr));
        }
        out.push_str("# bin_low\tbin_high\tgenuine\timpostor\n");
        let edges = self.genuine.bin_edges();
        for b in 0..self.genuine.counts.len() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                edges[b],
                edges[b + 1],
                self.genuine.counts[b],
                self.impostor.counts[b]
            ));
        }
        out
    }
}
