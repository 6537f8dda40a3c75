use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use super::LossOutput;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    /// `1 - cos(a, b)`
    Cosine,
    /// `‖a - b‖`
    Euclidean,
}

fn check_batch(emb: &DMatrix<f64>, labels: &[usize]) -> Result<()> {
    if emb.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            emb.nrows(),
            labels.len()
        )));
    }
    if emb.nrows() == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    Ok(())
}

fn unit_row(row: RowDVector<f64>) -> Result<(RowDVector<f64>, f64)> {
    let n = row.norm();
    if !(n > 0.0) {
        return Err(Error::Degenerate("zero-norm embedding".into()));
    }
    Ok((row / n, n))
}

pub fn distance(a: &RowDVector<f64>, b: &RowDVector<f64>, metric: Distance) -> Result<f64> {
    Ok(match metric {
        Distance::Euclidean => (a - b).norm(),
        Distance::Cosine => 1.0 - unit_row(a.clone())?.0.dot(&unit_row(b.clone())?.0),
    })
}

/// Gradients of `distance(a, b)` with respect to `a` and `b`.
fn distance_grad(
    a: &RowDVector<f64>,
    b: &RowDVector<f64>,
    metric: Distance,
) -> Result<(RowDVector<f64>, RowDVector<f64>)> {
    match metric {
        Distance::Euclidean => {
            let diff = a - b;
            let n = diff.norm();
            if n == 0.0 {
                let z = RowDVector::zeros(a.len());
                return Ok((z.clone(), z));
            }
            let g = diff / n;
            Ok((g.clone(), -g))
        }
        Distance::Cosine => {
            let (ah, an) = unit_row(a.clone())?;
            let (bh, bn) = unit_row(b.clone())?;
            let c = ah.dot(&bh);
            let ga = -(&bh - &ah * c) / an;
            let gb = -(&ah - &bh * c) / bn;
            Ok((ga, gb))
        }
    }
}

/// Batch-hard triplet loss: for each anchor the farthest positive and the
/// closest negative, hinged at `margin`, averaged over anchors that have both.
///
/// Anchors without a positive or a negative are counted in `skipped`; a batch
/// with no usable anchor yields a loss of 0.
pub fn triplet(
    emb: &DMatrix<f64>,
    labels: &[usize],
    metric: Distance,
    margin: f64,
) -> Result<LossOutput> {
    check_batch(emb, labels)?;
    let b = emb.nrows();
    let rows: Vec<RowDVector<f64>> = (0..b).map(|i| emb.row(i).into_owned()).collect();
    let mut dist = DMatrix::zeros(b, b);
    for i in 0..b {
        for j in (i + 1)..b {
            let d = distance(&rows[i], &rows[j], metric)?;
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }

    let mut d_input = DMatrix::zeros(b, emb.ncols());
    let mut total = 0.0;
    let mut valid = 0usize;
    let mut skipped = 0usize;
    for a in 0..b {
        let hardest_pos = (0..b)
            .filter(|&p| p != a && labels[p] == labels[a])
            .max_by(|&x, &y| dist[(a, x)].total_cmp(&dist[(a, y)]));
        let hardest_neg = (0..b)
            .filter(|&n| labels[n] != labels[a])
            .min_by(|&x, &y| dist[(a, x)].total_cmp(&dist[(a, y)]));
        let (Some(p), Some(n)) = (hardest_pos, hardest_neg) else {
            skipped += 1;
            continue;
        };
        valid += 1;
        let hinge = dist[(a, p)] - dist[(a, n)] + margin;
        if hinge > 0.0 {
            total += hinge;
            let (ga, gp) = distance_grad(&rows[a], &rows[p], metric)?;
            let (ga2, gn) = distance_grad(&rows[a], &rows[n], metric)?;
            let mut r = d_input.row_mut(a);
            r += ga - ga2;
            let mut r = d_input.row_mut(p);
            r += gp;
            let mut r = d_input.row_mut(n);
            r -= gn;
        }
    }
    if valid == 0 {
        log::warn!("triplet batch of {b} has no anchor with both a positive and a negative");
        return Ok(LossOutput::plain(0.0, d_input).with_skipped(skipped));
    }
    let scale = 1.0 / valid as f64;
    Ok(LossOutput::plain(total * scale, d_input * scale).with_skipped(skipped))
}

/// Normalised-temperature cross-entropy with same-label samples as
/// positives, averaged over ordered positive pairs.
///
/// The denominator for anchor `i` sums `exp(sim(i, k) / τ)` over all `k ≠ i`.
pub fn ntxent(emb: &DMatrix<f64>, labels: &[usize], tau: f64) -> Result<LossOutput> {
    check_batch(emb, labels)?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    let b = emb.nrows();
    let mut z_hat = emb.clone();
    let mut norms = DVector::zeros(b);
    for i in 0..b {
        let (u, n) = unit_row(emb.row(i).into_owned())?;
        z_hat.set_row(i, &u);
        norms[i] = n;
    }
    let sim = &z_hat * z_hat.transpose();

    let positives: Vec<usize> = (0..b)
        .map(|i| (0..b).filter(|&j| j != i && labels[j] == labels[i]).count())
        .collect();
    let n_pairs: usize = positives.iter().sum();
    let skipped = positives.iter().filter(|&&c| c == 0).count();
    if n_pairs == 0 {
        log::warn!("contrastive batch of {b} has no positive pair");
        return Ok(LossOutput::plain(0.0, DMatrix::zeros(b, emb.ncols())).with_skipped(skipped));
    }
    let inv_pairs = 1.0 / n_pairs as f64;

    let mut total = 0.0;
    let mut d_sim = DMatrix::zeros(b, b);
    for i in 0..b {
        if positives[i] == 0 {
            continue;
        }
        let max = (0..b)
            .filter(|&k| k != i)
            .map(|k| sim[(i, k)] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..b)
            .filter(|&k| k != i)
            .map(|k| (sim[(i, k)] / tau - max).exp())
            .sum();
        let lse = max + denom.ln();
        let weight = positives[i] as f64 * inv_pairs / tau;
        for k in 0..b {
            if k == i {
                continue;
            }
            d_sim[(i, k)] += weight * (sim[(i, k)] / tau - lse).exp();
            if labels[k] == labels[i] {
                total += lse - sim[(i, k)] / tau;
                d_sim[(i, k)] -= inv_pairs / tau;
            }
        }
    }
    let d_hat = (&d_sim + d_sim.transpose()) * &z_hat;
    let mut d_input = d_hat.clone();
    for i in 0..b {
        let proj = z_hat.row(i).dot(&d_hat.row(i));
        let g = (d_hat.row(i) - z_hat.row(i) * proj) / norms[i];
        d_input.set_row(i, &g);
    }
    Ok(LossOutput::plain(total * inv_pairs, d_input).with_skipped(skipped))
}
