use nalgebra::{DMatrix, DVector};

use super::LossOutput;
use crate::error::{Error, Result};

pub(crate) fn check_labels(rows: usize, labels: &[usize], n_classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "{rows} rows but {} labels",
            labels.len()
        )));
    }
    if rows == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Shape(format!("label {bad} >= {n_classes} classes")));
    }
    Ok(())
}

/// Row-wise log-softmax via log-sum-exp.
pub fn log_softmax(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.add_scalar_mut(-lse);
    }
    out
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / B`.
pub fn cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, DMatrix<f64>)> {
    check_labels(logits.nrows(), labels, logits.ncols())?;
    let b = logits.nrows() as f64;
    let logp = log_softmax(logits);
    let mut grad = logp.map(f64::exp);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total -= logp[(i, y)];
        grad[(i, y)] -= 1.0;
    }
    Ok((total / b, grad / b))
}

/// Focal loss `-(1 - p_t)^Γ log p_t`, averaged over the batch.
pub fn focal(logits: &DMatrix<f64>, labels: &[usize], gamma: f64) -> Result<(f64, DMatrix<f64>)> {
    check_labels(logits.nrows(), labels, logits.ncols())?;
    if !(0.0..=5.0).contains(&gamma) {
        return Err(Error::Config(format!("focal gamma {gamma} outside [0, 5]")));
    }
    let b = logits.nrows() as f64;
    let logp = log_softmax(logits);
    let probs = logp.map(f64::exp);
    let mut grad = DMatrix::zeros(logits.nrows(), logits.ncols());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let lp = logp[(i, y)];
        let pt = lp.exp();
        // 1 - p_t without cancellation when p_t is close to 1.
        let q = -lp.exp_m1();
        let modulator = q.powf(gamma);
        total -= modulator * lp;
        // dL/dz_j = coef * (δ_jy - p_j)
        let slope = if gamma == 0.0 || q == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * pt * lp
        };
        let coef = slope - modulator;
        for j in 0..logits.ncols() {
            let delta = if j == y { 1.0 } else { 0.0 };
            grad[(i, j)] = coef * (delta - probs[(i, j)]);
        }
    }
    Ok((total / b, grad / b))
}

/// Softmax over `Z W + b` jointly with the center penalty
/// `(λ/2) · mean_i ‖z_i - c_{y_i}‖²`.
///
/// `weights` is `d × n`, `centers` is `n × d`. Both terms are batch means so
/// `λ = 0` reduces exactly to [`cross_entropy`] on the same logits.
pub fn joint_center(
    emb: &DMatrix<f64>,
    labels: &[usize],
    weights: &DMatrix<f64>,
    bias: &DVector<f64>,
    centers: &DMatrix<f64>,
    lambda: f64,
) -> Result<LossOutput> {
    let (d, n) = weights.shape();
    if emb.ncols() != d || bias.len() != n || centers.shape() != (n, d) {
        return Err(Error::Shape(format!(
            "embedding {:?}, weights {:?}, bias {}, centers {:?}",
            emb.shape(),
            weights.shape(),
            bias.len(),
            centers.shape()
        )));
    }
    check_labels(emb.nrows(), labels, n)?;
    let b = emb.nrows() as f64;
    let mut logits = emb * weights;
    for (j, mut col) in logits.column_iter_mut().enumerate() {
        col.add_scalar_mut(bias[j]);
    }
    let (ce, d_logits) = cross_entropy(&logits, labels)?;

    let mut diff = emb.clone();
    for (i, &y) in labels.iter().enumerate() {
        let mut row = diff.row_mut(i);
        row -= centers.row(y);
    }
    let value = ce + 0.5 * lambda * diff.norm_squared() / b;

    let d_emb = &d_logits * weights.transpose() + &diff * (lambda / b);
    let d_weights = emb.transpose() * &d_logits;
    let d_bias = d_logits.row_sum().transpose();
    let mut d_centers = DMatrix::zeros(n, d);
    for (i, &y) in labels.iter().enumerate() {
        let mut row = d_centers.row_mut(y);
        row -= diff.row(i) * (lambda / b);
    }
    Ok(LossOutput {
        value,
        d_input: d_emb,
        d_weights: Some(d_weights),
        d_bias: Some(d_bias),
        d_centers: Some(d_centers),
        skipped: 0,
    })
}

/// Mini-batch center update: `c_j ← c_j - α · mean_{i: y_i = j}(c_j - z_i)`.
/// Classes absent from the batch keep their center.
pub fn update_centers(
    centers: &mut DMatrix<f64>,
    emb: &DMatrix<f64>,
    labels: &[usize],
    alpha: f64,
) {
    let (n, d) = centers.shape();
    let mut sums = DMatrix::<f64>::zeros(n, d);
    let mut counts = vec![0usize; n];
    for (i, &y) in labels.iter().enumerate() {
        let mut row = sums.row_mut(y);
        row += centers.row(y) - emb.row(i);
        counts[y] += 1;
    }
    for j in 0..n {
        if counts[j] > 0 {
            let step = sums.row(j) * (alpha / counts[j] as f64);
            let mut row = centers.row_mut(j);
            row -= step;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn uniform_logits_give_ln_n() {
        let (v, _) = cross_entropy(&DMatrix::zeros(3, 4), &[0, 1, 3]).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_logits_approach_zero() {
        let mut logits = DMatrix::zeros(1, 3);
        logits[(0, 1)] = 800.0;
        let (v, g) = cross_entropy(&logits, &[1]).unwrap();
        assert!(v < 1e-300 && v >= 0.0);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn matches_naive_softmax() {
        let logits = random(3, 5, 1);
        let labels = [4, 0, 2];
        let (v, g) = cross_entropy(&logits, &labels).unwrap();
        let mut naive = 0.0;
        for i in 0..3 {
            let denom: f64 = (0..5).map(|j| logits[(i, j)].exp()).sum();
            naive -= (logits[(i, labels[i])].exp() / denom).ln();
            for j in 0..5 {
                let p = logits[(i, j)].exp() / denom;
                let expect = (p - if j == labels[i] { 1.0 } else { 0.0 }) / 3.0;
                assert!((g[(i, j)] - expect).abs() < 1e-12);
            }
        }
        assert!((v - naive / 3.0).abs() < 1e-12);
    }

    #[test]
    fn focal_with_zero_gamma_is_cross_entropy() {
        let logits = random(6, 4, 2);
        let labels = [0, 1, 2, 3, 0, 1];
        let (a, ga) = cross_entropy(&logits, &labels).unwrap();
        let (b, gb) = focal(&logits, &labels, 0.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn focal_at_half_probability() {
        let (v, _) = focal(&DMatrix::zeros(1, 2), &[0], 2.0).unwrap();
        assert!((v - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 0.173287).abs() < 1e-6);
    }

    #[test]
    fn focal_rejects_out_of_range_gamma() {
        assert!(focal(&DMatrix::zeros(1, 2), &[0], 6.0).is_err());
    }

    #[test]
    fn joint_center_reductions() {
        let emb = random(5, 3, 3);
        let w = random(3, 4, 4);
        let b = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
        let labels = [0, 1, 1, 3, 2];
        let mut logits = &emb * &w;
        for (j, mut col) in logits.column_iter_mut().enumerate() {
            col.add_scalar_mut(b[j]);
        }
        let (ce, _) = cross_entropy(&logits, &labels).unwrap();

        let out = joint_center(&emb, &labels, &w, &b, &random(4, 3, 5), 0.0).unwrap();
        assert_eq!(out.value, ce);

        // Centers at the embeddings: the center term vanishes for any λ.
        let mut centers = DMatrix::zeros(4, 3);
        for (i, &y) in labels.iter().enumerate() {
            centers.set_row(y, &emb.row(i));
        }
        let emb_at_centers = DMatrix::from_fn(5, 3, |i, c| centers[(labels[i], c)]);
        let mut logits2 = &emb_at_centers * &w;
        for (j, mut col) in logits2.column_iter_mut().enumerate() {
            col.add_scalar_mut(b[j]);
        }
        let out = joint_center(&emb_at_centers, &labels, &w, &b, &centers, 0.003).unwrap();
        assert_eq!(out.value, cross_entropy(&logits2, &labels).unwrap().0);
    }

    #[test]
    fn center_update_moves_toward_class_means() {
        let mut centers = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 5.0, 5.0]);
        let emb = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 4.0, 2.0]);
        update_centers(&mut centers, &emb, &[0, 0], 0.5);
        // mean(c0 - z) = (-3, -1); c0 - 0.5 * that = (1.5, 0.5)
        assert_eq!(
            centers.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.5, 0.5]
        );
        assert_eq!(
            centers.row(1).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 1.0]
        );
        assert_eq!(
            centers.row(2).iter().copied().collect::<Vec<_>>(),
            vec![5.0, 5.0]
        );
    }
}
