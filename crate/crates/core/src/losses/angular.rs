use nalgebra::DMatrix;

use super::softmax::{check_labels, cross_entropy};
use super::LossOutput;
use crate::error::{Error, Result};

fn check_weights(emb: &DMatrix<f64>, weights: &DMatrix<f64>) -> Result<()> {
    if emb.ncols() != weights.nrows() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs weight rows {}",
            emb.ncols(),
            weights.nrows()
        )));
    }
    Ok(())
}

/// Columns scaled to unit length, plus the original norms.
fn normalize_columns(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut out = w.clone();
    let mut norms = Vec::with_capacity(w.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let n = col.norm();
        if !(n > 0.0) {
            return Err(Error::Degenerate(format!(
                "class weight column {j} has zero norm"
            )));
        }
        col /= n;
        norms.push(n);
    }
    Ok((out, norms))
}

fn normalize_rows(z: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(z.nrows());
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if !(n > 0.0) {
            return Err(Error::Degenerate(format!(
                "embedding row {i} has zero norm"
            )));
        }
        row /= n;
        norms.push(n);
    }
    Ok((out, norms))
}

/// Back-propagates through column normalisation `ŵ = w / ‖w‖`.
fn unnormalize_columns(d_hat: &DMatrix<f64>, hat: &DMatrix<f64>, norms: &[f64]) -> DMatrix<f64> {
    let mut out = d_hat.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let proj = hat.column(j).dot(&col);
        col -= hat.column(j) * proj;
        col /= norms[j];
    }
    out
}

fn unnormalize_rows(d_hat: &DMatrix<f64>, hat: &DMatrix<f64>, norms: &[f64]) -> DMatrix<f64> {
    let mut out = d_hat.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let proj = hat.row(i).dot(&row);
        row -= hat.row(i) * proj;
        row /= norms[i];
    }
    out
}

/// Softmax over `z · ŵ_j`, with class weight columns normalised to unit length.
pub fn msoftmax(
    emb: &DMatrix<f64>,
    labels: &[usize],
    weights: &DMatrix<f64>,
) -> Result<LossOutput> {
    check_weights(emb, weights)?;
    check_labels(emb.nrows(), labels, weights.ncols())?;
    let (w_hat, w_norms) = normalize_columns(weights)?;
    let (value, d_logits) = cross_entropy(&(emb * &w_hat), labels)?;
    let d_input = &d_logits * w_hat.transpose();
    let d_w_hat = emb.transpose() * &d_logits;
    Ok(LossOutput {
        value,
        d_input,
        d_weights: Some(unnormalize_columns(&d_w_hat, &w_hat, &w_norms)),
        d_bias: None,
        d_centers: None,
        skipped: 0,
    })
}

/// Additive angular margin: the target logit is `s · cos(θ + m)` and the rest
/// are `s · cos θ`, with both embeddings and class weights normalised.
///
/// `θ` is clamped so `θ + m ≤ π - 1e-6`, which keeps the target logit
/// non-increasing in `θ`.
pub fn arcface(
    emb: &DMatrix<f64>,
    labels: &[usize],
    weights: &DMatrix<f64>,
    scale: f64,
    margin: f64,
) -> Result<LossOutput> {
    check_weights(emb, weights)?;
    check_labels(emb.nrows(), labels, weights.ncols())?;
    if !(scale > 0.0) || !(0.0..std::f64::consts::PI).contains(&margin) {
        return Err(Error::Config(format!(
            "arcface scale {scale} / margin {margin} out of range"
        )));
    }
    let (w_hat, w_norms) = normalize_columns(weights)?;
    let (z_hat, z_norms) = normalize_rows(emb)?;
    let cos = &z_hat * &w_hat;
    let mut logits = &cos * scale;
    let mut dlogit_dcos = DMatrix::from_element(cos.nrows(), cos.ncols(), scale);
    let theta_max = std::f64::consts::PI - 1e-6 - margin;
    let (sin_m, cos_m) = margin.sin_cos();
    for (i, &y) in labels.iter().enumerate() {
        let c = cos[(i, y)].clamp(-1.0, 1.0);
        let theta = c.acos();
        if theta <= theta_max {
            let s = (1.0 - c * c).max(0.0).sqrt();
            logits[(i, y)] = scale * (c * cos_m - s * sin_m);
            dlogit_dcos[(i, y)] = scale * (cos_m + c * sin_m / s.max(1e-12));
        } else {
            logits[(i, y)] = scale * (theta_max + margin).cos();
            dlogit_dcos[(i, y)] = 0.0;
        }
    }
    let (value, d_logits) = cross_entropy(&logits, labels)?;
    let d_cos = d_logits.component_mul(&dlogit_dcos);
    let d_z_hat = &d_cos * w_hat.transpose();
    let d_w_hat = z_hat.transpose() * &d_cos;
    Ok(LossOutput {
        value,
        d_input: unnormalize_rows(&d_z_hat, &z_hat, &z_norms),
        d_weights: Some(unnormalize_columns(&d_w_hat, &w_hat, &w_norms)),
        d_bias: None,
        d_centers: None,
        skipped: 0,
    })
}

/// Fixed 0/1 mask over a `d × n` class weight matrix that gives every class a
/// disjoint contiguous block of embedding dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct OslMask {
    pub mask: DMatrix<f64>,
}

impl OslMask {
    /// Block size is `⌊d / n⌋`; the last class also takes the remainder.
    pub fn new(dim: usize, n_classes: usize) -> Result<Self> {
        if n_classes == 0 || dim < n_classes {
            return Err(Error::Config(format!(
                "orthogonal softmax needs embedding dim >= classes, got {dim} < {n_classes}"
            )));
        }
        let block = dim / n_classes;
        let mask = DMatrix::from_fn(dim, n_classes, |r, j| {
            let start = j * block;
            let end = if j + 1 == n_classes {
                dim
            } else {
                start + block
            };
            if (start..end).contains(&r) {
                1.0
            } else {
                0.0
            }
        });
        Ok(OslMask { mask })
    }

    pub fn apply(&self, weights: &DMatrix<f64>) -> DMatrix<f64> {
        weights.component_mul(&self.mask)
    }
}

/// Softmax over `Z (Ω ⊙ W)`; the weight gradient is masked the same way.
pub fn osl(
    emb: &DMatrix<f64>,
    labels: &[usize],
    weights: &DMatrix<f64>,
    mask: &OslMask,
) -> Result<LossOutput> {
    check_weights(emb, weights)?;
    if mask.mask.shape() != weights.shape() {
        return Err(Error::Shape(format!(
            "mask {:?} vs weights {:?}",
            mask.mask.shape(),
            weights.shape()
        )));
    }
    check_labels(emb.nrows(), labels, weights.ncols())?;
    let w_eff = mask.apply(weights);
    let (value, d_logits) = cross_entropy(&(emb * &w_eff), labels)?;
    Ok(LossOutput {
        value,
        d_input: &d_logits * w_eff.transpose(),
        d_weights: Some(mask.apply(&(emb.transpose() * &d_logits))),
        d_bias: None,
        d_centers: None,
        skipped: 0,
    })
}
