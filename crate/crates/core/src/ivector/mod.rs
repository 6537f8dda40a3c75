//! Total-variability modelling: Baum-Welch statistics, T-matrix training,
//! i-vector extraction and enrollment, and two-covariance PLDA.

mod plda;
mod tv;

pub use plda::{plda_score, plda_train, PldaModel, PldaTraining};
pub use tv::{
    bw_stats, enroll_speaker, extract_ivector, length_normalize, train_tmatrix, BwStats, TvConfig,
    TvModel, TvTraining,
};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Cholesky-based inverse and log-determinant of a symmetric positive
/// definite matrix, retrying once with `1e-8` diagonal jitter.
pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let attempt = |a: DMatrix<f64>| {
        a.cholesky().map(|c| {
            let log_det = 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            (c.inverse(), log_det)
        })
    };
    if let Some(out) = attempt(m.clone()) {
        return Ok(out);
    }
    log::warn!("{what} is not positive definite; adding 1e-8 jitter");
    let jittered = m + DMatrix::identity(m.nrows(), m.ncols()) * 1e-8;
    attempt(jittered).ok_or_else(|| Error::Numerical(format!("{what} is singular")))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
