use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{spd_inverse, symmetrize};
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Two-covariance model `x = μ + y + ε`, `y ~ N(0, B)`, `ε ~ N(0, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mean: DVector<f64>,
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    offset: f64,
}

fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-9 {
        return Err(Error::ModelInvalid(format!("{what} is not symmetric")));
    }
    let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if min < -1e-9 {
        return Err(Error::ModelInvalid(format!("{what} has eigenvalue {min}")));
    }
    Ok(())
}

impl PldaModel {
    pub fn new(mean: DVector<f64>, between: DMatrix<f64>, within: DMatrix<f64>) -> Result<Self> {
        let r = mean.len();
        if between.shape() != (r, r) || within.shape() != (r, r) {
            return Err(Error::ModelInvalid(format!(
                "plda covariances must be {r}×{r}"
            )));
        }
        check_psd(&between, "between-class covariance")?;
        check_psd(&within, "within-class covariance")?;
        // Same-speaker joint covariance [[T, B], [B, T]] against [[T, 0], [0, T]].
        let total = &between + &within;
        let (t_inv, log_det_t) = spd_inverse(&total, "plda total covariance")?;
        let schur = symmetrize(&(&total - &between * &t_inv * &between));
        let (a, log_det_schur) = spd_inverse(&schur, "plda conditional covariance")?;
        let q = &t_inv - &a;
        let p = &t_inv * &between * &a;
        let offset = 0.5 * (log_det_t - log_det_schur);
        Ok(PldaModel {
            mean,
            between,
            within,
            q,
            p,
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(b"BNPL");
        w.u32(self.dim() as u32);
        w.f64s(self.mean.as_slice());
        w.matrix(&self.between);
        w.matrix(&self.within);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, b"BNPL")?;
        let d = r.u32()? as usize;
        let mean = DVector::from_vec(r.f64s(d)?);
        let between = r.matrix(d, d)?;
        let within = r.matrix(d, d)?;
        r.finish()?;
        PldaModel::new(mean, between, within)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Same-class versus different-class log-likelihood ratio.
pub fn plda_score(model: &PldaModel, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
    if enroll.len() != model.dim() || test.len() != model.dim() {
        return Err(Error::Shape(format!(
            "plda expects dim {}, got {} and {}",
            model.dim(),
            enroll.len(),
            test.len()
        )));
    }
    let e = enroll - &model.mean;
    let t = test - &model.mean;
    let quad = 0.5 * (e.dot(&(&model.q * &e)) + t.dot(&(&model.q * &t)));
    Ok(quad + e.dot(&(&model.p * &t)) + model.offset)
}

#[derive(Debug, Clone)]
pub struct PldaTraining {
    pub model: PldaModel,
    /// Data log-likelihood under each successive model.
    pub log_likelihoods: Vec<f64>,
    pub singleton_classes: usize,
}

struct ClassSummary {
    n: f64,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

fn summarize(data: &[DVector<f64>], labels: &[usize], mu: &DVector<f64>) -> Vec<ClassSummary> {
    let r = mu.len();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<&DVector<f64>>> = vec![Vec::new(); n_classes];
    for (x, &l) in data.iter().zip(labels) {
        members[l].push(x);
    }
    members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let n = m.len() as f64;
            let mean = m.iter().fold(DVector::zeros(r), |a, x| a + (*x - mu)) / n;
            let scatter = m.iter().fold(DMatrix::zeros(r, r), |a, x| {
                let d = *x - mu - &mean;
                a + &d * d.transpose()
            });
            ClassSummary { n, mean, scatter }
        })
        .collect()
}

fn log_likelihood(
    classes: &[ClassSummary],
    between: &DMatrix<f64>,
    within: &DMatrix<f64>,
) -> Result<f64> {
    let r = between.nrows() as f64;
    let (w_inv, log_det_w) = spd_inverse(within, "within-class covariance")?;
    let mut total = 0.0;
    for c in classes {
        let (m_inv, log_det_m) = spd_inverse(&(between + within / c.n), "class-mean covariance")?;
        total -= 0.5
            * (c.n * r * LN_2PI
                + (c.n - 1.0) * log_det_w
                + (&w_inv * &c.scatter).trace()
                + r * c.n.ln()
                + log_det_m
                + c.mean.dot(&(&m_inv * &c.mean)));
    }
    Ok(total)
}

fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

/// EM for the two-covariance model with `μ` fixed at the data mean.
pub fn plda_train(
    data: &[DVector<f64>],
    labels: &[usize],
    iterations: usize,
) -> Result<PldaTraining> {
    if data.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} vectors but {} labels",
            data.len(),
            labels.len()
        )));
    }
    let Some(first) = data.first() else {
        return Err(Error::EmptyInput("no plda training vectors".into()));
    };
    let r = first.len();
    if data.iter().any(|x| x.len() != r) {
        return Err(Error::Shape("plda vectors differ in dimension".into()));
    }
    let n_total = data.len() as f64;
    let mu = data.iter().fold(DVector::zeros(r), |a, x| a + x) / n_total;
    let classes = summarize(data, labels, &mu);
    if classes.len() < 2 || classes.iter().filter(|c| c.n >= 2.0).count() < 2 {
        return Err(Error::Config(
            "plda needs at least 2 classes with 2 or more samples".into(),
        ));
    }
    let singleton_classes = classes.iter().filter(|c| c.n < 2.0).count();
    if singleton_classes > 0 {
        log::info!("{singleton_classes} plda classes have a single sample");
    }

    let total_scatter = data.iter().fold(DMatrix::zeros(r, r), |a, x| {
        let d = x - &mu;
        a + &d * d.transpose()
    }) / n_total;
    let floor = 1e-10 * (total_scatter.trace() / r as f64).max(1e-300);
    let within_scatter = classes
        .iter()
        .fold(DMatrix::zeros(r, r), |a, c| a + &c.scatter)
        / n_total;
    let mut within = floor_eigenvalues(&within_scatter, floor);
    let mut between = floor_eigenvalues(&(&total_scatter - &within_scatter), 0.0);

    let mut history = vec![log_likelihood(&classes, &between, &within)?];
    for _ in 0..iterations {
        let mut b_acc = DMatrix::zeros(r, r);
        let mut w_acc = DMatrix::zeros(r, r);
        for c in &classes {
            // Posterior of the class variable given its n samples.
            let m = &between + &within / c.n;
            let (m_inv, _) = spd_inverse(&m, "class-mean covariance")?;
            let gain = &between * &m_inv;
            let y = &gain * &c.mean;
            let cov = symmetrize(&(&between - &gain * &between));
            let second = &cov + &y * y.transpose();
            b_acc += &second;
            let resid = &c.mean - &y;
            w_acc += &c.scatter + (&resid * resid.transpose() + &cov) * c.n;
        }
        between = floor_eigenvalues(&(b_acc / classes.len() as f64), 0.0);
        within = floor_eigenvalues(&(w_acc / n_total), floor);
        history.push(log_likelihood(&classes, &between, &within)?);
    }
    Ok(PldaTraining {
        model: PldaModel::new(mu, between, within)?,
        log_likelihoods: history,
        singleton_classes,
    })
}
