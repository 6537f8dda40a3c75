//! Diagonal-covariance GMM back end: UBM training, MAP enrollment and
//! log-likelihood-ratio scoring.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    pub weights: DVector<f64>,
    /// `K × D`
    pub means: DMatrix<f64>,
    /// `K × D`
    pub variances: DMatrix<f64>,
}

/// Zeroth, first and second order statistics accumulated over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmStats {
    pub occupancy: DVector<f64>,
    pub first: DMatrix<f64>,
    pub second: DMatrix<f64>,
    pub log_likelihood: f64,
    pub frames: usize,
}

impl GmmStats {
    fn zeros(k: usize, d: usize) -> Self {
        GmmStats {
            occupancy: DVector::zeros(k),
            first: DMatrix::zeros(k, d),
            second: DMatrix::zeros(k, d),
            log_likelihood: 0.0,
            frames: 0,
        }
    }

    fn add(mut self, other: &GmmStats) -> Self {
        self.occupancy += &other.occupancy;
        self.first += &other.first;
        self.second += &other.second;
        self.log_likelihood += other.log_likelihood;
        self.frames += other.frames;
        self
    }
}

fn log_sum_exp<I: Iterator<Item = f64>>(values: impl Fn() -> I) -> f64 {
    let max = values().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl DiagGmm {
    pub fn new(
        weights: DVector<f64>,
        means: DMatrix<f64>,
        variances: DMatrix<f64>,
    ) -> Result<Self> {
        let gmm = DiagGmm {
            weights,
            means,
            variances,
        };
        gmm.validate()?;
        Ok(gmm)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0
            || self.means.shape() != (k, self.dim())
            || self.variances.shape() != self.means.shape()
        {
            return Err(Error::ModelInvalid(format!(
                "gmm shapes: weights {k}, means {:?}, variances {:?}",
                self.means.shape(),
                self.variances.shape()
            )));
        }
        if (self.weights.sum() - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::ModelInvalid(
                "gmm weights must be positive and sum to 1".into(),
            ));
        }
        if self.variances.iter().any(|&v| !(v > 0.0 && v.is_finite()))
            || self.means.iter().any(|m| !m.is_finite())
        {
            return Err(Error::ModelInvalid(
                "gmm means/variances must be finite, variances positive".into(),
            ));
        }
        Ok(())
    }

    /// `log w_k + log N(x | μ_k, Σ_k)` for every row of `x`, as `N × K`.
    pub fn log_joint(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let precision = self.variances.map(|v| 1.0 / v);
        let scaled_means = self.means.component_mul(&precision);
        let consts = DVector::from_fn(self.n_components(), |k, _| {
            let log_det: f64 = self.variances.row(k).iter().map(|v| v.ln()).sum();
            let quad: f64 = self.means.row(k).dot(&scaled_means.row(k));
            self.weights[k].ln() - 0.5 * (self.dim() as f64 * LN_2PI + log_det + quad)
        });
        let sq = x.map(|v| v * v);
        let mut out = x * scaled_means.transpose() - (sq * precision.transpose()) * 0.5;
        for (k, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(consts[k]);
        }
        out
    }

    /// Per-frame `log p(x)`.
    pub fn frame_log_likelihoods(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let rows: Vec<DMatrix<f64>> = row_chunks(x);
        rows.par_iter()
            .map(|chunk| {
                let lj = self.log_joint(chunk);
                lj.row_iter()
                    .map(|r| log_sum_exp(|| r.iter().copied()))
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .concat()
    }

    /// Component posteriors for every frame, `N × K`.
    pub fn posteriors(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut lj = self.log_joint(x);
        for mut row in lj.row_iter_mut() {
            let lse = log_sum_exp(|| row.iter().copied());
            row.apply(|v| *v = (*v - lse).exp());
        }
        lj
    }

    /// Posterior-weighted statistics of `x`, with parallel chunks reduced in order.
    pub fn accumulate(&self, x: &DMatrix<f64>) -> GmmStats {
        let (k, d) = (self.n_components(), self.dim());
        let parts: Vec<GmmStats> = row_chunks(x)
            .par_iter()
            .map(|chunk| {
                let mut lj = self.log_joint(chunk);
                let mut ll = 0.0;
                for mut row in lj.row_iter_mut() {
                    let lse = log_sum_exp(|| row.iter().copied());
                    ll += lse;
                    row.apply(|v| *v = (*v - lse).exp());
                }
                let post_t = lj.transpose();
                GmmStats {
                    occupancy: lj.row_sum().transpose(),
                    first: &post_t * chunk,
                    second: &post_t * chunk.map(|v| v * v),
                    log_likelihood: ll,
                    frames: chunk.nrows(),
                }
            })
            .collect();
        parts
            .iter()
            .fold(GmmStats::zeros(k, d), |acc, p| acc.add(p))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(b"BNG1");
        w.u32(self.n_components() as u32);
        w.u32(self.dim() as u32);
        w.f64s(self.weights.as_slice());
        w.matrix(&self.means);
        w.matrix(&self.variances);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, b"BNG1")?;
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let weights = DVector::from_vec(r.f64s(k)?);
        let means = r.matrix(k, d)?;
        let variances = r.matrix(k, d)?;
        r.finish()?;
        DiagGmm::new(weights, means, variances)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

fn row_chunks(x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    (0..x.nrows())
        .step_by(CHUNK)
        .map(|start| x.rows(start, CHUNK.min(x.nrows() - start)).into_owned())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UbmConfig {
    pub components: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Frames sampled for k-means++ initialisation.
    pub init_subsample: usize,
    pub kmeans_iterations: usize,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor: f64,
}

impl Default for UbmConfig {
    fn default() -> Self {
        UbmConfig {
            components: 512,
            iterations: 10,
            seed: 1,
            init_subsample: 20_000,
            kmeans_iterations: 10,
            variance_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UbmTraining {
    pub model: DiagGmm,
    /// Total log-likelihood of the pool under each successive model.
    pub log_likelihoods: Vec<f64>,
    pub reseeded: usize,
}

fn global_variance(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    DVector::from_fn(x.ncols(), |j, _| {
        x.column(j)
            .iter()
            .map(|v| (v - mean[j]).powi(2))
            .sum::<f64>()
            / n
    })
}

fn sq_dist(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Seeded k-means++ followed by Lloyd iterations. Returns centroids and
/// hard assignments of `x`.
pub fn kmeans(
    x: &DMatrix<f64>,
    k: usize,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, Vec<usize>) {
    let (n, d) = x.shape();
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut centroids = DMatrix::zeros(k, d);
    centroids.set_row(0, &x.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = rows
        .iter()
        .map(|r| sq_dist(r, centroids.row(0).iter().copied()))
        .collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.set_row(c, &x.row(pick));
        for (i, r) in rows.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(r, centroids.row(c).iter().copied()));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..=iterations {
        assign = rows
            .par_iter()
            .map(|r| {
                (0..k)
                    .map(|c| (c, sq_dist(r, centroids.row(c).iter().copied())))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap()
                    .0
            })
            .collect();
        let mut sums = DMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            let mut row = sums.row_mut(c);
            row += x.row(i);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.set_row(c, &(sums.row(c) / counts[c] as f64));
            }
        }
    }
    (centroids, assign)
}

/// Trains a UBM on the rows of `pool` by k-means++ initialisation and EM.
pub fn ubm_train_em(pool: &DMatrix<f64>, cfg: &UbmConfig) -> Result<UbmTraining> {
    let (n, d) = pool.shape();
    let k = cfg.components;
    if k == 0 || d == 0 {
        return Err(Error::Config(
            "ubm needs at least one component and dimension".into(),
        ));
    }
    if n < 2 * k {
        return Err(Error::EmptyInput(format!(
            "{n} frames is too few for {k} components"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let global = global_variance(pool);
    let floor = global.map(|v| (v * cfg.variance_floor).max(1e-12));

    let subsample = if n > cfg.init_subsample.max(k) {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..cfg.init_subsample.max(k) {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        idx.truncate(cfg.init_subsample.max(k));
        idx.sort_unstable();
        DMatrix::from_fn(idx.len(), d, |r, c| pool[(idx[r], c)])
    } else {
        pool.clone()
    };
    let (centroids, assign) = kmeans(&subsample, k, cfg.kmeans_iterations, &mut rng);

    let mut counts = vec![0usize; k];
    let mut sq = DMatrix::zeros(k, d);
    for (i, &c) in assign.iter().enumerate() {
        counts[c] += 1;
        let diff = subsample.row(i) - centroids.row(c);
        let mut row = sq.row_mut(c);
        row += diff.component_mul(&diff);
    }
    let m = subsample.nrows() as f64;
    let mut weights = DVector::from_fn(k, |c, _| (counts[c] as f64 + 1.0) / (m + k as f64));
    weights /= weights.sum();
    let variances = DMatrix::from_fn(k, d, |c, j| {
        let v = if counts[c] > 1 {
            sq[(c, j)] / counts[c] as f64
        } else {
            global[j]
        };
        v.max(floor[j])
    });
    let mut model = DiagGmm::new(weights, centroids, variances)?;

    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let mut reseeded = 0;
    for _ in 0..cfg.iterations {
        let stats = model.accumulate(pool);
        history.push(stats.log_likelihood);
        let (next, r) = m_step(&model, &stats, &floor, &mut rng);
        reseeded += r;
        model = next;
    }
    history.push(model.accumulate(pool).log_likelihood);
    model.validate()?;
    Ok(UbmTraining {
        model,
        log_likelihoods: history,
        reseeded,
    })
}

fn m_step(
    prev: &DiagGmm,
    stats: &GmmStats,
    floor: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> (DiagGmm, usize) {
    let (k, d) = (prev.n_components(), prev.dim());
    let total = stats.frames as f64;
    let mut weights = DVector::zeros(k);
    let mut means = DMatrix::zeros(k, d);
    let mut variances = DMatrix::zeros(k, d);
    let mut empty = Vec::new();
    for c in 0..k {
        let occ = stats.occupancy[c];
        if occ < 1e-6 {
            empty.push(c);
            continue;
        }
        weights[c] = occ / total;
        for j in 0..d {
            let mu = stats.first[(c, j)] / occ;
            means[(c, j)] = mu;
            variances[(c, j)] = (stats.second[(c, j)] / occ - mu * mu).max(floor[j]);
        }
    }
    for &c in &empty {
        let donor = (0..k)
            .filter(|i| !empty.contains(i))
            .max_by(|&a, &b| weights[a].total_cmp(&weights[b]))
            .expect("at least one component has data");
        log::warn!("gmm component {c} lost all data; re-seeding from component {donor}");
        let half = weights[donor] / 2.0;
        weights[donor] = half;
        weights[c] = half;
        for j in 0..d {
            let sd = variances[(donor, j)].sqrt();
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            means[(c, j)] = means[(donor, j)] + 0.1 * sign * sd;
            variances[(c, j)] = variances[(donor, j)];
        }
    }
    weights /= weights.sum();
    (
        DiagGmm {
            weights,
            means,
            variances,
        },
        empty.len(),
    )
}

/// Which model supplies the posteriors in each MAP pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MapPosteriors {
    /// The model adapted so far.
    #[default]
    Evolving,
    /// The UBM in every pass.
    Ubm,
}

/// Mean-only MAP adaptation towards `frames` with relevance factor `r`.
pub fn map_adapt(
    ubm: &DiagGmm,
    frames: &DMatrix<f64>,
    relevance: f64,
    iterations: usize,
    mode: MapPosteriors,
) -> Result<DiagGmm> {
    if !(relevance > 0.0) {
        return Err(Error::Config(format!(
            "relevance factor {relevance} must be positive"
        )));
    }
    if frames.nrows() == 0 {
        log::warn!("map adaptation with no frames returns the UBM");
        return Ok(ubm.clone());
    }
    if frames.ncols() != ubm.dim() {
        return Err(Error::Shape(format!(
            "frames have {} dims, ubm {}",
            frames.ncols(),
            ubm.dim()
        )));
    }
    let mut model = ubm.clone();
    for _ in 0..iterations {
        let stats = match mode {
            MapPosteriors::Evolving => model.accumulate(frames),
            MapPosteriors::Ubm => ubm.accumulate(frames),
        };
        for c in 0..ubm.n_components() {
            let occ = stats.occupancy[c];
            let alpha = occ / (occ + relevance);
            for j in 0..ubm.dim() {
                let data_mean = if occ > 0.0 {
                    stats.first[(c, j)] / occ
                } else {
                    0.0
                };
                model.means[(c, j)] = alpha * data_mean + (1.0 - alpha) * ubm.means[(c, j)];
            }
        }
    }
    Ok(model)
}

/// Average per-frame `log p(x | target) - log p(x | ubm)`.
pub fn llr_score(target: &DiagGmm, ubm: &DiagGmm, frames: &DMatrix<f64>) -> Result<f64> {
    if frames.nrows() == 0 {
        return Err(Error::EmptyInput("no test frames".into()));
    }
    if frames.ncols() != ubm.dim() || target.dim() != ubm.dim() {
        return Err(Error::Shape("llr frame/model dimension mismatch".into()));
    }
    let t = target.frame_log_likelihoods(frames);
    let u = ubm.frame_log_likelihoods(frames);
    Ok(t.iter().zip(&u).map(|(a, b)| a - b).sum::<f64>() / frames.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand_distr::{Distribution, Normal};

    fn gaussian(rows: usize, cols: usize, mean: f64, sd: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(mean, sd).unwrap();
        DMatrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
    }

    fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
        out.rows_mut(0, a.nrows()).copy_from(a);
        out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
        out
    }

    fn direct_log_density(g: &DiagGmm, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for k in 0..g.n_components() {
            let mut p = g.weights[k];
            for j in 0..g.dim() {
                let v = g.variances[(k, j)];
                p *= (-(x[j] - g.means[(k, j)]).powi(2) / (2.0 * v)).exp()
                    / (2.0 * std::f64::consts::PI * v).sqrt();
            }
            total += p;
        }
        total.ln()
    }

    fn cfg(k: usize) -> UbmConfig {
        UbmConfig {
            components: k,
            iterations: 8,
            seed: 3,
            ..UbmConfig::default()
        }
    }

    #[test]
    fn log_joint_matches_direct_density() {
        let x = gaussian(20, 3, 0.0, 1.0, 1);
        let ubm = ubm_train_em(&x, &cfg(2)).unwrap().model;
        let ll = ubm.frame_log_likelihoods(&x);
        for i in 0..20 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            assert!((ll[i] - direct_log_density(&ubm, &row)).abs() < 1e-10);
        }
    }

    #[test]
    fn single_component_is_closed_form() {
        let x = gaussian(500, 4, 2.0, 3.0, 2);
        let g = ubm_train_em(&x, &cfg(1)).unwrap().model;
        let mean = x.row_mean();
        let var = global_variance(&x);
        assert!((g.means.row(0) - &mean).amax() < 1e-9);
        assert!((g.variances.row(0).transpose() - var).amax() < 1e-9);
        assert!((g.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_two_separated_clusters() {
        let a = gaussian(300, 2, -3.0, 0.1, 4);
        let b = gaussian(300, 2, 5.0, 0.1, 5);
        let g = ubm_train_em(&stack(&a, &b), &cfg(2)).unwrap().model;
        let mut centers: Vec<f64> = (0..2).map(|k| g.means[(k, 0)]).collect();
        centers.sort_by(f64::total_cmp);
        assert!(
            (centers[0] + 3.0).abs() < 0.1 && (centers[1] - 5.0).abs() < 0.1,
            "{centers:?}"
        );
        for k in 0..2 {
            assert!((g.means[(k, 1)] - g.means[(k, 0)]).abs() < 0.1);
        }
    }

    #[test]
    fn em_log_likelihood_is_non_decreasing() {
        let x = stack(
            &gaussian(400, 3, 0.0, 1.0, 6),
            &gaussian(300, 3, 2.0, 0.5, 7),
        );
        let run = ubm_train_em(&x, &cfg(6)).unwrap();
        for w in run.log_likelihoods.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-8 * w[0].abs(),
                "{:?}",
                run.log_likelihoods
            );
        }
        run.model.validate().unwrap();
    }

    #[test]
    fn variances_respect_the_floor() {
        // One dimension is nearly constant.
        let mut x = gaussian(400, 2, 0.0, 1.0, 8);
        for i in 0..400 {
            x[(i, 1)] = if i % 2 == 0 { 0.0 } else { 1e-9 };
        }
        let g = ubm_train_em(&x, &cfg(4)).unwrap().model;
        let floor = global_variance(&x)[1] * 1e-4;
        assert!(g.variances.column(1).iter().all(|&v| v >= floor));
    }

    #[test]
    fn map_with_no_frames_is_the_ubm() {
        let ubm = ubm_train_em(&gaussian(100, 2, 0.0, 1.0, 9), &cfg(2))
            .unwrap()
            .model;
        let adapted = map_adapt(
            &ubm,
            &DMatrix::zeros(0, 2),
            10.0,
            3,
            MapPosteriors::Evolving,
        )
        .unwrap();
        assert_eq!(adapted, ubm);
    }

    #[test]
    fn map_single_component_midpoint() {
        let ubm = DiagGmm::new(
            DVector::from_element(1, 1.0),
            DMatrix::from_row_slice(1, 2, &[0.0, 0.0]),
            DMatrix::from_element(1, 2, 1.0),
        )
        .unwrap();
        let frames = DMatrix::from_fn(10, 2, |i, j| {
            if j == 0 {
                2.0 + (i as f64 - 4.5) * 0.1
            } else {
                -4.0
            }
        });
        let adapted = map_adapt(&ubm, &frames, 10.0, 1, MapPosteriors::Evolving).unwrap();
        let data_mean = frames.row_mean();
        assert!((adapted.means[(0, 0)] - data_mean[0] / 2.0).abs() < 1e-12);
        assert!((adapted.means[(0, 1)] + 2.0).abs() < 1e-12);
        assert_eq!(adapted.variances, ubm.variances);
    }

    #[test]
    fn large_relevance_keeps_ubm_means() {
        let ubm = ubm_train_em(&gaussian(200, 2, 0.0, 1.0, 10), &cfg(3))
            .unwrap()
            .model;
        let frames = gaussian(20, 2, 3.0, 1.0, 11);
        let adapted = map_adapt(&ubm, &frames, 1e12, 3, MapPosteriors::Ubm).unwrap();
        assert!((adapted.means - &ubm.means).amax() < 1e-9);
    }

    #[test]
    fn llr_properties() {
        let pool = stack(
            &gaussian(300, 2, -2.0, 1.0, 12),
            &gaussian(300, 2, 2.0, 1.0, 13),
        );
        let ubm = ubm_train_em(&pool, &cfg(4)).unwrap().model;
        let x = gaussian(30, 2, 1.0, 1.0, 14);
        assert_eq!(llr_score(&ubm, &ubm, &x).unwrap(), 0.0);

        let enroll = gaussian(200, 2, 6.0, 0.5, 15);
        let target = map_adapt(&ubm, &enroll, 10.0, 3, MapPosteriors::Evolving).unwrap();
        let near = gaussian(50, 2, 6.0, 0.5, 16);
        assert!(llr_score(&target, &ubm, &near).unwrap() > 0.0);

        let doubled = stack(&near, &near);
        let a = llr_score(&target, &ubm, &near).unwrap();
        let b = llr_score(&target, &ubm, &doubled).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn repeated_map_steps_shrink() {
        let ubm = ubm_train_em(&gaussian(300, 2, 0.0, 1.0, 17), &cfg(3))
            .unwrap()
            .model;
        let enroll = gaussian(40, 2, 1.5, 0.7, 18);
        let m1 = map_adapt(&ubm, &enroll, 10.0, 1, MapPosteriors::Evolving).unwrap();
        let m2 = map_adapt(&ubm, &enroll, 10.0, 2, MapPosteriors::Evolving).unwrap();
        let m3 = map_adapt(&ubm, &enroll, 10.0, 3, MapPosteriors::Evolving).unwrap();
        let d1 = (&m2.means - &m1.means).norm();
        let d2 = (&m3.means - &m2.means).norm();
        assert!(d2 <= d1, "{d1} {d2}");
    }

    #[test]
    fn file_round_trip_and_validation() {
        let g = ubm_train_em(&gaussian(100, 3, 0.0, 1.0, 19), &cfg(2))
            .unwrap()
            .model;
        let bytes = g.to_bytes();
        assert_eq!(&bytes[..4], b"BNG1");
        assert_eq!(DiagGmm::from_bytes(&bytes).unwrap(), g);
        let bad = DiagGmm {
            weights: DVector::from_vec(vec![0.7, 0.7]),
            ..g
        };
        assert!(matches!(bad.validate(), Err(Error::ModelInvalid(_))));
    }

    proptest! {
        #[test]
        fn llr_is_permutation_invariant(seed in 0u64..200) {
            let pool = gaussian(120, 2, 0.0, 1.0, 100);
            let ubm = ubm_train_em(&pool, &cfg(3)).unwrap().model;
            let target = map_adapt(&ubm, &gaussian(20, 2, 1.0, 1.0, 101), 10.0, 3, MapPosteriors::Evolving).unwrap();
            let x = gaussian(15, 2, 0.5, 1.0, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..15).collect();
            for i in (1..15).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let perm = DMatrix::from_fn(15, 2, |r, c| x[(order[r], c)]);
            let a = llr_score(&target, &ubm, &x).unwrap();
            let b = llr_score(&target, &ubm, &perm).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
