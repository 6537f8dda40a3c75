use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spd_inverse;
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::gmm::DiagGmm;

/// Zeroth-order and UBM-mean-centered first-order statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BwStats {
    pub n: DVector<f64>,
    /// `K × D`
    pub f: DMatrix<f64>,
}

impl BwStats {
    pub fn zeros(k: usize, d: usize) -> Self {
        BwStats {
            n: DVector::zeros(k),
            f: DMatrix::zeros(k, d),
        }
    }
}

/// `N_k = Σ γ_t(k)`, `F_k = Σ γ_t(k) (x_t - m_k)` under UBM posteriors.
pub fn bw_stats(ubm: &DiagGmm, frames: &DMatrix<f64>) -> Result<BwStats> {
    if frames.nrows() == 0 {
        return Err(Error::EmptyInput("no frames for statistics".into()));
    }
    if frames.ncols() != ubm.dim() {
        return Err(Error::Shape(format!(
            "frames have {} dims, ubm {}",
            frames.ncols(),
            ubm.dim()
        )));
    }
    let acc = ubm.accumulate(frames);
    let mut f = acc.first;
    for k in 0..ubm.n_components() {
        let mut row = f.row_mut(k);
        row -= ubm.means.row(k) * acc.occupancy[k];
    }
    Ok(BwStats {
        n: acc.occupancy,
        f,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvConfig {
    pub rank: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            rank: 100,
            iterations: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvModel {
    pub ubm: DiagGmm,
    /// One `D × R` block per component.
    pub t: Vec<DMatrix<f64>>,
    /// Mean of the training i-vectors, removed before length normalisation.
    pub center: DVector<f64>,
    precision: DMatrix<f64>,
    tt_sigma_t: Vec<DMatrix<f64>>,
}

impl TvModel {
    pub fn new(ubm: DiagGmm, t: Vec<DMatrix<f64>>, center: DVector<f64>) -> Result<Self> {
        let (k, d) = (ubm.n_components(), ubm.dim());
        let r = center.len();
        if t.len() != k || t.iter().any(|b| b.shape() != (d, r)) {
            return Err(Error::ModelInvalid(format!(
                "T blocks must be {k} of {d}×{r}"
            )));
        }
        if r == 0 || r >= k * d {
            return Err(Error::ModelInvalid(format!(
                "rank {r} must be in 1..{}",
                k * d
            )));
        }
        if t.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::ModelInvalid("T has non-finite entries".into()));
        }
        let precision = ubm.variances.map(|v| 1.0 / v);
        let tt_sigma_t = (0..k)
            .map(|c| {
                let scaled = DMatrix::from_fn(d, r, |i, j| t[c][(i, j)] * precision[(c, i)]);
                t[c].transpose() * scaled
            })
            .collect();
        Ok(TvModel {
            ubm,
            t,
            center,
            precision,
            tt_sigma_t,
        })
    }

    pub fn rank(&self) -> usize {
        self.center.len()
    }

    /// Stacked `KD × R` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let d = self.ubm.dim();
        let mut out = DMatrix::zeros(self.t.len() * d, self.rank());
        for (c, block) in self.t.iter().enumerate() {
            out.rows_mut(c * d, d).copy_from(block);
        }
        out
    }

    /// Posterior precision `L = I + Σ N_k T_kᵀ Σ_k⁻¹ T_k` and linear term
    /// `b = Σ T_kᵀ Σ_k⁻¹ F_k`.
    fn posterior_terms(&self, stats: &BwStats) -> (DMatrix<f64>, DVector<f64>) {
        let r = self.rank();
        let mut l = DMatrix::identity(r, r);
        let mut b = DVector::zeros(r);
        for (c, block) in self.t.iter().enumerate() {
            if stats.n[c] != 0.0 {
                l += &self.tt_sigma_t[c] * stats.n[c];
            }
            let weighted = stats
                .f
                .row(c)
                .transpose()
                .component_mul(&self.precision.row(c).transpose());
            b += block.transpose() * weighted;
        }
        (l, b)
    }

    fn check_stats(&self, stats: &BwStats) -> Result<()> {
        if stats.n.len() != self.t.len() || stats.f.shape() != (self.t.len(), self.ubm.dim()) {
            return Err(Error::Shape(
                "statistics do not match the model's UBM".into(),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(b"BNT1");
        w.u32(self.ubm.n_components() as u32);
        w.u32(self.ubm.dim() as u32);
        w.u32(self.rank() as u32);
        w.f64s(self.ubm.weights.as_slice());
        w.matrix(&self.ubm.means);
        w.matrix(&self.ubm.variances);
        w.matrix(&self.stacked());
        w.f64s(self.center.as_slice());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, b"BNT1")?;
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let rank = r.u32()? as usize;
        let weights = DVector::from_vec(r.f64s(k)?);
        let means = r.matrix(k, d)?;
        let variances = r.matrix(k, d)?;
        let stacked = r.matrix(k * d, rank)?;
        let center = DVector::from_vec(r.f64s(rank)?);
        r.finish()?;
        let ubm = DiagGmm::new(weights, means, variances)?;
        let t = (0..k)
            .map(|c| stacked.rows(c * d, d).into_owned())
            .collect();
        TvModel::new(ubm, t, center)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Posterior mean of the latent factor given the statistics (uncentered).
pub fn extract_ivector(tv: &TvModel, stats: &BwStats) -> Result<DVector<f64>> {
    tv.check_stats(stats)?;
    let (l, b) = tv.posterior_terms(stats);
    let (l_inv, _) = spd_inverse(&l, "i-vector posterior precision")?;
    Ok(l_inv * b)
}

/// `x / ‖x‖`; a (near) zero vector is an error.
pub fn length_normalize(x: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.norm();
    if !(n > 1e-12) {
        return Err(Error::Degenerate(
            "cannot length-normalise a zero vector".into(),
        ));
    }
    Ok(x / n)
}

/// Mean of a speaker's session i-vectors, length-normalised.
pub fn enroll_speaker(ivectors: &[DVector<f64>]) -> Result<DVector<f64>> {
    let Some(first) = ivectors.first() else {
        return Err(Error::EmptyInput("no enrollment sessions".into()));
    };
    if ivectors.iter().any(|v| v.len() != first.len()) {
        return Err(Error::Shape(
            "enrollment i-vectors differ in dimension".into(),
        ));
    }
    let mean = ivectors
        .iter()
        .fold(DVector::zeros(first.len()), |acc, v| acc + v)
        / ivectors.len() as f64;
    length_normalize(&mean)
}

#[derive(Debug, Clone)]
pub struct TvTraining {
    pub model: TvModel,
    /// `Σ_u ½ bᵀL⁻¹b − ½ log|L|` for each model visited.
    pub objective: Vec<f64>,
}

struct EmAccumulator {
    a: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    objective: f64,
}

impl EmAccumulator {
    fn zeros(k: usize, d: usize, r: usize) -> Self {
        EmAccumulator {
            a: vec![DMatrix::zeros(r, r); k],
            c: vec![DMatrix::zeros(d, r); k],
            objective: 0.0,
        }
    }

    fn merge(mut self, other: &EmAccumulator) -> Self {
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += y;
        }
        for (x, y) in self.c.iter_mut().zip(&other.c) {
            *x += y;
        }
        self.objective += other.objective;
        self
    }
}

fn e_step(model: &TvModel, stats: &[BwStats]) -> Result<EmAccumulator> {
    let (k, d, r) = (model.t.len(), model.ubm.dim(), model.rank());
    let chunk = stats
        .len()
        .div_ceil(rayon::current_num_threads().max(1) * 4)
        .max(1);
    let parts = stats
        .par_chunks(chunk)
        .map(|part| {
            let mut acc = EmAccumulator::zeros(k, d, r);
            for s in part {
                let (l, b) = model.posterior_terms(s);
                let (l_inv, log_det) = spd_inverse(&l, "i-vector posterior precision")?;
                let w = &l_inv * &b;
                acc.objective += 0.5 * b.dot(&w) - 0.5 * log_det;
                let second = &l_inv + &w * w.transpose();
                for c in 0..k {
                    if s.n[c] != 0.0 {
                        acc.a[c] += &second * s.n[c];
                    }
                    acc.c[c] += s.f.row(c).transpose() * w.transpose();
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts
        .iter()
        .fold(EmAccumulator::zeros(k, d, r), |a, p| a.merge(p)))
}

/// EM training of the total-variability matrix with a standard-normal prior
/// on the latent factor. The returned model carries the training i-vector mean.
pub fn train_tmatrix(ubm: &DiagGmm, stats: &[BwStats], cfg: &TvConfig) -> Result<TvTraining> {
    let (k, d, r) = (ubm.n_components(), ubm.dim(), cfg.rank);
    if stats.is_empty() {
        return Err(Error::EmptyInput("no training statistics".into()));
    }
    if r == 0 || r >= k * d {
        return Err(Error::Config(format!(
            "i-vector rank {r} must be in 1..{}",
            k * d
        )));
    }
    if stats.len() < r {
        log::warn!("{} training utterances for rank {r}", stats.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t: Vec<DMatrix<f64>> = (0..k)
        .map(|c| {
            DMatrix::from_fn(d, r, |i, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * ubm.variances[(c, i)].sqrt() * 0.1
            })
        })
        .collect();
    let mut model = TvModel::new(ubm.clone(), t, DVector::zeros(r))?;
    let mut objective = Vec::with_capacity(cfg.iterations + 1);
    for _ in 0..cfg.iterations {
        let acc = e_step(&model, stats)?;
        objective.push(acc.objective);
        let t = (0..k)
            .map(|c| {
                let (a_inv, _) = spd_inverse(&acc.a[c], "T-matrix accumulator")?;
                Ok(&acc.c[c] * a_inv)
            })
            .collect::<Result<Vec<_>>>()?;
        model = TvModel::new(ubm.clone(), t, DVector::zeros(r))?;
    }
    objective.push(e_step(&model, stats)?.objective);

    let ivectors = stats
        .par_iter()
        .map(|s| extract_ivector(&model, s))
        .collect::<Result<Vec<_>>>()?;
    let center = ivectors.iter().fold(DVector::zeros(r), |a, v| a + v) / ivectors.len() as f64;
    model.center = center;
    Ok(TvTraining { model, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_ubm(k: usize, d: usize, spacing: f64) -> DiagGmm {
        DiagGmm::new(
            DVector::from_element(k, 1.0 / k as f64),
            DMatrix::from_fn(k, d, |c, j| {
                if j == c % d {
                    spacing * (1 + c / d) as f64
                } else {
                    0.0
                }
            }),
            DMatrix::from_element(k, d, 1.0),
        )
        .unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Dense oracle: stack everything as supervectors and solve
    /// `(I + Tᵀ Σ⁻¹ N T) w = Tᵀ Σ⁻¹ F` with a general LU solve.
    fn dense_oracle(tv: &TvModel, stats: &BwStats) -> DVector<f64> {
        let (k, d) = (tv.ubm.n_components(), tv.ubm.dim());
        let t = tv.stacked();
        let kd = k * d;
        let sigma_inv = DMatrix::from_fn(kd, kd, |i, j| {
            if i == j {
                1.0 / tv.ubm.variances[(i / d, i % d)]
            } else {
                0.0
            }
        });
        let n = DMatrix::from_fn(kd, kd, |i, j| if i == j { stats.n[i / d] } else { 0.0 });
        let f = DVector::from_fn(kd, |i, _| stats.f[(i / d, i % d)]);
        let lhs = DMatrix::identity(tv.rank(), tv.rank()) + t.transpose() * &sigma_inv * n * &t;
        let rhs = t.transpose() * sigma_inv * f;
        lhs.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn stats_sum_to_frame_count() {
        let ubm = toy_ubm(3, 2, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = random(37, 2, &mut rng) * 5.0;
        let s = bw_stats(&ubm, &frames).unwrap();
        assert!((s.n.sum() - 37.0).abs() < 1e-6);
    }

    #[test]
    fn frame_at_a_component_mean() {
        let ubm = toy_ubm(3, 3, 20.0);
        let frame = DMatrix::from_row_slice(1, 3, ubm.means.row(1).transpose().as_slice());
        let s = bw_stats(&ubm, &frame).unwrap();
        assert!((s.n[1] - 1.0).abs() < 1e-9);
        assert!(s.f.row(1).amax() < 1e-9);
    }

    #[test]
    fn extraction_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Hand instance: K = 2, D = 2, R = 1.
        let ubm = DiagGmm::new(
            DVector::from_vec(vec![0.5, 0.5]),
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 4.0]),
        )
        .unwrap();
        let t = vec![
            DMatrix::from_row_slice(2, 1, &[1.0, -0.5]),
            DMatrix::from_row_slice(2, 1, &[0.25, 2.0]),
        ];
        let tv = TvModel::new(ubm, t, DVector::zeros(1)).unwrap();
        let stats = BwStats {
            n: DVector::from_vec(vec![3.0, 1.5]),
            f: DMatrix::from_row_slice(2, 2, &[0.6, -1.2, 0.9, 2.4]),
        };
        let got = extract_ivector(&tv, &stats).unwrap();
        assert!((got - dense_oracle(&tv, &stats)).amax() < 1e-9);

        for _ in 0..10 {
            let (k, d, r) = (4, 3, 2);
            let ubm = DiagGmm::new(
                DVector::from_element(k, 0.25),
                random(k, d, &mut rng),
                random(k, d, &mut rng).map(|v| v.abs() + 0.2),
            )
            .unwrap();
            let t = (0..k).map(|_| random(d, r, &mut rng)).collect();
            let tv = TvModel::new(ubm, t, DVector::zeros(r)).unwrap();
            let stats = BwStats {
                n: DVector::from_fn(k, |_, _| rng.random_range(0.0..20.0)),
                f: random(k, d, &mut rng) * 3.0,
            };
            let got = extract_ivector(&tv, &stats).unwrap();
            assert!((got - dense_oracle(&tv, &stats)).amax() < 1e-9);
        }
    }

    #[test]
    fn no_evidence_or_no_subspace_gives_zero() {
        let ubm = toy_ubm(2, 2, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Vec<_> = (0..2).map(|_| random(2, 1, &mut rng)).collect();
        let tv = TvModel::new(ubm.clone(), t, DVector::zeros(1)).unwrap();
        assert_eq!(
            extract_ivector(&tv, &BwStats::zeros(2, 2)).unwrap(),
            DVector::zeros(1)
        );

        let zero_t = TvModel::new(
            ubm.clone(),
            vec![DMatrix::zeros(2, 1); 2],
            DVector::zeros(1),
        )
        .unwrap();
        let frames = random(20, 2, &mut rng);
        let s = bw_stats(&ubm, &frames).unwrap();
        assert_eq!(extract_ivector(&zero_t, &s).unwrap(), DVector::zeros(1));
    }

    #[test]
    fn enrollment_average() {
        let v = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(
            enroll_speaker(std::slice::from_ref(&v)).unwrap(),
            DVector::from_vec(vec![0.6, 0.8])
        );
        assert!(matches!(
            enroll_speaker(&[v.clone(), -v]),
            Err(Error::Degenerate(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vs: Vec<DVector<f64>> = (0..3)
            .map(|_| DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let mut mean = [0.0; 4];
        for v in &vs {
            for i in 0..4 {
                mean[i] += v[i] / 3.0;
            }
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        let got = enroll_speaker(&vs).unwrap();
        for i in 0..4 {
            assert!((got[i] - mean[i] / norm).abs() < 1e-12);
        }
    }

    /// Draws utterances from `x = m_k + T*_k w + noise` with a known subspace.
    fn synthetic(
        ubm: &DiagGmm,
        t_true: &[DMatrix<f64>],
        n_utts: usize,
        frames: usize,
        seed: u64,
    ) -> Vec<BwStats> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, d) = (ubm.n_components(), ubm.dim());
        let r = t_true[0].ncols();
        (0..n_utts)
            .map(|_| {
                let w = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
                let x = DMatrix::from_fn(frames, d, |_, _| 0.0);
                let mut x = x;
                for t in 0..frames {
                    let c = rng.random_range(0..k);
                    let mean = ubm.means.row(c).transpose() + &t_true[c] * &w;
                    for j in 0..d {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x[(t, j)] = mean[j] + e * ubm.variances[(c, j)].sqrt();
                    }
                }
                bw_stats(ubm, &x).unwrap()
            })
            .collect()
    }

    fn max_principal_angle_deg(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let qa = a.clone().qr().q();
        let qb = b.clone().qr().q();
        let s = (qa.transpose() * qb).singular_values();
        let min_cos = s.iter().copied().fold(1.0f64, f64::min).clamp(-1.0, 1.0);
        min_cos.acos().to_degrees()
    }

    #[test]
    fn recovers_a_known_subspace() {
        let (k, d, r) = (4, 4, 2);
        let ubm = toy_ubm(k, d, 30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t_true: Vec<DMatrix<f64>> = (0..k).map(|_| random(d, r, &mut rng) * 2.0).collect();
        let stats = synthetic(&ubm, &t_true, 500, 40, 6);
        let run = train_tmatrix(
            &ubm,
            &stats,
            &TvConfig {
                rank: r,
                iterations: 20,
                seed: 7,
            },
        )
        .unwrap();
        for w in run.objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{:?}", run.objective);
        }
        let truth = TvModel::new(ubm, t_true, DVector::zeros(r))
            .unwrap()
            .stacked();
        let angle = max_principal_angle_deg(&run.model.stacked(), &truth);
        assert!(angle < 5.0, "principal angle {angle}°");
    }

    #[test]
    fn file_round_trip() {
        let ubm = toy_ubm(2, 3, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = (0..2).map(|_| random(3, 2, &mut rng)).collect();
        let tv = TvModel::new(ubm, t, DVector::from_vec(vec![0.5, -0.25])).unwrap();
        let bytes = tv.to_bytes();
        assert_eq!(&bytes[..4], b"BNT1");
        assert_eq!(TvModel::from_bytes(&bytes).unwrap(), tv);
        assert!(TvModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
