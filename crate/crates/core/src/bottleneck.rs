//! Bottleneck feature extraction: hidden-layer taps, PCA projection and
//! multi-layer concatenation.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::frontend::{FeatureKind, FeatureSequence};
use crate::net::{DenseNetwork, GruEncoder};

/// Networks whose hidden layers can be read out frame by frame.
pub trait HiddenTap {
    fn n_hidden(&self) -> usize;
    /// Output of hidden layer `layer` (1-based) for a `T × D_in` input.
    fn tap(&self, inputs: &DMatrix<f64>, layer: usize) -> Result<DMatrix<f64>>;
}

fn check_layer(layer: usize, n: usize) -> Result<()> {
    if layer == 0 || layer > n {
        return Err(Error::Config(format!(
            "hidden layer {layer} out of range 1..={n}"
        )));
    }
    Ok(())
}

impl HiddenTap for DenseNetwork {
    fn n_hidden(&self) -> usize {
        DenseNetwork::n_hidden(self)
    }

    /// `W_ℓ h_{ℓ-1} + b_ℓ` without the activation.
    fn tap(&self, inputs: &DMatrix<f64>, layer: usize) -> Result<DMatrix<f64>> {
        check_layer(layer, DenseNetwork::n_hidden(self))?;
        self.pre_activation_at(inputs, layer - 1)
    }
}

impl HiddenTap for GruEncoder {
    fn n_hidden(&self) -> usize {
        self.layers.len()
    }

    /// Hidden-state sequence of the layer after the recurrence.
    fn tap(&self, inputs: &DMatrix<f64>, layer: usize) -> Result<DMatrix<f64>> {
        check_layer(layer, self.layers.len())?;
        Ok(self.forward(inputs)?.layer_states(layer - 1))
    }
}

/// Column-wise concatenation of per-layer taps, in the listed order.
pub fn concat_layers(taps: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let Some(first) = taps.first() else {
        return Err(Error::EmptyInput("no layers to concatenate".into()));
    };
    let rows = first.nrows();
    if let Some(bad) = taps.iter().find(|t| t.nrows() != rows) {
        return Err(Error::Shape(format!(
            "frame counts differ: {rows} vs {}",
            bad.nrows()
        )));
    }
    let width: usize = taps.iter().map(|t| t.ncols()).sum();
    let mut out = DMatrix::zeros(rows, width);
    let mut col = 0;
    for t in taps {
        out.columns_mut(col, t.ncols()).copy_from(t);
        col += t.ncols();
    }
    Ok(out)
}

/// Taps every listed layer and concatenates the results.
pub fn tap_layers<N: HiddenTap + ?Sized>(
    net: &N,
    inputs: &DMatrix<f64>,
    layers: &[usize],
) -> Result<DMatrix<f64>> {
    let taps = layers
        .iter()
        .map(|&l| net.tap(inputs, l))
        .collect::<Result<Vec<_>>>()?;
    concat_layers(&taps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `D_in × k`, orthonormal columns by descending eigenvalue.
    pub projection: DMatrix<f64>,
    /// Variance captured by each retained direction.
    pub explained: Vec<f64>,
}

const ORTHO_TOL: f64 = 1e-9;

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    /// Fits on the rows of `data` (sample covariance, `N - 1` denominator).
    pub fn fit(data: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (n, d) = data.shape();
        if k == 0 || k > d {
            return Err(Error::Config(format!(
                "pca dimension {k} must be in 1..={d}"
            )));
        }
        if n <= k {
            return Err(Error::EmptyInput(format!(
                "pca needs more than {k} rows, got {n}"
            )));
        }
        let mean = data.row_mean().transpose();
        let mut centered = data.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = (centered.transpose() * &centered) / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });

        let mut projection = DMatrix::zeros(d, k);
        let mut explained = Vec::with_capacity(k);
        for (c, &idx) in order.iter().take(k).enumerate() {
            let mut v = eig.eigenvectors.column(idx).into_owned();
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.neg_mut();
            }
            projection.set_column(c, &v);
            explained.push(eig.eigenvalues[idx].max(0.0));
        }
        let model = PcaModel {
            mean,
            projection,
            explained,
        };
        model.check_orthonormal()?;
        Ok(model)
    }

    fn check_orthonormal(&self) -> Result<()> {
        let gram = self.projection.transpose() * &self.projection;
        let k = gram.nrows();
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - expect).abs() > ORTHO_TOL {
                    return Err(Error::Numerical(format!(
                        "pca basis not orthonormal at ({i}, {j}): {}",
                        gram[(i, j)]
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(x - mean)ᵀ P` for every row.
    pub fn project(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if frames.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "pca expects {} dims, got {}",
                self.input_dim(),
                frames.ncols()
            )));
        }
        let mut centered = frames.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * &self.projection)
    }

    pub fn reconstruct(&self, projected: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = projected * self.projection.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }

    pub fn project_sequence(&self, seq: &FeatureSequence) -> Result<FeatureSequence> {
        let mut out = FeatureSequence::new(
            self.project(&seq.frames)?,
            FeatureKind::Bottleneck,
            seq.utterance_id.clone(),
        );
        out.frame_shift_ms = seq.frame_shift_ms;
        Ok(out)
    }

    pub fn project_all(&self, seqs: &[FeatureSequence]) -> Result<Vec<FeatureSequence>> {
        seqs.par_iter().map(|s| self.project_sequence(s)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(b"BNP1");
        w.u32(self.input_dim() as u32);
        w.u32(self.output_dim() as u32);
        w.f64s(self.mean.as_slice());
        w.matrix(&self.projection);
        w.f64s(&self.explained);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, b"BNP1")?;
        let d = r.u32()? as usize;
        let k = r.u32()? as usize;
        if k > d {
            return r.fail(format!("k {k} exceeds input dim {d}"));
        }
        let mean = DVector::from_vec(r.f64s(d)?);
        let projection = r.matrix(d, k)?;
        let explained = r.f64s(k)?;
        r.finish()?;
        Ok(PcaModel {
            mean,
            projection,
            explained,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues
    /// sorted in descending order.
    fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| a[(i, j)].powi(2))
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[(k, p)], a[(k, q)]);
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    fn brute_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, d) = data.shape();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += data[(i, j)] / n as f64;
            }
        }
        DMatrix::from_fn(d, d, |a, b| {
            (0..n)
                .map(|i| (data[(i, a)] - mean[a]) * (data[(i, b)] - mean[b]))
                .sum::<f64>()
                / (n - 1) as f64
        })
    }

    #[test]
    fn explained_variance_matches_jacobi_oracle() {
        let data = random(200, 10, 1);
        let model = PcaModel::fit(&data, 3).unwrap();
        let oracle = jacobi_eigenvalues(brute_covariance(&data));
        for (got, want) in model.explained.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn subspace_data_reconstructs_exactly() {
        let coords = random(50, 3, 2);
        let basis = random(3, 8, 3);
        let mut data = coords * basis;
        for mut row in data.row_iter_mut() {
            row.add_scalar_mut(4.0);
        }
        let model = PcaModel::fit(&data, 3).unwrap();
        let back = model.reconstruct(&model.project(&data).unwrap());
        assert!((back - &data).amax() < 1e-9);
    }

    #[test]
    fn full_rank_is_an_isometry() {
        let data = random(40, 6, 4);
        let model = PcaModel::fit(&data, 6).unwrap();
        let p = model.project(&data).unwrap();
        assert!((model.reconstruct(&p) - &data).amax() < 1e-9);
        for i in 0..40 {
            let centered = data.row(i) - model.mean.transpose();
            assert!((p.row(i).norm() - centered.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_projects_to_zero_and_training_projection_is_centered() {
        let data = random(100, 5, 5);
        let model = PcaModel::fit(&data, 2).unwrap();
        let m = model
            .project(&DMatrix::from_row_slice(1, 5, model.mean.as_slice()))
            .unwrap();
        assert!(m.amax() < 1e-12);
        let p = model.project(&data).unwrap();
        assert!(p.row_mean().amax() < 1e-9);
    }

    #[test]
    fn sign_convention_and_errors() {
        let data = random(60, 4, 6);
        let model = PcaModel::fit(&data, 4).unwrap();
        for col in model.projection.column_iter() {
            let pivot = col
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(pivot > 0.0);
        }
        assert!(matches!(PcaModel::fit(&data, 5), Err(Error::Config(_))));
        assert!(model.project(&random(2, 3, 1)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let model = PcaModel::fit(&random(30, 5, 7), 3).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], b"BNP1");
        assert_eq!(PcaModel::from_bytes(&bytes).unwrap(), model);
        assert!(PcaModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn dense_tap_is_pre_activation() {
        let net = DenseNetwork::new(4, &[5, 6, 3], Activation::Sigmoid, 2, Activation::Linear, 8)
            .unwrap();
        let x = random(7, 4, 9);
        let cache = net.forward(&x).unwrap();
        for layer in 1..=3 {
            let tap = net.tap(&x, layer).unwrap();
            let activated = tap.map(|v| Activation::Sigmoid.value(v));
            assert!((activated - &cache.acts[layer]).amax() < 1e-12);
        }
        assert!(net.tap(&x, 0).is_err());
        assert!(net.tap(&x, 4).is_err());
    }

    #[test]
    fn single_layer_tap_is_affine() {
        let net = DenseNetwork::new(3, &[2], Activation::Relu, 2, Activation::Linear, 1).unwrap();
        let x = random(4, 3, 2);
        let l = &net.layers[0];
        let mut expect = &x * l.weights.transpose();
        for mut row in expect.row_iter_mut() {
            row += l.bias.transpose();
        }
        assert!((net.tap(&x, 1).unwrap() - expect).amax() < 1e-12);
    }

    #[test]
    fn gru_tap_returns_hidden_states() {
        let gru = GruEncoder::new(3, 4, 2, 3, 5).unwrap();
        let x = random(6, 3, 3);
        let trace = gru.forward(&x).unwrap();
        assert_eq!(gru.tap(&x, 2).unwrap(), trace.layer_states(1));
        assert!(gru.tap(&x, 3).is_err());
    }

    #[test]
    fn concatenation() {
        let a = random(3, 2, 1);
        let b = random(3, 4, 2);
        assert_eq!(concat_layers(std::slice::from_ref(&a)).unwrap(), a);
        let c = concat_layers(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.ncols(), 6);
        assert_eq!(c.columns(2, 4).into_owned(), b);
        assert!(concat_layers(&[a, random(2, 2, 3)]).is_err());
    }

    proptest! {
        #[test]
        fn fitted_basis_is_orthonormal_and_sorted(seed in 0u64..500, k in 1usize..6) {
            let data = random(30, 6, seed);
            let model = PcaModel::fit(&data, k).unwrap();
            let gram = model.projection.transpose() * &model.projection;
            prop_assert!((gram - DMatrix::identity(k, k)).amax() < 1e-9);
            prop_assert!(model.explained.windows(2).all(|w| w[0] >= w[1]));
            let total: f64 = brute_covariance(&data).diagonal().sum();
            prop_assert!(model.explained.iter().sum::<f64>() <= total + 1e-9);
        }
    }
}
