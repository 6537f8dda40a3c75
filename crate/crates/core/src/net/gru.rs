use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{l2_term, Params};
use crate::error::{Error, Result};

fn sigmoid(v: f64) -> f64 {
    super::Activation::Sigmoid.value(v)
}

/// One recurrent layer:
///
/// ```text
/// z = σ(Wz x + Uz h + bz)
/// r = σ(Wr x + Ur h + br)
/// n = tanh(Wn x + Un (r ⊙ h) + bn)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub wz: DMatrix<f64>,
    pub wr: DMatrix<f64>,
    pub wn: DMatrix<f64>,
    pub uz: DMatrix<f64>,
    pub ur: DMatrix<f64>,
    pub un: DMatrix<f64>,
    pub bz: DVector<f64>,
    pub br: DVector<f64>,
    pub bn: DVector<f64>,
}

impl GruLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruLayer {
            wz: DMatrix::zeros(hidden, input),
            wr: DMatrix::zeros(hidden, input),
            wn: DMatrix::zeros(hidden, input),
            uz: DMatrix::zeros(hidden, hidden),
            ur: DMatrix::zeros(hidden, hidden),
            un: DMatrix::zeros(hidden, hidden),
            bz: DVector::zeros(hidden),
            br: DVector::zeros(hidden),
            bn: DVector::zeros(hidden),
        }
    }

    fn random(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let wl = (6.0 / (input + hidden) as f64).sqrt();
        let ul = (3.0 / hidden as f64).sqrt();
        let mut w = |rows, cols, limit: f64| {
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
        };
        GruLayer {
            wz: w(hidden, input, wl),
            wr: w(hidden, input, wl),
            wn: w(hidden, input, wl),
            uz: w(hidden, hidden, ul),
            ur: w(hidden, hidden, ul),
            un: w(hidden, hidden, ul),
            bz: DVector::zeros(hidden),
            br: DVector::zeros(hidden),
            bn: DVector::zeros(hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wz.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.wz.nrows()
    }

    fn check(&self) -> Result<()> {
        let (h, i) = (self.hidden_dim(), self.input_dim());
        let ok = [&self.wr, &self.wn].iter().all(|m| m.shape() == (h, i))
            && [&self.uz, &self.ur, &self.un]
                .iter()
                .all(|m| m.shape() == (h, h))
            && [&self.bz, &self.br, &self.bn].iter().all(|b| b.len() == h);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("inconsistent GRU gate shapes".into()))
        }
    }

    fn matrices(&self) -> [&DMatrix<f64>; 6] {
        [&self.wz, &self.wr, &self.wn, &self.uz, &self.ur, &self.un]
    }
}

/// Stacked GRU with a linear projection of the top layer's hidden state back
/// to the frame dimension. Hidden state starts at zero for each utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct GruEncoder {
    pub layers: Vec<GruLayer>,
    /// `out_dim × hidden`.
    pub out_weights: DMatrix<f64>,
    pub out_bias: DVector<f64>,
}

/// Per-step values kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct GruTrace {
    /// `inputs[l]` is `T × in_l`, the input sequence of layer `l`.
    pub inputs: Vec<DMatrix<f64>>,
    /// `hidden[l]` is `(T + 1) × H`; row 0 is the zero initial state.
    pub hidden: Vec<DMatrix<f64>>,
    update: Vec<DMatrix<f64>>,
    reset: Vec<DMatrix<f64>>,
    candidate: Vec<DMatrix<f64>>,
    pub outputs: DMatrix<f64>,
}

impl GruTrace {
    /// Hidden-state sequence of layer `l` (0-based), `T × H`.
    pub fn layer_states(&self, l: usize) -> DMatrix<f64> {
        let h = &self.hidden[l];
        h.rows(1, h.nrows() - 1).into_owned()
    }
}

impl GruEncoder {
    pub fn new(
        input_dim: usize,
        hidden: usize,
        n_layers: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || n_layers == 0 || output_dim == 0 {
            return Err(Error::Config("GRU dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..n_layers)
            .map(|l| GruLayer::random(if l == 0 { input_dim } else { hidden }, hidden, &mut rng))
            .collect();
        let limit = (6.0 / (hidden + output_dim) as f64).sqrt();
        Ok(GruEncoder {
            layers,
            out_weights: DMatrix::from_fn(output_dim, hidden, |_, _| {
                rng.random_range(-limit..limit)
            }),
            out_bias: DVector::zeros(output_dim),
        })
    }

    pub fn from_parts(
        layers: Vec<GruLayer>,
        out_weights: DMatrix<f64>,
        out_bias: DVector<f64>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("GRU needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.check()?;
            if i > 0 && l.input_dim() != layers[i - 1].hidden_dim() {
                return Err(Error::Shape(format!("GRU layer {i} input mismatch")));
            }
        }
        let top = layers.last().unwrap().hidden_dim();
        if out_weights.ncols() != top || out_bias.len() != out_weights.nrows() {
            return Err(Error::Shape("GRU projection shape mismatch".into()));
        }
        Ok(GruEncoder {
            layers,
            out_weights,
            out_bias,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.out_weights.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        GruEncoder {
            layers: self
                .layers
                .iter()
                .map(|l| GruLayer::zeros(l.input_dim(), l.hidden_dim()))
                .collect(),
            out_weights: DMatrix::zeros(self.out_weights.nrows(), self.out_weights.ncols()),
            out_bias: DVector::zeros(self.out_bias.len()),
        }
    }

    pub fn l2_penalty(&self, l2: f64) -> f64 {
        l2_term(
            self.layers
                .iter()
                .flat_map(|l| l.matrices())
                .chain(std::iter::once(&self.out_weights)),
            l2,
        )
    }

    /// Runs the sequence (`T × in`) through every layer.
    pub fn forward(&self, seq: &DMatrix<f64>) -> Result<GruTrace> {
        if seq.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "sequence width {} != GRU input {}",
                seq.ncols(),
                self.input_dim()
            )));
        }
        let t_len = seq.nrows();
        let mut trace = GruTrace {
            inputs: Vec::new(),
            hidden: Vec::new(),
            update: Vec::new(),
            reset: Vec::new(),
            candidate: Vec::new(),
            outputs: DMatrix::zeros(t_len, self.output_dim()),
        };
        let mut x_seq = seq.clone();
        for layer in &self.layers {
            let hd = layer.hidden_dim();
            let mut hs = DMatrix::zeros(t_len + 1, hd);
            let mut zs = DMatrix::zeros(t_len, hd);
            let mut rs = DMatrix::zeros(t_len, hd);
            let mut ns = DMatrix::zeros(t_len, hd);
            // Input projections for all steps at once.
            let xz = &x_seq * layer.wz.transpose();
            let xr = &x_seq * layer.wr.transpose();
            let xn = &x_seq * layer.wn.transpose();
            for t in 0..t_len {
                let h_prev: DVector<f64> = hs.row(t).transpose();
                let z = (xz.row(t).transpose() + &layer.uz * &h_prev + &layer.bz).map(sigmoid);
                let r = (xr.row(t).transpose() + &layer.ur * &h_prev + &layer.br).map(sigmoid);
                let rh = r.component_mul(&h_prev);
                let n = (xn.row(t).transpose() + &layer.un * &rh + &layer.bn).map(f64::tanh);
                let h = n.zip_zip_map(&z, &h_prev, |n, z, hp| (1.0 - z) * n + z * hp);
                hs.row_mut(t + 1).copy_from(&h.transpose());
                zs.row_mut(t).copy_from(&z.transpose());
                rs.row_mut(t).copy_from(&r.transpose());
                ns.row_mut(t).copy_from(&n.transpose());
            }
            trace.inputs.push(x_seq);
            x_seq = hs.rows(1, t_len).into_owned();
            trace.hidden.push(hs);
            trace.update.push(zs);
            trace.reset.push(rs);
            trace.candidate.push(ns);
        }
        let mut out = &x_seq * self.out_weights.transpose();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.out_bias[j]);
        }
        trace.outputs = out;
        Ok(trace)
    }

    /// Backpropagation through time for output gradients `d_out` (`T × out`).
    /// Weight gradients include `l2 * W`; biases are not penalized.
    pub fn backward(&self, trace: &GruTrace, d_out: &DMatrix<f64>, l2: f64) -> Result<GruEncoder> {
        if d_out.shape() != trace.outputs.shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} != outputs {:?}",
                d_out.shape(),
                trace.outputs.shape()
            )));
        }
        let t_len = d_out.nrows();
        let mut g = self.zeros_like();
        let top = self.layers.len() - 1;
        let top_states = trace.layer_states(top);
        g.out_weights = d_out.transpose() * &top_states + &self.out_weights * l2;
        g.out_bias = d_out.row_sum().transpose();
        // Gradient arriving at each layer's hidden outputs from above.
        let mut d_above = d_out * &self.out_weights;

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let gl = &mut g.layers[l];
            let hd = layer.hidden_dim();
            let x_seq = &trace.inputs[l];
            let mut d_inputs = DMatrix::zeros(t_len, layer.input_dim());
            let mut dh_next = DVector::zeros(hd);
            for t in (0..t_len).rev() {
                let h_prev: DVector<f64> = trace.hidden[l].row(t).transpose();
                let z: DVector<f64> = trace.update[l].row(t).transpose();
                let r: DVector<f64> = trace.reset[l].row(t).transpose();
                let n: DVector<f64> = trace.candidate[l].row(t).transpose();
                let x: DVector<f64> = x_seq.row(t).transpose();

                let dh = d_above.row(t).transpose() + &dh_next;
                let dn = dh.component_mul(&z.map(|v| 1.0 - v));
                let dz = dh.component_mul(&(&h_prev - &n));
                let mut dh_prev = dh.component_mul(&z);

                let dan = dn.zip_map(&n, |g, n| g * (1.0 - n * n));
                let rh = r.component_mul(&h_prev);
                gl.wn.ger(1.0, &dan, &x, 1.0);
                gl.un.ger(1.0, &dan, &rh, 1.0);
                gl.bn += &dan;
                let d_rh = layer.un.tr_mul(&dan);
                let dr = d_rh.component_mul(&h_prev);
                dh_prev += d_rh.component_mul(&r);

                let dar = dr.zip_map(&r, |g, r| g * r * (1.0 - r));
                gl.wr.ger(1.0, &dar, &x, 1.0);
                gl.ur.ger(1.0, &dar, &h_prev, 1.0);
                gl.br += &dar;
                dh_prev += layer.ur.tr_mul(&dar);

                let daz = dz.zip_map(&z, |g, z| g * z * (1.0 - z));
                gl.wz.ger(1.0, &daz, &x, 1.0);
                gl.uz.ger(1.0, &daz, &h_prev, 1.0);
                gl.bz += &daz;
                dh_prev += layer.uz.tr_mul(&daz);

                let dx = layer.wz.tr_mul(&daz) + layer.wr.tr_mul(&dar) + layer.wn.tr_mul(&dan);
                d_inputs.row_mut(t).copy_from(&dx.transpose());
                dh_next = dh_prev;
            }
            for (gm, pm) in [
                (&mut gl.wz, &layer.wz),
                (&mut gl.wr, &layer.wr),
                (&mut gl.wn, &layer.wn),
                (&mut gl.uz, &layer.uz),
                (&mut gl.ur, &layer.ur),
                (&mut gl.un, &layer.un),
            ] {
                *gm += pm * l2;
            }
            d_above = d_inputs;
        }
        Ok(g)
    }

    /// Forward and backward in one call: returns the outputs and gradients.
    pub fn forward_backward<F>(
        &self,
        seq: &DMatrix<f64>,
        l2: f64,
        loss_grad: F,
    ) -> Result<(DMatrix<f64>, GruEncoder)>
    where
        F: FnOnce(&DMatrix<f64>) -> DMatrix<f64>,
    {
        let trace = self.forward(seq)?;
        let d_out = loss_grad(&trace.outputs);
        let grads = self.backward(&trace, &d_out, l2)?;
        Ok((trace.outputs, grads))
    }
}

impl Params for GruEncoder {
    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.layers.len() {
            for p in ["wz", "wr", "wn", "uz", "ur", "un", "bz", "br", "bn"] {
                names.push(format!("gru{}.{p}", l + 1));
            }
        }
        names.push("proj.weight".into());
        names.push("proj.bias".into());
        names
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.extend([
                l.wz.as_slice(),
                l.wr.as_slice(),
                l.wn.as_slice(),
                l.uz.as_slice(),
                l.ur.as_slice(),
                l.un.as_slice(),
                l.bz.as_slice(),
                l.br.as_slice(),
                l.bn.as_slice(),
            ]);
        }
        out.push(self.out_weights.as_slice());
        out.push(self.out_bias.as_slice());
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.extend([
                l.wz.as_mut_slice(),
                l.wr.as_mut_slice(),
                l.wn.as_mut_slice(),
                l.uz.as_mut_slice(),
                l.ur.as_mut_slice(),
                l.un.as_mut_slice(),
                l.bz.as_mut_slice(),
                l.br.as_mut_slice(),
                l.bn.as_mut_slice(),
            ]);
        }
        out.push(self.out_weights.as_mut_slice());
        out.push(self.out_bias.as_mut_slice());
        out
    }
}
