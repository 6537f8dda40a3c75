use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{l2_term, Activation, Params};
use crate::error::{Error, Result};

/// One fully connected layer, `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: DMatrix::zeros(output, input),
            bias: DVector::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// `x Wᵀ + b` for a batch `x` of shape `B × in`.
    pub fn pre_activation(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.weights.transpose();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[j]);
        }
        z
    }
}

/// Feed-forward network. Every layer but the last is a hidden layer; the last
/// produces the network output (logits or embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    pub layers: Vec<DenseLayer>,
}

/// Activations kept from a forward pass for backpropagation and feature taps.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub acts: Vec<DMatrix<f64>>,
    /// Pre-activation of each layer.
    pub pre: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("forward cache holds the input")
    }
}

impl DenseNetwork {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        output_dim: usize,
        output_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let act = if i == hidden.len() {
                    output_activation
                } else {
                    hidden_activation
                };
                DenseLayer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                        rng.random_range(-limit..limit)
                    }),
                    bias: DVector::zeros(fan_out),
                    activation: act,
                }
            })
            .collect();
        Ok(DenseNetwork { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Shape(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(DenseNetwork { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn n_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        DenseNetwork {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.input_dim(), l.output_dim(), l.activation))
                .collect(),
        }
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} != network input {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for layer in &self.layers {
            let z = layer.pre_activation(acts.last().unwrap());
            let act = layer.activation;
            acts.push(z.map(|v| act.value(v)));
            pre.push(z);
        }
        Ok(ForwardCache { acts, pre })
    }

    /// Output only, without keeping intermediates.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let act = layer.activation;
            h = layer.pre_activation(&h).map(|v| act.value(v));
        }
        Ok(h)
    }

    /// Pre-activation output of layer `index` (0-based), stopping there.
    pub fn pre_activation_at(&self, x: &DMatrix<f64>, index: usize) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        if index >= self.layers.len() {
            return Err(Error::Config(format!(
                "layer {index} out of range for {} layers",
                self.layers.len()
            )));
        }
        let mut h = x.clone();
        for layer in &self.layers[..index] {
            let act = layer.activation;
            h = layer.pre_activation(&h).map(|v| act.value(v));
        }
        Ok(self.layers[index].pre_activation(&h))
    }

    /// Backpropagates `d_output` (gradient of the data loss with respect to
    /// the network output). Weight gradients include the `l2 * W` penalty
    /// term. Also returns the gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_output: &DMatrix<f64>,
        l2: f64,
    ) -> Result<(DenseNetwork, DMatrix<f64>)> {
        let out = cache.output();
        if d_output.shape() != out.shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} != output {:?}",
                d_output.shape(),
                out.shape()
            )));
        }
        let mut grads = self.zeros_like();
        let mut delta = d_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let dz = delta.zip_map(&cache.pre[i], |g, z| g * act.derivative(z));
            let g = &mut grads.layers[i];
            g.weights = dz.transpose() * &cache.acts[i] + &layer.weights * l2;
            g.bias = dz.row_sum().transpose();
            delta = dz * &layer.weights;
        }
        Ok((grads, delta))
    }

    /// `0.5 * l2 * Σ‖W‖²`, the penalty whose gradient `backward` adds.
    pub fn l2_penalty(&self, l2: f64) -> f64 {
        l2_term(self.layers.iter().map(|l| &l.weights), l2)
    }
}

impl Params for DenseNetwork {
    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| {
                [
                    format!("layer{}.weight", i + 1),
                    format!("layer{}.bias", i + 1),
                ]
            })
            .collect()
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
