//! Minimal neural-network engine: dense layers, a stacked GRU encoder,
//! SGD/Adam updates and a finite-difference gradient checker.
//!
//! All training arithmetic is `f64`. Gradients are returned in a value of the
//! same type as the model so parameters and gradients share one layout.

mod activation;
mod dense;
mod gradcheck;
mod gru;
mod optim;

pub use activation::{std_normal_cdf, std_normal_pdf, Activation};
pub use dense::{DenseLayer, DenseNetwork, ForwardCache};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_FLOOR};
pub use gru::{GruEncoder, GruLayer, GruTrace};
pub use optim::{Optimizer, OptimizerKind, TrainConfig};

/// Flat views over a model's trainable tensors, in a fixed order.
pub trait Params {
    fn param_names(&self) -> Vec<String>;
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn n_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

/// `0.5 * l2 * Σ w²` over weight matrices (biases excluded).
pub(crate) fn l2_term<'a>(
    weights: impl Iterator<Item = &'a nalgebra::DMatrix<f64>>,
    l2: f64,
) -> f64 {
    0.5 * l2 * weights.map(|w| w.norm_squared()).sum::<f64>()
}
