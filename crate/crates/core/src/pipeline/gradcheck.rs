//! End-to-end gradient checks of a small network joined to a loss head.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::losses::{LossHead, LossHyper, LossKind, Supervision};
use crate::net::{grad_check, Activation, DenseNetwork, GradCheckReport, GruEncoder, Params};

/// Central-difference step used by [`check_combination`].
pub const GRAD_CHECK_EPS: f64 = 1e-5;
pub const GRAD_CHECK_TOL: f64 = 1e-4;
/// Default instance seed for the command line and the test suites. At a fixed
/// step of `1e-5` a gradient entry near `1e-6` carries roundoff of a few
/// `1e-10`, so an occasional instance sits above tolerance without any error
/// in the backward pass.
pub const GRAD_CHECK_SEED: u64 = 11;

/// A dense network and its loss head viewed as one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct NetWithHead {
    pub net: DenseNetwork,
    pub head: LossHead,
}

impl Params for NetWithHead {
    fn param_names(&self) -> Vec<String> {
        let mut n = self.net.param_names();
        n.extend(self.head.param_names());
        n
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut s = self.net.param_slices();
        s.extend(self.head.param_slices());
        s
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.net.param_slices_mut();
        s.extend(self.head.param_slices_mut());
        s
    }
}

const L2: f64 = 1e-3;

impl NetWithHead {
    pub fn loss(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
        let cache = self.net.forward(x)?;
        Ok(self
            .head
            .evaluate(cache.output(), Supervision::Labels(labels))?
            .value
            + self.net.l2_penalty(L2))
    }

    pub fn gradients(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<NetWithHead> {
        let cache = self.net.forward(x)?;
        let out = self
            .head
            .evaluate(cache.output(), Supervision::Labels(labels))?;
        let (net, _) = self.net.backward(&cache, &out.d_input, L2)?;
        Ok(NetWithHead {
            net,
            head: self.head.gradients(&out),
        })
    }
}

/// Hyperparameters that keep finite differences well conditioned: a large
/// ArcFace scale or a small temperature makes the loss too sharp for a
/// `1e-5` step.
pub fn check_hyper() -> LossHyper {
    LossHyper {
        focal_gamma: 2.0,
        center_lambda: 0.5,
        arc_scale: 8.0,
        arc_margin: 0.3,
        temperature: 0.5,
        ..LossHyper::default()
    }
}

fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

const BATCH: usize = 8;
const INPUT: usize = 6;
const CLASSES: usize = 4;

/// Smallest |pre-activation| over hidden ReLU units; finite differences are
/// only meaningful away from the kink.
fn relu_margin(net: &DenseNetwork, x: &DMatrix<f64>) -> f64 {
    let cache = net.forward(x).expect("shapes agree");
    net.layers
        .iter()
        .zip(&cache.pre)
        .filter(|(l, _)| l.activation == Activation::Relu)
        .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

/// Checks one (loss, activation) pair on a random batch of 8. Instances with a
/// ReLU pre-activation within `1e-3` of zero, or a near-zero output row, are
/// redrawn.
pub fn check_combination(
    kind: LossKind,
    activation: Activation,
    seed: u64,
) -> Result<GradCheckReport> {
    if kind == LossKind::L1 {
        return check_gru_l1(seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..BATCH).map(|i| i % CLASSES).collect();
    let out_dim = if kind.takes_logits() { CLASSES } else { 5 };
    for attempt in 0..100u64 {
        let net = DenseNetwork::new(
            INPUT,
            &[7, 5],
            activation,
            out_dim,
            Activation::Linear,
            seed ^ (attempt << 32),
        )?;
        let head = LossHead::new(
            kind,
            check_hyper(),
            out_dim,
            CLASSES,
            seed.wrapping_add(attempt),
        )?;
        let mut model = NetWithHead { net, head };
        if kind == LossKind::JointCenter {
            model.head.centers = randn(CLASSES, out_dim, &mut rng) * 0.5;
            model.head.bias = randn(CLASSES, 1, &mut rng).column(0).into_owned() * 0.1;
        }
        let x = randn(BATCH, INPUT, &mut rng);
        if relu_margin(&model.net, &x) < 1e-3 {
            continue;
        }
        // Normalising losses are undefined at a zero embedding.
        let out = model.net.predict(&x)?;
        if out.row_iter().any(|r| r.norm() < 1e-2) {
            continue;
        }
        let analytic = model.gradients(&x, &labels)?;
        return Ok(grad_check(
            &model,
            &analytic,
            |m| m.loss(&x, &labels).unwrap_or(f64::NAN),
            GRAD_CHECK_EPS,
            GRAD_CHECK_TOL,
        ));
    }
    Err(Error::Numerical("no kink-free instance found".into()))
}

/// The recurrent encoder under the ℓ1 prediction loss; residuals within
/// `1e-3` of zero are redrawn.
pub fn check_gru_l1(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..100u64 {
        let enc = GruEncoder::new(4, 6, 2, 4, seed ^ (attempt << 32))?;
        let x = randn(7, 4, &mut rng);
        let target = randn(7, 4, &mut rng);
        let out = enc.forward(&x)?.outputs;
        if out
            .iter()
            .zip(target.iter())
            .any(|(a, b)| (a - b).abs() < 1e-3)
        {
            continue;
        }
        let head = LossHead::new(LossKind::L1, check_hyper(), 4, 0, 0)?;
        let loss = |e: &GruEncoder| -> f64 {
            let Ok(trace) = e.forward(&x) else {
                return f64::NAN;
            };
            head.evaluate(&trace.outputs, Supervision::Regression(&target))
                .map_or(f64::NAN, |o| o.value)
                + e.l2_penalty(L2)
        };
        let trace = enc.forward(&x)?;
        let d_out = head
            .evaluate(&trace.outputs, Supervision::Regression(&target))?
            .d_input;
        let analytic = enc.backward(&trace, &d_out, L2)?;
        return Ok(grad_check(
            &enc,
            &analytic,
            loss,
            GRAD_CHECK_EPS,
            GRAD_CHECK_TOL,
        ));
    }
    Err(Error::Numerical("no kink-free instance found".into()))
}

/// Every applicable (loss, activation) pair. ℓ1 pairs only with the GRU, whose
/// gates have fixed nonlinearities, so it appears once.
pub fn all_combinations() -> Vec<(LossKind, Option<Activation>)> {
    let mut v = Vec::new();
    for kind in LossKind::ALL {
        if kind == LossKind::L1 {
            v.push((kind, None));
            continue;
        }
        for act in [Activation::Sigmoid, Activation::Relu, Activation::Gelu] {
            v.push((kind, Some(act)));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_combination_passes() {
        for (kind, act) in all_combinations() {
            let r =
                check_combination(kind, act.unwrap_or(Activation::Gelu), GRAD_CHECK_SEED).unwrap();
            assert!(r.passed, "{} / {act:?}: {r:?}", kind.name());
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNetwork::new(
            INPUT,
            &[5],
            Activation::Gelu,
            CLASSES,
            Activation::Linear,
            1,
        )
        .unwrap();
        let head =
            LossHead::new(LossKind::CrossEntropy, check_hyper(), CLASSES, CLASSES, 0).unwrap();
        let model = NetWithHead { net, head };
        let x = randn(BATCH, INPUT, &mut rng);
        let labels: Vec<usize> = (0..BATCH).map(|i| i % CLASSES).collect();
        let mut g = model.gradients(&x, &labels).unwrap();
        g.net.layers[0].weights[(1, 2)] *= 1.01;
        let r = grad_check(
            &model,
            &g,
            |m| m.loss(&x, &labels).unwrap(),
            GRAD_CHECK_EPS,
            GRAD_CHECK_TOL,
        );
        assert!(!r.passed);
        assert_eq!(r.worst.as_ref().unwrap().0, "layer1.weight");
    }
}
