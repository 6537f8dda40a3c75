//! Every loss head on the same random batch: its value, the gradient norm it
//! sends back into the network, and a finite-difference spot check.

use bnsv::losses::{LossHead, LossKind, Supervision};
use bnsv::net::Activation;
use bnsv::pipeline::{check_combination, check_hyper, GRAD_CHECK_SEED};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (batch, dim, classes) = (12, 8, 4);
    let embeddings = DMatrix::from_fn(batch, dim, |_, _| StandardNormal.sample(&mut rng));
    let logits = DMatrix::from_fn(batch, classes, |_, _| StandardNormal.sample(&mut rng));
    let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
    let targets = DMatrix::from_fn(batch, dim, |_, _| StandardNormal.sample(&mut rng));

    println!(
        "{:<14} {:>10} {:>12} {:>8}  grad check",
        "loss", "value", "|dL/dx|", "skipped"
    );
    for kind in LossKind::ALL {
        let x = if kind.takes_logits() {
            &logits
        } else {
            &embeddings
        };
        let head = LossHead::new(
            kind,
            check_hyper(),
            x.ncols(),
            if kind == LossKind::L1 { 0 } else { classes },
            1,
        )?;
        let sup = if kind == LossKind::L1 {
            Supervision::Regression(&targets)
        } else {
            Supervision::Labels(&labels)
        };
        let out = head.evaluate(x, sup)?;
        let gc = check_combination(kind, Activation::Gelu, GRAD_CHECK_SEED)?;
        println!(
            "{:<14} {:>10.4} {:>12.4e} {:>8}  {} ({:.1e})",
            kind.name(),
            out.value,
            out.d_input.norm(),
            out.skipped,
            if gc.passed { "ok" } else { "FAIL" },
            gc.max_rel_error
        );
    }
    Ok(())
}
