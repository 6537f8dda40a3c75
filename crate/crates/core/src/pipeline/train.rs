//! Mini-batch training loops for the feed-forward and recurrent extractors.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::losses::{l1_apc, LossHead, Supervision};
use crate::net::{DenseNetwork, GruEncoder, Optimizer, Params, TrainConfig};
use crate::targets::make_apc_pairs;

/// Mean training loss per epoch (data term plus L2 penalty).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
    /// Anchors or frames the loss had to skip, summed per epoch.
    pub skipped: Vec<usize>,
}

fn gather_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn check_finite(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            tensor: what.to_string(),
            index: 0,
        })
    }
}

/// Trains `net` and `head` jointly on labelled frames. `inputs` is `N × D`
/// (spliced frames), `labels` has one class per row.
pub fn train_dense(
    net: &mut DenseNetwork,
    head: &mut LossHead,
    inputs: &DMatrix<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if inputs.nrows() == 0 {
        return Err(Error::EmptyInput("no training frames".into()));
    }
    if labels.len() != inputs.nrows() {
        return Err(Error::Shape(format!(
            "{} rows vs {} labels",
            inputs.nrows(),
            labels.len()
        )));
    }
    let mut names = net.param_names();
    names.extend(head.param_names());
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.nrows()).collect();
    let mut log = TrainingLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches, mut skipped) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = gather_rows(inputs, batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let cache = net.forward(&x)?;
            let out = head.evaluate(cache.output(), Supervision::Labels(&y))?;
            let (g_net, _) = net.backward(&cache, &out.d_input, cfg.l2_penalty)?;
            let g_head = head.gradients(&out);
            {
                let mut params = net.param_slices_mut();
                params.extend(head.param_slices_mut());
                let mut grads = g_net.param_slices();
                grads.extend(g_head.param_slices());
                opt.step(&mut params, &grads, &names)?;
            }
            head.after_step(cache.output(), Supervision::Labels(&y));
            total += out.value;
            skipped += out.skipped;
            batches += 1;
        }
        let loss = total / batches as f64 + net.l2_penalty(cfg.l2_penalty);
        check_finite(loss, "training loss")?;
        log::info!("epoch {}/{}: loss {loss:.5}", epoch + 1, cfg.epochs);
        log.epoch_losses.push(loss);
        log.skipped.push(skipped);
    }
    Ok(log)
}

fn add_into(acc: &mut GruEncoder, g: &GruEncoder) {
    for (a, b) in acc.param_slices_mut().into_iter().zip(g.param_slices()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn scale(acc: &mut GruEncoder, s: f64) {
    for a in acc.param_slices_mut() {
        a.iter_mut().for_each(|x| *x *= s);
    }
}

/// Autoregressive training: each utterance predicts the frame `shift` steps
/// ahead under the ℓ1 loss. Utterances are grouped until a batch holds at
/// least `batch_size` frames; the step uses the per-frame mean gradient.
pub fn train_gru(
    enc: &mut GruEncoder,
    sequences: &[FeatureSequence],
    shift: usize,
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    let pairs: Vec<(DMatrix<f64>, DMatrix<f64>)> = sequences
        .iter()
        .filter_map(|s| {
            let p = make_apc_pairs(s, shift);
            if p.is_none() {
                log::warn!(
                    "{}: {} frames is too short for shift {shift}; skipped",
                    s.utterance_id,
                    s.len()
                );
            }
            p
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyInput(
            "no utterance is longer than the APC shift".into(),
        ));
    }
    let names = enc.param_names();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut frames_seen) = (0.0, 0usize);
        let mut start = 0;
        while start < order.len() {
            let mut acc = enc.zeros_like();
            let mut frames = 0usize;
            let mut end = start;
            while end < order.len() && frames < cfg.batch_size {
                let (x, y) = &pairs[order[end]];
                let mut value = 0.0;
                let n = x.nrows();
                // Passing l2·n per utterance makes the summed penalty l2·F·W,
                // which the 1/F scaling below turns into l2·W.
                let (_, g) =
                    enc.forward_backward(x, cfg.l2_penalty * n as f64, |out| {
                        match l1_apc(out, y) {
                            Ok((v, d)) => {
                                value = v;
                                d
                            }
                            Err(_) => DMatrix::from_element(out.nrows(), out.ncols(), f64::NAN),
                        }
                    })?;
                add_into(&mut acc, &g);
                total += value;
                frames += n;
                end += 1;
            }
            scale(&mut acc, 1.0 / frames as f64);
            let mut params = enc.param_slices_mut();
            opt.step(&mut params, &acc.param_slices(), &names)?;
            frames_seen += frames;
            start = end;
        }
        let loss = total / frames_seen as f64 + enc.l2_penalty(cfg.l2_penalty);
        check_finite(loss, "training loss")?;
        log::info!("epoch {}/{}: l1 per frame {loss:.5}", epoch + 1, cfg.epochs);
        log.epoch_losses.push(loss);
        log.skipped.push(0);
    }
    Ok(log)
}
