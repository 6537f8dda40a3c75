//! Trains a speaker-classification network on spliced synthetic frames, taps
//! a narrow hidden layer, and reduces it with PCA into bottleneck features.

use bnsv::bottleneck::{tap_layers, PcaModel};
use bnsv::frontend::cmvn_utterance;
use bnsv::losses::{LossHead, LossHyper, LossKind};
use bnsv::net::{Activation, DenseNetwork, TrainConfig};
use bnsv::pipeline::{synth_corpus, train_dense, SyntheticCorpusSpec};
use bnsv::targets::{label_speaker, splice_context};
use nalgebra::DMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SyntheticCorpusSpec {
        n_speakers: 8,
        n_phrases: 3,
        ..Default::default()
    })?;
    let speakers = label_speaker(&corpus.manifest)?;
    let per_utt = speakers.per_utterance(&corpus.manifest);

    let context = 5;
    let mut blocks = Vec::new();
    let mut labels = Vec::new();
    for (seq, &spk) in corpus.utterances.iter().zip(&per_utt) {
        let s = splice_context(&cmvn_utterance(seq), context)?;
        labels.extend(std::iter::repeat(spk).take(s.nrows()));
        blocks.push(s);
    }
    let cols = blocks[0].ncols();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut inputs = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in &blocks {
        inputs.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }

    let classes = speakers.n_classes();
    let mut net = DenseNetwork::new(
        cols,
        &[96, 32, 96],
        Activation::Gelu,
        classes,
        Activation::Linear,
        7,
    )?;
    let mut head = LossHead::new(
        LossKind::CrossEntropy,
        LossHyper::default(),
        classes,
        classes,
        7,
    )?;
    let cfg = TrainConfig {
        epochs: 4,
        learning_rate: 0.002,
        ..TrainConfig::default()
    };
    let log = train_dense(&mut net, &mut head, &inputs, &labels, &cfg)?;
    println!("{rows} frames of {cols} dims, {classes} speakers");
    for (e, l) in log.epoch_losses.iter().enumerate() {
        println!("epoch {}: loss {l:.4}", e + 1);
    }

    let tapped = tap_layers(&net, &inputs, &[2])?;
    let pca = PcaModel::fit(&tapped, 16)?;
    let bn = pca.project(&tapped)?;
    let n = tapped.nrows() as f64;
    let total: f64 = tapped
        .column_iter()
        .map(|c| c.variance() * n / (n - 1.0))
        .sum();
    let kept = pca.explained.iter().sum::<f64>() / total;
    println!(
        "layer 2 → {} dims, PCA keeps {} ({:.1}% of variance)",
        tapped.ncols(),
        bn.ncols(),
        100.0 * kept
    );
    Ok(())
}
