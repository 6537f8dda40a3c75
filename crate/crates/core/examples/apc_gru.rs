//! Autoregressive predictive coding: a GRU trained to predict the frame a few
//! steps ahead under an ℓ1 loss, then tapped as a feature extractor.

use bnsv::bottleneck::HiddenTap;
use bnsv::frontend::cmvn_utterance;
use bnsv::net::{GruEncoder, TrainConfig};
use bnsv::pipeline::{synth_corpus, train_gru, SyntheticCorpusSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SyntheticCorpusSpec {
        n_speakers: 4,
        n_phrases: 3,
        ..Default::default()
    })?;
    let utts: Vec<_> = corpus.utterances.iter().map(cmvn_utterance).collect();
    let dim = utts[0].dim();
    let shift = 3;
    let mut enc = GruEncoder::new(dim, 32, 2, dim, 5)?;
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 400,
        learning_rate: 0.003,
        ..TrainConfig::default()
    };
    let log = train_gru(&mut enc, &utts, shift, &cfg)?;
    for (e, l) in log.epoch_losses.iter().enumerate() {
        println!(
            "epoch {}: mean |x(t+{shift}) - prediction| per frame {l:.4}",
            e + 1
        );
    }
    let first = &utts[0].frames;
    let h = enc.tap(first, 2)?;
    println!(
        "{} frames tapped at layer 2 → {}-dim features",
        h.nrows(),
        h.ncols()
    );
    Ok(())
}
