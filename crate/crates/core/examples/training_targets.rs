//! The four kinds of frame targets: speaker labels from a manifest, uniform
//! segment classes, stream-position classes and future-frame regression pairs.

use bnsv::frontend::{FeatureKind, FeatureSequence};
use bnsv::pipeline::{synth_corpus, SyntheticCorpusSpec};
use bnsv::targets::{label_speaker, label_stcl, label_utcl, make_apc_pairs, splice_context};
use nalgebra::DMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SyntheticCorpusSpec::default())?;
    let speakers = label_speaker(&corpus.manifest)?;
    println!(
        "speaker targets: {} classes over {} utterances",
        speakers.n_classes(),
        corpus.manifest.entries.len()
    );

    let utcl = label_utcl(60, 10).expect("60 frames split into 10 segments");
    println!("uTCL labels for 60 frames, 10 classes: {utcl:?}");

    let counts = [9, 14, 7];
    let stream = label_stcl(&counts, 4, 3, 5)?;
    let by_utt: Vec<Vec<usize>> = (0..counts.len())
        .map(|u| {
            stream
                .iter()
                .filter(|f| f.utterance == u)
                .map(|f| f.label)
                .collect()
        })
        .collect();
    println!("sTCL labels (4 classes, 3-frame chunks) per utterance: {by_utt:?}");

    let seq = FeatureSequence::new(
        DMatrix::from_fn(12, 2, |t, j| (t * 10 + j) as f64),
        FeatureKind::Mfcc,
        "ramp",
    );
    let (input, target) = make_apc_pairs(&seq, 3).expect("sequence longer than the shift");
    println!(
        "APC pairs with shift 3: {} inputs, first input {:?} predicts {:?}",
        input.nrows(),
        input.row(0).iter().collect::<Vec<_>>(),
        target.row(0).iter().collect::<Vec<_>>()
    );

    let spliced = splice_context(&seq, 5)?;
    println!(
        "5-frame splicing: {}×{} → {}×{}",
        seq.len(),
        seq.dim(),
        spliced.nrows(),
        spliced.ncols()
    );
    Ok(())
}
