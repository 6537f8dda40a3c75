use super::FeatureSequence;

/// Utterance-level mean and variance normalization.
///
/// With a single frame only the mean is removed. A zero-variance dimension is
/// left at scale 1 after centering.
pub fn cmvn_utterance(seq: &FeatureSequence) -> FeatureSequence {
    let mut out = seq.clone();
    let t_len = seq.len();
    if t_len == 0 {
        return out;
    }
    let n = t_len as f64;
    for d in 0..seq.dim() {
        let col = seq.frames.column(d);
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let scale = if t_len > 1 && var > 0.0 {
            1.0 / var.sqrt()
        } else {
            1.0
        };
        for t in 0..t_len {
            out.frames[(t, d)] = (seq.frames[(t, d)] - mean) * scale;
        }
    }
    out
}
