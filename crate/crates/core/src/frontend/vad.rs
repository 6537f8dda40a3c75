/// Natural log of frame energy, floored so silent frames stay finite.
pub fn frame_log_energy(frame: &[f64], floor: f64) -> f64 {
    frame.iter().map(|x| x * x).sum::<f64>().max(floor).ln()
}

/// Per-utterance adaptive energy threshold.
///
/// A frame is kept iff its log-energy exceeds
/// `min + aggressiveness * (max - min)` over the utterance. When every frame has
/// the same energy there is no dynamic range to threshold and all frames are
/// kept.
pub fn energy_vad(log_energies: &[f64], aggressiveness: f64) -> Vec<bool> {
    let floor = log_energies.iter().copied().fold(f64::INFINITY, f64::min);
    let ceiling = log_energies
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if log_energies.is_empty() || ceiling <= floor {
        return vec![true; log_energies.len()];
    }
    let threshold = floor + aggressiveness * (ceiling - floor);
    log_energies.iter().map(|&e| e > threshold).collect()
}
