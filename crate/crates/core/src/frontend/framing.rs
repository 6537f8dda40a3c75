use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Splits a clip into Hamming-windowed frames. Frame `t` covers samples
/// `[t*shift, t*shift + window)`; a trailing partial frame is dropped.
pub fn frame_signal(clip: &AudioClip, window_ms: f64, shift_ms: f64) -> Result<Vec<Vec<f64>>> {
    if !(window_ms >= shift_ms && shift_ms > 0.0) {
        return Err(Error::Config(format!(
            "need window_ms >= shift_ms > 0, got {window_ms} / {shift_ms}"
        )));
    }
    let win = ms_to_samples(window_ms, clip.sample_rate_hz);
    let shift = ms_to_samples(shift_ms, clip.sample_rate_hz).max(1);
    if win == 0 || clip.samples.len() < win {
        return Err(Error::EmptyInput(format!(
            "{}: {} samples is shorter than one {}-sample window",
            clip.utterance_id,
            clip.samples.len(),
            win
        )));
    }
    let window = hamming(win);
    let count = 1 + (clip.samples.len() - win) / shift;
    Ok((0..count)
        .map(|t| {
            clip.samples[t * shift..t * shift + win]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}
