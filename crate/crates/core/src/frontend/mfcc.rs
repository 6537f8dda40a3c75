use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureKind, FeatureSequence, FrontendConfig};
use crate::error::{Error, Result};

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale over the one-sided power spectrum.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `weights[m][k]` for filter `m` and FFT bin `k`.
    weights: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(
        n_mels: usize,
        fft_size: usize,
        sample_rate: f64,
        low_hz: f64,
        high_hz: f64,
    ) -> Self {
        let n_bins = fft_size / 2 + 1;
        let (lo, hi) = (hz_to_mel(low_hz), hz_to_mel(high_hz));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate / fft_size as f64;
        let weights = (0..n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= left || f >= right {
                            0.0
                        } else if f <= center {
                            (f - left) / (center - left)
                        } else {
                            (right - f) / (right - center)
                        }
                    })
                    .collect()
            })
            .collect();
        MelFilterbank {
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.centers_hz[m]
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// MFCC with Δ and ΔΔ appended: output dimension `3 * n_ceps`.
pub struct MfccExtractor {
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    filterbank: MelFilterbank,
    /// Orthonormal DCT-II rows, `n_ceps × n_mels`.
    dct: Vec<Vec<f64>>,
    log_floor: f64,
    delta_window: usize,
    shift_ms: f64,
}

impl MfccExtractor {
    pub fn new(cfg: &FrontendConfig, sample_rate_hz: u32, window_len: usize) -> Result<Self> {
        let fft_size = if cfg.fft_size == 0 {
            window_len.next_power_of_two()
        } else {
            cfg.fft_size
        };
        if fft_size < window_len {
            return Err(Error::Config(format!(
                "FFT size {fft_size} shorter than window {window_len}"
            )));
        }
        if cfg.n_ceps == 0 || cfg.n_ceps > cfg.n_mels {
            return Err(Error::Config(format!(
                "need 1 <= n_ceps <= n_mels, got {} / {}",
                cfg.n_ceps, cfg.n_mels
            )));
        }
        let rate = sample_rate_hz as f64;
        let high = if cfg.high_hz > 0.0 {
            cfg.high_hz
        } else {
            rate / 2.0
        };
        let filterbank = MelFilterbank::new(cfg.n_mels, fft_size, rate, cfg.low_hz, high);
        let m = cfg.n_mels as f64;
        let dct = (0..cfg.n_ceps)
            .map(|k| {
                let scale = if k == 0 {
                    (1.0 / m).sqrt()
                } else {
                    (2.0 / m).sqrt()
                };
                (0..cfg.n_mels)
                    .map(|j| scale * (PI * k as f64 * (j as f64 + 0.5) / m).cos())
                    .collect()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Ok(MfccExtractor {
            fft,
            fft_size,
            filterbank,
            dct,
            log_floor: cfg.log_floor,
            delta_window: cfg.delta_window,
            shift_ms: cfg.shift_ms,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// One-sided power spectrum `|X_k|² / N` of a zero-padded frame.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
        buf.resize(self.fft_size, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf[..self.fft_size / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr() / self.fft_size as f64)
            .collect()
    }

    pub fn cepstrum(&self, frame: &[f64]) -> Vec<f64> {
        let log_mel: Vec<f64> = self
            .filterbank
            .apply(&self.power_spectrum(frame))
            .into_iter()
            .map(|e| e.max(self.log_floor).ln())
            .collect();
        self.dct
            .iter()
            .map(|row| row.iter().zip(&log_mel).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn compute(&self, frames: &[Vec<f64>]) -> FeatureSequence {
        let n_ceps = self.dct.len();
        let mut statics = DMatrix::zeros(frames.len(), n_ceps);
        for (t, frame) in frames.iter().enumerate() {
            for (k, c) in self.cepstrum(frame).into_iter().enumerate() {
                statics[(t, k)] = c;
            }
        }
        let d1 = deltas(&statics, self.delta_window);
        let d2 = deltas(&d1, self.delta_window);
        let mut out = DMatrix::zeros(frames.len(), 3 * n_ceps);
        out.columns_mut(0, n_ceps).copy_from(&statics);
        out.columns_mut(n_ceps, n_ceps).copy_from(&d1);
        out.columns_mut(2 * n_ceps, n_ceps).copy_from(&d2);
        let mut seq = FeatureSequence::new(out, FeatureKind::Mfcc, "");
        seq.frame_shift_ms = self.shift_ms;
        seq
    }
}

/// Linear-regression deltas over `±window` frames with edge replication.
pub fn deltas(x: &DMatrix<f64>, window: usize) -> DMatrix<f64> {
    let t_len = x.nrows() as isize;
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    if window == 0 || t_len == 0 {
        return out;
    }
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |i: isize| i.clamp(0, t_len - 1) as usize;
    for t in 0..t_len {
        for n in 1..=window as isize {
            let (ahead, behind) = (clamp(t + n), clamp(t - n));
            for d in 0..x.ncols() {
                out[(t as usize, d)] += n as f64 * (x[(ahead, d)] - x[(behind, d)]);
            }
        }
    }
    out / denom
}
