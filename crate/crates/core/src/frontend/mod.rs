//! Audio front end: framing, MFCC with deltas, energy VAD and utterance CMVN.
//!
//! The pipeline order is fixed: MFCC over all frames, then the VAD mask, then
//! CMVN over the surviving frames only.

mod cmvn;
mod framing;
mod io;
mod mfcc;
mod vad;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cmvn::cmvn_utterance;
pub use framing::{frame_signal, hamming};
pub use io::{decode_features, read_features, read_wav, write_features, write_wav};
pub use mfcc::{deltas, MelFilterbank, MfccExtractor};
pub use vad::{energy_vad, frame_log_energy};

/// A mono speech signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub utterance_id: String,
}

impl AudioClip {
    pub fn new(
        samples: Vec<f64>,
        sample_rate_hz: u32,
        utterance_id: impl Into<String>,
    ) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate_hz,
            utterance_id: utterance_id.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Mfcc,
    Spliced,
    Bottleneck,
    IvectorStat,
}

/// Per-utterance matrix of frame vectors, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: DMatrix<f64>,
    pub frame_shift_ms: f64,
    pub kind: FeatureKind,
    pub utterance_id: String,
}

impl FeatureSequence {
    pub fn new(frames: DMatrix<f64>, kind: FeatureKind, utterance_id: impl Into<String>) -> Self {
        FeatureSequence {
            frames,
            frame_shift_ms: 10.0,
            kind,
            utterance_id: utterance_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// Keeps the frames whose mask entry is true.
    pub fn select(&self, mask: &[bool]) -> Result<FeatureSequence> {
        if mask.len() != self.len() {
            return Err(Error::Shape(format!(
                "mask length {} != frame count {}",
                mask.len(),
                self.len()
            )));
        }
        let rows: Vec<usize> = (0..mask.len()).filter(|&t| mask[t]).collect();
        let frames = self.frames.select_rows(rows.iter());
        Ok(FeatureSequence {
            frames,
            ..self.clone()
        })
    }

    pub fn all_finite(&self) -> bool {
        self.frames.iter().all(|v| v.is_finite())
    }
}

/// Front-end settings. RASTA filtering is not implemented; the flag is kept so
/// configs can carry it and is rejected when set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub window_ms: f64,
    pub shift_ms: f64,
    pub n_mels: usize,
    pub n_ceps: usize,
    /// Zero means the next power of two at or above the window length.
    pub fft_size: usize,
    pub low_hz: f64,
    /// Zero means the Nyquist frequency.
    pub high_hz: f64,
    pub log_floor: f64,
    pub delta_window: usize,
    pub vad_aggressiveness: f64,
    pub rasta: bool,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            window_ms: 25.0,
            shift_ms: 10.0,
            n_mels: 26,
            n_ceps: 19,
            fft_size: 0,
            low_hz: 0.0,
            high_hz: 0.0,
            log_floor: 1e-10,
            delta_window: 2,
            vad_aggressiveness: 0.4,
            rasta: false,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_ms >= self.shift_ms && self.shift_ms > 0.0) {
            return Err(Error::Config(format!(
                "need window_ms >= shift_ms > 0, got {} / {}",
                self.window_ms, self.shift_ms
            )));
        }
        if self.n_ceps == 0 || self.n_ceps > self.n_mels {
            return Err(Error::Config(format!(
                "need 1 <= n_ceps <= n_mels, got {} / {}",
                self.n_ceps, self.n_mels
            )));
        }
        if !(self.vad_aggressiveness > 0.0 && self.vad_aggressiveness < 1.0) {
            return Err(Error::Config(
                "vad_aggressiveness must lie in (0, 1)".into(),
            ));
        }
        if self.rasta {
            return Err(Error::Config("RASTA filtering is not supported".into()));
        }
        Ok(())
    }

    /// Output dimension: statics plus first and second derivatives.
    pub fn feature_dim(&self) -> usize {
        3 * self.n_ceps
    }
}

/// Runs the full front end on one clip.
pub fn extract_features(clip: &AudioClip, cfg: &FrontendConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    let frames = frame_signal(clip, cfg.window_ms, cfg.shift_ms)?;
    let extractor = MfccExtractor::new(cfg, clip.sample_rate_hz, frames[0].len())?;
    let mut mfcc = extractor.compute(&frames);
    mfcc.utterance_id = clip.utterance_id.clone();
    mfcc.frame_shift_ms = cfg.shift_ms;
    let energies: Vec<f64> = frames
        .iter()
        .map(|f| frame_log_energy(f, cfg.log_floor))
        .collect();
    let mask = energy_vad(&energies, cfg.vad_aggressiveness);
    let voiced = mfcc.select(&mask)?;
    if voiced.is_empty() {
        log::warn!("{}: no voice-active frames", clip.utterance_id);
        return Ok(voiced);
    }
    Ok(cmvn_utterance(&voiced))
}
