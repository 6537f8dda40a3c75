//! Desk-scale synthetic text-dependent corpus.
//!
//! Each phrase is a fixed sequence of acoustic units drawn from a shared
//! inventory. A speaker shifts every unit along a unit-specific low-rank
//! direction, so the (speaker, phrase) pair owns a latent mean trajectory that
//! survives per-utterance mean normalisation. Sessions add a low-rank nuisance
//! shift per unit plus white frame noise, both scaled by `noise_scale`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Trial, TrialLabel, TrialList};
use crate::frontend::{write_features, FeatureKind, FeatureSequence};
use crate::targets::{CorpusManifest, ManifestEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub n_speakers: usize,
    pub n_phrases: usize,
    pub sessions: usize,
    pub frames_per_utterance: usize,
    pub dim: usize,
    /// Size of the shared unit inventory.
    pub n_units: usize,
    pub units_per_phrase: usize,
    /// Spread of unit means (phrase separation).
    pub phrase_scale: f64,
    /// Spread of speaker shifts.
    pub speaker_scale: f64,
    pub speaker_rank: usize,
    /// Spread of per-session unit shifts before `noise_scale`.
    pub session_scale: f64,
    pub session_rank: usize,
    /// Frame noise standard deviation before `noise_scale`.
    pub frame_noise: f64,
    /// Multiplies every session-level random term; zero makes sessions identical.
    pub noise_scale: f64,
    /// Fraction of speakers held out for training the network and back end.
    pub background_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            n_speakers: 20,
            n_phrases: 5,
            sessions: 3,
            frames_per_utterance: 80,
            dim: 30,
            n_units: 16,
            units_per_phrase: 6,
            phrase_scale: 2.0,
            speaker_scale: 0.8,
            speaker_rank: 16,
            session_scale: 0.6,
            session_rank: 4,
            frame_noise: 1.2,
            noise_scale: 1.0,
            background_fraction: 0.5,
            seed: 20240601,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_speakers", self.n_speakers),
            ("n_phrases", self.n_phrases),
            ("sessions", self.sessions),
            ("frames_per_utterance", self.frames_per_utterance),
            ("dim", self.dim),
            ("n_units", self.n_units),
            ("units_per_phrase", self.units_per_phrase),
            ("speaker_rank", self.speaker_rank),
            ("session_rank", self.session_rank),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("corpus.{name} must be positive")));
        }
        let scales = [
            ("phrase_scale", self.phrase_scale),
            ("speaker_scale", self.speaker_scale),
            ("session_scale", self.session_scale),
            ("frame_noise", self.frame_noise),
        ];
        if let Some((name, _)) = scales.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("corpus.{name} must be positive")));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(
                "corpus.noise_scale must be non-negative".into(),
            ));
        }
        if self.sessions < 2 {
            return Err(Error::Config(
                "corpus needs at least 2 sessions (enroll + test)".into(),
            ));
        }
        if self.n_phrases < 2 || self.n_units < 2 {
            return Err(Error::Config(
                "corpus needs at least 2 phrases and 2 units".into(),
            ));
        }
        if self.frames_per_utterance < self.units_per_phrase {
            return Err(Error::Config(
                "frames_per_utterance must cover every unit of a phrase".into(),
            ));
        }
        let bg = self.background_speakers();
        if bg < 2 || self.n_speakers - bg < 2 {
            return Err(Error::Config(format!(
                "background_fraction {} leaves {bg} background and {} evaluation speakers; need 2 of each",
                self.background_fraction,
                self.n_speakers - bg
            )));
        }
        Ok(())
    }

    pub fn background_speakers(&self) -> usize {
        (self.n_speakers as f64 * self.background_fraction).round() as usize
    }

    pub fn n_utterances(&self) -> usize {
        self.n_speakers * self.n_phrases * self.sessions
    }
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:03}")
}

pub fn phrase_id(p: usize) -> String {
    format!("ph{p:02}")
}

pub fn utterance_id(s: usize, p: usize, session: usize) -> String {
    format!("{}_{}_s{session}", speaker_id(s), phrase_id(p))
}

pub fn model_id(s: usize, p: usize) -> String {
    format!("{}_{}", speaker_id(s), phrase_id(p))
}

/// `model_id \t utterance_id` pairs, one enrollment utterance per line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnrollmentList {
    pub pairs: Vec<(String, String)>,
}

impl EnrollmentList {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Text {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: "expected `model_id \\t utterance_id`".into(),
                });
            }
            pairs.push((fields[0].to_string(), fields[1].to_string()));
        }
        Ok(EnrollmentList { pairs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        self.pairs
            .iter()
            .map(|(m, u)| format!("{m}\t{u}\n"))
            .collect()
    }

    /// Utterances per model, models in first-appearance order.
    pub fn grouped(&self) -> Vec<(String, Vec<String>)> {
        let mut order: Vec<String> = Vec::new();
        let mut map: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for (m, u) in &self.pairs {
            if !map.contains_key(m.as_str()) {
                order.push(m.clone());
            }
            map.entry(m.as_str()).or_default().push(u.clone());
        }
        order
            .into_iter()
            .map(|m| {
                let utts = map[m.as_str()].clone();
                (m, utts)
            })
            .collect()
    }
}

/// A generated corpus held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub utterances: Vec<FeatureSequence>,
    /// Paths are `feats/<utt>.bnf`, relative to the corpus directory.
    pub manifest: CorpusManifest,
    pub background: CorpusManifest,
    pub enroll: EnrollmentList,
    pub trials: TrialList,
}

/// Where [`SyntheticCorpus::write`] puts each list.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusFiles {
    pub manifest: PathBuf,
    pub background: PathBuf,
    pub enroll: PathBuf,
    pub trials: PathBuf,
}

impl CorpusFiles {
    pub fn in_dir(dir: &Path) -> Self {
        CorpusFiles {
            manifest: dir.join("manifest.tsv"),
            background: dir.join("background.tsv"),
            enroll: dir.join("enroll.tsv"),
            trials: dir.join("trials.tsv"),
        }
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let e: f64 = StandardNormal.sample(rng);
        scale * e
    })
}

fn gaussian_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn sub_seed(seed: u64, parts: &[usize]) -> u64 {
    let mut bytes = vec![seed.to_le_bytes().to_vec()];
    bytes.extend(parts.iter().map(|p| (*p as u64).to_le_bytes().to_vec()));
    let slices: Vec<&[u8]> = bytes.iter().map(|b| b.as_slice()).collect();
    super::stages::fnv1a(&slices)
}

/// Generates the corpus. Identical specs give identical corpora.
pub fn synth_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let unit_means = gaussian_matrix(spec.n_units, d, spec.phrase_scale, &mut rng);
    let phrases: Vec<Vec<usize>> = (0..spec.n_phrases)
        .map(|_| {
            let mut seq: Vec<usize> = Vec::with_capacity(spec.units_per_phrase);
            while seq.len() < spec.units_per_phrase {
                let u = rand::Rng::random_range(&mut rng, 0..spec.n_units);
                if seq.last() != Some(&u) {
                    seq.push(u);
                }
            }
            seq
        })
        .collect();
    let inv_sqrt = |r: usize| 1.0 / (r as f64).sqrt();
    let speaker_load: Vec<DMatrix<f64>> = (0..spec.n_units)
        .map(|_| gaussian_matrix(d, spec.speaker_rank, inv_sqrt(spec.speaker_rank), &mut rng))
        .collect();
    let session_load: Vec<DMatrix<f64>> = (0..spec.n_units)
        .map(|_| gaussian_matrix(d, spec.session_rank, inv_sqrt(spec.session_rank), &mut rng))
        .collect();
    let speakers: Vec<DVector<f64>> = (0..spec.n_speakers)
        .map(|_| {
            // Equal-norm factors: no speaker sits nearer the population mean
            // than another, which keeps pooled-threshold scores comparable.
            let z = gaussian_vector(spec.speaker_rank, &mut rng);
            let r = (spec.speaker_rank as f64).sqrt() * spec.speaker_scale;
            z.normalize() * r
        })
        .collect();

    let t_len = spec.frames_per_utterance;
    let n_seg = spec.units_per_phrase;
    let mut utterances = Vec::with_capacity(spec.n_utterances());
    let mut entries = Vec::with_capacity(spec.n_utterances());
    for s in 0..spec.n_speakers {
        for (p, units) in phrases.iter().enumerate() {
            for session in 0..spec.sessions {
                let mut urng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, &[s, p, session]));
                let noisy = spec.noise_scale > 0.0;
                let w = gaussian_vector(spec.session_rank, &mut urng)
                    * (spec.session_scale * spec.noise_scale);
                let targets: Vec<DVector<f64>> = units
                    .iter()
                    .map(|&u| {
                        let mut v = unit_means.row(u).transpose() + &speaker_load[u] * &speakers[s];
                        if noisy {
                            v += &session_load[u] * &w;
                        }
                        v
                    })
                    .collect();
                let mut frames = DMatrix::zeros(t_len, d);
                for t in 0..t_len {
                    // Position within the phrase; the second half of each
                    // segment glides towards the next unit.
                    let pos = t as f64 * n_seg as f64 / t_len as f64;
                    let seg = (pos as usize).min(n_seg - 1);
                    let beta = if seg + 1 < n_seg {
                        (pos - seg as f64 - 0.5).max(0.0)
                    } else {
                        0.0
                    };
                    for j in 0..d {
                        let mut x = targets[seg][j];
                        if beta > 0.0 {
                            x += beta * (targets[seg + 1][j] - targets[seg][j]);
                        }
                        if noisy {
                            let e: f64 = StandardNormal.sample(&mut urng);
                            x += e * spec.frame_noise * spec.noise_scale;
                        }
                        frames[(t, j)] = x;
                    }
                }
                let id = utterance_id(s, p, session);
                entries.push(ManifestEntry {
                    utterance_id: id.clone(),
                    speaker_id: speaker_id(s),
                    phrase_id: phrase_id(p),
                    path: PathBuf::from(format!("feats/{id}.bnf")),
                });
                utterances.push(FeatureSequence::new(frames, FeatureKind::Mfcc, id));
            }
        }
    }
    let manifest = CorpusManifest { entries };

    let n_bg = spec.background_speakers();
    let background = CorpusManifest {
        entries: manifest
            .entries
            .iter()
            .filter(|e| e.speaker_id < speaker_id(n_bg))
            .cloned()
            .collect(),
    };

    let test_session = spec.sessions - 1;
    let eval: Vec<usize> = (n_bg..spec.n_speakers).collect();
    let mut enroll = EnrollmentList::default();
    let mut trials = Vec::new();
    for &s in &eval {
        for p in 0..spec.n_phrases {
            let m = model_id(s, p);
            for session in 0..test_session {
                enroll.pairs.push((m.clone(), utterance_id(s, p, session)));
            }
            for &ts in &eval {
                for tp in 0..spec.n_phrases {
                    let label = match (ts == s, tp == p) {
                        (true, true) => TrialLabel::Genuine,
                        (true, false) => TrialLabel::TargetWrong,
                        (false, true) => TrialLabel::ImposterCorrect,
                        (false, false) => TrialLabel::ImposterWrong,
                    };
                    trials.push(Trial::new(
                        m.clone(),
                        utterance_id(ts, tp, test_session),
                        label,
                    ));
                }
            }
        }
    }

    Ok(SyntheticCorpus {
        utterances,
        manifest,
        background,
        enroll,
        trials: TrialList { trials },
    })
}

impl SyntheticCorpus {
    /// Writes features and lists under `dir`.
    pub fn write(&self, dir: &Path) -> Result<CorpusFiles> {
        let feats = dir.join("feats");
        fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
        for seq in &self.utterances {
            write_features(&feats.join(format!("{}.bnf", seq.utterance_id)), seq)?;
        }
        let files = CorpusFiles::in_dir(dir);
        self.manifest.save(&files.manifest)?;
        self.background.save(&files.background)?;
        fs::write(&files.enroll, self.enroll.to_text()).map_err(|e| Error::io(&files.enroll, e))?;
        self.trials.save(&files.trials)?;
        Ok(files)
    }
}
