//! Training inputs and targets: context splicing, speaker labels,
//! time-contrastive labels (per utterance and over a shuffled stream), and
//! shifted-frame pairs for autoregressive predictive coding.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Speaker,
    Utcl,
    Stcl,
    Apc,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Speaker => "speaker",
            Scheme::Utcl => "utcl",
            Scheme::Stcl => "stcl",
            Scheme::Apc => "apc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "speaker" => Ok(Scheme::Speaker),
            "utcl" => Ok(Scheme::Utcl),
            "stcl" => Ok(Scheme::Stcl),
            "apc" => Ok(Scheme::Apc),
            other => Err(Error::Config(format!("unknown training scheme `{other}`"))),
        }
    }
}

/// Targets for one mini-batch or data set.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes {
        labels: Vec<usize>,
        n_classes: usize,
    },
    Regression(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplicedBatch {
    pub inputs: DMatrix<f64>,
    pub targets: Targets,
    pub scheme: Scheme,
}

impl SplicedBatch {
    pub fn new(inputs: DMatrix<f64>, targets: Targets, scheme: Scheme) -> Result<Self> {
        let rows = match &targets {
            Targets::Classes { labels, n_classes } => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= *n_classes) {
                    return Err(Error::Shape(format!("label {bad} >= {n_classes} classes")));
                }
                labels.len()
            }
            Targets::Regression(m) => m.nrows(),
        };
        if rows != inputs.nrows() || rows == 0 {
            return Err(Error::Shape(format!(
                "{} input rows vs {} targets",
                inputs.nrows(),
                rows
            )));
        }
        Ok(SplicedBatch {
            inputs,
            targets,
            scheme,
        })
    }
}

/// Row `t` is frames `t-C/2 ..= t+C/2` concatenated, with the first and last
/// frames replicated past the edges.
pub fn splice_context(seq: &FeatureSequence, context: usize) -> Result<DMatrix<f64>> {
    if context == 0 || context % 2 == 0 {
        return Err(Error::Config(format!(
            "context width must be odd, got {context}"
        )));
    }
    let (t_len, dim) = (seq.len(), seq.dim());
    let half = (context / 2) as isize;
    let mut out = DMatrix::zeros(t_len, context * dim);
    for t in 0..t_len as isize {
        for (slot, offset) in (-half..=half).enumerate() {
            let src = (t + offset).clamp(0, t_len as isize - 1) as usize;
            for d in 0..dim {
                out[(t as usize, slot * dim + d)] = seq.frames[(src, d)];
            }
        }
    }
    Ok(out)
}

/// The centre frame of each spliced row.
pub fn unsplice_center(spliced: &DMatrix<f64>, context: usize) -> DMatrix<f64> {
    let dim = spliced.ncols() / context;
    spliced.columns((context / 2) * dim, dim).into_owned()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: String,
    pub phrase_id: String,
    pub path: PathBuf,
}

/// Tab-separated utterance list: utterance, speaker, phrase, file path.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |message: String| Error::Text {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            if fields.len() != 4 {
                return Err(bad(format!(
                    "expected 4 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(bad("empty field".into()));
            }
            entries.push(ManifestEntry {
                utterance_id: fields[0].to_string(),
                speaker_id: fields[1].to_string(),
                phrase_id: fields[2].to_string(),
                path: PathBuf::from(fields[3]),
            });
        }
        Ok(CorpusManifest { entries })
    }

    /// Loads a manifest; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{}\t{}\t{}\t{}\n",
                    e.utterance_id,
                    e.speaker_id,
                    e.phrase_id,
                    e.path.display()
                )
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, utterance_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.utterance_id == utterance_id)
    }
}

/// Speaker-to-class mapping, lexicographic by speaker id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerLabels {
    pub index: BTreeMap<String, usize>,
}

impl SpeakerLabels {
    pub fn n_classes(&self) -> usize {
        self.index.len()
    }

    /// Class per manifest entry, in manifest order.
    pub fn per_utterance(&self, manifest: &CorpusManifest) -> Vec<usize> {
        manifest
            .entries
            .iter()
            .map(|e| self.index[&e.speaker_id])
            .collect()
    }
}

pub fn label_speaker(manifest: &CorpusManifest) -> Result<SpeakerLabels> {
    let mut ids: Vec<&str> = manifest
        .entries
        .iter()
        .map(|e| e.speaker_id.as_str())
        .collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Config(format!(
            "speaker targets need at least 2 speakers, manifest has {}",
            ids.len()
        )));
    }
    Ok(SpeakerLabels {
        index: ids
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s.to_string(), i))
            .collect(),
    })
}

/// Uniform segmentation of one utterance into `c` classes. The first `T mod c`
/// segments take one extra frame. Returns `None` when `T < c`.
pub fn label_utcl(t_len: usize, c: usize) -> Option<Vec<usize>> {
    if c == 0 || t_len < c {
        return None;
    }
    let (base, rem) = (t_len / c, t_len % c);
    let mut labels = Vec::with_capacity(t_len);
    for seg in 0..c {
        let len = base + usize::from(seg < rem);
        labels.extend(std::iter::repeat_n(seg, len));
    }
    Some(labels)
}

/// One frame of the shuffled sTCL stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFrame {
    /// Index into the utterance list given to [`label_stcl`].
    pub utterance: usize,
    pub frame: usize,
    pub label: usize,
}

/// Shuffles utterances with the seed, concatenates them, and labels
/// consecutive `chunk`-frame blocks `0, 1, …, c-1, 0, …` by stream position.
/// Labels do not restart at utterance boundaries.
pub fn label_stcl(
    frame_counts: &[usize],
    c: usize,
    chunk: usize,
    seed: u64,
) -> Result<Vec<StreamFrame>> {
    if c == 0 || chunk == 0 {
        return Err(Error::Config("sTCL needs c >= 1 and chunk >= 1".into()));
    }
    let total: usize = frame_counts.iter().sum();
    if total < c * chunk {
        return Err(Error::Config(format!(
            "sTCL stream has {total} frames, needs at least c*M = {}",
            c * chunk
        )));
    }
    let mut order: Vec<usize> = (0..frame_counts.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut stream = Vec::with_capacity(total);
    for u in order {
        for f in 0..frame_counts[u] {
            let label = (stream.len() / chunk) % c;
            stream.push(StreamFrame {
                utterance: u,
                frame: f,
                label,
            });
        }
    }
    Ok(stream)
}

/// Input/target pairs for predicting `shift` frames ahead: input row `i` is
/// frame `i`, target row `i` is frame `i + shift`. `None` when `T <= shift`.
pub fn make_apc_pairs(seq: &FeatureSequence, shift: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let t_len = seq.len();
    if shift == 0 || t_len <= shift {
        return None;
    }
    let n = t_len - shift;
    Some((
        seq.frames.rows(0, n).into_owned(),
        seq.frames.rows(shift, n).into_owned(),
    ))
}
