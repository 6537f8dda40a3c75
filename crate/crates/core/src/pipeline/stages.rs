//! Stage runner: dependency checks, provenance records, idempotent reruns and
//! the artifact directory lock.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::hash::Hasher;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fnv::FnvHasher;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::config::{BackendKind, ExperimentConfig};
use super::model::{BnModel, Network};
use super::synth::{synth_corpus, CorpusFiles, EnrollmentList};
use super::train::{train_dense, train_gru, TrainingLog};
use crate::bottleneck::{tap_layers, PcaModel};
use crate::error::{Error, Result};
use crate::eval::{
    det_export, evaluate_trials, fuse_scores, MetricReport, ScoreFile, TrialLabel, TrialList,
};
use crate::frontend::{
    cmvn_utterance, extract_features, read_features, read_wav, write_features, FeatureKind,
    FeatureSequence,
};
use crate::gmm::{llr_score, map_adapt, ubm_train_em, DiagGmm};
use crate::ivector::{
    bw_stats, enroll_speaker, extract_ivector, length_normalize, plda_score, plda_train,
    train_tmatrix, PldaModel, TvModel,
};
use crate::losses::{LossHead, LossKind};
use crate::net::{DenseNetwork, GruEncoder};
use crate::targets::{
    label_speaker, label_stcl, label_utcl, splice_context, CorpusManifest, Scheme,
};

/// 64-bit FNV-1a over length-prefixed parts.
pub fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(&(p.len() as u64).to_le_bytes());
        h.write(p);
    }
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Features,
    Targets,
    TrainDnn,
    ExtractBn,
    TrainUbm,
    TrainTv,
    TrainPlda,
    Enroll,
    Score,
    Evaluate,
    Fuse,
}

impl Stage {
    /// Every stage in recipe (topological) order.
    pub const ALL: [Stage; 12] = [
        Stage::Synth,
        Stage::Features,
        Stage::Targets,
        Stage::TrainDnn,
        Stage::ExtractBn,
        Stage::TrainUbm,
        Stage::TrainTv,
        Stage::TrainPlda,
        Stage::Enroll,
        Stage::Score,
        Stage::Evaluate,
        Stage::Fuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Features => "features",
            Stage::Targets => "targets",
            Stage::TrainDnn => "train-dnn",
            Stage::ExtractBn => "extract-bn",
            Stage::TrainUbm => "train-ubm",
            Stage::TrainTv => "train-tv",
            Stage::TrainPlda => "train-plda",
            Stage::Enroll => "enroll",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Fuse => "fuse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Stages whose artifacts this one reads, under `cfg`.
    pub fn dependencies(self, cfg: &ExperimentConfig) -> Vec<Stage> {
        match self {
            Stage::Synth | Stage::Fuse => vec![],
            Stage::Features if cfg.paths.manifest.is_none() => vec![Stage::Synth],
            Stage::Features => vec![],
            Stage::Targets => vec![Stage::Features],
            Stage::TrainDnn => vec![Stage::Targets],
            Stage::ExtractBn if cfg.uses_network() => vec![Stage::TrainDnn],
            Stage::ExtractBn => vec![Stage::Features],
            Stage::TrainUbm => vec![Stage::ExtractBn],
            Stage::TrainTv => vec![Stage::TrainUbm],
            Stage::TrainPlda => vec![Stage::TrainTv],
            Stage::Enroll => match cfg.backend.kind {
                BackendKind::GmmUbm => vec![Stage::TrainUbm],
                BackendKind::IvectorPlda => vec![Stage::TrainPlda],
            },
            Stage::Score => vec![Stage::Enroll],
            Stage::Evaluate => vec![Stage::Score],
        }
    }

    /// Transitive dependencies in recipe order.
    pub fn ancestors(self, cfg: &ExperimentConfig) -> Vec<Stage> {
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = self.dependencies(cfg);
        while let Some(s) = stack.pop() {
            if seen.insert(s) {
                stack.extend(s.dependencies(cfg));
            }
        }
        seen.into_iter().collect()
    }

    /// Config keys (`section` or `section.key`) whose values the stage uses.
    fn config_keys(self) -> &'static [&'static str] {
        match self {
            Stage::Synth => &["corpus"],
            Stage::Features => &["frontend", "paths"],
            Stage::Targets => &["targets", "seed"],
            Stage::TrainDnn => &["targets", "network", "train", "loss", "seed"],
            Stage::ExtractBn => &["bottleneck", "targets.context"],
            Stage::TrainUbm => &[
                "seed",
                "backend.components",
                "backend.ubm_iterations",
                "backend.init_subsample",
                "backend.kmeans_iterations",
                "backend.variance_floor",
            ],
            Stage::TrainTv => &["seed", "backend.ivector_rank", "backend.tv_iterations"],
            Stage::TrainPlda => &["backend.plda_iterations"],
            Stage::Enroll | Stage::Score => &[
                "backend.kind",
                "backend.relevance",
                "backend.map_iterations",
                "backend.map_posteriors",
                "system",
            ],
            Stage::Evaluate => &["eval", "system"],
            Stage::Fuse => &["fuse", "eval", "system"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The stages `run-all` executes for `cfg`, in order.
pub fn recipe(cfg: &ExperimentConfig) -> Vec<Stage> {
    let mut stages = Vec::new();
    if cfg.paths.manifest.is_none() {
        stages.push(Stage::Synth);
    }
    stages.push(Stage::Features);
    if cfg.uses_network() {
        stages.extend([Stage::Targets, Stage::TrainDnn]);
    }
    stages.extend([Stage::ExtractBn, Stage::TrainUbm]);
    if cfg.backend.kind == BackendKind::IvectorPlda {
        stages.extend([Stage::TrainTv, Stage::TrainPlda]);
    }
    stages.extend([Stage::Enroll, Stage::Score, Stage::Evaluate]);
    if !cfg.fuse.inputs.is_empty() {
        stages.push(Stage::Fuse);
    }
    stages
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Artifacts already matched the config and inputs.
    UpToDate,
}

#[derive(Debug, Clone, PartialEq)]
struct Provenance {
    config: u64,
    inputs: u64,
    outputs: u64,
    files: Vec<String>,
}

impl Provenance {
    fn to_text(&self, stage: Stage) -> String {
        let mut s = format!(
            "stage\t{stage}\nconfig\t{:016x}\ninputs\t{:016x}\noutputs\t{:016x}\n",
            self.config, self.inputs, self.outputs
        );
        for f in &self.files {
            s.push_str(&format!("file\t{f}\n"));
        }
        s
    }

    fn parse(text: &str) -> Option<Self> {
        let mut p = Provenance {
            config: 0,
            inputs: 0,
            outputs: 0,
            files: Vec::new(),
        };
        let hex = |v: &str| u64::from_str_radix(v, 16).ok();
        for line in text.lines() {
            let (k, v) = line.split_once('\t')?;
            match k {
                "config" => p.config = hex(v)?,
                "inputs" => p.inputs = hex(v)?,
                "outputs" => p.outputs = hex(v)?,
                "file" => p.files.push(v.to_string()),
                _ => {}
            }
        }
        Some(p)
    }
}

/// Removes the lock file when dropped.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".bnsv.lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn hash_files(base: &Path, files: &[String]) -> Result<u64> {
    let mut sorted: Vec<&String> = files.iter().collect();
    sorted.sort();
    let mut parts: Vec<Vec<u8>> = Vec::with_capacity(2 * sorted.len());
    for f in sorted {
        let p = base.join(f);
        parts.push(f.as_bytes().to_vec());
        parts.push(fs::read(&p).map_err(|e| Error::io(&p, e))?);
    }
    let slices: Vec<&[u8]> = parts.iter().map(|v| v.as_slice()).collect();
    Ok(fnv1a(&slices))
}

fn load_sequences(manifest: &CorpusManifest, kind: FeatureKind) -> Result<Vec<FeatureSequence>> {
    manifest
        .entries
        .par_iter()
        .map(|e| read_features(&e.path, kind, &e.utterance_id))
        .collect()
}

fn stack_rows(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(*b);
        r += b.nrows();
    }
    out
}

fn vector_text(v: &DVector<f64>) -> String {
    v.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_vector(s: &str, path: &Path, line: usize) -> Result<DVector<f64>> {
    let vals: std::result::Result<Vec<f64>, _> = s.split(' ').map(str::parse).collect();
    vals.map(DVector::from_vec).map_err(|_| Error::Text {
        path: path.to_path_buf(),
        line,
        message: "bad number".into(),
    })
}

/// Per-frame training labels for the background utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTable {
    pub scheme: Scheme,
    pub n_classes: usize,
    /// Utterance id and one label per frame.
    pub rows: Vec<(String, Vec<usize>)>,
}

impl TargetTable {
    /// First line `scheme \t name \t n_classes`, then `utt \t labels…`.
    pub fn to_text(&self) -> String {
        let mut s = format!("scheme\t{}\t{}\n", self.scheme.name(), self.n_classes);
        for (u, labels) in &self.rows {
            let l: Vec<String> = labels.iter().map(|x| x.to_string()).collect();
            s.push_str(&format!("{u}\t{}\n", l.join(" ")));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::Text {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| bad(1, "empty targets file"))?;
        let h: Vec<&str> = head.split('\t').collect();
        if h.len() != 3 || h[0] != "scheme" {
            return Err(bad(1, "expected `scheme \\t name \\t n_classes`"));
        }
        let scheme = Scheme::parse(h[1])?;
        let n_classes = h[2].parse().map_err(|_| bad(1, "bad class count"))?;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let (u, l) = line
                .split_once('\t')
                .ok_or_else(|| bad(i + 1, "expected `utt \\t labels`"))?;
            let labels = l
                .split(' ')
                .filter(|x| !x.is_empty())
                .map(|x| x.parse::<usize>().ok().filter(|&v| v < n_classes))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad(i + 1, "bad label"))?;
            rows.push((u.to_string(), labels));
        }
        Ok(TargetTable {
            scheme,
            n_classes,
            rows,
        })
    }
}

/// Artifact locations inside a stage directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn features_manifest(&self) -> PathBuf {
        self.root.join("features").join("manifest.tsv")
    }
    pub fn targets(&self) -> PathBuf {
        self.root.join("targets.tsv")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.bnm")
    }
    pub fn bn_manifest(&self) -> PathBuf {
        self.root.join("bn").join("manifest.tsv")
    }
    pub fn pca(&self) -> PathBuf {
        self.root.join("pca.bnp")
    }
    pub fn ubm(&self) -> PathBuf {
        self.root.join("ubm.bng")
    }
    pub fn tv(&self) -> PathBuf {
        self.root.join("tv.bnt")
    }
    pub fn plda(&self) -> PathBuf {
        self.root.join("plda.bnpl")
    }
    pub fn enroll_dir(&self) -> PathBuf {
        self.root.join("enroll")
    }
    pub fn scores(&self, system: &str) -> PathBuf {
        self.root.join("scores").join(format!("{system}.tsv"))
    }
    pub fn report(&self, system: &str) -> PathBuf {
        self.root.join("reports").join(format!("{system}.txt"))
    }
    fn provenance(&self, stage: Stage) -> PathBuf {
        self.root.join("prov").join(format!("{stage}.prov"))
    }
}

/// Runs stages of one experiment against one artifact directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub layout: Layout,
    /// Overwrite artifacts produced under a different configuration.
    pub force: bool,
}

impl Pipeline {
    pub fn new(
        config: ExperimentConfig,
        stage_dir: impl Into<PathBuf>,
        force: bool,
    ) -> Result<Self> {
        config.validate()?;
        let root = stage_dir.into();
        ensure_dir(&root)?;
        Ok(Pipeline {
            config,
            layout: Layout { root },
            force,
        })
    }

    pub fn corpus_files(&self) -> CorpusFiles {
        let synth = CorpusFiles::in_dir(&self.layout.corpus_dir());
        let p = &self.config.paths;
        let pick = |o: &Option<PathBuf>, d: PathBuf| o.clone().unwrap_or(d);
        CorpusFiles {
            manifest: pick(&p.manifest, synth.manifest),
            background: pick(&p.background, synth.background),
            enroll: pick(&p.enroll, synth.enroll),
            trials: pick(&p.trials, synth.trials),
        }
    }

    fn config_hash(&self, stage: Stage) -> u64 {
        let value = toml::Table::try_from(&self.config).expect("config serialises");
        let mut picked = toml::Table::new();
        for key in stage.config_keys() {
            let (section, sub) = match key.split_once('.') {
                Some((s, k)) => (s, Some(k)),
                None => (*key, None),
            };
            let Some(v) = value.get(section) else {
                continue;
            };
            match sub {
                None => {
                    picked.insert(section.to_string(), v.clone());
                }
                Some(k) => {
                    if let Some(inner) = v.get(k) {
                        picked.insert(key.to_string(), inner.clone());
                    }
                }
            }
        }
        let text = toml::to_string(&picked).expect("table serialises");
        fnv1a(&[stage.name().as_bytes(), text.as_bytes()])
    }

    fn read_provenance(&self, stage: Stage) -> Option<Provenance> {
        fs::read_to_string(self.layout.provenance(stage))
            .ok()
            .and_then(|t| Provenance::parse(&t))
    }

    fn input_hash(&self, stage: Stage) -> Result<u64> {
        for dep in stage.dependencies(&self.config) {
            if self.read_provenance(dep).is_none() {
                return Err(Error::Dependency {
                    stage: stage.name().into(),
                    missing: dep.name().into(),
                });
            }
        }
        // Stages read artifacts of any ancestor (train-dnn reads features as
        // well as targets), so every ancestor's record feeds the hash.
        let mut parts: Vec<Vec<u8>> = Vec::new();
        for anc in stage.ancestors(&self.config) {
            let prov = self.read_provenance(anc).ok_or_else(|| Error::Dependency {
                stage: stage.name().into(),
                missing: anc.name().into(),
            })?;
            parts.push(anc.name().as_bytes().to_vec());
            parts.push(prov.inputs.to_le_bytes().to_vec());
            parts.push(prov.outputs.to_le_bytes().to_vec());
        }
        let external: Vec<PathBuf> = match stage {
            Stage::Features => {
                let files = self.corpus_files();
                let mut v = vec![
                    files.manifest.clone(),
                    files.background,
                    files.enroll,
                    files.trials,
                ];
                if let Ok(m) = CorpusManifest::load(&files.manifest) {
                    v.extend(m.entries.into_iter().map(|e| e.path));
                }
                v
            }
            Stage::Fuse => self.fuse_inputs(),
            _ => vec![],
        };
        for p in external {
            parts.push(p.to_string_lossy().as_bytes().to_vec());
            parts.push(fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
        let slices: Vec<&[u8]> = parts.iter().map(|v| v.as_slice()).collect();
        Ok(fnv1a(&slices))
    }

    /// Whether the stage's recorded artifacts match the current config and inputs.
    pub fn is_up_to_date(&self, stage: Stage) -> Result<bool> {
        let Some(prov) = self.read_provenance(stage) else {
            return Ok(false);
        };
        if prov.config != self.config_hash(stage) {
            return Ok(false);
        }
        if prov.inputs != self.input_hash(stage)? {
            return Ok(false);
        }
        Ok(hash_files(&self.layout.root, &prov.files).is_ok_and(|h| h == prov.outputs))
    }

    /// Runs one stage under the directory lock.
    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        let _lock = DirLock::acquire(&self.layout.root)?;
        self.run_unlocked(stage)
    }

    fn run_unlocked(&self, stage: Stage) -> Result<StageOutcome> {
        let inputs = self.input_hash(stage)?;
        let config = self.config_hash(stage);
        if let Some(prov) = self.read_provenance(stage) {
            if prov.config != config && !self.force {
                return Err(Error::Config(format!(
                    "artifacts of stage `{stage}` in {} were produced with a different configuration; \
                     rerun with --force to overwrite",
                    self.layout.root.display()
                )));
            }
            if prov.config == config
                && prov.inputs == inputs
                && hash_files(&self.layout.root, &prov.files).is_ok_and(|h| h == prov.outputs)
            {
                log::info!("{stage}: up to date");
                return Ok(StageOutcome::UpToDate);
            }
        }
        let prov_path = self.layout.provenance(stage);
        if prov_path.exists() {
            fs::remove_file(&prov_path).map_err(|e| Error::io(&prov_path, e))?;
        }
        let started = Instant::now();
        let files = self.execute(stage)?;
        let outputs = hash_files(&self.layout.root, &files)?;
        let prov = Provenance {
            config,
            inputs,
            outputs,
            files,
        };
        write_text(&prov_path, &prov.to_text(stage))?;
        log::info!("{stage}: done in {:.1} s", started.elapsed().as_secs_f64());
        Ok(StageOutcome::Ran)
    }

    /// Runs the whole recipe and returns the evaluation report.
    pub fn run_all(&self) -> Result<MetricReport> {
        let _lock = DirLock::acquire(&self.layout.root)?;
        for stage in recipe(&self.config) {
            self.run_unlocked(stage)?;
        }
        self.report()
    }

    /// Recomputes the report from the stored score file.
    pub fn report(&self) -> Result<MetricReport> {
        let scores = ScoreFile::load(&self.layout.scores(&self.config.system))?;
        self.report_for(&self.config.system, &scores)
    }

    /// Report of the fused score file written by the fuse stage.
    pub fn fused_report(&self) -> Result<MetricReport> {
        let name = format!("{}-fused", self.config.system);
        let scores = ScoreFile::load(&self.layout.scores(&name))?;
        self.report_for(&name, &scores)
    }

    fn report_for(&self, system: &str, scores: &ScoreFile) -> Result<MetricReport> {
        let mut trials = TrialList::load(&self.corpus_files().trials)?;
        trials.attach(scores)?;
        evaluate_trials(system, &trials.trials, &self.config.eval)
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.layout.root)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn execute(&self, stage: Stage) -> Result<Vec<String>> {
        match stage {
            Stage::Synth => self.stage_synth(),
            Stage::Features => self.stage_features(),
            Stage::Targets => self.stage_targets(),
            Stage::TrainDnn => self.stage_train_dnn(),
            Stage::ExtractBn => self.stage_extract_bn(),
            Stage::TrainUbm => self.stage_train_ubm(),
            Stage::TrainTv => self.stage_train_tv(),
            Stage::TrainPlda => self.stage_train_plda(),
            Stage::Enroll => self.stage_enroll(),
            Stage::Score => self.stage_score(),
            Stage::Evaluate => self.stage_evaluate(),
            Stage::Fuse => self.stage_fuse(),
        }
    }

    fn stage_synth(&self) -> Result<Vec<String>> {
        let corpus = synth_corpus(&self.config.corpus)?;
        let dir = self.layout.corpus_dir();
        let files = corpus.write(&dir)?;
        let mut out: Vec<String> = [
            &files.manifest,
            &files.background,
            &files.enroll,
            &files.trials,
        ]
        .iter()
        .map(|p| self.rel(p))
        .collect();
        out.extend(
            corpus
                .manifest
                .entries
                .iter()
                .map(|e| self.rel(&dir.join(&e.path))),
        );
        Ok(out)
    }

    fn stage_features(&self) -> Result<Vec<String>> {
        let files = self.corpus_files();
        let manifest = CorpusManifest::load(&files.manifest)?;
        let dir = self
            .layout
            .features_manifest()
            .parent()
            .unwrap()
            .to_path_buf();
        ensure_dir(&dir)?;
        let fe = &self.config.frontend;
        let written: Vec<String> = manifest
            .entries
            .par_iter()
            .map(|e| {
                let is_wav = e
                    .path
                    .extension()
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"));
                let seq = if is_wav {
                    extract_features(&read_wav(&e.path, &e.utterance_id)?, fe)?
                } else {
                    // Feature inputs skip VAD (there is no waveform energy) but
                    // still get utterance-level normalisation.
                    cmvn_utterance(&read_features(&e.path, FeatureKind::Mfcc, &e.utterance_id)?)
                };
                if seq.is_empty() {
                    log::warn!("{}: no frames after the front end", e.utterance_id);
                }
                let name = format!("{}.bnf", e.utterance_id);
                write_features(&dir.join(&name), &seq)?;
                Ok(name)
            })
            .collect::<Result<_>>()?;
        let mut out_manifest = manifest.clone();
        for (e, name) in out_manifest.entries.iter_mut().zip(&written) {
            e.path = PathBuf::from(name);
        }
        out_manifest.save(&self.layout.features_manifest())?;
        let mut out: Vec<String> = written.iter().map(|n| self.rel(&dir.join(n))).collect();
        out.push(self.rel(&self.layout.features_manifest()));
        Ok(out)
    }

    /// Manifest entries of the background list, resolved against `manifest`.
    fn background_subset(&self, manifest: &CorpusManifest) -> Result<CorpusManifest> {
        let bg = CorpusManifest::load(&self.corpus_files().background)?;
        let mut missing = Vec::new();
        let entries = bg
            .entries
            .iter()
            .filter_map(|b| {
                let e = manifest.get(&b.utterance_id).cloned();
                if e.is_none() {
                    missing.push(b.utterance_id.clone());
                }
                e
            })
            .collect();
        if !missing.is_empty() {
            return Err(Error::KeyMismatch { missing });
        }
        Ok(CorpusManifest { entries })
    }

    fn stage_targets(&self) -> Result<Vec<String>> {
        let t = &self.config.targets;
        let feats = CorpusManifest::load(&self.layout.features_manifest())?;
        let bg = self.background_subset(&feats)?;
        let seqs = load_sequences(&bg, FeatureKind::Mfcc)?;
        let table = match t.scheme {
            Scheme::Speaker => {
                let labels = label_speaker(&bg)?;
                let per_utt = labels.per_utterance(&bg);
                TargetTable {
                    scheme: t.scheme,
                    n_classes: labels.n_classes(),
                    rows: seqs
                        .iter()
                        .zip(per_utt)
                        .map(|(s, l)| (s.utterance_id.clone(), vec![l; s.len()]))
                        .collect(),
                }
            }
            Scheme::Utcl => TargetTable {
                scheme: t.scheme,
                n_classes: t.utcl_classes,
                rows: seqs
                    .iter()
                    .filter_map(|s| match label_utcl(s.len(), t.utcl_classes) {
                        Some(l) => Some((s.utterance_id.clone(), l)),
                        None => {
                            log::warn!(
                                "{}: {} frames < {} uTCL classes; skipped",
                                s.utterance_id,
                                s.len(),
                                t.utcl_classes
                            );
                            None
                        }
                    })
                    .collect(),
            },
            Scheme::Stcl => {
                let counts: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
                let stream = label_stcl(
                    &counts,
                    t.stcl_classes,
                    t.stcl_chunk,
                    self.config.seed_for("stcl"),
                )?;
                let mut rows: Vec<(String, Vec<usize>)> = seqs
                    .iter()
                    .map(|s| (s.utterance_id.clone(), vec![0; s.len()]))
                    .collect();
                for f in stream {
                    rows[f.utterance].1[f.frame] = f.label;
                }
                TargetTable {
                    scheme: t.scheme,
                    n_classes: t.stcl_classes,
                    rows,
                }
            }
            Scheme::Apc => TargetTable {
                scheme: t.scheme,
                n_classes: 0,
                rows: vec![],
            },
        };
        if t.scheme != Scheme::Apc && table.rows.is_empty() {
            return Err(Error::EmptyInput(
                "no background utterance produced training targets".into(),
            ));
        }
        write_text(&self.layout.targets(), &table.to_text())?;
        Ok(vec![self.rel(&self.layout.targets())])
    }

    fn stage_train_dnn(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let table = TargetTable::parse(
            &fs::read_to_string(self.layout.targets())
                .map_err(|e| Error::io(self.layout.targets(), e))?,
            &self.layout.targets(),
        )?;
        if table.scheme != cfg.targets.scheme {
            return Err(Error::Config(format!(
                "targets were built for scheme `{}`, config says `{}`; rerun the targets stage",
                table.scheme.name(),
                cfg.targets.scheme.name()
            )));
        }
        let feats = CorpusManifest::load(&self.layout.features_manifest())?;
        let bg = self.background_subset(&feats)?;
        let seqs = load_sequences(&bg, FeatureKind::Mfcc)?;
        let kind = cfg.loss_kind()?;
        let train = cfg.train_config();

        let (model, log) = if table.scheme == Scheme::Apc {
            let dim = seqs
                .first()
                .map(|s| s.dim())
                .ok_or_else(|| Error::EmptyInput("no background utterances".into()))?;
            let mut enc = GruEncoder::new(
                dim,
                cfg.network.gru_hidden,
                cfg.network.gru_layers,
                dim,
                cfg.seed_for("net"),
            )?;
            let log = train_gru(&mut enc, &seqs, cfg.targets.apc_shift, &train)?;
            let head = LossHead::new(LossKind::L1, cfg.loss.hyper, dim, 0, 0)?;
            (
                BnModel {
                    scheme: Scheme::Apc,
                    context: 1,
                    network: Network::Gru(enc),
                    head: Some(head),
                },
                log,
            )
        } else {
            let by_id: HashMap<&str, &FeatureSequence> =
                seqs.iter().map(|s| (s.utterance_id.as_str(), s)).collect();
            let mut blocks = Vec::new();
            let mut labels = Vec::new();
            for (u, l) in &table.rows {
                let seq = by_id.get(u.as_str()).ok_or_else(|| Error::KeyMismatch {
                    missing: vec![u.clone()],
                })?;
                if seq.len() != l.len() {
                    return Err(Error::Shape(format!(
                        "{u}: {} frames vs {} labels",
                        seq.len(),
                        l.len()
                    )));
                }
                if seq.is_empty() {
                    continue;
                }
                blocks.push(splice_context(seq, cfg.targets.context)?);
                labels.extend_from_slice(l);
            }
            let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
            let inputs = stack_rows(&refs);
            drop(blocks);
            let n_classes = table.n_classes;
            let out_dim = if kind.takes_logits() {
                n_classes
            } else {
                cfg.network.embedding_dim
            };
            let mut net = DenseNetwork::new(
                inputs.ncols(),
                &cfg.network.hidden,
                cfg.network.activation,
                out_dim,
                crate::net::Activation::Linear,
                cfg.seed_for("net"),
            )?;
            let mut head = LossHead::new(
                kind,
                cfg.loss.hyper,
                out_dim,
                n_classes,
                cfg.seed_for("head"),
            )?;
            log::info!(
                "training {}-{} network on {} frames, {} classes",
                cfg.network.activation.name(),
                kind.name(),
                inputs.nrows(),
                n_classes
            );
            let log = train_dense(&mut net, &mut head, &inputs, &labels, &train)?;
            (
                BnModel {
                    scheme: table.scheme,
                    context: cfg.targets.context,
                    network: Network::Dense(net),
                    head: Some(head),
                },
                log,
            )
        };
        model.save(&self.layout.model())?;
        let log_path = self.layout.root.join("train_log.tsv");
        write_text(&log_path, &training_log_text(&log))?;
        Ok(vec![self.rel(&self.layout.model()), self.rel(&log_path)])
    }

    fn stage_extract_bn(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let feats = CorpusManifest::load(&self.layout.features_manifest())?;
        let out_manifest_path = self.layout.bn_manifest();
        let dir = out_manifest_path.parent().unwrap().to_path_buf();
        ensure_dir(&dir)?;
        if !cfg.uses_network() {
            let mut m = feats.clone();
            for e in &mut m.entries {
                e.path = PathBuf::from("../features").join(e.path.file_name().unwrap());
            }
            m.save(&out_manifest_path)?;
            return Ok(vec![self.rel(&out_manifest_path)]);
        }
        let model = BnModel::load(&self.layout.model())?;
        let layers = &cfg.bottleneck.layers;
        let tap = |seq: &FeatureSequence| -> Result<DMatrix<f64>> {
            let inputs = match model.network {
                Network::Dense(_) => splice_context(seq, model.context)?,
                Network::Gru(_) => seq.frames.clone(),
            };
            tap_layers(model.network.hidden(), &inputs, layers)
        };
        let bg = self.background_subset(&feats)?;
        let bg_seqs = load_sequences(&bg, FeatureKind::Mfcc)?;
        let bg_taps: Vec<DMatrix<f64>> = bg_seqs
            .par_iter()
            .filter(|s| !s.is_empty())
            .map(&tap)
            .collect::<Result<_>>()?;
        let refs: Vec<&DMatrix<f64>> = bg_taps.iter().collect();
        let pca = PcaModel::fit(&stack_rows(&refs), cfg.bottleneck.pca_dim)?;
        drop(bg_taps);
        pca.save(&self.layout.pca())?;

        let written: Vec<String> = feats
            .entries
            .par_iter()
            .map(|e| {
                let seq = read_features(&e.path, FeatureKind::Mfcc, &e.utterance_id)?;
                let frames = if seq.is_empty() {
                    DMatrix::zeros(0, pca.output_dim())
                } else {
                    pca.project(&tap(&seq)?)?
                };
                let mut out =
                    FeatureSequence::new(frames, FeatureKind::Bottleneck, &e.utterance_id);
                out.frame_shift_ms = seq.frame_shift_ms;
                let name = format!("{}.bnf", e.utterance_id);
                write_features(&dir.join(&name), &out)?;
                Ok(name)
            })
            .collect::<Result<_>>()?;
        let mut m = feats.clone();
        for (e, name) in m.entries.iter_mut().zip(&written) {
            e.path = PathBuf::from(name);
        }
        m.save(&out_manifest_path)?;
        let mut out: Vec<String> = written.iter().map(|n| self.rel(&dir.join(n))).collect();
        out.push(self.rel(&out_manifest_path));
        out.push(self.rel(&self.layout.pca()));
        Ok(out)
    }

    fn backend_manifest(&self) -> Result<CorpusManifest> {
        CorpusManifest::load(&self.layout.bn_manifest())
    }

    fn backend_kind(&self) -> FeatureKind {
        if self.config.uses_network() {
            FeatureKind::Bottleneck
        } else {
            FeatureKind::Mfcc
        }
    }

    fn background_backend_sequences(&self) -> Result<Vec<FeatureSequence>> {
        let m = self.backend_manifest()?;
        let bg = self.background_subset(&m)?;
        Ok(load_sequences(&bg, self.backend_kind())?
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect())
    }

    fn stage_train_ubm(&self) -> Result<Vec<String>> {
        let seqs = self.background_backend_sequences()?;
        let refs: Vec<&DMatrix<f64>> = seqs.iter().map(|s| &s.frames).collect();
        let pool = stack_rows(&refs);
        log::info!(
            "UBM: {} components on {} frames",
            self.config.backend.components,
            pool.nrows()
        );
        let training = ubm_train_em(&pool, &self.config.ubm_config())?;
        training.model.save(&self.layout.ubm())?;
        let log_path = self.layout.root.join("ubm_log.tsv");
        let text: String = training
            .log_likelihoods
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{}\t{v}\n", i + 1))
            .collect();
        write_text(&log_path, &text)?;
        Ok(vec![self.rel(&self.layout.ubm()), self.rel(&log_path)])
    }

    fn stage_train_tv(&self) -> Result<Vec<String>> {
        let ubm = DiagGmm::load(&self.layout.ubm())?;
        let seqs = self.background_backend_sequences()?;
        let stats = seqs
            .par_iter()
            .map(|s| bw_stats(&ubm, &s.frames))
            .collect::<Result<Vec<_>>>()?;
        let training = train_tmatrix(&ubm, &stats, &self.config.tv_config())?;
        training.model.save(&self.layout.tv())?;
        Ok(vec![self.rel(&self.layout.tv())])
    }

    /// Centered, length-normalised i-vector of one utterance.
    fn ivector(tv: &TvModel, frames: &DMatrix<f64>) -> Result<DVector<f64>> {
        let w = extract_ivector(tv, &bw_stats(&tv.ubm, frames)?)?;
        length_normalize(&(w - &tv.center))
    }

    fn stage_train_plda(&self) -> Result<Vec<String>> {
        let tv = TvModel::load(&self.layout.tv())?;
        let m = self.backend_manifest()?;
        let bg = self.background_subset(&m)?;
        let seqs = load_sequences(&bg, self.backend_kind())?;
        let mut class_of: HashMap<(String, String), usize> = HashMap::new();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (e, s) in bg.entries.iter().zip(&seqs) {
            if s.is_empty() {
                continue;
            }
            // Each (speaker, phrase) pair is its own class.
            let n = class_of.len();
            let c = *class_of
                .entry((e.speaker_id.clone(), e.phrase_id.clone()))
                .or_insert(n);
            labels.push(c);
            data.push(s);
        }
        let ivecs = data
            .par_iter()
            .map(|s| Self::ivector(&tv, &s.frames))
            .collect::<Result<Vec<_>>>()?;
        let training = plda_train(&ivecs, &labels, self.config.backend.plda_iterations)?;
        training.model.save(&self.layout.plda())?;
        Ok(vec![self.rel(&self.layout.plda())])
    }

    fn enroll_groups(&self) -> Result<Vec<(String, Vec<String>)>> {
        Ok(EnrollmentList::load(&self.corpus_files().enroll)?.grouped())
    }

    fn load_frames(&self, manifest: &CorpusManifest, ids: &[String]) -> Result<Vec<DMatrix<f64>>> {
        ids.iter()
            .map(|u| {
                let e = manifest.get(u).ok_or_else(|| Error::KeyMismatch {
                    missing: vec![u.clone()],
                })?;
                Ok(read_features(&e.path, self.backend_kind(), u)?.frames)
            })
            .collect()
    }

    fn ivector_model_path(&self) -> PathBuf {
        self.layout.enroll_dir().join("ivectors.tsv")
    }

    fn stage_enroll(&self) -> Result<Vec<String>> {
        let m = self.backend_manifest()?;
        let groups = self.enroll_groups()?;
        let dir = self.layout.enroll_dir();
        ensure_dir(&dir)?;
        match self.config.backend.kind {
            BackendKind::GmmUbm => {
                let ubm = DiagGmm::load(&self.layout.ubm())?;
                let be = &self.config.backend;
                groups
                    .par_iter()
                    .map(|(model, utts)| {
                        let blocks = self.load_frames(&m, utts)?;
                        let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
                        let frames = stack_rows(&refs);
                        let adapted = if frames.nrows() == 0 {
                            log::warn!("{model}: no enrollment frames; using the UBM");
                            ubm.clone()
                        } else {
                            map_adapt(
                                &ubm,
                                &frames,
                                be.relevance,
                                be.map_iterations,
                                be.map_posteriors,
                            )?
                        };
                        let path = dir.join(format!("{model}.bng"));
                        adapted.save(&path)?;
                        Ok(self.rel(&path))
                    })
                    .collect()
            }
            BackendKind::IvectorPlda => {
                let tv = TvModel::load(&self.layout.tv())?;
                let lines = groups
                    .par_iter()
                    .map(|(model, utts)| {
                        let ivecs = self
                            .load_frames(&m, utts)?
                            .iter()
                            .filter(|f| f.nrows() > 0)
                            .map(|f| Self::ivector(&tv, f))
                            .collect::<Result<Vec<_>>>()?;
                        Ok(format!(
                            "{model}\t{}\n",
                            vector_text(&enroll_speaker(&ivecs)?)
                        ))
                    })
                    .collect::<Result<Vec<String>>>()?;
                let path = self.ivector_model_path();
                write_text(&path, &lines.concat())?;
                Ok(vec![self.rel(&path)])
            }
        }
    }

    fn load_ivector_models(&self) -> Result<HashMap<String, DVector<f64>>> {
        let path = self.ivector_model_path();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .enumerate()
            .map(|(i, line)| {
                let (id, v) = line.split_once('\t').ok_or_else(|| Error::Text {
                    path: path.clone(),
                    line: i + 1,
                    message: "expected `model \\t values`".into(),
                })?;
                Ok((id.to_string(), parse_vector(v, &path, i + 1)?))
            })
            .collect()
    }

    fn stage_score(&self) -> Result<Vec<String>> {
        let m = self.backend_manifest()?;
        let trials = TrialList::load(&self.corpus_files().trials)?;
        let mut test_ids: Vec<String> = trials.trials.iter().map(|t| t.test_id.clone()).collect();
        test_ids.sort();
        test_ids.dedup();
        let frames: HashMap<String, DMatrix<f64>> = test_ids
            .par_iter()
            .map(|u| {
                Ok((
                    u.clone(),
                    self.load_frames(&m, std::slice::from_ref(u))?.remove(0),
                ))
            })
            .collect::<Result<_>>()?;
        let missing_model = |id: &str| Error::KeyMismatch {
            missing: vec![format!("enrollment model {id}")],
        };
        let scores: Vec<f64> = match self.config.backend.kind {
            BackendKind::GmmUbm => {
                let ubm = DiagGmm::load(&self.layout.ubm())?;
                let mut models: Vec<&str> =
                    trials.trials.iter().map(|t| t.enroll_id.as_str()).collect();
                models.sort_unstable();
                models.dedup();
                let dir = self.layout.enroll_dir();
                let gmms: HashMap<&str, DiagGmm> = models
                    .par_iter()
                    .map(|id| {
                        let path = dir.join(format!("{id}.bng"));
                        if !path.exists() {
                            return Err(missing_model(id));
                        }
                        Ok((*id, DiagGmm::load(&path)?))
                    })
                    .collect::<Result<_>>()?;
                trials
                    .trials
                    .par_iter()
                    .map(|t| llr_score(&gmms[t.enroll_id.as_str()], &ubm, &frames[&t.test_id]))
                    .collect::<Result<_>>()?
            }
            BackendKind::IvectorPlda => {
                let tv = TvModel::load(&self.layout.tv())?;
                let plda = PldaModel::load(&self.layout.plda())?;
                let models = self.load_ivector_models()?;
                let tests: HashMap<&str, DVector<f64>> = frames
                    .par_iter()
                    .map(|(u, f)| Ok((u.as_str(), Self::ivector(&tv, f)?)))
                    .collect::<Result<_>>()?;
                trials
                    .trials
                    .par_iter()
                    .map(|t| {
                        let e = models
                            .get(&t.enroll_id)
                            .ok_or_else(|| missing_model(&t.enroll_id))?;
                        plda_score(&plda, e, &tests[t.test_id.as_str()])
                    })
                    .collect::<Result<_>>()?
            }
        };
        let file = ScoreFile {
            entries: trials
                .trials
                .iter()
                .zip(scores)
                .map(|(t, s)| (t.enroll_id.clone(), t.test_id.clone(), s))
                .collect(),
        };
        let path = self.layout.scores(&self.config.system);
        ensure_dir(path.parent().unwrap())?;
        file.save(&path)?;
        Ok(vec![self.rel(&path)])
    }

    fn write_report(
        &self,
        system: &str,
        scores: &ScoreFile,
    ) -> Result<(MetricReport, Vec<String>)> {
        let report = self.report_for(system, scores)?;
        let mut trials = TrialList::load(&self.corpus_files().trials)?;
        trials.attach(scores)?;
        let genuine: Vec<f64> = trials
            .trials
            .iter()
            .filter(|t| t.label() == TrialLabel::Genuine)
            .filter_map(|t| t.score())
            .collect();
        let impostor: Vec<f64> = trials
            .trials
            .iter()
            .filter(|t| t.label() != TrialLabel::Genuine)
            .filter_map(|t| t.score())
            .collect();
        let det = det_export(&genuine, &impostor)?;
        let report_path = self.layout.report(system);
        write_text(
            &report_path,
            &format!("{}\n{}", report.to_kv(), report.to_table()),
        )?;
        let det_path = self
            .layout
            .root
            .join("reports")
            .join(format!("{system}.det.tsv"));
        write_text(&det_path, &det.to_text())?;
        Ok((report, vec![self.rel(&report_path), self.rel(&det_path)]))
    }

    fn stage_evaluate(&self) -> Result<Vec<String>> {
        let scores = ScoreFile::load(&self.layout.scores(&self.config.system))?;
        let (report, files) = self.write_report(&self.config.system, &scores)?;
        log::info!("average EER {:.3}%", report.avg_eer);
        Ok(files)
    }

    fn fuse_inputs(&self) -> Vec<PathBuf> {
        self.config
            .fuse
            .inputs
            .iter()
            .map(|p| {
                if p.is_relative() {
                    self.layout.root.join(p)
                } else {
                    p.clone()
                }
            })
            .collect()
    }

    fn stage_fuse(&self) -> Result<Vec<String>> {
        let inputs = self.fuse_inputs();
        if inputs.is_empty() {
            return Err(Error::Config("fuse.inputs lists no score files".into()));
        }
        let systems = inputs
            .iter()
            .map(|p| ScoreFile::load(p))
            .collect::<Result<Vec<_>>>()?;
        let weights = &self.config.fuse.weights;
        let fused = fuse_scores(
            &systems,
            (!weights.is_empty()).then_some(weights.as_slice()),
        )?;
        let name = format!("{}-fused", self.config.system);
        let path = self.layout.scores(&name);
        ensure_dir(path.parent().unwrap())?;
        fused.save(&path)?;
        let (report, mut files) = self.write_report(&name, &fused)?;
        log::info!("fused average EER {:.3}%", report.avg_eer);
        files.push(self.rel(&path));
        Ok(files)
    }
}

fn training_log_text(log: &TrainingLog) -> String {
    let mut s = String::from("epoch\tloss\tskipped\n");
    for (i, (l, k)) in log.epoch_losses.iter().zip(&log.skipped).enumerate() {
        s.push_str(&format!("{}\t{l}\t{k}\n", i + 1));
    }
    s
}
