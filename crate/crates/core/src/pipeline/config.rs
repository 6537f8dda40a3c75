use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SyntheticCorpusSpec;
use crate::error::{Error, Result};
use crate::eval::CostParams;
use crate::frontend::FrontendConfig;
use crate::gmm::{MapPosteriors, UbmConfig};
use crate::ivector::TvConfig;
use crate::losses::{LossHyper, LossKind};
use crate::net::{Activation, TrainConfig};
use crate::targets::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetsSection {
    pub scheme: Scheme,
    /// Spliced frames per input row (odd).
    pub context: usize,
    pub utcl_classes: usize,
    pub stcl_classes: usize,
    /// Frames per sTCL chunk.
    pub stcl_chunk: usize,
    /// How many frames ahead APC predicts.
    pub apc_shift: usize,
}

impl Default for TargetsSection {
    fn default() -> Self {
        TargetsSection {
            scheme: Scheme::Speaker,
            context: 11,
            utcl_classes: 10,
            stcl_classes: 10,
            stcl_chunk: 6,
            apc_shift: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Hidden widths of the feed-forward network.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Output width for embedding losses; logit losses use the class count.
    pub embedding_dim: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: vec![128; 4],
            activation: Activation::Gelu,
            embedding_dim: 64,
            gru_hidden: 64,
            gru_layers: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub kind: String,
    #[serde(flatten)]
    pub hyper: LossHyper,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            kind: LossKind::CrossEntropy.name().to_string(),
            hyper: LossHyper::default(),
        }
    }
}

impl LossSection {
    pub fn kind(&self) -> Result<LossKind> {
        LossKind::parse(&self.kind)
            .ok_or_else(|| Error::Config(format!("unknown loss kind `{}`", self.kind)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    /// Bottleneck features from the trained network.
    Bottleneck,
    /// Front-end features fed straight to the back end.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BottleneckSection {
    pub source: FeatureSource,
    /// 1-based hidden layers; several layers are concatenated.
    pub layers: Vec<usize>,
    pub pca_dim: usize,
}

impl Default for BottleneckSection {
    fn default() -> Self {
        BottleneckSection {
            source: FeatureSource::Bottleneck,
            layers: vec![2],
            pca_dim: 57,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    GmmUbm,
    IvectorPlda,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::GmmUbm => "gmm-ubm",
            BackendKind::IvectorPlda => "ivector-plda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub components: usize,
    pub ubm_iterations: usize,
    pub init_subsample: usize,
    pub kmeans_iterations: usize,
    pub variance_floor: f64,
    pub relevance: f64,
    pub map_iterations: usize,
    pub map_posteriors: MapPosteriors,
    pub ivector_rank: usize,
    pub tv_iterations: usize,
    pub plda_iterations: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        let ubm = UbmConfig::default();
        let tv = TvConfig::default();
        BackendSection {
            kind: BackendKind::GmmUbm,
            components: ubm.components,
            ubm_iterations: ubm.iterations,
            init_subsample: ubm.init_subsample,
            kmeans_iterations: ubm.kmeans_iterations,
            variance_floor: ubm.variance_floor,
            relevance: 10.0,
            map_iterations: 3,
            map_posteriors: MapPosteriors::Evolving,
            ivector_rank: tv.rank,
            tv_iterations: tv.iterations,
            plda_iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseSection {
    /// Score files to combine; relative paths resolve against the stage directory.
    pub inputs: Vec<PathBuf>,
    /// Empty means equal weights.
    pub weights: Vec<f64>,
}

/// Corpus lists. Empty paths mean the synthetic corpus under `<stage-dir>/corpus`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Every utterance: `utt \t speaker \t phrase \t path` (WAV or BNF1).
    pub manifest: Option<PathBuf>,
    /// Utterance ids used to train the network, PCA, UBM, T and PLDA.
    pub background: Option<PathBuf>,
    /// `model_id \t utterance_id` enrollment pairs.
    pub enroll: Option<PathBuf>,
    pub trials: Option<PathBuf>,
}

/// One experiment. Serialised as TOML with one table per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name used for score and report files.
    pub system: String,
    /// Master seed for every trainable stage.
    pub seed: u64,
    pub corpus: SyntheticCorpusSpec,
    pub paths: PathsSection,
    pub frontend: FrontendConfig,
    pub targets: TargetsSection,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub loss: LossSection,
    pub bottleneck: BottleneckSection,
    pub backend: BackendSection,
    pub eval: CostParams,
    pub fuse: FuseSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: "spkr-bn".to_string(),
            seed: 1,
            corpus: SyntheticCorpusSpec::default(),
            paths: PathsSection::default(),
            frontend: FrontendConfig::default(),
            targets: TargetsSection::default(),
            network: NetworkSection::default(),
            train: TrainConfig::default(),
            loss: LossSection::default(),
            bottleneck: BottleneckSection::default(),
            backend: BackendSection::default(),
            eval: CostParams::default(),
            fuse: FuseSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// The desk-scale synthetic benchmark: 4×128 GELU network trained with
    /// cross-entropy on speaker labels, 64-component GMM-UBM back end.
    pub fn synthetic_benchmark() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.system = "spkr-bn-ce-gelu".into();
        cfg.backend.components = 64;
        cfg.backend.ivector_rank = 40;
        cfg.train.epochs = 6;
        cfg.train.learning_rate = 0.002;
        cfg
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Seed for one consumer, derived from the master seed.
    pub fn seed_for(&self, purpose: &str) -> u64 {
        super::stages::fnv1a(&[&self.seed.to_le_bytes(), purpose.as_bytes()])
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        self.loss.kind()
    }

    pub fn uses_network(&self) -> bool {
        self.bottleneck.source == FeatureSource::Bottleneck
    }

    pub fn ubm_config(&self) -> UbmConfig {
        UbmConfig {
            components: self.backend.components,
            iterations: self.backend.ubm_iterations,
            seed: self.seed_for("ubm"),
            init_subsample: self.backend.init_subsample,
            kmeans_iterations: self.backend.kmeans_iterations,
            variance_floor: self.backend.variance_floor,
        }
    }

    pub fn tv_config(&self) -> TvConfig {
        TvConfig {
            rank: self.backend.ivector_rank,
            iterations: self.backend.tv_iterations,
            seed: self.seed_for("tv"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed_for("train"),
            ..self.train.clone()
        }
    }

    /// Checks every section and the constraints between them.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.system.is_empty() || self.system.contains(['/', '\\', '\t', '\n']) {
            return cfg_err(format!(
                "system name {:?} is not a usable file stem",
                self.system
            ));
        }
        self.corpus.validate()?;
        self.frontend.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        let kind = self.loss_kind()?;
        let t = &self.targets;
        if t.context == 0 || t.context % 2 == 0 {
            return cfg_err(format!("targets.context must be odd, got {}", t.context));
        }
        if t.utcl_classes == 0 || t.stcl_classes == 0 || t.stcl_chunk == 0 || t.apc_shift == 0 {
            return cfg_err("target class counts, chunk and shift must be positive".into());
        }
        let n = &self.network;
        if n.hidden.is_empty() || n.hidden.contains(&0) {
            return cfg_err("network.hidden needs at least one positive width".into());
        }
        if n.embedding_dim == 0 || n.gru_hidden == 0 || n.gru_layers == 0 {
            return cfg_err("network widths must be positive".into());
        }
        if n.activation == Activation::Linear {
            return cfg_err("hidden activation must be sigmoid, relu or gelu".into());
        }

        let apc = t.scheme == Scheme::Apc;
        if apc != (kind == LossKind::L1) {
            return cfg_err(format!(
                "scheme `{}` cannot be trained with loss `{}`: APC pairs with l1 and l1 only with APC",
                t.scheme.name(),
                kind.name()
            ));
        }
        if kind == LossKind::Orthogonal && !apc {
            // Class count is only known once targets exist; the embedding must
            // at least cover the configured TCL class count.
            let classes = match t.scheme {
                Scheme::Utcl => Some(t.utcl_classes),
                Scheme::Stcl => Some(t.stcl_classes),
                _ => None,
            };
            if let Some(c) = classes.filter(|&c| c > n.embedding_dim) {
                return cfg_err(format!(
                    "osl needs embedding_dim >= classes, got {} < {c}",
                    n.embedding_dim
                ));
            }
        }

        let b = &self.bottleneck;
        if self.uses_network() {
            if b.layers.is_empty() {
                return cfg_err("bottleneck.layers is empty".into());
            }
            let depth = if apc { n.gru_layers } else { n.hidden.len() };
            if let Some(&bad) = b.layers.iter().find(|&&l| l == 0 || l > depth) {
                return cfg_err(format!("bottleneck layer {bad} outside 1..={depth}"));
            }
            let width: usize = b
                .layers
                .iter()
                .map(|&l| if apc { n.gru_hidden } else { n.hidden[l - 1] })
                .sum();
            if b.pca_dim == 0 || b.pca_dim > width {
                return cfg_err(format!(
                    "bottleneck.pca_dim must lie in 1..={width}, got {}",
                    b.pca_dim
                ));
            }
        }

        let be = &self.backend;
        if be.components == 0
            || be.ubm_iterations == 0
            || be.kmeans_iterations == 0
            || be.init_subsample == 0
        {
            return cfg_err("backend UBM sizes and iteration counts must be positive".into());
        }
        if !(be.variance_floor > 0.0) || !(be.relevance > 0.0) || be.map_iterations == 0 {
            return cfg_err("variance_floor, relevance and map_iterations must be positive".into());
        }
        if be.kind == BackendKind::IvectorPlda
            && (be.ivector_rank == 0 || be.tv_iterations == 0 || be.plda_iterations == 0)
        {
            return cfg_err("i-vector rank and iteration counts must be positive".into());
        }
        if !self.fuse.weights.is_empty() && self.fuse.weights.len() != self.fuse.inputs.len() {
            return cfg_err(format!(
                "{} fusion weights for {} inputs",
                self.fuse.weights.len(),
                self.fuse.inputs.len()
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for cfg in [
            ExperimentConfig::default(),
            ExperimentConfig::synthetic_benchmark(),
        ] {
            cfg.validate().unwrap();
            let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn sections_are_one_level_deep() {
        let text = ExperimentConfig::default().to_toml();
        for line in text.lines().filter(|l| l.starts_with('[')) {
            assert!(!line.trim_matches(['[', ']']).contains('.'), "{line}");
        }
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::parse(
            "seed = 9\n[backend]\ncomponents = 16\n[loss]\nkind = \"focal\"\nfocal_gamma = 1.5\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.backend.components, 16);
        assert_eq!(cfg.backend.relevance, 10.0);
        assert_eq!(cfg.loss.kind().unwrap(), LossKind::Focal);
        assert_eq!(cfg.loss.hyper.focal_gamma, 1.5);
    }

    #[test]
    fn cross_field_rules() {
        let apc_ce = "[targets]\nscheme = \"apc\"\n";
        assert!(matches!(
            ExperimentConfig::parse(apc_ce),
            Err(Error::Config(_))
        ));
        let l1_speaker = "[loss]\nkind = \"l1\"\n";
        assert!(ExperimentConfig::parse(l1_speaker).is_err());
        let apc =
            "[targets]\nscheme = \"apc\"\n[loss]\nkind = \"l1\"\n[bottleneck]\nlayers = [3]\n";
        ExperimentConfig::parse(apc).unwrap();
        assert!(ExperimentConfig::parse("[bottleneck]\nlayers = [5]\n").is_err());
        assert!(ExperimentConfig::parse("[bottleneck]\npca_dim = 129\n").is_err());
        ExperimentConfig::parse("[bottleneck]\nlayers = [1, 3]\npca_dim = 200\n").unwrap();
        assert!(ExperimentConfig::parse("[targets]\ncontext = 10\n").is_err());
        assert!(ExperimentConfig::parse("[loss]\nkind = \"hinge\"\n").is_err());
        assert!(ExperimentConfig::parse("unknown_key = 1\n").is_err());
        let osl = "[targets]\nscheme = \"utcl\"\nutcl_classes = 80\n[loss]\nkind = \"osl\"\n";
        assert!(ExperimentConfig::parse(osl).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_purpose() {
        let cfg = ExperimentConfig::default();
        assert_ne!(cfg.seed_for("train"), cfg.seed_for("ubm"));
        let other = ExperimentConfig {
            seed: 2,
            ..cfg.clone()
        };
        assert_ne!(cfg.seed_for("train"), other.seed_for("train"));
    }
}
