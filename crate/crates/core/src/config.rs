//! Pipeline configuration: one TOML table per module, unknown keys rejected.
//!
//! Relative paths are resolved against the directory holding the config file.
//! The configuration hash stamped into every model container is the SHA-256
//! of the canonical JSON form of the loaded config, with the output directory
//! left out so that the same experiment written elsewhere keeps its hash.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::{DEFAULT_COMPONENTS, DEFAULT_IVECTOR_DIM, DEFAULT_VAR_FLOOR_REL};
use crate::classifier::{ScoreSpace, TrainConfig};
use crate::corpus::{default_label_set, RenderSpec, SynthShape};
use crate::discriminant::Composition;
use crate::error::{Error, Result};
use crate::fusion::DEFAULT_CCA_DIM;
use crate::numerics::DEFAULT_RIDGE;
use crate::phonotactic::{ProjectorOptions, TermWeighting, DEFAULT_MAX_TERMS, DEFAULT_ORDERS, DEFAULT_RANK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Defaults to `manifest.jsonl` in the output directory, where
    /// `synth-data` writes it.
    pub manifest: Option<PathBuf>,
    /// Separate evaluation manifest; when absent the training manifest is
    /// split with `test_fraction`.
    pub test_manifest: Option<PathBuf>,
    pub test_fraction: f64,
    pub labels: Vec<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            manifest: None,
            test_manifest: None,
            test_fraction: 0.2,
            labels: default_label_set(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhonotacticConfig {
    pub orders: Vec<usize>,
    pub max_terms: usize,
    /// Rank of the truncated SVD.
    pub k: usize,
    pub weighting: TermWeighting,
    pub center: bool,
}

impl Default for PhonotacticConfig {
    fn default() -> Self {
        PhonotacticConfig {
            orders: DEFAULT_ORDERS.to_vec(),
            max_terms: DEFAULT_MAX_TERMS,
            k: DEFAULT_RANK,
            weighting: TermWeighting::default(),
            center: false,
        }
    }
}

impl PhonotacticConfig {
    pub fn order_set(&self) -> BTreeSet<usize> {
        self.orders.iter().copied().collect()
    }

    pub fn projector_options(&self) -> ProjectorOptions {
        ProjectorOptions {
            weighting: self.weighting,
            center: self.center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticConfig {
    pub components: usize,
    pub ubm_iters: usize,
    pub tv_iters: usize,
    pub ivector_dim: usize,
    /// Variance floor as a fraction of the pooled per-dimension variance.
    pub var_floor_rel: f64,
    pub length_norm: bool,
    /// Minimum-divergence rescaling of T after each EM iteration.
    pub min_divergence: bool,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        AcousticConfig {
            components: DEFAULT_COMPONENTS,
            ubm_iters: 10,
            tv_iters: 5,
            ivector_dim: DEFAULT_IVECTOR_DIM,
            var_floor_rel: DEFAULT_VAR_FLOOR_REL,
            length_norm: false,
            min_divergence: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcaConfig {
    pub dim: usize,
    pub ridge: f64,
}

impl Default for CcaConfig {
    fn default() -> Self {
        CcaConfig {
            dim: DEFAULT_CCA_DIM,
            ridge: DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminantConfig {
    /// Defaults to C − 1.
    pub lda_dim: Option<usize>,
    pub lda_ridge: f64,
    pub wccn_ridge: f64,
    pub order: Composition,
}

impl Default for DiscriminantConfig {
    fn default() -> Self {
        DiscriminantConfig {
            lda_dim: None,
            lda_ridge: DEFAULT_RIDGE,
            wccn_ridge: DEFAULT_RIDGE,
            order: Composition::default(),
        }
    }
}

/// Classifier settings; the shuffling seed is derived from `run.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub l1_ratio: f64,
    pub l2_ratio: f64,
    pub reg_strength: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub standardize: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ClassifierConfig {
            l1_ratio: t.l1_ratio,
            l2_ratio: t.l2_ratio,
            reg_strength: t.reg_strength,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch: t.batch,
            standardize: t.standardize,
        }
    }
}

impl ClassifierConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            l1_ratio: self.l1_ratio,
            l2_ratio: self.l2_ratio,
            reg_strength: self.reg_strength,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch: self.batch,
            seed,
            standardize: self.standardize,
        }
    }
}

/// Which system's predictions are written out as the pipeline's answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// CCA feature space followed by LDA+WCCN.
    #[default]
    Feature,
    /// Weighted combination of the X_P and X_A classifier posteriors.
    Score,
    /// Concatenation of the two LDA+WCCN spaces.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Weights of the phonotactic and acoustic posteriors.
    pub score_weights: Vec<f64>,
    pub score_space: ScoreSpace,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::default(),
            score_weights: vec![0.5, 0.5],
            score_space: ScoreSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub classes: usize,
    pub shared_dim: usize,
    pub noise_p: f64,
    pub noise_a: f64,
    pub shape: SynthShape,
    pub render: RenderSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 60,
            classes: 5,
            shared_dim: 4,
            noise_p: 1.0,
            noise_a: 1.0,
            shape: SynthShape::default(),
            render: RenderSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub phonotactic: PhonotacticConfig,
    pub acoustic: AcousticConfig,
    pub cca: CcaConfig,
    pub discriminant: DiscriminantConfig,
    pub classifier: ClassifierConfig,
    pub fusion: FusionConfig,
    pub run: RunConfig,
    pub synth: SynthConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Per-stage seeds derived from `run.seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub split: u64,
    pub ubm: u64,
    pub tv: u64,
    pub classifier: u64,
    pub synth: u64,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config {
            key: error_key(&e),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.run.out_dir)
    }

    pub fn manifest_path(&self) -> PathBuf {
        match &self.corpus.manifest {
            Some(p) => self.resolve(p),
            None => self.out_dir().join("manifest.jsonl"),
        }
    }

    pub fn seeds(&self) -> StageSeeds {
        let s = self.run.seed;
        StageSeeds {
            split: s,
            ubm: s.wrapping_add(1),
            tv: s.wrapping_add(2),
            classifier: s.wrapping_add(3),
            synth: s.wrapping_add(4),
        }
    }

    pub fn lda_dim(&self) -> usize {
        self.discriminant.lda_dim.unwrap_or(self.corpus.labels.len() - 1)
    }

    /// SHA-256 over the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> [u8; 32] {
        let mut canonical = self.clone();
        canonical.run.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes to JSON");
        Sha256::digest(&json).into()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(key, msg));

        let c = &self.corpus;
        if !(c.test_fraction > 0.0 && c.test_fraction < 1.0) {
            return bad("corpus.test_fraction", "must lie strictly between 0 and 1");
        }
        if c.labels.len() < 2 {
            return bad("corpus.labels", "need at least 2 labels");
        }
        if c.labels.iter().collect::<BTreeSet<_>>().len() != c.labels.len() {
            return bad("corpus.labels", "labels must be unique");
        }

        let p = &self.phonotactic;
        if p.orders.is_empty() || p.orders.contains(&0) {
            return bad("phonotactic.orders", "need at least one n-gram order, each ≥ 1");
        }
        if p.max_terms == 0 {
            return bad("phonotactic.max_terms", "must be at least 1");
        }
        if p.k == 0 {
            return bad("phonotactic.k", "must be at least 1");
        }

        let a = &self.acoustic;
        if a.components == 0 {
            return bad("acoustic.components", "must be at least 1");
        }
        if a.ivector_dim == 0 {
            return bad("acoustic.ivector_dim", "must be at least 1");
        }
        if !(a.var_floor_rel > 0.0) {
            return bad("acoustic.var_floor_rel", "must be positive");
        }

        if self.cca.dim == 0 {
            return bad("cca.dim", "must be at least 1");
        }
        if !(self.cca.ridge >= 0.0) {
            return bad("cca.ridge", "must be non-negative");
        }

        let d = &self.discriminant;
        if let Some(m) = d.lda_dim {
            if m == 0 || m > c.labels.len() - 1 {
                return bad("discriminant.lda_dim", "must lie in 1..=C−1");
            }
        }
        if !(d.lda_ridge >= 0.0) {
            return bad("discriminant.lda_ridge", "must be non-negative");
        }
        if !(d.wccn_ridge >= 0.0) {
            return bad("discriminant.wccn_ridge", "must be non-negative");
        }

        self.classifier.train_config(0).validate()?;

        let f = &self.fusion;
        if f.score_weights.len() != 2 {
            return bad("fusion.score_weights", "need exactly 2 weights (phonotactic, acoustic)");
        }
        if f.score_weights.iter().any(|w| !(*w >= 0.0)) || f.score_weights.iter().sum::<f64>() <= 0.0 {
            return bad("fusion.score_weights", "weights must be non-negative with a positive sum");
        }

        let s = &self.synth;
        if s.n_per_class == 0 {
            return bad("synth.n_per_class", "must be at least 1");
        }
        if s.classes < 2 {
            return bad("synth.classes", "must be at least 2");
        }
        if s.shared_dim == 0 {
            return bad("synth.shared_dim", "must be at least 1");
        }
        if !(s.noise_p >= 0.0) {
            return bad("synth.noise_p", "must be non-negative");
        }
        if !(s.noise_a >= 0.0) {
            return bad("synth.noise_a", "must be non-negative");
        }
        Ok(())
    }
}

/// Best-effort dotted key for a TOML error; unknown fields are named in the
/// message itself.
fn error_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    if let Some(rest) = msg.split('`').nth(1) {
        if msg.starts_with("unknown field") || msg.starts_with("missing field") {
            return rest.to_string();
        }
    }
    match e.span() {
        Some(span) => format!("byte {}", span.start),
        None => "<document>".into(),
    }
}

pub fn hex(hash: &[u8; 32]) -> String {
    hash.iter().map(|b| format!("{b:02x}")).collect()
}
