//! Engine configuration: a TOML file with sections, plus command-line
//! overrides that take precedence over the file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. The API key is read from the environment only and has no config
//! key.

use std::path::{Path, PathBuf};

use medaide_core::pipeline::Recognizer;
use medaide_core::protocol::{SynthesisMode, MAX_STAGES, MIN_STAGES};
use medaide_core::retrieval::{MatchMode, StoreKind};
use medaide_core::standardizer::PrompterMode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{key}: path {} does not exist", path.display())]
    MissingPath { key: String, path: PathBuf },
    #[error("{key} = {value} is outside {range}")]
    OutOfRange { key: String, value: String, range: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// HTTP backends; needs `MEDAIDE_API_KEY` unless the endpoint is open.
    Live,
    /// Scripted replies, no network.
    Mock,
    /// Recorded replies only; any miss is an error.
    Replay,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Live => "live",
            Profile::Mock => "mock",
            Profile::Replay => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Hash,
    /// Embedding-file lookup with hash fallback for unknown keys.
    File,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrototypeSource {
    /// Mean of the embedded exemplar texts per intent.
    Exemplars,
    /// Vectors stored in the embedding file under the intent ids.
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackKind {
    Miss,
    Echo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub grammar: Option<String>,
    pub lexicon: Option<String>,
    pub elements: Option<String>,
    pub input_rules: Option<String>,
    pub constructor_rules: Option<String>,
    pub taxonomy: Option<String>,
    pub exemplars: Option<String>,
    pub embedding_file: Option<String>,
    pub plan: Option<String>,
    /// Directory holding `plan-<k>.json` for `--stages k`.
    pub plans_dir: Option<String>,
    pub templates: Option<String>,
    pub stopwords: Option<String>,
    /// Ingested stores, indexes, and by default profiles and traces.
    pub data_dir: Option<String>,
    pub profiles: Option<String>,
    pub traces: Option<String>,
}

/// Corpus files per store. Stores left unset fall back to
/// `<data_dir>/stores/<kind>.jsonl` when that file exists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoresSection {
    pub guidelines: Option<String>,
    pub cases: Option<String>,
    pub medications: Option<String>,
}

impl StoresSection {
    pub fn get(&self, kind: StoreKind) -> Option<&String> {
        match kind {
            StoreKind::Guidelines => self.guidelines.as_ref(),
            StoreKind::Cases => self.cases.as_ref(),
            StoreKind::Medications => self.medications.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub profile: Profile,
    /// Mock script, JSONL.
    pub script: Option<String>,
    pub mock_fallback: FallbackKind,
    pub echo_words: usize,
    pub cassette: Option<String>,
    /// Record mock or live traffic into the cassette.
    pub record: bool,
    pub base_url: String,
    pub chat_model: String,
    pub embed_model: String,
    pub retries: u32,
    pub timeout_secs: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            profile: Profile::Mock,
            script: None,
            mock_fallback: FallbackKind::Echo,
            echo_words: 24,
            cassette: None,
            record: false,
            base_url: "http://127.0.0.1:8000/v1".into(),
            chat_model: "medaide-chat".into(),
            embed_model: "medaide-embed".into(),
            retries: 1,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub kind: EmbeddingKind,
    pub dimension: usize,
    pub seed: u64,
    pub prototypes: PrototypeSource,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self { kind: EmbeddingKind::Hash, dimension: 256, seed: 0, prototypes: PrototypeSource::Exemplars }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdsSection {
    pub intent: f64,
    pub tau: f64,
    pub tau_guidelines: Option<f64>,
    pub tau_cases: Option<f64>,
    pub tau_medications: Option<f64>,
    pub max_sweeps: usize,
    pub top_k: usize,
    pub overlap: f64,
    pub min_tokens: usize,
    /// EMA weight of the previous session vector in chat mode.
    pub smoothing: f64,
    pub context_limit: usize,
    pub match_mode: MatchMode,
}

impl Default for ThresholdsSection {
    fn default() -> Self {
        Self {
            intent: medaide_core::intent::DEFAULT_THRESHOLD,
            tau: medaide_core::retrieval::DEFAULT_TAU,
            tau_guidelines: None,
            tau_cases: None,
            tau_medications: None,
            max_sweeps: 16,
            top_k: medaide_core::standardizer::DEFAULT_TOP_K,
            overlap: 0.6,
            min_tokens: 2,
            smoothing: 0.0,
            context_limit: 5,
            match_mode: MatchMode::All,
        }
    }
}

impl ThresholdsSection {
    pub fn store_tau(&self, kind: StoreKind) -> Option<f64> {
        match kind {
            StoreKind::Guidelines => self.tau_guidelines,
            StoreKind::Cases => self.tau_cases,
            StoreKind::Medications => self.tau_medications,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Stage granularity; unset means `paths.plan` or the built-in
    /// four-stage plan.
    pub stages: Option<usize>,
    pub no_rie: bool,
    pub recognizer: Recognizer,
    pub decision_analysis: bool,
    pub synthesis: SynthesisMode,
    pub prompter: PrompterMode,
    pub model_rules: bool,
    pub parallelism: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            stages: None,
            no_rie: false,
            recognizer: Recognizer::Prototype,
            decision_analysis: true,
            synthesis: SynthesisMode::Model,
            prompter: PrompterMode::Deterministic,
            model_rules: false,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub paths: PathsSection,
    pub stores: StoresSection,
    pub backend: BackendSection,
    pub embedding: EmbeddingSection,
    pub thresholds: ThresholdsSection,
    pub pipeline: PipelineSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line flags that override the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub stages: Option<usize>,
    pub threshold: Option<f64>,
    pub tau: Option<f64>,
    pub no_rie: bool,
    pub recognizer: Option<Recognizer>,
    pub no_decision_analysis: bool,
    pub seed: Option<u64>,
}

impl EngineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: EngineConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: base_dir.to_path_buf(), message: e.to_string() })?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = o.profile {
            self.backend.profile = p;
        }
        if let Some(k) = o.stages {
            self.pipeline.stages = Some(k);
        }
        if let Some(t) = o.threshold {
            self.thresholds.intent = t;
        }
        if let Some(t) = o.tau {
            self.thresholds.tau = t;
            self.thresholds.tau_guidelines = None;
            self.thresholds.tau_cases = None;
            self.thresholds.tau_medications = None;
        }
        if o.no_rie {
            self.pipeline.no_rie = true;
        }
        if let Some(r) = o.recognizer {
            self.pipeline.recognizer = r;
        }
        if o.no_decision_analysis {
            self.pipeline.decision_analysis = false;
        }
        if let Some(s) = o.seed {
            self.embedding.seed = s;
        }
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve(self.paths.data_dir.as_deref().unwrap_or("data"))
    }

    pub fn profiles_dir(&self) -> PathBuf {
        match &self.paths.profiles {
            Some(p) => self.resolve(p),
            None => self.data_dir().join("profiles"),
        }
    }

    pub fn traces_path(&self) -> PathBuf {
        match &self.paths.traces {
            Some(p) => self.resolve(p),
            None => self.data_dir().join("traces.jsonl"),
        }
    }

    pub fn ingested_store(&self, kind: StoreKind) -> PathBuf {
        self.data_dir().join("stores").join(format!("{}.jsonl", kind.as_str()))
    }

    /// The corpus file backing `kind`, if any.
    pub fn store_path(&self, kind: StoreKind) -> Option<PathBuf> {
        match self.stores.get(kind) {
            Some(p) => Some(self.resolve(p)),
            None => Some(self.ingested_store(kind)).filter(|p| p.exists()),
        }
    }

    /// The plan file for the effective granularity; `None` selects the
    /// built-in four-stage plan.
    pub fn plan_path(&self) -> Result<Option<PathBuf>, ConfigError> {
        match self.pipeline.stages {
            None => Ok(self.paths.plan.as_deref().map(|p| self.resolve(p))),
            Some(k) => {
                if let Some(dir) = &self.paths.plans_dir {
                    let p = self.resolve(dir).join(format!("plan-{k}.json"));
                    if p.exists() {
                        return Ok(Some(p));
                    }
                }
                if k == 4 {
                    return Ok(self.paths.plan.as_deref().map(|p| self.resolve(p)));
                }
                Err(ConfigError::Invalid(format!("no plan file for {k} stages (looked for plan-{k}.json in paths.plans_dir)")))
            }
        }
    }

    /// Checks that every referenced input exists and every knob is in
    /// range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.paths;
        let inputs = [
            ("paths.grammar", &p.grammar),
            ("paths.lexicon", &p.lexicon),
            ("paths.elements", &p.elements),
            ("paths.input_rules", &p.input_rules),
            ("paths.constructor_rules", &p.constructor_rules),
            ("paths.taxonomy", &p.taxonomy),
            ("paths.exemplars", &p.exemplars),
            ("paths.embedding_file", &p.embedding_file),
            ("paths.plan", &p.plan),
            ("paths.plans_dir", &p.plans_dir),
            ("paths.templates", &p.templates),
            ("paths.stopwords", &p.stopwords),
            ("stores.guidelines", &self.stores.guidelines),
            ("stores.cases", &self.stores.cases),
            ("stores.medications", &self.stores.medications),
            ("backend.script", &self.backend.script),
        ];
        for (key, value) in inputs {
            if let Some(v) = value {
                let path = self.resolve(v);
                if !path.exists() {
                    return Err(ConfigError::MissingPath { key: key.into(), path });
                }
            }
        }
        if let Some(c) = &self.backend.cassette {
            let path = self.resolve(c);
            if self.backend.profile == Profile::Replay && !path.exists() {
                return Err(ConfigError::MissingPath { key: "backend.cassette".into(), path });
            }
        }
        if self.backend.profile == Profile::Replay && self.backend.cassette.is_none() {
            return Err(ConfigError::Invalid("the replay profile needs backend.cassette".into()));
        }
        if self.backend.record && self.backend.cassette.is_none() {
            return Err(ConfigError::Invalid("backend.record needs backend.cassette".into()));
        }
        for (key, path) in [("paths.grammar", &p.grammar), ("paths.lexicon", &p.lexicon)] {
            if path.is_none() {
                return Err(ConfigError::Invalid(format!("{key} is required")));
            }
        }
        if self.embedding.kind == EmbeddingKind::File && p.embedding_file.is_none() {
            return Err(ConfigError::Invalid("embedding.kind = \"file\" needs paths.embedding_file".into()));
        }
        if self.embedding.prototypes == PrototypeSource::File && p.embedding_file.is_none() {
            return Err(ConfigError::Invalid("embedding.prototypes = \"file\" needs paths.embedding_file".into()));
        }
        if self.embedding.prototypes == PrototypeSource::Exemplars && p.exemplars.is_none() {
            return Err(ConfigError::Invalid("embedding.prototypes = \"exemplars\" needs paths.exemplars".into()));
        }

        let t = &self.thresholds;
        real("thresholds.intent", t.intent, 0.0, 1.0, false)?;
        real("thresholds.tau", t.tau, -1.0, 1.0, true)?;
        for kind in StoreKind::ALL {
            if let Some(v) = t.store_tau(kind) {
                real(&format!("thresholds.tau_{}", kind.as_str()), v, -1.0, 1.0, true)?;
            }
        }
        real("thresholds.overlap", t.overlap, 0.0, 1.0, true)?;
        real("thresholds.smoothing", t.smoothing, 0.0, 1.0, false)?;
        int("thresholds.max_sweeps", t.max_sweeps, 1, 1000)?;
        int("thresholds.top_k", t.top_k, 1, 100)?;
        int("thresholds.min_tokens", t.min_tokens, 1, 100)?;
        int("thresholds.context_limit", t.context_limit, 1, 100)?;
        int("embedding.dimension", self.embedding.dimension, 1, 65_536)?;
        int("backend.echo_words", self.backend.echo_words, 1, 10_000)?;
        int("backend.retries", self.backend.retries as usize, 0, 10)?;
        int("pipeline.parallelism", self.pipeline.parallelism, 1, 256)?;
        if let Some(k) = self.pipeline.stages {
            int("pipeline.stages", k, MIN_STAGES, MAX_STAGES)?;
        }
        self.plan_path()?;
        Ok(())
    }
}

fn real(key: &str, v: f64, lo: f64, hi: f64, inclusive: bool) -> Result<(), ConfigError> {
    let ok = v.is_finite() && v >= lo && if inclusive { v <= hi } else { v < hi };
    if ok {
        Ok(())
    } else {
        let close = if inclusive { ']' } else { ')' };
        Err(ConfigError::OutOfRange { key: key.into(), value: v.to_string(), range: format!("[{lo}, {hi}{close}") })
    }
}

fn int(key: &str, v: usize, lo: usize, hi: usize) -> Result<(), ConfigError> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange { key: key.into(), value: v.to_string(), range: format!("[{lo}, {hi}]") })
    }
}
