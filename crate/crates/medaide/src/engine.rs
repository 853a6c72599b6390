//! Builds a ready-to-run [`Pipeline`] and its backends from an
//! [`EngineConfig`], and hosts the store maintenance commands.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use medaide_core::gateway::{
    ChatBackend, Embedder, FileEmbedder, GatewayError, HashEmbedder, LayeredEmbedder, MockChat, MockFallback,
};
use medaide_core::intent::{IntentMatcher, IntentTaxonomy, PrototypeStore, Smoothing};
use medaide_core::pipeline::{Consultation, Pipeline, PipelineConfig, PipelineError};
use medaide_core::protocol::{KnowledgeBase, PatientProfile, ProtocolSettings, StagePlan, TemplateSet};
use medaide_core::retrieval::{DocumentStore, IndexStats, InvertedIndex, Stopwords, StoreKind};
use medaide_core::standardizer::{RewriteConfig, RuleSet};
use serde::Serialize;
use thiserror::Error;

use crate::cassette::{Cassette, CassetteChat, CassetteEmbedder, CassetteMode};
use crate::config::{ConfigError, EmbeddingKind, EngineConfig, FallbackKind, Profile, PrototypeSource};
use crate::formats::{self, FormatError};
use crate::http::{HttpBackend, HttpEmbedder, HttpTransport, OfflineTransport, ReqwestTransport};
use crate::stores::{ProfileStore, StoreError, TraceStore};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("input: {0}")]
    Format(#[from] FormatError),
    #[error("configuration: {0}")]
    Setup(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("store {0:?} has no documents")]
    EmptyCorpus(String),
}

impl EngineError {
    /// 2 for configuration problems, 3 for pipeline and backend failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            EngineError::Config(_) | EngineError::Format(_) | EngineError::Setup(_) => 2,
            EngineError::Backend(_) | EngineError::Pipeline(_) | EngineError::Store(_) | EngineError::EmptyCorpus(_) => 3,
        }
    }
}

pub struct Engine {
    pub config: EngineConfig,
    pub pipeline: Pipeline,
    pub backend: Arc<dyn ChatBackend>,
    pub embedder: Arc<dyn Embedder>,
    pub cassette: Option<Arc<Cassette>>,
    pub profiles: ProfileStore,
    pub traces: TraceStore,
}

impl Engine {
    /// Builds with the real HTTP transport for the live profile and an
    /// offline one otherwise.
    pub fn build(config: EngineConfig) -> Result<Self, EngineError> {
        let transport: Arc<dyn HttpTransport> = match config.backend.profile {
            Profile::Live => Arc::new(
                ReqwestTransport::new(Duration::from_secs(config.backend.timeout_secs))
                    .map_err(|e| EngineError::Setup(e.to_string()))?,
            ),
            Profile::Mock | Profile::Replay => Arc::new(OfflineTransport),
        };
        Self::build_with(config, transport)
    }

    pub fn build_with(config: EngineConfig, transport: Arc<dyn HttpTransport>) -> Result<Self, EngineError> {
        config.validate()?;
        let b = &config.backend;
        let cassette = match (&b.cassette, b.profile, b.record) {
            (Some(path), Profile::Replay, _) => Some(Arc::new(Cassette::open(&config.resolve(path), CassetteMode::Replay)?)),
            (Some(path), _, true) => Some(Arc::new(Cassette::open(&config.resolve(path), CassetteMode::Record)?)),
            _ => None,
        };

        let backend: Arc<dyn ChatBackend> = match b.profile {
            Profile::Live => {
                let http: Arc<dyn ChatBackend> = Arc::new(HttpBackend::new(transport.clone(), &b.base_url, b.retries));
                wrap_chat(&cassette, http)
            }
            Profile::Mock => {
                let script = match &b.script {
                    Some(p) => formats::load_script(&config.resolve(p))?,
                    None => Vec::new(),
                };
                let fallback = match b.mock_fallback {
                    FallbackKind::Miss => MockFallback::Miss,
                    FallbackKind::Echo => MockFallback::Echo { max_words: b.echo_words },
                };
                wrap_chat(&cassette, Arc::new(MockChat::new(script, fallback)))
            }
            Profile::Replay => {
                // The inner backend exists only to keep the wiring identical
                // to record mode; replay never calls it.
                let http: Arc<dyn ChatBackend> = Arc::new(HttpBackend::new(transport.clone(), &b.base_url, b.retries));
                wrap_chat(&cassette, http)
            }
        };

        let e = &config.embedding;
        let file = match &config.paths.embedding_file {
            Some(p) => Some(FileEmbedder::new(formats::load_embedding_file(&config.resolve(p))?)),
            None => None,
        };
        let embedder: Arc<dyn Embedder> = match e.kind {
            EmbeddingKind::Hash => Arc::new(HashEmbedder::new(e.dimension, e.seed)),
            EmbeddingKind::File => {
                let file = file.clone().expect("validated: embedding file present");
                if file.vectors().dimension() != e.dimension {
                    return Err(EngineError::Setup(format!(
                        "embedding.dimension is {} but the embedding file has dimension {}",
                        e.dimension,
                        file.vectors().dimension()
                    )));
                }
                let layered = LayeredEmbedder::new(file, HashEmbedder::new(e.dimension, e.seed))
                    .map_err(|err| EngineError::Setup(err.to_string()))?;
                Arc::new(layered)
            }
            EmbeddingKind::Http => {
                if b.profile == Profile::Mock {
                    return Err(EngineError::Setup("embedding.kind = \"http\" needs the live or replay profile".into()));
                }
                let http: Arc<dyn Embedder> =
                    Arc::new(HttpEmbedder::new(transport.clone(), &b.base_url, &b.embed_model, e.dimension, b.retries));
                match &cassette {
                    Some(c) => Arc::new(CassetteEmbedder::new(c.clone(), &b.embed_model, e.dimension, Some(http))),
                    None => http,
                }
            }
        };

        let taxonomy = match &config.paths.taxonomy {
            Some(p) => formats::load_taxonomy(&config.resolve(p))?,
            None => IntentTaxonomy::default(),
        };
        let prototypes = match e.prototypes {
            PrototypeSource::File => PrototypeStore::from_file(&taxonomy, file.as_ref().expect("validated: embedding file present"))
                .map_err(|err| EngineError::Setup(format!("prototypes: {err}")))?,
            PrototypeSource::Exemplars => {
                let path = config.resolve(config.paths.exemplars.as_deref().expect("validated: exemplars present"));
                let exemplars = formats::load_exemplars(&path)?;
                PrototypeStore::from_exemplars(&taxonomy, &exemplars, embedder.as_ref())
                    .map_err(|err| EngineError::Backend(format!("prototypes: {err}")))?
            }
        };
        let t = &config.thresholds;
        let matcher = IntentMatcher::new(taxonomy.clone(), prototypes, t.intent, t.smoothing)
            .map_err(|err| EngineError::Setup(err.to_string()))?;

        let p = &config.paths;
        let stopwords = match &p.stopwords {
            Some(path) => formats::load_stopwords(&config.resolve(path))?,
            None => Stopwords::default(),
        };
        let lexicon = formats::load_lexicon(&config.resolve(p.lexicon.as_deref().expect("validated")))?;
        let grammar = formats::load_grammar(&config.resolve(p.grammar.as_deref().expect("validated")))?;
        let elements = match &p.elements {
            Some(path) => formats::load_element_lexicon(&config.resolve(path))?,
            None => Default::default(),
        };
        let rules = |path: &Option<String>| -> Result<RuleSet, EngineError> {
            Ok(match path {
                Some(path) => formats::load_rules(&config.resolve(path))?,
                None => RuleSet::empty(),
            })
        };
        let input_rules = rules(&p.input_rules)?;
        let constructor_rules = rules(&p.constructor_rules)?;
        let rewrite = RewriteConfig {
            max_sweeps: t.max_sweeps,
            overlap_threshold: t.overlap,
            min_tokens: t.min_tokens,
            stopwords: stopwords.clone(),
        };
        let plan = match config.plan_path()? {
            Some(path) => formats::load_plan(&path, &taxonomy)?,
            None => StagePlan::four_stage(&taxonomy).map_err(|err| EngineError::Setup(format!("built-in plan: {err}")))?,
        };
        let templates = match &p.templates {
            Some(dir) => formats::load_templates(&config.resolve(dir))?,
            None => TemplateSet::default(),
        };

        let mut knowledge = KnowledgeBase::new();
        knowledge.default_tau = t.tau;
        knowledge.mode = t.match_mode;
        knowledge.context_limit = t.context_limit;
        for kind in StoreKind::ALL {
            if let Some(tau) = t.store_tau(kind) {
                knowledge.set_tau(kind, tau);
            }
            let Some(path) = config.store_path(kind) else { continue };
            let docs = formats::load_corpus(&path)?;
            if docs.is_empty() {
                continue;
            }
            let store = DocumentStore::build(Some(kind), docs, stopwords.clone(), embedder.as_ref())
                .map_err(|err| EngineError::Backend(format!("{} store: {err}", kind.as_str())))?;
            knowledge.insert(store);
        }

        let pl = &config.pipeline;
        let pipeline = Pipeline {
            lexicon,
            grammar,
            elements,
            input_rules,
            constructor_rules,
            rewrite,
            matcher,
            plan,
            templates,
            knowledge,
            protocol: ProtocolSettings { model: b.chat_model.clone(), decision_analysis: pl.decision_analysis, synthesis: pl.synthesis },
            config: PipelineConfig {
                no_rie: pl.no_rie,
                recognizer: pl.recognizer,
                model_rules: pl.model_rules,
                prompter: pl.prompter,
                top_k: t.top_k,
                rewrite_model: b.chat_model.clone(),
                recognizer_model: b.chat_model.clone(),
            },
        };
        let profiles = ProfileStore::new(&config.profiles_dir());
        let traces = TraceStore::new(&config.traces_path());
        Ok(Self { config, pipeline, backend, embedder, cassette, profiles, traces })
    }

    pub fn run(
        &self,
        query: &str,
        profile: Option<&PatientProfile>,
        smoothing: Option<&mut Smoothing>,
    ) -> Result<Consultation, PipelineError> {
        self.pipeline.run(query, profile, self.backend.as_ref(), self.embedder.as_ref(), smoothing)
    }

    /// `run` with a caller-chosen session id.
    pub fn run_session(
        &self,
        session: &str,
        query: &str,
        profile: Option<&PatientProfile>,
        smoothing: Option<&mut Smoothing>,
    ) -> Result<Consultation, PipelineError> {
        self.pipeline.run_session(session, query, profile, self.backend.as_ref(), self.embedder.as_ref(), smoothing)
    }
}

fn wrap_chat(cassette: &Option<Arc<Cassette>>, inner: Arc<dyn ChatBackend>) -> Arc<dyn ChatBackend> {
    match cassette {
        Some(c) => Arc::new(CassetteChat::new(c.clone(), Some(inner))),
        None => inner,
    }
}

impl From<GatewayError> for EngineError {
    fn from(e: GatewayError) -> Self {
        EngineError::Backend(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub store: String,
    pub documents: usize,
    pub path: PathBuf,
}

/// Validates `corpus` and persists it as the `kind` store.
pub fn ingest(config: &EngineConfig, kind: StoreKind, corpus: &std::path::Path) -> Result<IngestSummary, EngineError> {
    let docs = formats::load_corpus(corpus)?;
    let rows: Vec<serde_json::Value> = docs
        .iter()
        .map(|d| serde_json::json!({"id": d.id, "title": d.title, "body": d.body, "tags": d.tags}))
        .collect();
    let path = config.ingested_store(kind);
    formats::write_jsonl(&path, &rows)?;
    Ok(IngestSummary { store: kind.as_str().to_string(), documents: docs.len(), path })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexFile {
    pub store: String,
    pub stats: IndexStats,
    pub postings: BTreeMap<String, Vec<String>>,
}

/// Builds the inverted index of the `kind` store and writes it under
/// `<data_dir>/indexes`. Rebuilding an unchanged store gives the same file.
pub fn index(config: &EngineConfig, kind: StoreKind) -> Result<(IndexFile, PathBuf), EngineError> {
    let source = config
        .store_path(kind)
        .ok_or_else(|| EngineError::Setup(format!("store {:?} has not been ingested", kind.as_str())))?;
    let docs = formats::load_corpus(&source)?;
    if docs.is_empty() {
        return Err(EngineError::EmptyCorpus(kind.as_str().to_string()));
    }
    let stopwords = match &config.paths.stopwords {
        Some(p) => formats::load_stopwords(&config.resolve(p))?,
        None => Stopwords::default(),
    };
    let index = InvertedIndex::build(Some(kind), &docs, &stopwords)
        .map_err(|e| EngineError::Setup(format!("{}: {e}", source.display())))?;
    let postings = index.terms().map(|t| (t.to_string(), index.postings(t).to_vec())).collect();
    let file = IndexFile { store: kind.as_str().to_string(), stats: index.stats(), postings };
    let path = config.data_dir().join("indexes").join(format!("{}.json", kind.as_str()));
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| EngineError::Setup(e.to_string()))?;
    text.push('\n');
    formats::write_atomic(&path, text.as_bytes())?;
    Ok((file, path))
}
