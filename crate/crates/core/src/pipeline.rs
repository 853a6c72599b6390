//! End-to-end consultation: extraction, intent matching, collaboration.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatBackend, Embedder};
use crate::grammar::{parse, tokenize, CoverSpan, Grammar, Lexicon, ParseError};
use crate::intent::{match_via_prompt, IntentActivation, IntentError, IntentMatcher, Smoothing};
use crate::protocol::{
    plan_stages, run_session, KnowledgeBase, PatientProfile, ProtocolContext, ProtocolSettings, ProtocolTrace,
    SessionFailure, StageKnowledge, StageOutput, StagePlan, TemplateSet,
};
use crate::retrieval::{MatchMode, StoreKind};
use crate::standardizer::{
    assemble_context, construct_refined, extract_elements, segment_clauses, standardize, ClinicalElementSet,
    ContextDocument, ContextError, ElementLexicon, ModelHandle, PrompterMode, RefinedQuery, RewriteConfig, RuleSet,
    StandardizeError, StandardizedQuery, DEFAULT_TOP_K,
};
use crate::text::sha256_hex;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recognizer {
    /// Prototype similarity, softmax and threshold.
    #[default]
    Prototype,
    /// Ask the chat model for a label list.
    Prompt,
}

impl Recognizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Recognizer::Prototype => "prototype",
            Recognizer::Prompt => "prompt",
        }
    }
}

/// Run-time switches. The defaults give the full pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Skip extraction and match intents on the raw query.
    pub no_rie: bool,
    pub recognizer: Recognizer,
    /// Route model-backed rewrite rules through the chat backend.
    pub model_rules: bool,
    pub prompter: PrompterMode,
    pub top_k: usize,
    pub rewrite_model: String,
    pub recognizer_model: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            no_rie: false,
            recognizer: Recognizer::Prototype,
            model_rules: false,
            prompter: PrompterMode::Deterministic,
            top_k: DEFAULT_TOP_K,
            rewrite_model: "medaide-chat".into(),
            recognizer_model: "medaide-chat".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("empty query")]
    EmptyQuery,
    #[error("standardization: {0}")]
    Standardize(#[from] StandardizeError),
    #[error("guideline context: {0}")]
    Context(#[from] ContextError),
    #[error("intent matching: {0}")]
    Intent(#[from] IntentError),
    #[error("collaboration: {}", .0.error)]
    Protocol(Box<SessionFailure>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseSummary {
    pub accepted: bool,
    /// Rendered tree when the query parsed.
    pub tree: Option<String>,
    /// Partial constituents when it did not.
    pub cover: Vec<CoverSpan>,
}

/// Everything one consultation produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consultation {
    pub session: String,
    pub query: String,
    pub standardized: StandardizedQuery,
    pub parse: ParseSummary,
    pub clauses: Vec<String>,
    pub elements: ClinicalElementSet,
    pub context: Vec<ContextDocument>,
    pub refined: RefinedQuery,
    pub activation: IntentActivation,
    pub stages: Vec<String>,
    pub outputs: Vec<StageOutput>,
    pub knowledge: Vec<Vec<StageKnowledge>>,
    pub response: String,
    pub trace: ProtocolTrace,
}

/// `s-` and the first 12 hex digits of the query's SHA-256.
pub fn session_id(query: &str) -> String {
    let mut s = String::from("s-");
    s.push_str(&sha256_hex(query.as_bytes())[..12]);
    s
}

/// Loaded resources for the three phases. Immutable once built and shareable
/// between concurrent sessions.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub lexicon: Lexicon,
    pub grammar: Grammar,
    pub elements: ElementLexicon,
    pub input_rules: RuleSet,
    pub constructor_rules: RuleSet,
    pub rewrite: RewriteConfig,
    pub matcher: IntentMatcher,
    pub plan: StagePlan,
    pub templates: TemplateSet,
    pub knowledge: KnowledgeBase,
    pub protocol: ProtocolSettings,
    pub config: PipelineConfig,
}

/// The extraction phase's results.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub standardized: StandardizedQuery,
    pub parse: ParseSummary,
    pub clauses: Vec<String>,
    pub elements: ClinicalElementSet,
    pub context: Vec<ContextDocument>,
    pub refined: RefinedQuery,
}

impl Pipeline {
    /// Standardize, parse, segment, extract, retrieve guideline context and
    /// construct the refined query.
    pub fn extract(&self, query: &str, backend: &dyn ChatBackend, embedder: &dyn Embedder) -> Result<Extraction, PipelineError> {
        if self.config.no_rie {
            return Ok(Extraction {
                standardized: StandardizedQuery::passthrough(query),
                parse: ParseSummary { accepted: false, tree: None, cover: Vec::new() },
                clauses: Vec::new(),
                elements: ClinicalElementSet::default(),
                context: Vec::new(),
                refined: RefinedQuery::passthrough(query),
            });
        }
        let handle = ModelHandle { backend, model: &self.config.rewrite_model };
        let model = self.config.model_rules.then_some(handle);
        let standardized = standardize(query, &self.input_rules, &self.rewrite, model)?;
        let tokens = tokenize(&standardized.text, &self.lexicon);
        let parsed = if tokens.is_empty() { Err(ParseError::EmptyInput) } else { parse(&tokens, &self.grammar) };
        let clauses = segment_clauses(&parsed, &tokens, &self.grammar);
        let elements = extract_elements(&tokens, &clauses, &self.elements);
        let context = match self.knowledge.get(StoreKind::Guidelines) {
            Some(store) => assemble_context(
                &elements,
                store,
                embedder,
                self.config.top_k,
                self.knowledge.tau(StoreKind::Guidelines),
                MatchMode::Any,
            )?,
            None => Vec::new(),
        };
        let prompter_model = (self.config.prompter == PrompterMode::Model).then_some(handle);
        let refined = construct_refined(
            &standardized,
            &tokens,
            &clauses,
            &elements,
            &context,
            &self.constructor_rules,
            &self.rewrite,
            self.config.prompter,
            model.or(prompter_model),
        )?;
        let parse = match &parsed {
            Ok(tree) => ParseSummary { accepted: true, tree: Some(tree.render(&tokens)), cover: Vec::new() },
            Err(ParseError::NoParse { cover }) => ParseSummary { accepted: false, tree: None, cover: cover.clone() },
            Err(ParseError::EmptyInput) => ParseSummary { accepted: false, tree: None, cover: Vec::new() },
        };
        let clause_texts = clauses.iter().map(|c| c.text(&tokens).to_string()).collect();
        Ok(Extraction { standardized, parse, clauses: clause_texts, elements, context, refined })
    }

    pub fn recognize(
        &self,
        text: &str,
        backend: &dyn ChatBackend,
        embedder: &dyn Embedder,
        smoothing: Option<&mut Smoothing>,
    ) -> Result<IntentActivation, PipelineError> {
        Ok(match self.config.recognizer {
            Recognizer::Prototype => self.matcher.match_query(text, embedder, smoothing)?,
            Recognizer::Prompt => match_via_prompt(text, self.matcher.taxonomy(), backend, &self.config.recognizer_model)?,
        })
    }

    /// Runs a full consultation under the default session id.
    pub fn run(
        &self,
        query: &str,
        profile: Option<&PatientProfile>,
        backend: &dyn ChatBackend,
        embedder: &dyn Embedder,
        smoothing: Option<&mut Smoothing>,
    ) -> Result<Consultation, PipelineError> {
        self.run_session(&session_id(query), query, profile, backend, embedder, smoothing)
    }

    pub fn run_session(
        &self,
        session: &str,
        query: &str,
        profile: Option<&PatientProfile>,
        backend: &dyn ChatBackend,
        embedder: &dyn Embedder,
        smoothing: Option<&mut Smoothing>,
    ) -> Result<Consultation, PipelineError> {
        if query.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        let ex = self.extract(query, backend, embedder)?;
        let focus = if ex.refined.merged_text.trim().is_empty() { query } else { ex.refined.merged_text.as_str() };
        let activation = self.recognize(focus, backend, embedder, smoothing)?;
        let selected = plan_stages(&activation, &self.plan);
        let ctx = ProtocolContext {
            plan: &self.plan,
            templates: &self.templates,
            knowledge: &self.knowledge,
            backend,
            embedder,
            settings: &self.protocol,
        };
        let outcome = run_session(&ctx, session, &selected, focus, &ex.elements, profile)
            .map_err(PipelineError::Protocol)?;
        Ok(Consultation {
            session: session.to_string(),
            query: query.to_string(),
            standardized: ex.standardized,
            parse: ex.parse,
            clauses: ex.clauses,
            elements: ex.elements,
            context: ex.context,
            refined: ex.refined,
            activation,
            stages: selected.iter().map(|&i| self.plan.stages()[i].id.clone()).collect(),
            outputs: outcome.outputs,
            knowledge: outcome.knowledge,
            response: outcome.response,
            trace: outcome.trace,
        })
    }
}
