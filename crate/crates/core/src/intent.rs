//! Prototype-based intent activation.
//!
//! A query vector is compared with one prototype vector per intent by cosine
//! similarity, the similarities are turned into a distribution with a
//! softmax, and every intent whose probability exceeds the threshold is
//! activated. When none does, the most probable intent is activated alone.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{embed_checked, ChatBackend, ChatMessage, ChatRequest, Embedder, EmbeddingVector, FileEmbedder, GatewayError};

pub const DEFAULT_THRESHOLD: f64 = 0.10;

/// The four consultation phases every intent belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "pre-diagnosis")]
    PreDiagnosis,
    #[serde(rename = "diagnosis")]
    Diagnosis,
    #[serde(rename = "medicament")]
    Medicament,
    #[serde(rename = "post-diagnosis")]
    PostDiagnosis,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::PreDiagnosis, Stage::Diagnosis, Stage::Medicament, Stage::PostDiagnosis];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PreDiagnosis => "pre-diagnosis",
            Stage::Diagnosis => "diagnosis",
            Stage::Medicament => "medicament",
            Stage::PostDiagnosis => "post-diagnosis",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub id: String,
    pub label: String,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("taxonomy has no intents")]
    Empty,
    #[error("duplicate intent id {0:?}")]
    DuplicateId(String),
}

/// Ordered intent list; positions index similarity and probability vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntentTaxonomy {
    intents: Vec<Intent>,
    #[serde(skip)]
    positions: BTreeMap<String, usize>,
}

const DEFAULT_INTENTS: [(&str, &str, Stage); 17] = [
    ("pre_diagnosis.symptom_triage", "Symptom triage", Stage::PreDiagnosis),
    ("pre_diagnosis.department_suggestion", "Department suggestion", Stage::PreDiagnosis),
    ("pre_diagnosis.risk_assessment", "Risk assessment", Stage::PreDiagnosis),
    ("pre_diagnosis.health_inquiry", "Health inquiry", Stage::PreDiagnosis),
    ("diagnosis.disease_inquiry", "Disease inquiry", Stage::Diagnosis),
    ("diagnosis.symptom_analysis", "Symptom analysis", Stage::Diagnosis),
    ("diagnosis.test_interpretation", "Test interpretation", Stage::Diagnosis),
    ("diagnosis.etiology_detection", "Etiology detection", Stage::Diagnosis),
    ("diagnosis.differential_diagnosis", "Differential diagnosis", Stage::Diagnosis),
    ("diagnosis.severity_assessment", "Severity assessment", Stage::Diagnosis),
    ("medicament.drug_counseling", "Drug counseling", Stage::Medicament),
    ("medicament.dosage_recommendation", "Dosage recommendation", Stage::Medicament),
    ("medicament.contraindication_check", "Contraindication check", Stage::Medicament),
    ("medicament.drug_interaction", "Drug interaction", Stage::Medicament),
    ("post_diagnosis.rehabilitation_advice", "Rehabilitation advice", Stage::PostDiagnosis),
    ("post_diagnosis.care_support", "Care support", Stage::PostDiagnosis),
    ("post_diagnosis.lifestyle_guidance", "Lifestyle guidance", Stage::PostDiagnosis),
];

impl Default for IntentTaxonomy {
    /// The built-in 17-intent taxonomy.
    fn default() -> Self {
        let intents = DEFAULT_INTENTS
            .iter()
            .map(|(id, label, stage)| Intent { id: (*id).into(), label: (*label).into(), stage: *stage })
            .collect();
        Self::new(intents).expect("built-in taxonomy is valid")
    }
}

impl IntentTaxonomy {
    pub fn new(intents: Vec<Intent>) -> Result<Self, TaxonomyError> {
        if intents.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        let mut positions = BTreeMap::new();
        for (i, intent) in intents.iter().enumerate() {
            if positions.insert(intent.id.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateId(intent.id.clone()));
            }
        }
        Ok(Self { intents, positions })
    }

    pub fn intents(&self) -> &[Intent] {
        &self.intents
    }

    pub fn len(&self) -> usize {
        self.intents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intents.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Intent> {
        self.position(id).map(|i| &self.intents[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.intents.iter().map(|i| i.id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// `u·v / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, VectorError> {
    if u.len() != v.len() {
        return Err(VectorError::DimensionMismatch { left: u.len(), right: v.len() });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(VectorError::ZeroNorm);
    }
    Ok((dot / (libm::sqrt(nu) * libm::sqrt(nv))).clamp(-1.0, 1.0))
}

/// Softmax, shifted by the maximum for numerical range.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| libm::exp(x - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrototypeError {
    #[error("no prototype for intent {0:?}")]
    Missing(String),
    #[error("prototype {id:?}: {source}")]
    Vector { id: String, source: VectorError },
    #[error("exemplar for unknown intent {0:?}")]
    UnknownIntent(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One vector per taxonomy intent, in taxonomy order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeStore {
    dimension: usize,
    vectors: Vec<EmbeddingVector>,
}

impl PrototypeStore {
    /// `vectors` must hold exactly the taxonomy's ids; extra keys are ignored.
    pub fn new(taxonomy: &IntentTaxonomy, mut vectors: BTreeMap<String, EmbeddingVector>) -> Result<Self, PrototypeError> {
        let mut ordered = Vec::with_capacity(taxonomy.len());
        for id in taxonomy.ids() {
            let v = vectors.remove(id).ok_or_else(|| PrototypeError::Missing(id.to_string()))?;
            ordered.push(v);
        }
        let dimension = ordered[0].dim();
        for (id, v) in taxonomy.ids().zip(&ordered) {
            if v.dim() != dimension {
                return Err(PrototypeError::Vector {
                    id: id.to_string(),
                    source: VectorError::DimensionMismatch { left: dimension, right: v.dim() },
                });
            }
            if v.norm() == 0.0 || !v.is_finite() {
                return Err(PrototypeError::Vector { id: id.to_string(), source: VectorError::ZeroNorm });
            }
        }
        Ok(Self { dimension, vectors: ordered })
    }

    /// Reads prototypes stored under the intent ids of an embedding file.
    pub fn from_file(taxonomy: &IntentTaxonomy, file: &FileEmbedder) -> Result<Self, PrototypeError> {
        let mut map = BTreeMap::new();
        for id in taxonomy.ids() {
            let v = file.lookup(id).ok_or_else(|| PrototypeError::Missing(id.to_string()))?;
            map.insert(id.to_string(), v);
        }
        Self::new(taxonomy, map)
    }

    /// Embeds `(intent id, text)` exemplars; an intent with several
    /// exemplars gets their mean vector.
    pub fn from_exemplars(
        taxonomy: &IntentTaxonomy,
        exemplars: &[(String, String)],
        embedder: &dyn Embedder,
    ) -> Result<Self, PrototypeError> {
        let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for (id, text) in exemplars {
            if taxonomy.position(id).is_none() {
                return Err(PrototypeError::UnknownIntent(id.clone()));
            }
            let v = embed_checked(embedder, text)?;
            let entry = sums.entry(id.clone()).or_insert_with(|| (vec![0.0; v.dim()], 0));
            if entry.0.len() != v.dim() {
                return Err(PrototypeError::Vector {
                    id: id.clone(),
                    source: VectorError::DimensionMismatch { left: entry.0.len(), right: v.dim() },
                });
            }
            entry.0.iter_mut().zip(&v.values).for_each(|(s, x)| *s += x);
            entry.1 += 1;
        }
        let map = sums
            .into_iter()
            .map(|(id, (sum, n))| {
                let mean = sum.into_iter().map(|s| s / n as f64).collect();
                (id, EmbeddingVector::new(mean, "exemplar-mean"))
            })
            .collect();
        Self::new(taxonomy, map)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentDistribution {
    pub similarities: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Cosine against every prototype, then softmax over those similarities.
pub fn intent_distribution(query: &EmbeddingVector, store: &PrototypeStore) -> Result<IntentDistribution, VectorError> {
    let similarities = store
        .vectors
        .iter()
        .map(|p| cosine(&query.values, &p.values))
        .collect::<Result<Vec<_>, _>>()?;
    let probabilities = softmax(&similarities);
    Ok(IntentDistribution { similarities, probabilities })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentActivation {
    pub similarities: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Activated intent ids in taxonomy order.
    pub activated: Vec<String>,
    pub threshold_used: f64,
    pub fallback_applied: bool,
}

impl IntentActivation {
    pub fn activated_set(&self) -> BTreeSet<&str> {
        self.activated.iter().map(String::as_str).collect()
    }

    /// Stages of the activated intents, in stage order.
    pub fn stages(&self, taxonomy: &IntentTaxonomy) -> Vec<Stage> {
        let set: BTreeSet<Stage> = self.activated.iter().filter_map(|id| taxonomy.get(id)).map(|i| i.stage).collect();
        set.into_iter().collect()
    }
}

/// Activates every intent with probability strictly above `threshold`, or the
/// first most probable intent when none qualifies.
pub fn activate(dist: &IntentDistribution, taxonomy: &IntentTaxonomy, threshold: f64) -> IntentActivation {
    let mut activated: Vec<String> = taxonomy
        .intents()
        .iter()
        .zip(&dist.probabilities)
        .filter(|(_, &p)| p > threshold)
        .map(|(i, _)| i.id.clone())
        .collect();
    let fallback_applied = activated.is_empty();
    if fallback_applied {
        let mut best = 0;
        for (i, &p) in dist.probabilities.iter().enumerate() {
            if p > dist.probabilities[best] {
                best = i;
            }
        }
        activated.push(taxonomy.intents()[best].id.clone());
    }
    IntentActivation {
        similarities: dist.similarities.clone(),
        probabilities: dist.probabilities.clone(),
        activated,
        threshold_used: threshold,
        fallback_applied,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntentError {
    #[error("embedding failed: {0}")]
    Embed(GatewayError),
    #[error("recognizer call failed: {0}")]
    Gateway(GatewayError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("unparseable recognizer reply: {0:?}")]
    UnparseableReply(String),
    #[error("threshold {0} outside [0, 1)")]
    InvalidThreshold(f64),
    #[error("smoothing weight {0} outside [0, 1)")]
    InvalidSmoothing(f64),
    #[error("query dimension {query} does not match prototype dimension {store}")]
    DimensionMismatch { query: usize, store: usize },
}

/// Running exponential average of query vectors across turns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Smoothing {
    state: Option<Vec<f64>>,
}

impl Smoothing {
    /// `λ·previous + (1−λ)·current`; the first turn passes through.
    pub fn update(&mut self, current: &EmbeddingVector, lambda: f64) -> EmbeddingVector {
        let next: Vec<f64> = match &self.state {
            Some(prev) if lambda > 0.0 && prev.len() == current.dim() => {
                prev.iter().zip(&current.values).map(|(p, c)| lambda * p + (1.0 - lambda) * c).collect()
            }
            _ => current.values.clone(),
        };
        self.state = Some(next.clone());
        EmbeddingVector::new(next, current.source.clone())
    }

    pub fn reset(&mut self) {
        self.state = None;
    }
}

#[derive(Debug, Clone)]
pub struct IntentMatcher {
    taxonomy: IntentTaxonomy,
    store: PrototypeStore,
    threshold: f64,
    smoothing: f64,
}

impl IntentMatcher {
    pub fn new(taxonomy: IntentTaxonomy, store: PrototypeStore, threshold: f64, smoothing: f64) -> Result<Self, IntentError> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(IntentError::InvalidThreshold(threshold));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(IntentError::InvalidSmoothing(smoothing));
        }
        Ok(Self { taxonomy, store, threshold, smoothing })
    }

    pub fn taxonomy(&self) -> &IntentTaxonomy {
        &self.taxonomy
    }

    pub fn store(&self) -> &PrototypeStore {
        &self.store
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Embeds `query`, optionally folds it into the session average, and
    /// activates intents.
    pub fn match_query(
        &self,
        query: &str,
        embedder: &dyn Embedder,
        session: Option<&mut Smoothing>,
    ) -> Result<IntentActivation, IntentError> {
        let mut v = embed_checked(embedder, query).map_err(IntentError::Embed)?;
        if v.dim() != self.store.dimension() {
            return Err(IntentError::DimensionMismatch { query: v.dim(), store: self.store.dimension() });
        }
        if let Some(s) = session {
            v = s.update(&v, self.smoothing);
        }
        let dist = intent_distribution(&v, &self.store)?;
        Ok(activate(&dist, &self.taxonomy, self.threshold))
    }
}

/// Builds the classification request used by the prompt recognizer.
pub fn classification_request(query: &str, taxonomy: &IntentTaxonomy, model: &str) -> ChatRequest {
    let mut listing = String::new();
    for intent in taxonomy.intents() {
        listing.push_str(&format!("- {}: {}\n", intent.id, intent.label));
    }
    let system = "You are an intent classifier for medical consultations. Answer with the ids of every intent the \
                  query expresses, separated by commas, and nothing else.";
    let user = format!("Intents:\n{listing}\nQuery: {query}");
    ChatRequest::new(model, vec![ChatMessage::system(system), ChatMessage::user(user)])
}

/// Parses a comma- or newline-separated list of known intent ids.
pub fn parse_intent_list(reply: &str, taxonomy: &IntentTaxonomy) -> Result<Vec<String>, IntentError> {
    let mut seen = BTreeSet::new();
    for item in reply.split([',', '\n']).map(str::trim).filter(|s| !s.is_empty()) {
        let pos = taxonomy.position(item).ok_or_else(|| IntentError::UnparseableReply(reply.to_string()))?;
        seen.insert(pos);
    }
    if seen.is_empty() {
        return Err(IntentError::UnparseableReply(reply.to_string()));
    }
    Ok(seen.into_iter().map(|p| taxonomy.intents()[p].id.clone()).collect())
}

/// Prompt-based recognizer. Probabilities are uniform over the activated
/// intents and zero elsewhere; similarities are reported as zero.
pub fn match_via_prompt(
    query: &str,
    taxonomy: &IntentTaxonomy,
    backend: &dyn ChatBackend,
    model: &str,
) -> Result<IntentActivation, IntentError> {
    let reply = backend.chat(&classification_request(query, taxonomy, model)).map_err(IntentError::Gateway)?;
    let activated = parse_intent_list(&reply.content, taxonomy)?;
    let share = 1.0 / activated.len() as f64;
    let probabilities = taxonomy
        .ids()
        .map(|id| if activated.iter().any(|a| a == id) { share } else { 0.0 })
        .collect();
    Ok(IntentActivation {
        similarities: vec![0.0; taxonomy.len()],
        probabilities,
        activated,
        threshold_used: 0.0,
        fallback_applied: false,
    })
}
