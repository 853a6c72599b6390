//! Hybrid keyword + embedding retrieval.
//!
//! A store is searched through two channels: a keyword filter over an
//! inverted index (documents matching the query terms) and a cosine filter
//! over document vectors (documents whose similarity to the query exceeds
//! `tau`). The result is the union of both, ranked by semantic score with
//! keyword-only hits after.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{embed_checked, Embedder, EmbeddingVector, GatewayError};
use crate::intent::{cosine, VectorError};
use crate::text::words;

pub const DEFAULT_TAU: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Guidelines,
    Cases,
    Medications,
}

impl StoreKind {
    pub const ALL: [StoreKind; 3] = [StoreKind::Guidelines, StoreKind::Cases, StoreKind::Medications];

    pub fn as_str(self) -> &'static str {
        match self {
            StoreKind::Guidelines => "guidelines",
            StoreKind::Cases => "cases",
            StoreKind::Medications => "medications",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub id: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(skip)]
    pub store: Option<StoreKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<EmbeddingVector>,
}

impl CorpusDocument {
    pub fn new(id: &str, title: &str, body: &str) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            body: body.into(),
            tags: Vec::new(),
            store: None,
            vector: None,
        }
    }

    /// Title and body, the text that is indexed and embedded.
    pub fn text(&self) -> String {
        let mut s = String::with_capacity(self.title.len() + self.body.len() + 1);
        s.push_str(&self.title);
        if !self.title.is_empty() {
            s.push(' ');
        }
        s.push_str(&self.body);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("document {0:?} has an empty body")]
    EmptyBody(String),
    #[error("document {0:?} has no vector")]
    MissingVector(String),
    #[error("document {id:?}: {source}")]
    Vector { id: String, source: VectorError },
    #[error("text has no tokens")]
    EmptyText,
    #[error("the store has no documents")]
    EmptyCorpus,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

const DEFAULT_STOPWORDS: &str = "a about above after again against all also am an and any are as at be because been before \
being below between both but by can could did do does doing don down during each few for from further had has have \
having he her here hers herself him himself his how i if in into is it its itself just me more most my myself no nor \
not now of off on once only or other our ours ourselves out over own same she should so some such than that the their \
theirs them themselves then there these they this those through to too under until up very was we were what when where \
which while who whom why will with would you your yours yourself yourselves s t";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(BTreeSet<String>);

impl Default for Stopwords {
    fn default() -> Self {
        Self(DEFAULT_STOPWORDS.split_whitespace().map(ToString::to_string).collect())
    }
}

impl Stopwords {
    pub fn empty() -> Self {
        Self(BTreeSet::new())
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn from_lines(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Distinct non-stopword terms of `text`, sorted.
pub fn query_terms(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let set: BTreeSet<String> = words(text).into_iter().filter(|w| !stopwords.contains(w)).collect();
    set.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexStats {
    pub doc_count: usize,
    pub term_count: usize,
    pub posting_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvertedIndex {
    store: Option<StoreKind>,
    postings: BTreeMap<String, Vec<String>>,
    doc_count: usize,
}

impl InvertedIndex {
    pub fn build(store: Option<StoreKind>, docs: &[CorpusDocument], stopwords: &Stopwords) -> Result<Self, RetrievalError> {
        let mut seen = BTreeSet::new();
        let mut postings: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for d in docs {
            if !seen.insert(d.id.as_str()) {
                return Err(RetrievalError::DuplicateId(d.id.clone()));
            }
            for term in query_terms(&d.text(), stopwords) {
                postings.entry(term).or_default().insert(d.id.clone());
            }
        }
        Ok(Self {
            store,
            postings: postings.into_iter().map(|(t, ids)| (t, ids.into_iter().collect())).collect(),
            doc_count: docs.len(),
        })
    }

    pub fn store(&self) -> Option<StoreKind> {
        self.store
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn postings(&self, term: &str) -> &[String] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            doc_count: self.doc_count,
            term_count: self.postings.len(),
            posting_count: self.postings.values().map(Vec::len).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Every query term must occur in the document.
    #[default]
    All,
    /// At least one query term must occur.
    Any,
}

/// Keyword channel. An empty term list selects nothing.
pub fn keyword_retrieve(terms: &[String], index: &InvertedIndex, mode: MatchMode) -> BTreeSet<String> {
    let Some((first, rest)) = terms.split_first() else {
        return BTreeSet::new();
    };
    let mut acc: BTreeSet<String> = index.postings(first).iter().cloned().collect();
    for term in rest {
        let ids = index.postings(term);
        match mode {
            MatchMode::All => acc.retain(|id| ids.binary_search(id).is_ok()),
            MatchMode::Any => acc.extend(ids.iter().cloned()),
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
}

fn by_score_then_id(a: &Scored, b: &Scored) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.id.cmp(&b.id))
}

/// Semantic channel: documents whose cosine similarity to `query` is
/// strictly greater than `tau`, best first.
pub fn semantic_retrieve(query: &EmbeddingVector, docs: &[CorpusDocument], tau: f64) -> Result<Vec<Scored>, RetrievalError> {
    let mut out = Vec::new();
    for d in docs {
        let v = d.vector.as_ref().ok_or_else(|| RetrievalError::MissingVector(d.id.clone()))?;
        let score = cosine(&query.values, &v.values).map_err(|source| RetrievalError::Vector { id: d.id.clone(), source })?;
        if score > tau {
            out.push(Scored { id: d.id.clone(), score });
        }
    }
    out.sort_by(by_score_then_id);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Keyword channel hits, sorted by id.
    pub slice_ids: Vec<String>,
    /// Semantic channel hits, best first.
    pub match_ids: Vec<Scored>,
    /// Union of both channels: semantic hits by descending score, then
    /// keyword-only hits by id.
    pub final_ids: Vec<String>,
    pub tau_used: f64,
}

impl RetrievalResult {
    pub fn empty(tau: f64) -> Self {
        Self { slice_ids: Vec::new(), match_ids: Vec::new(), final_ids: Vec::new(), tau_used: tau }
    }
}

/// An indexed, embedded document collection.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentStore {
    kind: Option<StoreKind>,
    docs: Vec<CorpusDocument>,
    positions: BTreeMap<String, usize>,
    index: InvertedIndex,
    stopwords: Stopwords,
}

impl DocumentStore {
    /// Indexes `docs` and embeds those without a vector. Documents are kept
    /// sorted by id.
    pub fn build(
        kind: Option<StoreKind>,
        mut docs: Vec<CorpusDocument>,
        stopwords: Stopwords,
        embedder: &dyn Embedder,
    ) -> Result<Self, RetrievalError> {
        for d in &mut docs {
            if d.body.trim().is_empty() {
                return Err(RetrievalError::EmptyBody(d.id.clone()));
            }
            d.store = kind;
            if d.vector.is_none() {
                d.vector = Some(embed_checked(embedder, &d.text())?);
            }
        }
        let index = InvertedIndex::build(kind, &docs, &stopwords)?;
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        let positions = docs.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        Ok(Self { kind, docs, positions, index, stopwords })
    }

    pub fn kind(&self) -> Option<StoreKind> {
        self.kind
    }

    pub fn docs(&self) -> &[CorpusDocument] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&CorpusDocument> {
        self.positions.get(id).map(|&i| &self.docs[i])
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Runs both channels and merges them. Each probe text is matched
    /// independently on the keyword channel and the hits are unioned, so a
    /// composite query can be probed clause by clause; `query` drives the
    /// semantic channel.
    pub fn hybrid_retrieve(
        &self,
        probes: &[&str],
        query: &EmbeddingVector,
        tau: f64,
        mode: MatchMode,
    ) -> Result<RetrievalResult, RetrievalError> {
        let mut slice = BTreeSet::new();
        for probe in probes {
            slice.extend(keyword_retrieve(&query_terms(probe, &self.stopwords), &self.index, mode));
        }
        let matched = semantic_retrieve(query, &self.docs, tau)?;
        let mut final_ids: Vec<String> = matched.iter().map(|s| s.id.clone()).collect();
        let semantic: BTreeSet<&str> = matched.iter().map(|s| s.id.as_str()).collect();
        final_ids.extend(slice.iter().filter(|id| !semantic.contains(id.as_str())).cloned());
        Ok(RetrievalResult { slice_ids: slice.into_iter().collect(), match_ids: matched, final_ids, tau_used: tau })
    }
}

/// Greedy token-matching F-score between two texts.
///
/// Each token is embedded with `token_embedder`. Precision is the mean, over
/// candidate tokens, of the best cosine to any reference token; recall is the
/// same with the roles swapped; the result is their harmonic mean. Negative
/// best matches count as zero so the score stays in `[0, 1]`.
pub fn soft_f1(candidate: &str, reference: &str, token_embedder: &dyn Embedder) -> Result<f64, RetrievalError> {
    let cand = words(candidate);
    let refs = words(reference);
    if cand.is_empty() || refs.is_empty() {
        return Err(RetrievalError::EmptyText);
    }
    let mut cache: BTreeMap<&str, EmbeddingVector> = BTreeMap::new();
    for t in cand.iter().chain(&refs) {
        if !cache.contains_key(t.as_str()) {
            cache.insert(t, embed_checked(token_embedder, t)?);
        }
    }
    let best = |from: &[String], to: &[String]| -> Result<f64, RetrievalError> {
        let mut total = 0.0;
        for a in from {
            let mut m = f64::NEG_INFINITY;
            for b in to {
                let c = if a == b {
                    1.0
                } else {
                    cosine(&cache[a.as_str()].values, &cache[b.as_str()].values)
                        .map_err(|source| RetrievalError::Vector { id: a.clone(), source })?
                };
                m = m.max(c);
            }
            total += m.clamp(0.0, 1.0);
        }
        Ok(total / from.len() as f64)
    };
    let precision = best(&cand, &refs)?;
    let recall = best(&refs, &cand)?;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * precision * recall / (precision + recall)).clamp(0.0, 1.0))
}
