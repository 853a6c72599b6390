use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::elements::{Clause, ClinicalElementSet, ElementKind};
use super::rules::{rewrite_subqueries, ModelHandle, ProvenanceEntry, RewriteConfig, RuleSet, StandardizeError, StandardizedQuery, Subquery};
use crate::gateway::{embed_checked, Embedder, GatewayError};
use crate::grammar::TokenSequence;
use crate::intent::Stage;
use crate::retrieval::{soft_f1, DocumentStore, MatchMode, RetrievalError};
use crate::text::words;

pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContextError {
    #[error("the guideline store has no documents")]
    EmptyCorpus,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDocument {
    pub id: String,
    pub title: String,
    pub body: String,
    pub score: f64,
}

/// Retrieves guideline candidates for the extracted elements and keeps the
/// `k` whose body best matches the element text by soft F-score.
///
/// Each element surface is a keyword probe; the joined element text drives
/// the semantic channel and the scoring. No elements means no context.
pub fn assemble_context(
    elements: &ClinicalElementSet,
    guidelines: &DocumentStore,
    embedder: &dyn Embedder,
    k: usize,
    tau: f64,
    mode: MatchMode,
) -> Result<Vec<ContextDocument>, ContextError> {
    if guidelines.is_empty() {
        return Err(ContextError::EmptyCorpus);
    }
    if elements.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let reference = elements.joined();
    let qvec = embed_checked(embedder, &reference)?;
    let found = guidelines.hybrid_retrieve(&elements.surfaces(), &qvec, tau, mode)?;
    let mut scored = Vec::with_capacity(found.final_ids.len());
    for id in &found.final_ids {
        let doc = guidelines.get(id).expect("retrieved ids come from the store");
        let score = soft_f1(&doc.body, &reference, embedder)?;
        scored.push(ContextDocument { id: doc.id.clone(), title: doc.title.clone(), body: doc.body.clone(), score });
    }
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.id.cmp(&b.id)));
    scored.truncate(k);
    Ok(scored)
}

const MEDICAMENT_CUES: &[&str] = &[
    "dose", "dosage", "drug", "drugs", "medication", "medications", "medicine", "pill", "pills", "tablet", "tablets",
    "prescription", "prescribed", "mg", "interaction", "interactions", "contraindication", "contraindications",
];
const POST_CUES: &[&str] = &[
    "recovery", "recover", "recovering", "rehabilitation", "rehab", "exercise", "exercises", "diet", "lifestyle",
    "care", "follow", "discharge", "prevent", "prevention",
];
const PRE_CUES: &[&str] = &["department", "clinic", "specialist", "appointment", "risk", "urgent", "emergency", "triage"];
const DIAGNOSIS_CUES: &[&str] = &["diagnose", "diagnosis", "cause", "causes", "test", "results", "disease", "serious"];

/// Target stage for a subquery: cue words first, then the kinds of elements
/// it contains, else diagnosis.
pub fn stage_hint(text: &str, kinds: &[ElementKind]) -> Stage {
    let ws = words(text);
    let has = |cues: &[&str]| ws.iter().any(|w| cues.contains(&w.as_str()));
    if has(MEDICAMENT_CUES) {
        return Stage::Medicament;
    }
    if has(POST_CUES) {
        return Stage::PostDiagnosis;
    }
    if has(PRE_CUES) {
        return Stage::PreDiagnosis;
    }
    if has(DIAGNOSIS_CUES) {
        return Stage::Diagnosis;
    }
    if kinds.contains(&ElementKind::Medication) {
        return Stage::Medicament;
    }
    if kinds.iter().any(|k| matches!(k, ElementKind::History | ElementKind::Demographic)) && !kinds.iter().any(|k| matches!(k, ElementKind::Symptom | ElementKind::Condition)) {
        return Stage::PreDiagnosis;
    }
    Stage::Diagnosis
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrompterMode {
    /// Clause texts become subqueries verbatim.
    #[default]
    Deterministic,
    /// Each clause is rewritten by the model with the context attached.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedQuery {
    pub subqueries: Vec<Subquery>,
    /// Surviving subqueries in stage order, joined by `"; "`.
    pub merged_text: String,
    pub sweeps: usize,
    pub converged: bool,
    pub provenance: Vec<ProvenanceEntry>,
}

impl RefinedQuery {
    /// A refined query that is just `text`, for runs that skip refinement.
    pub fn passthrough(text: &str) -> Self {
        let stage = stage_hint(text, &[]);
        Self {
            subqueries: if text.trim().is_empty() { Vec::new() } else { alloc::vec![Subquery { text: text.to_string(), stage }] },
            merged_text: text.to_string(),
            sweeps: 0,
            converged: true,
            provenance: Vec::new(),
        }
    }
}

const PROMPTER_SYSTEM: &str = "You are the query prompter of a medical consultation system. Rewrite the clause as one self-contained subquery, using the full query and the guideline excerpts for context. Reply with the subquery only.";

fn prompter_message(clause: &str, query: &str, context: &[ContextDocument]) -> String {
    let mut s = format!("Clause: {clause}\nFull query: {query}\nGuidelines:\n");
    if context.is_empty() {
        s.push_str("(none)\n");
    }
    for d in context {
        s.push_str(&format!("- {}: {}\n", d.title, d.body));
    }
    s
}

/// Builds one candidate subquery per clause and runs the rule set over the
/// list to a fixed point.
#[allow(clippy::too_many_arguments)]
pub fn construct_refined(
    std: &StandardizedQuery,
    tokens: &TokenSequence,
    clauses: &[Clause],
    elements: &ClinicalElementSet,
    context: &[ContextDocument],
    rules: &RuleSet,
    config: &RewriteConfig,
    prompter: PrompterMode,
    model: Option<ModelHandle<'_>>,
) -> Result<RefinedQuery, StandardizeError> {
    let mut candidates = Vec::with_capacity(clauses.len());
    for clause in clauses {
        let verbatim = clause.text(tokens);
        let kinds: Vec<ElementKind> = elements.within(*clause).map(|e| e.kind).collect();
        let text = match (prompter, model) {
            (PrompterMode::Model, Some(m)) => {
                let reply = m.ask("prompter", PROMPTER_SYSTEM, prompter_message(verbatim, &std.text, context))?;
                if reply.is_empty() { verbatim.to_string() } else { reply }
            }
            _ => verbatim.to_string(),
        };
        let stage = stage_hint(&text, &kinds);
        candidates.push(Subquery { text, stage });
    }
    if candidates.is_empty() && !std.text.trim().is_empty() {
        candidates.push(Subquery { text: std.text.clone(), stage: stage_hint(&std.text, &[]) });
    }
    let hint = |t: &str| stage_hint(t, &[]);
    let outcome = rewrite_subqueries(candidates, rules, config, model, &hint)?;
    let mut ordered: Vec<&Subquery> = outcome.subqueries.iter().collect();
    ordered.sort_by_key(|s| s.stage);
    let merged_text = ordered.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("; ");
    Ok(RefinedQuery {
        subqueries: outcome.subqueries,
        merged_text,
        sweeps: outcome.sweeps,
        converged: outcome.converged,
        provenance: outcome.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::HashEmbedder;
    use crate::grammar::{tokenize, Lexicon};
    use crate::retrieval::{CorpusDocument, Stopwords, DEFAULT_TAU};
    use crate::standardizer::elements::{extract_elements, ElementLexicon};
    use crate::standardizer::rules::{RewriteRule, RuleKind};
    use alloc::vec;

    fn store(docs: Vec<CorpusDocument>) -> DocumentStore {
        DocumentStore::build(None, docs, Stopwords::default(), &HashEmbedder::new(64, 3)).unwrap()
    }

    fn elements_of(text: &str, lex: &ElementLexicon) -> (TokenSequence, ClinicalElementSet) {
        let seq = tokenize(text, &Lexicon::new());
        let n = seq.len();
        let set = extract_elements(&seq, &[Clause { from: 0, to: n }], lex);
        (seq, set)
    }

    #[test]
    fn empty_elements_and_empty_corpus() {
        let lex = ElementLexicon::new();
        let (_, none) = elements_of("hello", &lex);
        let s = store(vec![CorpusDocument::new("g1", "t", "fever")]);
        let e = HashEmbedder::new(64, 3);
        assert!(assemble_context(&none, &s, &e, 3, DEFAULT_TAU, MatchMode::All).unwrap().is_empty());
        let empty = store(vec![]);
        assert_eq!(assemble_context(&none, &empty, &e, 3, DEFAULT_TAU, MatchMode::All), Err(ContextError::EmptyCorpus));
    }

    #[test]
    fn verbatim_document_ranks_first() {
        let lex: ElementLexicon = [("fever", ElementKind::Symptom), ("stiff neck", ElementKind::Symptom)].into_iter().collect();
        let (_, set) = elements_of("fever with a stiff neck", &lex);
        let s = store(vec![
            CorpusDocument::new("g1", "Fever", "fever in adults usually resolves"),
            CorpusDocument::new("g2", "Meningitis", "fever stiff neck"),
            CorpusDocument::new("g3", "Neck", "a stiff neck after sleeping"),
        ]);
        let ctx = assemble_context(&set, &s, &HashEmbedder::new(64, 3), 3, DEFAULT_TAU, MatchMode::Any).unwrap();
        assert_eq!(ctx[0].id, "g2");
        assert!((ctx[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_clause_is_its_own_subquery() {
        let seq = tokenize("persistent dry cough", &Lexicon::new());
        let std = StandardizedQuery::passthrough("persistent dry cough");
        let r = construct_refined(
            &std,
            &seq,
            &[Clause { from: 0, to: 3 }],
            &ClinicalElementSet::default(),
            &[],
            &RuleSet::empty(),
            &RewriteConfig::default(),
            PrompterMode::Deterministic,
            None,
        )
        .unwrap();
        assert_eq!(r.subqueries.len(), 1);
        assert_eq!(r.merged_text, "persistent dry cough");
    }

    #[test]
    fn merged_text_follows_stage_order() {
        let seq = tokenize("what dosage of ibuprofen, and which department should I visit", &Lexicon::new());
        let clauses = [Clause { from: 0, to: 4 }, Clause { from: 6, to: seq.len() }];
        let rules = RuleSet::new(vec![RewriteRule::new("overlap", RuleKind::OverlapRemoval)]).unwrap();
        let r = construct_refined(
            &StandardizedQuery::passthrough(seq.source()),
            &seq,
            &clauses,
            &ClinicalElementSet::default(),
            &[],
            &rules,
            &RewriteConfig::default(),
            PrompterMode::Deterministic,
            None,
        )
        .unwrap();
        assert_eq!(r.merged_text, "which department should I visit; what dosage of ibuprofen");
        assert_eq!(r.subqueries[0].stage, Stage::Medicament);
    }

    #[test]
    fn hints() {
        assert_eq!(stage_hint("my knee", &[ElementKind::Medication]), Stage::Medicament);
        assert_eq!(stage_hint("history of asthma", &[ElementKind::History]), Stage::PreDiagnosis);
        assert_eq!(stage_hint("rehab plan", &[ElementKind::Symptom]), Stage::PostDiagnosis);
        assert_eq!(stage_hint("rash", &[]), Stage::Diagnosis);
    }
}
