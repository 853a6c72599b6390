use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatBackend, ChatMessage, ChatRequest, GatewayError};
use crate::intent::Stage;
use crate::retrieval::{query_terms, Stopwords};
use crate::text::{collapse_whitespace, short_hash};

pub const DEFAULT_MAX_SWEEPS: usize = 16;
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.6;
pub const DEFAULT_MIN_TOKENS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    SubqueryFilter,
    OverlapRemoval,
    Consolidation,
    GrammaticalNormalization,
    IntentPrioritization,
    FormatStandardization,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::SubqueryFilter => "subquery-filter",
            RuleKind::OverlapRemoval => "overlap-removal",
            RuleKind::Consolidation => "consolidation",
            RuleKind::GrammaticalNormalization => "grammatical-normalization",
            RuleKind::IntentPrioritization => "intent-prioritization",
            RuleKind::FormatStandardization => "format-standardization",
        }
    }

    /// Kinds that rewrite a single text; the rest act on subquery lists.
    pub fn is_text_level(self) -> bool {
        matches!(self, RuleKind::GrammaticalNormalization | RuleKind::FormatStandardization)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleMode {
    #[default]
    Deterministic,
    ModelBacked,
}

/// One rewrite rule.
///
/// Payload by kind:
/// - grammatical-normalization, format-standardization: with `pattern`,
///   replace every literal occurrence by `template` (empty if absent);
///   without, the built-in normalization for the kind.
/// - subquery-filter: drop subqueries with no content words, and those
///   containing `pattern` (case-insensitive) when given.
/// - overlap-removal: `threshold` overrides the configured overlap ratio.
/// - consolidation: `min_tokens` overrides the configured fragment size.
/// - intent-prioritization: no payload.
///
/// For model-backed rules `template` is the instruction sent to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRule {
    pub id: String,
    pub kind: RuleKind,
    #[serde(default)]
    pub mode: RuleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_tokens: Option<usize>,
}

impl RewriteRule {
    pub fn new(id: &str, kind: RuleKind) -> Self {
        Self { id: id.into(), kind, mode: RuleMode::Deterministic, pattern: None, template: None, threshold: None, min_tokens: None }
    }

    pub fn replace(id: &str, kind: RuleKind, pattern: &str, template: &str) -> Self {
        Self { pattern: Some(pattern.into()), template: Some(template.into()), ..Self::new(id, kind) }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("duplicate rule id {0:?}")]
    DuplicateId(String),
    #[error("rule {0:?}: empty pattern")]
    EmptyPattern(String),
    #[error("rule {0:?}: threshold outside [0, 1]")]
    BadThreshold(String),
}

/// Rules in declared order; a pass applies them in this order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RuleSet {
    rules: Vec<RewriteRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<RewriteRule>) -> Result<Self, RuleError> {
        let mut ids = BTreeSet::new();
        for r in &rules {
            if !ids.insert(r.id.as_str()) {
                return Err(RuleError::DuplicateId(r.id.clone()));
            }
            if r.pattern.as_deref() == Some("") {
                return Err(RuleError::EmptyPattern(r.id.clone()));
            }
            if r.threshold.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
                return Err(RuleError::BadThreshold(r.id.clone()));
            }
        }
        Ok(Self { rules })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StandardizeError {
    #[error("model-backed rule {rule:?} failed: {source}")]
    Gateway { rule: String, source: GatewayError },
}

/// Knobs shared by query standardization and subquery construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RewriteConfig {
    pub max_sweeps: usize,
    pub overlap_threshold: f64,
    pub min_tokens: usize,
    pub stopwords: Stopwords,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        Self {
            max_sweeps: DEFAULT_MAX_SWEEPS,
            overlap_threshold: DEFAULT_OVERLAP_THRESHOLD,
            min_tokens: DEFAULT_MIN_TOKENS,
            stopwords: Stopwords::default(),
        }
    }
}

/// A chat backend plus the model name to address. When absent, model-backed
/// rules run their deterministic fallback.
#[derive(Clone, Copy)]
pub struct ModelHandle<'a> {
    pub backend: &'a dyn ChatBackend,
    pub model: &'a str,
}

impl core::fmt::Debug for ModelHandle<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ModelHandle").field("model", &self.model).finish_non_exhaustive()
    }
}

impl ModelHandle<'_> {
    pub(crate) fn ask(&self, rule: &str, system: &str, user: String) -> Result<String, StandardizeError> {
        let req = ChatRequest::new(self.model, vec![ChatMessage::system(system), ChatMessage::user(user)]);
        self.backend
            .chat(&req)
            .map(|r| r.content.trim().to_string())
            .map_err(|source| StandardizeError::Gateway { rule: rule.to_string(), source })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub sweep: usize,
    pub rule: String,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedQuery {
    pub text: String,
    pub sweeps: usize,
    pub converged: bool,
    /// Every rule application that changed the text, in execution order.
    pub provenance: Vec<ProvenanceEntry>,
}

impl StandardizedQuery {
    /// The query as given, with no rules applied.
    pub fn passthrough(text: &str) -> Self {
        Self { text: text.to_string(), sweeps: 0, converged: true, provenance: Vec::new() }
    }
}

const LEADING_CONNECTIVES: [&str; 5] = ["and", "or", "but", "also", "so"];

fn strip_leading_connectives(text: &str) -> String {
    let mut rest = text.trim_start();
    loop {
        let word_end = rest.find(|c: char| !c.is_alphanumeric()).unwrap_or(rest.len());
        let word = &rest[..word_end];
        if word_end == 0 || word_end == rest.len() || !LEADING_CONNECTIVES.contains(&word.to_lowercase().as_str()) {
            return rest.to_string();
        }
        rest = rest[word_end..].trim_start_matches(|c: char| c.is_whitespace() || c == ',');
    }
}

fn tidy_punctuation(text: &str) -> String {
    let collapsed = collapse_whitespace(text);
    let mut out = String::with_capacity(collapsed.len());
    for c in collapsed.chars() {
        if matches!(c, ',' | ';' | '.' | '?' | '!' | ':') && out.ends_with(' ') {
            out.pop();
        }
        out.push(c);
    }
    out
}

fn text_instruction(rule: &RewriteRule) -> String {
    match &rule.template {
        Some(t) => t.clone(),
        None => format!("Apply {} to the query.", rule.kind.as_str()),
    }
}

const REWRITE_SYSTEM: &str = "You rewrite patient queries for a medical consultation system. Follow the rule and reply with the rewritten text only.";

/// Applies a text-level rule once. List-level kinds leave single texts alone.
pub fn apply_text_rule(rule: &RewriteRule, text: &str, model: Option<ModelHandle<'_>>) -> Result<String, StandardizeError> {
    if !rule.kind.is_text_level() {
        return Ok(text.to_string());
    }
    if let (RuleMode::ModelBacked, Some(m)) = (rule.mode, model) {
        let reply = m.ask(&rule.id, REWRITE_SYSTEM, format!("Rule: {}\nText: {}", text_instruction(rule), text))?;
        return Ok(if reply.is_empty() { text.to_string() } else { reply });
    }
    Ok(match (&rule.pattern, rule.kind) {
        (Some(p), _) => text.replace(p.as_str(), rule.template.as_deref().unwrap_or("")),
        (None, RuleKind::GrammaticalNormalization) => strip_leading_connectives(&collapse_whitespace(text)),
        (None, _) => tidy_punctuation(text),
    })
}

/// Repeats full passes over `rules` until a pass in which no rule changes
/// the text, or until `max_sweeps` passes have run.
pub fn standardize(
    query: &str,
    rules: &RuleSet,
    config: &RewriteConfig,
    model: Option<ModelHandle<'_>>,
) -> Result<StandardizedQuery, StandardizeError> {
    let max = config.max_sweeps.max(1);
    let mut text = query.to_string();
    let mut provenance = Vec::new();
    for sweep in 1..=max {
        let mut changed = false;
        for rule in rules.rules() {
            let next = apply_text_rule(rule, &text, model)?;
            if next != text {
                provenance.push(ProvenanceEntry {
                    sweep,
                    rule: rule.id.clone(),
                    before: short_hash(&text),
                    after: short_hash(&next),
                });
                text = next;
                changed = true;
            }
        }
        if !changed {
            return Ok(StandardizedQuery { text, sweeps: sweep, converged: true, provenance });
        }
    }
    Ok(StandardizedQuery { text, sweeps: max, converged: false, provenance })
}

// --- subquery lists ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subquery {
    pub text: String,
    pub stage: Stage,
}

/// `|A ∩ B| / min(|A|, |B|)` over content-word sets; 0 when either is empty.
pub fn overlap_ratio(a: &str, b: &str, stopwords: &Stopwords) -> f64 {
    let sa: BTreeSet<String> = query_terms(a, stopwords).into_iter().collect();
    let sb: BTreeSet<String> = query_terms(b, stopwords).into_iter().collect();
    let smaller = sa.len().min(sb.len());
    if smaller == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / smaller as f64
}

fn content_len(text: &str, stopwords: &Stopwords) -> usize {
    query_terms(text, stopwords).len()
}

const LIST_SYSTEM: &str = "You refine the subqueries of a medical consultation. Follow the rule and reply with the resulting subqueries, one per line, nothing else.";

/// Applies one rule to a subquery list. Rules never empty a non-empty list.
pub fn apply_list_rule(
    rule: &RewriteRule,
    subqueries: &[Subquery],
    config: &RewriteConfig,
    model: Option<ModelHandle<'_>>,
    hint: &dyn Fn(&str) -> Stage,
) -> Result<Vec<Subquery>, StandardizeError> {
    if rule.kind.is_text_level() {
        let mut out = Vec::with_capacity(subqueries.len());
        for s in subqueries {
            let text = apply_text_rule(rule, &s.text, model)?;
            if !text.trim().is_empty() {
                out.push(Subquery { text, stage: s.stage });
            }
        }
        return Ok(if out.is_empty() { subqueries.to_vec() } else { out });
    }
    if let (RuleMode::ModelBacked, Some(m)) = (rule.mode, model) {
        let listing: Vec<&str> = subqueries.iter().map(|s| s.text.as_str()).collect();
        let reply = m.ask(&rule.id, LIST_SYSTEM, format!("Rule: {}\nSubqueries:\n{}", text_instruction(rule), listing.join("\n")))?;
        let out: Vec<Subquery> = reply
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| Subquery { text: l.to_string(), stage: hint(l) })
            .collect();
        return Ok(if out.is_empty() { subqueries.to_vec() } else { out });
    }
    let sw = &config.stopwords;
    let out = match rule.kind {
        RuleKind::SubqueryFilter => {
            let needle = rule.pattern.as_deref().map(str::to_lowercase);
            subqueries
                .iter()
                .filter(|s| content_len(&s.text, sw) > 0)
                .filter(|s| needle.as_deref().is_none_or(|n| !s.text.to_lowercase().contains(n)))
                .cloned()
                .collect()
        }
        RuleKind::OverlapRemoval => {
            let limit = rule.threshold.unwrap_or(config.overlap_threshold);
            let mut kept: Vec<Subquery> = Vec::new();
            for s in subqueries {
                if kept.iter().all(|k| overlap_ratio(&k.text, &s.text, sw) <= limit) {
                    kept.push(s.clone());
                }
            }
            kept
        }
        RuleKind::Consolidation => {
            let min = rule.min_tokens.unwrap_or(config.min_tokens);
            let mut out: Vec<Subquery> = Vec::new();
            let mut pending: Option<String> = None;
            for s in subqueries {
                let small = content_len(&s.text, sw) < min && subqueries.len() > 1;
                match (small, out.last_mut()) {
                    (true, Some(prev)) => {
                        prev.text.push(' ');
                        prev.text.push_str(&s.text);
                    }
                    (true, None) => {
                        let p = pending.get_or_insert_with(String::new);
                        if !p.is_empty() {
                            p.push(' ');
                        }
                        p.push_str(&s.text);
                    }
                    (false, _) => {
                        let text = match pending.take() {
                            Some(p) => format!("{p} {}", s.text),
                            None => s.text.clone(),
                        };
                        out.push(Subquery { text, stage: s.stage });
                    }
                }
            }
            if let Some(p) = pending {
                // every subquery was a fragment: keep them joined
                out.push(Subquery { text: p, stage: subqueries[0].stage });
            }
            out
        }
        RuleKind::IntentPrioritization => {
            let mut out = subqueries.to_vec();
            out.sort_by_key(|s| s.stage);
            out
        }
        RuleKind::GrammaticalNormalization | RuleKind::FormatStandardization => unreachable!("text-level kinds handled above"),
    };
    Ok(if out.is_empty() { subqueries.to_vec() } else { out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListOutcome {
    pub subqueries: Vec<Subquery>,
    pub sweeps: usize,
    pub converged: bool,
    pub provenance: Vec<ProvenanceEntry>,
}

fn list_digest(list: &[Subquery]) -> String {
    let mut s = String::new();
    for q in list {
        s.push_str(q.stage.as_str());
        s.push('\t');
        s.push_str(&q.text);
        s.push('\n');
    }
    short_hash(&s)
}

/// Fixed-point iteration of `rules` over a subquery list.
pub fn rewrite_subqueries(
    mut list: Vec<Subquery>,
    rules: &RuleSet,
    config: &RewriteConfig,
    model: Option<ModelHandle<'_>>,
    hint: &dyn Fn(&str) -> Stage,
) -> Result<ListOutcome, StandardizeError> {
    let max = config.max_sweeps.max(1);
    let mut provenance = Vec::new();
    for sweep in 1..=max {
        let mut changed = false;
        for rule in rules.rules() {
            let next = apply_list_rule(rule, &list, config, model, hint)?;
            if next != list {
                provenance.push(ProvenanceEntry { sweep, rule: rule.id.clone(), before: list_digest(&list), after: list_digest(&next) });
                list = next;
                changed = true;
            }
        }
        if !changed {
            return Ok(ListOutcome { subqueries: list, sweeps: sweep, converged: true, provenance });
        }
    }
    Ok(ListOutcome { subqueries: list, sweeps: max, converged: false, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockChat;

    fn set(rules: Vec<RewriteRule>) -> RuleSet {
        RuleSet::new(rules).unwrap()
    }

    #[test]
    fn empty_rules_converge_at_once() {
        let q = standardize("Fever  ", &RuleSet::empty(), &RewriteConfig::default(), None).unwrap();
        assert_eq!((q.text.as_str(), q.sweeps, q.converged), ("Fever  ", 1, true));
        assert!(q.provenance.is_empty());
    }

    #[test]
    fn whitespace_collapse_takes_two_sweeps() {
        let rules = set(vec![RewriteRule::new("ws", RuleKind::FormatStandardization)]);
        let q = standardize("a  b", &rules, &RewriteConfig::default(), None).unwrap();
        assert_eq!((q.text.as_str(), q.sweeps, q.converged), ("a b", 2, true));
        assert_eq!(q.provenance.len(), 1);
        assert_eq!(q.provenance[0].before, short_hash("a  b"));
    }

    #[test]
    fn oscillating_pair_hits_the_bound() {
        let rules = set(vec![
            RewriteRule::replace("x-to-y", RuleKind::GrammaticalNormalization, "x", "y"),
            RewriteRule::replace("y-to-x", RuleKind::GrammaticalNormalization, "y", "x"),
        ]);
        let q = standardize("x", &rules, &RewriteConfig::default(), None).unwrap();
        assert!(!q.converged);
        assert_eq!(q.sweeps, DEFAULT_MAX_SWEEPS);
        assert_eq!(q.provenance.len(), 2 * DEFAULT_MAX_SWEEPS);
        assert_eq!(q.provenance[0].rule, "x-to-y");
        assert_eq!(q.provenance[1].rule, "y-to-x");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = RewriteRule::new("a", RuleKind::Consolidation);
        assert_eq!(RuleSet::new(vec![r.clone(), r]), Err(RuleError::DuplicateId("a".into())));
    }

    #[test]
    fn leading_connectives_and_punctuation() {
        let g = RewriteRule::new("g", RuleKind::GrammaticalNormalization);
        assert_eq!(apply_text_rule(&g, "and  also fever", None).unwrap(), "fever");
        assert_eq!(apply_text_rule(&g, "and", None).unwrap(), "and");
        let f = RewriteRule::new("f", RuleKind::FormatStandardization);
        assert_eq!(apply_text_rule(&f, " fever , cough ? ", None).unwrap(), "fever, cough?");
    }

    #[test]
    fn model_backed_rule_uses_gateway_only_when_given() {
        let mut r = RewriteRule::new("m", RuleKind::GrammaticalNormalization);
        r.mode = RuleMode::ModelBacked;
        let mock = MockChat::always("rewritten");
        let handle = ModelHandle { backend: &mock, model: "m" };
        assert_eq!(apply_text_rule(&r, "x  y", Some(handle)).unwrap(), "rewritten");
        assert_eq!(apply_text_rule(&r, "x  y", None).unwrap(), "x y");
    }

    fn sq(text: &str, stage: Stage) -> Subquery {
        Subquery { text: text.into(), stage }
    }

    fn diag(_: &str) -> Stage {
        Stage::Diagnosis
    }

    #[test]
    fn overlap_keeps_earlier() {
        let r = RewriteRule::new("o", RuleKind::OverlapRemoval);
        let list = [sq("fever cough", Stage::Diagnosis), sq("cough fever", Stage::Medicament)];
        let out = apply_list_rule(&r, &list, &RewriteConfig::default(), None, &diag).unwrap();
        assert_eq!(out, [list[0].clone()]);
    }

    #[test]
    fn consolidation_and_priority() {
        let c = RewriteRule::new("c", RuleKind::Consolidation);
        let list = [sq("severe", Stage::Diagnosis), sq("chest pain today", Stage::Diagnosis), sq("aspirin", Stage::Medicament)];
        let out = apply_list_rule(&c, &list, &RewriteConfig::default(), None, &diag).unwrap();
        assert_eq!(out, [sq("severe chest pain today aspirin", Stage::Diagnosis)]);

        let p = RewriteRule::new("p", RuleKind::IntentPrioritization);
        let list = [sq("b", Stage::PostDiagnosis), sq("a", Stage::PreDiagnosis), sq("c", Stage::PostDiagnosis)];
        let out = apply_list_rule(&p, &list, &RewriteConfig::default(), None, &diag).unwrap();
        let texts: Vec<&str> = out.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["a", "b", "c"]);
    }

    #[test]
    fn filter_never_empties() {
        let f = RewriteRule::new("f", RuleKind::SubqueryFilter);
        let list = [sq("and the", Stage::Diagnosis)];
        assert_eq!(apply_list_rule(&f, &list, &RewriteConfig::default(), None, &diag).unwrap(), list);
        let list = [sq("and the", Stage::Diagnosis), sq("rash", Stage::Diagnosis)];
        assert_eq!(apply_list_rule(&f, &list, &RewriteConfig::default(), None, &diag).unwrap(), [list[1].clone()]);
    }
}
