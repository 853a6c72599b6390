use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::grammar::{Grammar, ParseError, ParseNode, ParseTree, TokenSequence};

/// Token class that marks a coordinating conjunction.
pub const CONJUNCTION_CLASS: &str = "CONJ";

/// A half-open token range `from..to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub from: usize,
    pub to: usize,
}

impl Clause {
    pub fn text<'a>(&self, tokens: &'a TokenSequence) -> &'a str {
        let (s, e) = tokens.span_of(self.from, self.to);
        &tokens.source()[s..e]
    }
}

fn ranges_between(n: usize, splits: &[usize]) -> Vec<Clause> {
    let mut out = Vec::new();
    let mut from = 0;
    for &s in splits.iter().chain(core::iter::once(&n)) {
        if s > from {
            out.push(Clause { from, to: s });
        }
        from = s + 1;
    }
    out
}

fn collect_splits(node: &ParseNode, grammar: &Grammar, tokens: &TokenSequence, out: &mut Vec<usize>) {
    let ParseNode::Branch { symbol, children, .. } = node else {
        return;
    };
    let clause_level = grammar
        .lookup(symbol)
        .map(|s| grammar.origin(s) == grammar.start())
        .unwrap_or(false);
    for child in children {
        match child {
            ParseNode::Leaf { token, .. } if clause_level && tokens.tokens()[*token].class == CONJUNCTION_CLASS => {
                out.push(*token)
            }
            _ => collect_splits(child, grammar, tokens, out),
        }
    }
}

/// Splits a query into clauses.
///
/// With a tree, the split points are conjunction tokens attached directly to
/// clause-level constituents (those derived from the start symbol), so
/// conjunctions inside noun phrases stay put. Without one, every conjunction
/// and punctuation token splits. Split tokens belong to no clause.
pub fn segment_clauses(parsed: &Result<ParseTree, ParseError>, tokens: &TokenSequence, grammar: &Grammar) -> Vec<Clause> {
    let mut splits = Vec::new();
    match parsed {
        Ok(tree) => collect_splits(&tree.root, grammar, tokens, &mut splits),
        Err(_) => {
            for (i, t) in tokens.tokens().iter().enumerate() {
                if t.class == CONJUNCTION_CLASS || !t.is_word() {
                    splits.push(i);
                }
            }
        }
    }
    splits.sort_unstable();
    ranges_between(tokens.len(), &splits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Symptom,
    Condition,
    History,
    Medication,
    Demographic,
    Other,
}

impl ElementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Symptom => "symptom",
            ElementKind::Condition => "condition",
            ElementKind::History => "history",
            ElementKind::Medication => "medication",
            ElementKind::Demographic => "demographic",
            ElementKind::Other => "other",
        }
    }
}

/// Multi-word term dictionary keyed by lowercased word sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ElementLexicon {
    // first word -> (term words, kind), longest first
    by_first: BTreeMap<String, Vec<(Vec<String>, ElementKind)>>,
    len: usize,
}

impl ElementLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Terms are split into words; a later entry for the same words wins.
    pub fn insert(&mut self, surface: &str, kind: ElementKind) {
        let words = crate::text::words(surface);
        let Some(first) = words.first().cloned() else {
            return;
        };
        let bucket = self.by_first.entry(first).or_default();
        if let Some(slot) = bucket.iter_mut().find(|(w, _)| *w == words) {
            slot.1 = kind;
            return;
        }
        bucket.push((words, kind));
        bucket.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Longest term starting at `norms[0]`, as (word count, kind).
    pub fn longest_at(&self, norms: &[&str]) -> Option<(usize, ElementKind)> {
        let bucket = self.by_first.get(*norms.first()?)?;
        bucket
            .iter()
            .find(|(w, _)| w.len() <= norms.len() && w.iter().zip(norms).all(|(a, b)| a == b))
            .map(|(w, k)| (w.len(), *k))
    }
}

impl<'a> FromIterator<(&'a str, ElementKind)> for ElementLexicon {
    fn from_iter<I: IntoIterator<Item = (&'a str, ElementKind)>>(iter: I) -> Self {
        let mut lex = Self::new();
        for (s, k) in iter {
            lex.insert(s, k);
        }
        lex
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalElement {
    pub kind: ElementKind,
    pub surface: String,
    /// Byte span in the standardized query.
    pub start: usize,
    pub end: usize,
    /// Token range.
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalElementSet {
    pub elements: Vec<ClinicalElement>,
}

impl ClinicalElementSet {
    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.elements.iter().map(|e| e.surface.as_str()).collect()
    }

    /// Surfaces joined by spaces.
    pub fn joined(&self) -> String {
        self.surfaces().join(" ")
    }

    pub fn within(&self, clause: Clause) -> impl Iterator<Item = &ClinicalElement> {
        self.elements.iter().filter(move |e| e.from >= clause.from && e.to <= clause.to)
    }
}

/// Dictionary matching inside each clause: scanning left to right, the
/// longest term starting at the current word is taken and scanning resumes
/// after it. Terms never cross punctuation or clause boundaries.
pub fn extract_elements(tokens: &TokenSequence, clauses: &[Clause], lexicon: &ElementLexicon) -> ClinicalElementSet {
    let toks = tokens.tokens();
    let mut elements = Vec::new();
    for clause in clauses {
        let mut i = clause.from;
        while i < clause.to {
            // words up to the next punctuation mark
            let run_end = (i..clause.to).find(|&j| !toks[j].is_word()).unwrap_or(clause.to);
            let norms: Vec<&str> = toks[i..run_end].iter().map(|t| t.norm.as_str()).collect();
            match lexicon.longest_at(&norms) {
                Some((len, kind)) => {
                    let (start, end) = tokens.span_of(i, i + len);
                    elements.push(ClinicalElement {
                        kind,
                        surface: tokens.source()[start..end].to_string(),
                        start,
                        end,
                        from: i,
                        to: i + len,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
    }
    ClinicalElementSet { elements }
}
