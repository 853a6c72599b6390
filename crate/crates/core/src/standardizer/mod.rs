//! Query regularization: rule-driven standardization, clause segmentation,
//! clinical element extraction, guideline context and subquery construction.

mod elements;
mod refine;
mod rules;

pub use elements::{
    extract_elements, segment_clauses, Clause, ClinicalElement, ClinicalElementSet, ElementKind, ElementLexicon,
    CONJUNCTION_CLASS,
};
pub use refine::{
    assemble_context, construct_refined, stage_hint, ContextDocument, ContextError, PrompterMode, RefinedQuery,
    DEFAULT_TOP_K,
};
pub use rules::{
    apply_list_rule, apply_text_rule, overlap_ratio, rewrite_subqueries, standardize, ListOutcome, ModelHandle,
    ProvenanceEntry, RewriteConfig, RewriteRule, RuleError, RuleKind, RuleMode, RuleSet, StandardizeError,
    StandardizedQuery, Subquery, DEFAULT_MAX_SWEEPS, DEFAULT_MIN_TOKENS, DEFAULT_OVERLAP_THRESHOLD,
};
