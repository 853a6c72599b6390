//! Query tokenization and context-free parsing.
//!
//! Grammars are written in a line-oriented text format, brought into a
//! normal form with right-hand sides of one or two symbols, and parsed with a
//! deterministic chart parser. A failed parse reports the best partial cover
//! so callers can fall back to flat processing.

mod cfg;
mod chart;
mod tokenize;

pub use cfg::{normalize_grammar, parse_grammar_text, Grammar, GrammarError, Production, RawProduction, Sym};
pub use chart::{parse, CoverSpan, ParseError, ParseNode, ParseTree};
pub use tokenize::{tokenize, Lexicon, Token, TokenSequence, UNKNOWN_CLASS};
