use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Class assigned to tokens the lexicon does not know.
pub const UNKNOWN_CLASS: &str = "UNK";

/// Maps lowercased surfaces to terminal classes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    classes: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Later entries for the same surface replace earlier ones.
    pub fn insert(&mut self, surface: &str, class: &str) {
        self.classes.insert(surface.to_lowercase(), class.to_string());
    }

    pub fn class_of(&self, norm: &str) -> Option<&str> {
        self.classes.get(norm).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

impl<'a> FromIterator<(&'a str, &'a str)> for Lexicon {
    fn from_iter<I: IntoIterator<Item = (&'a str, &'a str)>>(iter: I) -> Self {
        let mut lex = Lexicon::new();
        for (s, c) in iter {
            lex.insert(s, c);
        }
        lex
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// Original text of the token, `source[start..end]`.
    pub surface: String,
    /// Lowercased surface, the lexicon key.
    pub norm: String,
    pub class: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is_word(&self) -> bool {
        self.norm.chars().next().is_some_and(char::is_alphanumeric)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    source: String,
    tokens: Vec<Token>,
}

impl TokenSequence {
    /// Builds a sequence directly from class names, with single-space
    /// separators. Convenient for grammar tests.
    pub fn from_classes(classes: &[&str]) -> Self {
        let mut source = String::new();
        let mut tokens = Vec::new();
        for (i, class) in classes.iter().enumerate() {
            if i > 0 {
                source.push(' ');
            }
            let start = source.len();
            source.push_str(class);
            tokens.push(Token {
                surface: class.to_string(),
                norm: class.to_lowercase(),
                class: class.to_string(),
                start,
                end: source.len(),
            });
        }
        Self { source, tokens }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Text between consecutive tokens; `separators().len() == len() + 1`,
    /// including the leading and trailing runs.
    pub fn separators(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.tokens.len() + 1);
        let mut pos = 0;
        for t in &self.tokens {
            out.push(&self.source[pos..t.start]);
            pos = t.end;
        }
        out.push(&self.source[pos..]);
        out
    }

    /// Interleaves separators and surfaces; always equals the source.
    pub fn reconstruct(&self) -> String {
        let seps = self.separators();
        let mut out = String::with_capacity(self.source.len());
        for (sep, t) in seps.iter().zip(&self.tokens) {
            out.push_str(sep);
            out.push_str(&t.surface);
        }
        out.push_str(seps[seps.len() - 1]);
        out
    }

    /// Byte span covering tokens `from..to` (exclusive).
    pub fn span_of(&self, from: usize, to: usize) -> (usize, usize) {
        (self.tokens[from].start, self.tokens[to - 1].end)
    }
}

/// Splits `source` into alphanumeric runs and single punctuation characters,
/// lowercases them and assigns lexicon classes (`UNK` when absent).
pub fn tokenize(source: &str, lexicon: &Lexicon) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    let push = |start: usize, end: usize, tokens: &mut Vec<Token>| {
        let surface = &source[start..end];
        let norm = surface.to_lowercase();
        let class = lexicon.class_of(&norm).unwrap_or(UNKNOWN_CLASS).to_string();
        tokens.push(Token { surface: surface.to_string(), norm, class, start, end });
    };
    for (i, c) in source.char_indices() {
        if c.is_alphanumeric() {
            if word_start.is_none() {
                word_start = Some(i);
            }
            continue;
        }
        if let Some(s) = word_start.take() {
            push(s, i, &mut tokens);
        }
        if !c.is_whitespace() {
            push(i, i + c.len_utf8(), &mut tokens);
        }
    }
    if let Some(s) = word_start {
        push(s, source.len(), &mut tokens);
    }
    TokenSequence { source: source.to_string(), tokens }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_source() {
        assert!(tokenize("", &Lexicon::new()).is_empty());
    }

    #[test]
    fn lexicon_classes() {
        let lex: Lexicon = [("headache", "SYM"), ("fever", "SYM"), ("and", "CONJ")].into_iter().collect();
        let seq = tokenize("Headache and fever", &lex);
        let got: Vec<(&str, &str)> = seq.tokens().iter().map(|t| (t.norm.as_str(), t.class.as_str())).collect();
        assert_eq!(got, [("headache", "SYM"), ("and", "CONJ"), ("fever", "SYM")]);
    }

    #[test]
    fn punctuation_is_its_own_token() {
        let seq = tokenize("fever; cough", &Lexicon::new());
        let norms: Vec<&str> = seq.tokens().iter().map(|t| t.norm.as_str()).collect();
        assert_eq!(norms, ["fever", ";", "cough"]);
        assert!(seq.tokens().iter().all(|t| t.class == UNKNOWN_CLASS));
    }

    proptest! {
        #[test]
        fn surfaces_and_separators_reconstruct_source(src in "[a-zA-Z0-9 ,;.!?\t\néü-]{0,40}") {
            let seq = tokenize(&src, &Lexicon::new());
            prop_assert_eq!(seq.reconstruct(), src.clone());
            // spans ascend and never overlap
            for w in seq.tokens().windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for t in seq.tokens() {
                prop_assert_eq!(&src[t.start..t.end], t.surface.as_str());
                prop_assert!(!t.surface.trim().is_empty());
            }
        }
    }
}
