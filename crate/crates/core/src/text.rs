//! Word tokenization and hashing shared by retrieval, metrics and the
//! standardizer.

use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

/// A lowercased alphanumeric run and its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits `text` into lowercased alphanumeric runs, dropping whitespace and
/// punctuation. This is the tokenizer used for indexing, keyword matching and
/// every text metric.
pub fn words(text: &str) -> Vec<String> {
    word_spans(text).into_iter().map(|w| w.text).collect()
}

pub fn word_spans(text: &str) -> Vec<Word> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            out.push(Word { text: text[s..i].to_lowercase(), start: s, end: i });
        }
    }
    if let Some(s) = start {
        out.push(Word { text: text[s..].to_lowercase(), start: s, end: text.len() });
    }
    out
}

/// Collapses every whitespace run to a single space and trims both ends.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for part in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(part);
    }
    out
}

/// Full lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First 16 hex characters of the SHA-256 digest; used in provenance records
/// where a full digest is noise.
pub fn short_hash(text: &str) -> String {
    let mut h = sha256_hex(text.as_bytes());
    h.truncate(16);
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn words_lowercase_and_drop_punctuation() {
        assert_eq!(words("Chest-pain, FEVER!"), vec!["chest", "pain", "fever"]);
        assert!(words("  ;; ").is_empty());
    }

    #[test]
    fn spans_point_into_source() {
        let src = "Héadache and fever";
        for w in word_spans(src) {
            assert_eq!(src[w.start..w.end].to_lowercase(), w.text);
        }
    }

    #[test]
    fn collapse() {
        assert_eq!(collapse_whitespace("  a \t\n b  "), "a b");
    }
}
