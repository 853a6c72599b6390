//! Reference-based text metrics and multi-label intent F1.
//!
//! Every text metric tokenizes with [`crate::text::words`] and reports on a
//! 0–100 scale against a single reference.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::gateway::Embedder;
use crate::retrieval::{soft_f1, RetrievalError};
use crate::text::words;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("reference has no tokens")]
    EmptyReference,
    #[error("{predicted} predictions for {gold} gold sets")]
    LengthMismatch { predicted: usize, gold: usize },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

fn tokens(reference: &str) -> Result<Vec<String>, MetricError> {
    let r = words(reference);
    if r.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(r)
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the candidate's n-gram total.
pub fn clipped_counts(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let matches = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

/// Cumulative BLEU up to order `n` with uniform weights and no smoothing.
/// A zero precision at any order gives 0.
pub fn bleu_n(candidate: &str, reference: &str, n: usize) -> Result<f64, MetricError> {
    let r = tokens(reference)?;
    let c = words(candidate);
    if c.is_empty() || n == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, total) = clipped_counts(&c, &r, k);
        if m == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += libm::log(m as f64 / total as f64);
    }
    let (cl, rl) = (c.len() as f64, r.len() as f64);
    let bp = if cl > rl { 1.0 } else { libm::exp(1.0 - rl / cl) };
    Ok(100.0 * bp * libm::exp(log_sum / n as f64))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with equal weight on precision and recall.
pub fn rouge_l(candidate: &str, reference: &str) -> Result<f64, MetricError> {
    let r = tokens(reference)?;
    let c = words(candidate);
    if c.is_empty() {
        return Ok(0.0);
    }
    let l = lcs_len(&c, &r) as f64;
    if l == 0.0 {
        return Ok(0.0);
    }
    let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
    Ok(100.0 * 2.0 * p * rec / (p + rec))
}

/// Minimum of precision and recall over matches pooled across 1- to 4-grams.
pub fn gleu(candidate: &str, reference: &str) -> Result<f64, MetricError> {
    let r = tokens(reference)?;
    let c = words(candidate);
    let (mut matches, mut c_total, mut r_total) = (0, 0, 0);
    for n in 1..=4 {
        let (m, ct) = clipped_counts(&c, &r, n);
        matches += m;
        c_total += ct;
        r_total += r.len().saturating_sub(n - 1);
    }
    if c_total == 0 || matches == 0 {
        return Ok(0.0);
    }
    let p = matches as f64 / c_total as f64;
    let rec = matches as f64 / r_total as f64;
    Ok(100.0 * p.min(rec))
}

/// Exact-match unigram alignment; each candidate token, left to right, takes
/// the leftmost unused equal reference token. Returns reference positions.
fn align(c: &[String], r: &[String]) -> Vec<Option<usize>> {
    let mut used = vec![false; r.len()];
    c.iter()
        .map(|t| {
            let j = (0..r.len()).find(|&j| !used[j] && r[j] == *t)?;
            used[j] = true;
            Some(j)
        })
        .collect()
}

/// Simplified Meteor: recall-weighted harmonic mean `10PR/(R+9P)` times
/// `1 − 0.5·(chunks/matches)³`. No stemming or synonyms.
pub fn meteor_lite(candidate: &str, reference: &str) -> Result<f64, MetricError> {
    let r = tokens(reference)?;
    let c = words(candidate);
    let alignment = align(&c, &r);
    let m = alignment.iter().flatten().count();
    if m == 0 {
        return Ok(0.0);
    }
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in &alignment {
        match (prev, a) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            _ => {}
        }
        prev = *a;
    }
    let (mf, p, rec) = (m as f64, m as f64 / c.len() as f64, m as f64 / r.len() as f64);
    let fmean = 10.0 * p * rec / (rec + 9.0 * p);
    let frag = chunks as f64 / mf;
    let penalty = 0.5 * frag * frag * frag;
    Ok(100.0 * fmean * (1.0 - penalty))
}

/// Soft F-score on the 0–100 scale.
pub fn bert_score_like(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<f64, MetricError> {
    tokens(reference)?;
    Ok(100.0 * soft_f1(candidate, reference, embedder)?)
}

/// Micro-averaged F1 over aligned multi-label sets: `2TP / (2TP + FP + FN)`.
/// When every set is empty there is nothing to get wrong and the score is 1.
pub fn intent_f1<S: AsRef<str>>(predicted: &[Vec<S>], gold: &[Vec<S>]) -> Result<f64, MetricError> {
    if predicted.len() != gold.len() {
        return Err(MetricError::LengthMismatch { predicted: predicted.len(), gold: gold.len() });
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (p, g) in predicted.iter().zip(gold) {
        let p: BTreeSet<&str> = p.iter().map(AsRef::as_ref).collect();
        let g: BTreeSet<&str> = g.iter().map(AsRef::as_ref).collect();
        let hit = p.intersection(&g).count();
        tp += hit;
        fp += p.len() - hit;
        fneg += g.len() - hit;
    }
    if tp + fp + fneg == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn bleu_examples() {
        assert!(close(bleu_n("the cat sat", "the cat sat", 1).unwrap(), 100.0));
        assert!(close(bleu_n("the cat sat", "the cat sat", 2).unwrap(), 100.0));
        let b1 = bleu_n("the the the the the the the", "the cat is on the mat", 1).unwrap();
        assert!(close(b1, 100.0 * 2.0 / 7.0));
        // 3 of 3 unigrams match, c=3 < r=6: BP = e^(1-2)
        let short = bleu_n("the cat is", "the cat is on the mat", 1).unwrap();
        assert!(close(short, 100.0 * libm::exp(-1.0)));
        assert_eq!(bleu_n("x", "", 1), Err(MetricError::EmptyReference));
        assert_eq!(bleu_n("a", "a b", 2).unwrap(), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert!(close(rouge_l("a b c d", "a c d").unwrap(), 600.0 / 7.0));
        assert!(close(rouge_l("x y", "x y").unwrap(), 100.0));
        assert_eq!(rouge_l("x y", "p q").unwrap(), 0.0);
    }

    #[test]
    fn gleu_hand_count() {
        // candidate "a b c d e" vs reference "a b c x e"
        // 1-grams: 4 matches; 2-grams: ab bc = 2; 3-grams: abc = 1; 4-grams: 0
        // pooled matches 7, candidate and reference totals 5+4+3+2 = 14
        assert!(close(gleu("a b c d e", "a b c x e").unwrap(), 50.0));
        assert!(close(gleu("a b", "a b").unwrap(), 100.0));
        assert_eq!(gleu("a b", "c d").unwrap(), 0.0);
    }

    #[test]
    fn meteor_hand_values() {
        // identical four tokens: one chunk of four, penalty 0.5/64
        assert!(close(meteor_lite("a b c d", "a b c d").unwrap(), 100.0 * (1.0 - 0.5 / 64.0)));
        assert_eq!(meteor_lite("a b", "c d").unwrap(), 0.0);
        let swapped = meteor_lite("b a", "a b").unwrap();
        // two chunks of one: penalty 0.5
        assert!(close(swapped, 50.0));
    }

    #[test]
    fn intent_f1_cases() {
        let gold = vec![vec!["a", "b"], vec!["c"], vec!["d"]];
        assert_eq!(intent_f1(&gold, &gold).unwrap(), 1.0);
        let none: Vec<Vec<&str>> = vec![vec![], vec![], vec![]];
        assert_eq!(intent_f1(&none, &gold).unwrap(), 0.0);
        // TP: a, c = 2; FP: x, y = 2; FN: b, d = 2  → 4 / 8
        let pred = vec![vec!["a", "x"], vec!["c"], vec!["y"]];
        assert!(close(intent_f1(&pred, &gold).unwrap(), 0.5));
        assert_eq!(
            intent_f1(&pred[..1], &gold),
            Err(MetricError::LengthMismatch { predicted: 1, gold: 3 })
        );
    }

    fn sentence() -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(0u8..6, 1..12)
    }

    fn render(ids: &[u8], names: &[&str]) -> String {
        ids.iter().map(|&i| names[i as usize]).collect::<Vec<_>>().join(" ")
    }

    proptest! {
        #[test]
        fn bounded_and_rename_invariant(c in sentence(), r in sentence()) {
            let a = ["w0", "w1", "w2", "w3", "w4", "w5"];
            let b = ["q9", "z1", "m4", "k2", "p7", "n3"];
            let (ca, ra) = (render(&c, &a), render(&r, &a));
            let (cb, rb) = (render(&c, &b), render(&r, &b));
            for (x, y) in [
                (bleu_n(&ca, &ra, 1).unwrap(), bleu_n(&cb, &rb, 1).unwrap()),
                (bleu_n(&ca, &ra, 2).unwrap(), bleu_n(&cb, &rb, 2).unwrap()),
                (rouge_l(&ca, &ra).unwrap(), rouge_l(&cb, &rb).unwrap()),
                (gleu(&ca, &ra).unwrap(), gleu(&cb, &rb).unwrap()),
            ] {
                prop_assert!((0.0..=100.0 + 1e-9).contains(&x));
                prop_assert!((x - y).abs() < 1e-9);
            }
            let m = meteor_lite(&ca, &ra).unwrap();
            prop_assert!((0.0..=100.0).contains(&m));
            let len = words(&ra).len() as f64;
            prop_assert!(m <= 100.0 * (1.0 - 0.5 / (len * len * len)) + 1e-9);
        }

        #[test]
        fn identical_is_maximal(r in sentence()) {
            let names = ["w0", "w1", "w2", "w3", "w4", "w5"];
            let s = render(&r, &names);
            prop_assert!(close(bleu_n(&s, &s, 1).unwrap(), 100.0));
            prop_assert!(close(rouge_l(&s, &s).unwrap(), 100.0));
            prop_assert!(close(gleu(&s, &s).unwrap(), 100.0));
            let m = r.len() as f64;
            prop_assert!(close(meteor_lite(&s, &s).unwrap(), 100.0 * (1.0 - 0.5 / (m * m * m))));
            prop_assert_eq!(words(&s).len(), r.len());
        }
    }
}
