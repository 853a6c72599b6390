//! Hybrid retrieval against a linear scan over generated corpora.

use std::collections::BTreeSet;

use medaide_core::gateway::HashEmbedder;
use medaide_core::intent::cosine;
use medaide_core::retrieval::{
    keyword_retrieve, query_terms, semantic_retrieve, CorpusDocument, DocumentStore, InvertedIndex, MatchMode,
    Stopwords,
};
use medaide_core::text::words;
use medaide_core::EmbeddingVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: &[&str] = &[
    "fever", "cough", "rash", "aspirin", "ibuprofen", "dose", "chest", "pain", "nausea", "insulin", "the", "of",
    "with", "sleep", "allergy", "penicillin",
];

fn random_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

fn corpus(rng: &mut ChaCha8Rng, d: usize) -> Vec<CorpusDocument> {
    let n = rng.gen_range(0..=50);
    (0..n)
        .map(|i| {
            let title_len = rng.gen_range(0..3);
            let body_len = rng.gen_range(1..8);
            let mut doc = CorpusDocument::new(&format!("d{i:02}"), &random_text(rng, title_len), &random_text(rng, body_len));
            doc.vector = Some(EmbeddingVector::new(random_vec(rng, d), "test"));
            doc
        })
        .collect()
}

/// Linear-scan keyword filter.
fn scan_keyword(docs: &[CorpusDocument], probe: &str, stop: &Stopwords, mode: MatchMode) -> BTreeSet<String> {
    let terms: BTreeSet<String> = words(probe).into_iter().filter(|w| !stop.contains(w)).collect();
    if terms.is_empty() {
        return BTreeSet::new();
    }
    docs.iter()
        .filter(|d| {
            let dw: BTreeSet<String> = words(&d.text()).into_iter().collect();
            match mode {
                MatchMode::All => terms.iter().all(|t| dw.contains(t)),
                MatchMode::Any => terms.iter().any(|t| dw.contains(t)),
            }
        })
        .map(|d| d.id.clone())
        .collect()
}

fn scan_semantic(docs: &[CorpusDocument], q: &[f64], tau: f64) -> BTreeSet<String> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    docs.iter()
        .filter(|d| {
            let v = &d.vector.as_ref().unwrap().values;
            let c = q.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (norm(q) * norm(v));
            c > tau
        })
        .map(|d| d.id.clone())
        .collect()
}

#[test]
fn hybrid_equals_brute_force_union() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let stop = Stopwords::default();
    let embedder = HashEmbedder::new(8, 0);
    for trial in 0..200 {
        let d = 8;
        let docs = corpus(&mut rng, d);
        let store = DocumentStore::build(None, docs.clone(), stop.clone(), &embedder).unwrap();
        let probes: Vec<String> = (0..rng.gen_range(1..3)).map(|_| {
            let len = rng.gen_range(1..4);
            random_text(&mut rng, len)
        }).collect();
        let probe_refs: Vec<&str> = probes.iter().map(String::as_str).collect();
        let q = random_vec(&mut rng, d);
        let tau = rng.gen_range(-0.5..0.9);
        let mode = if trial % 2 == 0 { MatchMode::All } else { MatchMode::Any };

        let got = store.hybrid_retrieve(&probe_refs, &EmbeddingVector::new(q.clone(), "q"), tau, mode).unwrap();
        let slice: BTreeSet<String> = probes.iter().flat_map(|p| scan_keyword(&docs, p, &stop, mode)).collect();
        let matched = scan_semantic(&docs, &q, tau);
        let want: BTreeSet<String> = slice.union(&matched).cloned().collect();

        let final_set: BTreeSet<String> = got.final_ids.iter().cloned().collect();
        assert_eq!(final_set.len(), got.final_ids.len(), "trial {trial}: duplicate in final");
        assert_eq!(final_set, want, "trial {trial}");
        assert_eq!(got.slice_ids.iter().cloned().collect::<BTreeSet<_>>(), slice, "trial {trial}");
        assert_eq!(got.match_ids.iter().map(|s| s.id.clone()).collect::<BTreeSet<_>>(), matched, "trial {trial}");

        // ordering: semantic hits by descending score, then keyword-only by id
        let sem_len = got.match_ids.len();
        assert!(got.match_ids.windows(2).all(|w| w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id)));
        assert!(got.final_ids[sem_len..].windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn tau_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let docs = corpus(&mut rng, 6);
        let q = EmbeddingVector::new(random_vec(&mut rng, 6), "q");
        let a: f64 = rng.gen_range(-1.0..1.0);
        let b: f64 = rng.gen_range(-1.0..1.0);
        let (t1, t2) = if a < b { (a, b) } else { (b, a) };
        let loose: BTreeSet<String> = semantic_retrieve(&q, &docs, t1).unwrap().into_iter().map(|s| s.id).collect();
        let tight: BTreeSet<String> = semantic_retrieve(&q, &docs, t2).unwrap().into_iter().map(|s| s.id).collect();
        assert!(tight.is_subset(&loose));
    }
}

#[test]
fn index_agrees_with_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let stop = Stopwords::default();
    for _ in 0..50 {
        let docs = corpus(&mut rng, 2);
        let index = InvertedIndex::build(None, &docs, &stop).unwrap();
        assert_eq!(index.doc_count(), docs.len());
        for term in VOCAB {
            let want: Vec<String> = docs
                .iter()
                .filter(|d| !stop.contains(term) && words(&d.text()).iter().any(|w| w == term))
                .map(|d| d.id.clone())
                .collect();
            assert_eq!(index.postings(term), want.as_slice(), "term {term}");
        }
        for mode in [MatchMode::All, MatchMode::Any] {
            let len = rng.gen_range(0..4);
            let probe = random_text(&mut rng, len);
            assert_eq!(
                keyword_retrieve(&query_terms(&probe, &stop), &index, mode),
                scan_keyword(&docs, &probe, &stop, mode)
            );
        }
    }
}

#[test]
fn cosine_worked_value() {
    let c = cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
    assert!((c - 8.0 / 9.0).abs() < 1e-12);
}
