//! Fixed-point soundness, longest-match extraction and context ranking
//! against brute force.

use medaide_core::gateway::HashEmbedder;
use medaide_core::grammar::{tokenize, Lexicon, TokenSequence};
use medaide_core::retrieval::{soft_f1, CorpusDocument, DocumentStore, MatchMode, StoreKind, Stopwords};
use medaide_core::standardizer::{
    apply_text_rule, assemble_context, extract_elements, standardize, Clause, ClinicalElement, ClinicalElementSet,
    ElementKind, ElementLexicon, RewriteConfig, RewriteRule, RuleKind, RuleSet,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Span = (usize, usize, ElementKind);

fn random_word(rng: &mut ChaCha8Rng, alphabet: &[&str], max: usize) -> String {
    let n = rng.gen_range(1..=max);
    (0..n).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

#[test]
fn converged_results_are_fixed_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = RewriteConfig::default();
    let mut converged = 0;
    for trial in 0..500 {
        let mut rules = Vec::new();
        for k in 0..rng.gen_range(0..5) {
            let rule = match rng.gen_range(0..4) {
                0 => RewriteRule::new(&format!("r{k}"), RuleKind::GrammaticalNormalization),
                1 => RewriteRule::new(&format!("r{k}"), RuleKind::FormatStandardization),
                _ => {
                    let pattern = random_word(&mut rng, &["x", "y", "z", " "], 3);
                    let template = random_word(&mut rng, &["x", "y", "z", " ", ","], 3);
                    RewriteRule::replace(&format!("r{k}"), RuleKind::FormatStandardization, &pattern, &template)
                }
            };
            rules.push(rule);
        }
        let set = RuleSet::new(rules).unwrap();
        let query = random_word(&mut rng, &["x", "y", "z", " ", ",", "and "], 10);
        let out = standardize(&query, &set, &config, None).unwrap();
        assert!(out.sweeps >= 1 && out.sweeps <= config.max_sweeps, "trial {trial}");
        if out.converged {
            converged += 1;
            let mut again = out.text.clone();
            for r in set.rules() {
                again = apply_text_rule(r, &again, None).unwrap();
            }
            assert_eq!(again, out.text, "trial {trial}: rules {:?} query {query:?}", set.rules());
        } else {
            assert_eq!(out.sweeps, config.max_sweeps);
        }
        // deterministic including provenance
        assert_eq!(standardize(&query, &set, &config, None).unwrap(), out);
    }
    assert!(converged > 100);
}

#[test]
fn oscillating_pair_stops_at_max_sweeps() {
    let set = RuleSet::new(vec![
        RewriteRule::replace("x-to-y", RuleKind::FormatStandardization, "x", "y"),
        RewriteRule::replace("y-to-x", RuleKind::FormatStandardization, "y", "x"),
    ])
    .unwrap();
    let out = standardize("x", &set, &RewriteConfig::default(), None).unwrap();
    assert!(!out.converged);
    assert_eq!(out.sweeps, 16);
    assert_eq!(out.provenance.len(), 32);
    assert!(out.provenance.windows(2).all(|w| w[0].after == w[1].before));
}

/// All segmentations of a word run into lexicon terms and single unmatched
/// words; the winner maximizes the sequence of piece lengths (unmatched
/// words count 0) lexicographically.
fn brute_force_matches(norms: &[&str], terms: &[(Vec<String>, ElementKind)]) -> Vec<(usize, usize, ElementKind)> {
    fn go(
        norms: &[&str],
        at: usize,
        terms: &[(Vec<String>, ElementKind)],
        key: &mut Vec<usize>,
        picked: &mut Vec<Span>,
        best: &mut Option<(Vec<usize>, Vec<Span>)>,
    ) {
        if at == norms.len() {
            if best.as_ref().is_none_or(|(k, _)| *key > *k) {
                *best = Some((key.clone(), picked.clone()));
            }
            return;
        }
        key.push(0);
        go(norms, at + 1, terms, key, picked, best);
        key.pop();
        for (words, kind) in terms {
            let end = at + words.len();
            if end <= norms.len() && norms[at..end].iter().zip(words).all(|(a, b)| a == b) {
                key.push(words.len());
                picked.push((at, end, *kind));
                go(norms, end, terms, key, picked, best);
                picked.pop();
                key.pop();
            }
        }
    }
    let mut best = None;
    go(norms, 0, terms, &mut Vec::new(), &mut Vec::new(), &mut best);
    best.map(|(_, p)| p).unwrap_or_default()
}

#[test]
fn extraction_is_leftmost_longest() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let vocab = ["chest", "pain", "high", "blood", "pressure", "aspirin", "left", "arm"];
    let kinds = [ElementKind::Symptom, ElementKind::Condition, ElementKind::Medication];
    for trial in 0..300 {
        let mut terms: Vec<(Vec<String>, ElementKind)> = Vec::new();
        for _ in 0..rng.gen_range(1..6) {
            let n = rng.gen_range(1..=3);
            let words: Vec<String> = (0..n).map(|_| vocab.choose(&mut rng).unwrap().to_string()).collect();
            if terms.iter().all(|(w, _)| *w != words) {
                terms.push((words, *kinds.choose(&mut rng).unwrap()));
            }
        }
        let mut lexicon = ElementLexicon::new();
        for (w, k) in &terms {
            lexicon.insert(&w.join(" "), *k);
        }
        let len = rng.gen_range(1..9);
        let query = (0..len).map(|_| *vocab.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
        let tokens = tokenize(&query, &Lexicon::new());
        let clauses = [Clause { from: 0, to: tokens.len() }];
        let got = extract_elements(&tokens, &clauses, &lexicon);
        let norms: Vec<&str> = tokens.tokens().iter().map(|t| t.norm.as_str()).collect();
        let want = brute_force_matches(&norms, &terms);
        let got_triples: Vec<(usize, usize, ElementKind)> = got.elements.iter().map(|e| (e.from, e.to, e.kind)).collect();
        assert_eq!(got_triples, want, "trial {trial}: {query:?} with {terms:?}");
        check_spans(&got, &tokens);
    }
}

fn check_spans(set: &ClinicalElementSet, tokens: &TokenSequence) {
    let src = tokens.source();
    let mut last_end = 0;
    for ClinicalElement { surface, start, end, .. } in &set.elements {
        assert!(*start >= last_end && end <= &src.len());
        assert_eq!(&src[*start..*end], surface);
        last_end = *end;
    }
}

#[test]
fn context_top_three_matches_exhaustive_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let embedder = HashEmbedder::new(48, 3);
    let vocab = ["fever", "cough", "rash", "fatigue", "aspirin", "headache", "nausea", "dizziness", "sleep", "diet"];
    for trial in 0..20 {
        let docs: Vec<CorpusDocument> = (0..20)
            .map(|i| {
                let n = rng.gen_range(1..6);
                let body = (0..n).map(|_| *vocab.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
                CorpusDocument::new(&format!("g{i:02}"), "guideline", &body)
            })
            .collect();
        let store = DocumentStore::build(Some(StoreKind::Guidelines), docs, Stopwords::default(), &embedder).unwrap();
        let n = rng.gen_range(1..4);
        let picks: Vec<&str> = (0..n).map(|_| *vocab.choose(&mut rng).unwrap()).collect();
        let query = picks.join(" ");
        let lexicon: ElementLexicon = vocab.iter().map(|v| (*v, ElementKind::Symptom)).collect();
        let tokens = tokenize(&query, &Lexicon::new());
        let elements = extract_elements(&tokens, &[Clause { from: 0, to: tokens.len() }], &lexicon);

        // tau below every cosine: each document is a candidate
        let got = assemble_context(&elements, &store, &embedder, 3, -1.1, MatchMode::Any).unwrap();
        let reference = elements.joined();
        let mut all: Vec<(f64, String)> = store
            .docs()
            .iter()
            .map(|d| (soft_f1(&d.body, &reference, &embedder).unwrap(), d.id.clone()))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let want: Vec<String> = all.into_iter().take(3).map(|(_, id)| id).collect();
        let got_ids: Vec<String> = got.iter().map(|c| c.id.clone()).collect();
        assert_eq!(got_ids, want, "trial {trial}");
    }
}

#[test]
fn verbatim_document_ranks_first_with_full_score() {
    let embedder = HashEmbedder::new(64, 1);
    let docs = vec![
        CorpusDocument::new("g1", "Chest pain", "chest pain aspirin"),
        CorpusDocument::new("g2", "Sleep", "sleep hygiene advice"),
        CorpusDocument::new("g3", "Aspirin", "aspirin dosing for adults"),
    ];
    let store = DocumentStore::build(Some(StoreKind::Guidelines), docs, Stopwords::default(), &embedder).unwrap();
    let lexicon: ElementLexicon = [("chest pain", ElementKind::Symptom), ("aspirin", ElementKind::Medication)].into_iter().collect();
    let tokens = tokenize("chest pain after taking aspirin", &Lexicon::new());
    let elements = extract_elements(&tokens, &[Clause { from: 0, to: tokens.len() }], &lexicon);
    assert_eq!(elements.surfaces(), ["chest pain", "aspirin"]);
    let got = assemble_context(&elements, &store, &embedder, 3, 0.35, MatchMode::Any).unwrap();
    assert_eq!(got[0].id, "g1");
    assert!((got[0].score - 1.0).abs() < 1e-12);
}
