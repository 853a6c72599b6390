//! Chart parser against exhaustive derivation enumeration on random
//! grammars, and language preservation of grammar normalization.

use std::collections::HashMap;

use medaide_core::grammar::{normalize_grammar, parse, Grammar, GrammarError, ParseError, ParseNode, RawProduction, TokenSequence};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NONTERMINALS: &[&str] = &["S", "A", "B", "C"];
const TERMINALS: &[&str] = &["a", "b", "c"];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tree {
    Leaf(usize),
    Node { production: usize, start: usize, end: usize, children: Vec<Tree> },
}

impl Tree {
    fn end(&self) -> usize {
        match self {
            Tree::Leaf(i) => i + 1,
            Tree::Node { end, .. } => *end,
        }
    }

    /// Preorder keys: lower production first, then the longer left child
    /// (encoded as a smaller value).
    fn keys(&self, out: &mut Vec<(usize, usize)>) {
        if let Tree::Node { production, children, .. } = self {
            let split = if children.len() == 2 { children[0].end() } else { 0 };
            out.push((*production, usize::MAX - split));
            children.iter().for_each(|c| c.keys(out));
        }
    }
}

fn from_parse(node: &ParseNode, start: usize) -> Tree {
    match node {
        ParseNode::Leaf { token, .. } => Tree::Leaf(*token),
        ParseNode::Branch { production, children, .. } => {
            let mut at = start;
            let mut kids = Vec::new();
            for c in children {
                let t = from_parse(c, at);
                at = t.end();
                kids.push(t);
            }
            Tree::Node { production: *production, start, end: at, children: kids }
        }
    }
}

/// Every tree for `sym` over `[i, j)`, by brute force.
fn all_trees(
    g: &Grammar,
    classes: &[&str],
    sym: usize,
    i: usize,
    j: usize,
    memo: &mut HashMap<(usize, usize, usize), Vec<Tree>>,
) -> Vec<Tree> {
    if let Some(t) = memo.get(&(sym, i, j)) {
        return t.clone();
    }
    let mut out = Vec::new();
    if !g.is_nonterminal(sym) {
        if j == i + 1 && classes[i] == g.name(sym) {
            out.push(Tree::Leaf(i));
        }
    } else {
        for (p, prod) in g.productions().iter().enumerate() {
            if prod.lhs != sym {
                continue;
            }
            if prod.rhs.len() == 1 {
                for t in all_trees(g, classes, prod.rhs[0], i, j, memo) {
                    out.push(Tree::Node { production: p, start: i, end: j, children: vec![t] });
                }
            } else {
                for k in i + 1..j {
                    let lefts = all_trees(g, classes, prod.rhs[0], i, k, memo);
                    if lefts.is_empty() {
                        continue;
                    }
                    let rights = all_trees(g, classes, prod.rhs[1], k, j, memo);
                    for l in &lefts {
                        for r in &rights {
                            out.push(Tree::Node { production: p, start: i, end: j, children: vec![l.clone(), r.clone()] });
                        }
                    }
                }
            }
        }
    }
    memo.insert((sym, i, j), out.clone());
    out
}

fn oracle_best(g: &Grammar, classes: &[&str]) -> Option<Tree> {
    let mut memo = HashMap::new();
    let trees = all_trees(g, classes, g.start(), 0, classes.len(), &mut memo);
    trees.into_iter().min_by_key(|t| {
        let mut k = Vec::new();
        t.keys(&mut k);
        k
    })
}

/// Acceptance on raw productions of any length, without normalization.
fn raw_accepts(raw: &[RawProduction], classes: &[&str]) -> bool {
    fn derives(raw: &[RawProduction], classes: &[&str], sym: &str, i: usize, j: usize, memo: &mut HashMap<(String, usize, usize), bool>) -> bool {
        if let Some(&b) = memo.get(&(sym.to_string(), i, j)) {
            return b;
        }
        let is_nt = raw.iter().any(|p| p.lhs == sym);
        let result = if !is_nt {
            j == i + 1 && classes[i] == sym
        } else {
            raw.iter().filter(|p| p.lhs == sym).any(|p| seq(raw, classes, &p.rhs, i, j, memo))
        };
        memo.insert((sym.to_string(), i, j), result);
        result
    }
    fn seq(raw: &[RawProduction], classes: &[&str], rhs: &[String], i: usize, j: usize, memo: &mut HashMap<(String, usize, usize), bool>) -> bool {
        match rhs {
            [] => i == j,
            [only] => j > i && derives(raw, classes, only, i, j, memo),
            [first, rest @ ..] => {
                // every symbol covers at least one token
                (i + 1..=j.saturating_sub(rest.len())).any(|k| derives(raw, classes, first, i, k, memo) && seq(raw, classes, rest, k, j, memo))
            }
        }
    }
    let mut memo = HashMap::new();
    derives(raw, classes, &raw[0].lhs, 0, classes.len(), &mut memo)
}

fn random_grammar(rng: &mut ChaCha8Rng, max_rhs: usize) -> Vec<RawProduction> {
    let n = rng.gen_range(1..=12);
    let mut out = Vec::new();
    for k in 0..n {
        let lhs = if k == 0 { "S" } else { *NONTERMINALS.choose(rng).unwrap() };
        let len = rng.gen_range(1..=max_rhs);
        let rhs: Vec<&str> = (0..len)
            .map(|_| if rng.gen_bool(0.5) { *NONTERMINALS.choose(rng).unwrap() } else { *TERMINALS.choose(rng).unwrap() })
            .collect();
        out.push(RawProduction::new(lhs, &rhs));
    }
    out
}

fn all_strings(max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<&str>> = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer.iter().flat_map(|s| TERMINALS.iter().map(move |t| {
            let mut s = s.clone();
            s.push(*t);
            s
        })).collect();
        out.extend(layer.clone());
    }
    out
}

#[test]
fn selected_tree_is_the_lexicographic_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    let mut accepted = 0;
    while checked < 150 {
        let raw = random_grammar(&mut rng, 2);
        let g = match normalize_grammar(&raw) {
            Ok(g) => g,
            Err(GrammarError::CyclicUnitChain(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        checked += 1;
        for _ in 0..40 {
            let len = rng.gen_range(1..=8);
            let classes: Vec<&str> = (0..len).map(|_| *TERMINALS.choose(&mut rng).unwrap()).collect();
            let toks = TokenSequence::from_classes(&classes);
            match (parse(&toks, &g), oracle_best(&g, &classes)) {
                (Ok(tree), Some(best)) => {
                    accepted += 1;
                    assert_eq!(from_parse(&tree.root, 0), best, "grammar {raw:?} input {classes:?}");
                    assert_eq!(tree.leaves(), (0..len).collect::<Vec<_>>());
                }
                (Err(ParseError::NoParse { .. }), None) => {}
                (got, want) => panic!("grammar {raw:?} input {classes:?}: parser {got:?}, oracle {want:?}"),
            }
        }
    }
    assert!(accepted > 50, "too few accepted inputs ({accepted}) to exercise tie-breaking");
}

#[test]
fn normalization_preserves_language() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = all_strings(6);
    let mut checked = 0;
    while checked < 60 {
        let raw = random_grammar(&mut rng, 4);
        let g = match normalize_grammar(&raw) {
            Ok(g) => g,
            Err(GrammarError::CyclicUnitChain(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        checked += 1;
        for classes in &inputs {
            let before = raw_accepts(&raw, classes);
            let after = parse(&TokenSequence::from_classes(classes), &g).is_ok();
            assert_eq!(before, after, "grammar {raw:?} input {classes:?}");
        }
    }
}

#[test]
fn ambiguous_concatenation_has_two_derivations() {
    let g = normalize_grammar(&[RawProduction::new("S", &["S", "S"]), RawProduction::new("S", &["a"])]).unwrap();
    let classes = ["a", "a", "a"];
    let mut memo = HashMap::new();
    assert_eq!(all_trees(&g, &classes, g.start(), 0, 3, &mut memo).len(), 2);
    let toks = TokenSequence::from_classes(&classes);
    assert_eq!(parse(&toks, &g).unwrap().render(&toks), "(S (S (S a) (S a)) (S a))");
}
