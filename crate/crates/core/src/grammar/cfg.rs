use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

/// Interned grammar symbol.
pub type Sym = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawProduction {
    pub lhs: String,
    pub rhs: Vec<String>,
}

impl RawProduction {
    pub fn new(lhs: &str, rhs: &[&str]) -> Self {
        Self { lhs: lhs.to_string(), rhs: rhs.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Production {
    pub lhs: Sym,
    pub rhs: Vec<Sym>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("grammar has no productions")]
    Empty,
    #[error("production {index} has an empty right-hand side")]
    EmptyRhs { index: usize },
    #[error("production {index} has {len} right-hand symbols; normal form allows 1 or 2")]
    NotNormalForm { index: usize, len: usize },
    #[error("unit productions form a cycle: {}", .0.join(" -> "))]
    CyclicUnitChain(Vec<String>),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// A context-free grammar in internal normal form: every right-hand side has
/// one or two symbols. Symbols that never appear on a left-hand side are
/// terminals (token classes). The first left-hand side is the start symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    names: Vec<String>,
    index: BTreeMap<String, Sym>,
    nonterminal: Vec<bool>,
    origin: Vec<Sym>,
    productions: Vec<Production>,
    by_lhs: Vec<Vec<usize>>,
    start: Sym,
}

impl Grammar {
    /// Builds a grammar from productions already in normal form.
    pub fn new(productions: &[RawProduction]) -> Result<Self, GrammarError> {
        Self::build(productions, &BTreeMap::new())
    }

    fn build(productions: &[RawProduction], fresh: &BTreeMap<String, String>) -> Result<Self, GrammarError> {
        let first = productions.first().ok_or(GrammarError::Empty)?;
        for (index, p) in productions.iter().enumerate() {
            match p.rhs.len() {
                0 => return Err(GrammarError::EmptyRhs { index }),
                1 | 2 => {}
                len => return Err(GrammarError::NotNormalForm { index, len }),
            }
        }
        let lhs_set: BTreeSet<&str> = productions.iter().map(|p| p.lhs.as_str()).collect();
        let mut g = Grammar {
            names: Vec::new(),
            index: BTreeMap::new(),
            nonterminal: Vec::new(),
            origin: Vec::new(),
            productions: Vec::new(),
            by_lhs: Vec::new(),
            start: 0,
        };
        let intern = |g: &mut Grammar, name: &str| -> Sym {
            if let Some(&s) = g.index.get(name) {
                return s;
            }
            let s = g.names.len();
            g.names.push(name.to_string());
            g.index.insert(name.to_string(), s);
            g.nonterminal.push(lhs_set.contains(name));
            g.origin.push(s);
            g.by_lhs.push(Vec::new());
            s
        };
        g.start = intern(&mut g, &first.lhs);
        for p in productions {
            let lhs = intern(&mut g, &p.lhs);
            let rhs = p.rhs.iter().map(|r| intern(&mut g, r)).collect();
            g.by_lhs[lhs].push(g.productions.len());
            g.productions.push(Production { lhs, rhs });
        }
        for (fresh_name, parent) in fresh {
            if let (Some(&f), Some(&p)) = (g.index.get(fresh_name), g.index.get(parent)) {
                g.origin[f] = g.origin[p];
            }
        }
        g.check_unit_cycles()?;
        Ok(g)
    }

    fn check_unit_cycles(&self) -> Result<(), GrammarError> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.names.len()];
        let mut path: Vec<Sym> = Vec::new();
        for s in 0..self.names.len() {
            if self.nonterminal[s] && state[s] == 0 {
                if let Some(cycle) = self.unit_dfs(s, &mut state, &mut path) {
                    return Err(GrammarError::CyclicUnitChain(cycle));
                }
            }
        }
        Ok(())
    }

    fn unit_dfs(&self, s: Sym, state: &mut [u8], path: &mut Vec<Sym>) -> Option<Vec<String>> {
        state[s] = 1;
        path.push(s);
        for &p in &self.by_lhs[s] {
            let rhs = &self.productions[p].rhs;
            if rhs.len() != 1 || !self.nonterminal[rhs[0]] {
                continue;
            }
            let next = rhs[0];
            if state[next] == 1 {
                let from = path.iter().position(|&x| x == next).unwrap_or(0);
                let mut cycle: Vec<String> = path[from..].iter().map(|&x| self.names[x].clone()).collect();
                cycle.push(self.names[next].clone());
                return Some(cycle);
            }
            if state[next] == 0 {
                if let Some(c) = self.unit_dfs(next, state, path) {
                    return Some(c);
                }
            }
        }
        path.pop();
        state[s] = 2;
        None
    }

    pub fn start(&self) -> Sym {
        self.start
    }

    pub fn start_name(&self) -> &str {
        &self.names[self.start]
    }

    pub fn name(&self, sym: Sym) -> &str {
        &self.names[sym]
    }

    pub fn lookup(&self, name: &str) -> Option<Sym> {
        self.index.get(name).copied()
    }

    pub fn symbol_count(&self) -> usize {
        self.names.len()
    }

    pub fn is_nonterminal(&self, sym: Sym) -> bool {
        self.nonterminal[sym]
    }

    /// The symbol a binarization helper was split from; identity otherwise.
    pub fn origin(&self, sym: Sym) -> Sym {
        self.origin[sym]
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn productions_for(&self, lhs: Sym) -> &[usize] {
        &self.by_lhs[lhs]
    }

    pub fn nonterminals(&self) -> impl Iterator<Item = &str> {
        self.names.iter().zip(&self.nonterminal).filter(|(_, nt)| **nt).map(|(n, _)| n.as_str())
    }

    pub fn terminals(&self) -> impl Iterator<Item = &str> {
        self.names.iter().zip(&self.nonterminal).filter(|(_, nt)| !**nt).map(|(n, _)| n.as_str())
    }

    pub fn to_raw(&self) -> Vec<RawProduction> {
        self.productions
            .iter()
            .map(|p| RawProduction {
                lhs: self.names[p.lhs].clone(),
                rhs: p.rhs.iter().map(|&r| self.names[r].clone()).collect(),
            })
            .collect()
    }
}

/// Brings arbitrary productions (right-hand sides of length ≥ 1) into normal
/// form. A right-hand side longer than two is split right-recursively through
/// fresh helper nonterminals named after the left-hand side with primes
/// appended (`S -> A B C` becomes `S -> A S'`, `S' -> B C`). Production order
/// is kept, with helpers emitted directly after the production they came
/// from, so index-based tie-breaking stays meaningful.
pub fn normalize_grammar(raw: &[RawProduction]) -> Result<Grammar, GrammarError> {
    if raw.is_empty() {
        return Err(GrammarError::Empty);
    }
    let mut taken: BTreeSet<String> = BTreeSet::new();
    for p in raw {
        taken.insert(p.lhs.clone());
        taken.extend(p.rhs.iter().cloned());
    }
    let mut out = Vec::with_capacity(raw.len());
    let mut fresh: BTreeMap<String, String> = BTreeMap::new();
    for (index, p) in raw.iter().enumerate() {
        if p.rhs.is_empty() {
            return Err(GrammarError::EmptyRhs { index });
        }
        if p.rhs.len() <= 2 {
            out.push(p.clone());
            continue;
        }
        let mut lhs = p.lhs.clone();
        let mut rest: &[String] = &p.rhs;
        while rest.len() > 2 {
            let mut name = format!("{}'", p.lhs);
            while taken.contains(&name) {
                name.push('\'');
            }
            taken.insert(name.clone());
            fresh.insert(name.clone(), p.lhs.clone());
            out.push(RawProduction { lhs, rhs: vec![rest[0].clone(), name.clone()] });
            lhs = name;
            rest = &rest[1..];
        }
        out.push(RawProduction { lhs, rhs: rest.to_vec() });
    }
    Grammar::build(&out, &fresh)
}

/// Parses the line-oriented grammar format:
///
/// ```text
/// # comment
/// S -> NP VP | VP
/// ```
///
/// The first left-hand side is the start symbol.
pub fn parse_grammar_text(text: &str) -> Result<Vec<RawProduction>, GrammarError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (lhs, rhs) = content
            .split_once("->")
            .ok_or_else(|| GrammarError::Syntax { line: line_no, message: "missing '->'".into() })?;
        let lhs = lhs.trim();
        if lhs.is_empty() || lhs.split_whitespace().count() != 1 {
            return Err(GrammarError::Syntax { line: line_no, message: "left-hand side must be one symbol".into() });
        }
        for alt in rhs.split('|') {
            let symbols: Vec<String> = alt.split_whitespace().map(ToString::to_string).collect();
            if symbols.is_empty() {
                return Err(GrammarError::Syntax { line: line_no, message: "empty alternative".into() });
            }
            out.push(RawProduction { lhs: lhs.to_string(), rhs: symbols });
        }
    }
    if out.is_empty() {
        return Err(GrammarError::Empty);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn already_normal_is_unchanged() {
        let raw = vec![RawProduction::new("S", &["a"])];
        let g = normalize_grammar(&raw).unwrap();
        assert_eq!(g.to_raw(), raw);
        assert_eq!(g.start_name(), "S");
        assert_eq!(g.terminals().collect::<Vec<_>>(), ["a"]);
    }

    #[test]
    fn single_split() {
        let g = normalize_grammar(&[RawProduction::new("S", &["A", "B", "C"])]).unwrap();
        assert_eq!(g.to_raw(), vec![RawProduction::new("S", &["A", "S'"]), RawProduction::new("S'", &["B", "C"])]);
        let fresh = g.lookup("S'").unwrap();
        assert_eq!(g.origin(fresh), g.start());
    }

    #[test]
    fn fresh_names_avoid_collisions() {
        let g = normalize_grammar(&[
            RawProduction::new("S", &["A", "B", "C", "D"]),
            RawProduction::new("S'", &["x"]),
        ])
        .unwrap();
        let names: Vec<String> = g.to_raw().into_iter().map(|p| p.lhs).collect();
        assert_eq!(names, ["S", "S''", "S'''", "S'"]);
    }

    #[test]
    fn unit_cycle_rejected() {
        let err = normalize_grammar(&[
            RawProduction::new("S", &["A"]),
            RawProduction::new("A", &["B"]),
            RawProduction::new("B", &["A"]),
            RawProduction::new("B", &["b"]),
        ])
        .unwrap_err();
        assert_eq!(err, GrammarError::CyclicUnitChain(vec!["A".into(), "B".into(), "A".into()]));
        assert!(matches!(
            Grammar::new(&[RawProduction::new("S", &["S"])]),
            Err(GrammarError::CyclicUnitChain(_))
        ));
    }

    #[test]
    fn new_rejects_long_rhs() {
        assert_eq!(
            Grammar::new(&[RawProduction::new("S", &["a", "b", "c"])]),
            Err(GrammarError::NotNormalForm { index: 0, len: 3 })
        );
        assert_eq!(Grammar::new(&[]), Err(GrammarError::Empty));
    }

    #[test]
    fn text_format() {
        let raw = parse_grammar_text("# toy\nS -> NP VP | VP  # trailing\n\nNP -> SYM\n").unwrap();
        assert_eq!(
            raw,
            vec![
                RawProduction::new("S", &["NP", "VP"]),
                RawProduction::new("S", &["VP"]),
                RawProduction::new("NP", &["SYM"]),
            ]
        );
        assert_eq!(parse_grammar_text("S NP").unwrap_err(), GrammarError::Syntax { line: 1, message: "missing '->'".into() });
        assert!(matches!(parse_grammar_text("S -> a |"), Err(GrammarError::Syntax { line: 1, .. })));
        assert_eq!(parse_grammar_text("# nothing"), Err(GrammarError::Empty));
    }
}
