use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cfg::{Grammar, Sym};
use super::tokenize::TokenSequence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseNode {
    Leaf { symbol: String, token: usize },
    Branch { symbol: String, production: usize, children: Vec<ParseNode> },
}

impl ParseNode {
    pub fn symbol(&self) -> &str {
        match self {
            ParseNode::Leaf { symbol, .. } | ParseNode::Branch { symbol, .. } => symbol,
        }
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            ParseNode::Leaf { token, .. } => out.push(*token),
            ParseNode::Branch { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn render_into(&self, tokens: &TokenSequence, out: &mut String) {
        match self {
            ParseNode::Leaf { token, .. } => out.push_str(&tokens.tokens()[*token].norm),
            ParseNode::Branch { symbol, children, .. } => {
                out.push('(');
                out.push_str(symbol);
                for c in children {
                    out.push(' ');
                    c.render_into(tokens, out);
                }
                out.push(')');
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    pub root: ParseNode,
}

impl ParseTree {
    /// Token indices of the leaves, left to right.
    pub fn leaves(&self) -> Vec<usize> {
        self.root.leaves()
    }

    /// S-expression rendering with token text at the leaves, e.g.
    /// `(S (S (S a) (S a)) (S a))`.
    pub fn render(&self, tokens: &TokenSequence) -> String {
        let mut out = String::new();
        self.root.render_into(tokens, &mut out);
        out
    }
}

/// A maximal recognized constituent in a failed parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverSpan {
    pub start: usize,
    pub end: usize,
    pub symbol: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("cannot parse an empty token sequence")]
    EmptyInput,
    #[error("no complete derivation ({} partial spans)", cover.len())]
    NoParse { cover: Vec<CoverSpan> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Terminal,
    Unary { production: usize },
    Binary { production: usize, split: usize },
}

impl Choice {
    fn production(self) -> usize {
        match self {
            Choice::Terminal => usize::MAX,
            Choice::Unary { production } | Choice::Binary { production, .. } => production,
        }
    }
}

struct Chart {
    n: usize,
    nsym: usize,
    cells: Vec<Option<Choice>>,
}

impl Chart {
    fn slot(&self, i: usize, j: usize, sym: Sym) -> usize {
        // row-major over (start, length-1)
        (i * self.n + (j - i - 1)) * self.nsym + sym
    }

    fn get(&self, i: usize, j: usize, sym: Sym) -> Option<Choice> {
        self.cells[self.slot(i, j, sym)]
    }

    fn set(&mut self, i: usize, j: usize, sym: Sym, choice: Choice) {
        let s = self.slot(i, j, sym);
        self.cells[s] = Some(choice);
    }
}

/// Chart-parses `tokens` (matched on their `class`) under `grammar`.
///
/// When several derivations exist the returned tree is fixed by a
/// lexicographic rule applied top-down: the lowest production index wins at
/// each node, and among binary splits of the same production the longest
/// left constituent wins (the tree bottom-up leftmost reduction produces).
/// The choice at a node does not depend on its subtrees, so the rule is
/// evaluated per chart cell.
pub fn parse(tokens: &TokenSequence, grammar: &Grammar) -> Result<ParseTree, ParseError> {
    let n = tokens.len();
    if n == 0 {
        return Err(ParseError::EmptyInput);
    }
    let chart = fill_chart(tokens, grammar);
    match chart.get(0, n, grammar.start()) {
        Some(_) => Ok(ParseTree { root: build(&chart, grammar, 0, n, grammar.start()) }),
        None => Err(ParseError::NoParse { cover: cover(&chart, grammar, tokens) }),
    }
}

fn fill_chart(tokens: &TokenSequence, grammar: &Grammar) -> Chart {
    let n = tokens.len();
    let nsym = grammar.symbol_count();
    let mut chart = Chart { n, nsym, cells: vec![None; n * n * nsym] };
    let productions = grammar.productions();
    for len in 1..=n {
        for i in 0..=(n - len) {
            let j = i + len;
            if len == 1 {
                if let Some(t) = grammar.lookup(&tokens.tokens()[i].class) {
                    if !grammar.is_nonterminal(t) {
                        chart.set(i, j, t, Choice::Terminal);
                    }
                }
            } else {
                for (p, prod) in productions.iter().enumerate() {
                    if prod.rhs.len() != 2 || chart.get(i, j, prod.lhs).is_some() {
                        continue;
                    }
                    let (left, right) = (prod.rhs[0], prod.rhs[1]);
                    for k in (i + 1..j).rev() {
                        if chart.get(i, k, left).is_some() && chart.get(k, j, right).is_some() {
                            chart.set(i, j, prod.lhs, Choice::Binary { production: p, split: k });
                            break;
                        }
                    }
                }
            }
            // unit closure: presence only grows and the chosen production
            // index only falls, so this reaches a fixed point
            loop {
                let mut changed = false;
                for (p, prod) in productions.iter().enumerate() {
                    if prod.rhs.len() != 1 || chart.get(i, j, prod.rhs[0]).is_none() {
                        continue;
                    }
                    let better = match chart.get(i, j, prod.lhs) {
                        None => true,
                        Some(existing) => p < existing.production(),
                    };
                    if better {
                        chart.set(i, j, prod.lhs, Choice::Unary { production: p });
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
        }
    }
    chart
}

fn build(chart: &Chart, grammar: &Grammar, i: usize, j: usize, sym: Sym) -> ParseNode {
    let symbol = grammar.name(sym).to_string();
    match chart.get(i, j, sym).expect("chart entry present for chosen symbol") {
        Choice::Terminal => ParseNode::Leaf { symbol, token: i },
        Choice::Unary { production } => {
            let child = grammar.productions()[production].rhs[0];
            ParseNode::Branch { symbol, production, children: vec![build(chart, grammar, i, j, child)] }
        }
        Choice::Binary { production, split } => {
            let rhs = &grammar.productions()[production].rhs;
            ParseNode::Branch {
                symbol,
                production,
                children: vec![build(chart, grammar, i, split, rhs[0]), build(chart, grammar, split, j, rhs[1])],
            }
        }
    }
}

fn cover(chart: &Chart, grammar: &Grammar, tokens: &TokenSequence) -> Vec<CoverSpan> {
    let n = tokens.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut found = None;
        for j in (i + 1..=n).rev() {
            let start = grammar.start();
            let sym = if chart.get(i, j, start).is_some() {
                Some(start)
            } else {
                (0..grammar.symbol_count()).find(|&s| grammar.is_nonterminal(s) && chart.get(i, j, s).is_some())
            };
            if let Some(s) = sym {
                found = Some((j, grammar.name(s).to_string()));
                break;
            }
        }
        let (end, symbol) = found.unwrap_or_else(|| (i + 1, tokens.tokens()[i].class.clone()));
        out.push(CoverSpan { start: i, end, symbol });
        i = end;
    }
    out
}
