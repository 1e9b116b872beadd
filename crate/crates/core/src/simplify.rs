//! Rule matching and the simplification loop.

use std::ops::Range;

use rustc_hash::FxHashMap;

use crate::cancel::{cancel_tokens, collapse_tokens};
use crate::expr::{canonicalize_tokens, child_spans, subtree_end, PrefixExpr};
use crate::rules::{Rule, RuleSet};
use crate::vocab::Token;

/// Default number of rule/cancellation sweeps.
pub const DEFAULT_BUDGET: usize = 10;

/// Largest pattern variable index the matcher supports.
const MAX_PATTERN_VARS: usize = 16;

/// Variable bindings produced by a successful match: pattern variable `xk`
/// maps to a token span of the subject.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Binding {
    spans: Vec<Option<Range<usize>>>,
}

impl Binding {
    /// Span bound to pattern variable `x<var>`.
    pub fn get(&self, var: usize) -> Option<Range<usize>> {
        self.spans.get(var.checked_sub(1)?).cloned().flatten()
    }

    fn set(&mut self, var: usize, span: Range<usize>) {
        if self.spans.len() < var {
            self.spans.resize(var, None);
        }
        self.spans[var - 1] = Some(span);
    }
}

/// Whether a pattern variable may bind `span`. Rules hold for variables
/// ranging over the reals, so subtrees with `inf`, `-inf` or `nan` are
/// never bound. Subtrees made only of placeholders and literals are left to
/// constant absorption, and a repeated variable never binds a subtree with
/// a placeholder since every placeholder is an independent constant.
#[inline]
fn bindable(span: &[Token], repeated: bool) -> bool {
    if span.iter().any(|t| t.as_literal().is_some_and(|l| !l.is_finite())) {
        return false;
    }
    if !span.contains(&Token::CONST) {
        return true;
    }
    !repeated && span.iter().any(|t| t.is_variable())
}

/// Structural match of `pattern` against the subtree of `subject` starting
/// at `at`. Pattern variables bind whole subtrees (see [`bindable`]); every
/// other pattern token must equal the subject token.
pub fn match_pattern(pattern: &PrefixExpr, subject: &PrefixExpr, at: usize) -> Option<Binding> {
    let s = subject.tokens();
    if at >= s.len() {
        return None;
    }
    let mut b = Binding::default();
    let mut pos = at;
    for &pt in pattern.tokens() {
        if pos >= s.len() {
            return None;
        }
        if let Some(v) = pt.as_variable() {
            let end = subtree_end(s, pos);
            let prev = b.get(v);
            if !bindable(&s[pos..end], prev.is_some()) {
                return None;
            }
            match prev {
                Some(prev) => {
                    if s[prev] != s[pos..end] {
                        return None;
                    }
                }
                None => b.set(v, pos..end),
            }
            pos = end;
        } else {
            if s[pos] != pt {
                return None;
            }
            pos += 1;
        }
    }
    Some(b)
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    edges: Vec<(Token, u32)>,
    rule: Option<u32>,
}

/// Prefix tree over patterns of one (root token, length) bucket.
#[derive(Debug, Clone)]
struct Trie {
    len: usize,
    nodes: Vec<TrieNode>,
}

impl Trie {
    fn new(len: usize) -> Trie {
        Trie {
            len,
            nodes: vec![TrieNode::default()],
        }
    }

    fn insert(&mut self, pattern: &[Token], rule: u32) {
        let mut n = 0usize;
        for &t in pattern {
            let pos = self.nodes[n].edges.binary_search_by(|e| e.0.cmp(&t));
            n = match pos {
                Ok(i) => self.nodes[n].edges[i].1 as usize,
                Err(i) => {
                    let id = self.nodes.len() as u32;
                    self.nodes.push(TrieNode::default());
                    self.nodes[n].edges.insert(i, (t, id));
                    id as usize
                }
            };
        }
        self.nodes[n].rule.get_or_insert(rule);
    }

    /// First matching rule in lexicographic pattern order.
    fn find(
        &self,
        subject: &[Token],
        bind: &mut [Option<(u32, u32)>; MAX_PATTERN_VARS],
    ) -> Option<u32> {
        self.dfs(0, subject, 0, bind)
    }

    fn dfs(
        &self,
        node: usize,
        s: &[Token],
        pos: usize,
        bind: &mut [Option<(u32, u32)>; MAX_PATTERN_VARS],
    ) -> Option<u32> {
        let n = &self.nodes[node];
        if let Some(r) = n.rule {
            return (pos == s.len()).then_some(r);
        }
        if pos >= s.len() {
            return None;
        }
        let st = s[pos];
        for &(t, next) in &n.edges {
            if let Some(v) = t.as_variable() {
                let end = subtree_end(s, pos);
                let slot = v - 1;
                if !bindable(&s[pos..end], bind[slot].is_some()) {
                    continue;
                }
                match bind[slot] {
                    Some((a, b)) => {
                        if s[a as usize..b as usize] != s[pos..end] {
                            continue;
                        }
                        if let Some(r) = self.dfs(next as usize, s, end, bind) {
                            return Some(r);
                        }
                    }
                    None => {
                        bind[slot] = Some((pos as u32, end as u32));
                        let found = self.dfs(next as usize, s, end, bind);
                        bind[slot] = None;
                        if found.is_some() {
                            return found;
                        }
                    }
                }
            } else if t == st {
                if let Some(r) = self.dfs(next as usize, s, pos + 1, bind) {
                    return Some(r);
                }
            }
        }
        None
    }
}

/// Rules organised for matching: explicit rules in a hash table, rules with
/// variables in per-root buckets ordered from the longest pattern down.
#[derive(Debug, Clone, Default)]
pub struct RuleIndex {
    explicit: FxHashMap<Vec<Token>, Vec<Token>>,
    buckets: Vec<Vec<Trie>>,
    rules: Vec<Rule>,
    max_len: usize,
}

/// Indexes every rule whose pattern has at most `l_max` tokens (all rules
/// when `None`).
pub fn build_index(set: &RuleSet, l_max: Option<usize>) -> RuleIndex {
    RuleIndex::from_rules(set.rules().iter().cloned(), l_max)
}

impl RuleIndex {
    pub fn from_rules(rules: impl IntoIterator<Item = Rule>, l_max: Option<usize>) -> RuleIndex {
        let cap = l_max.unwrap_or(usize::MAX);
        let mut idx = RuleIndex {
            buckets: vec![Vec::new(); 256],
            ..RuleIndex::default()
        };
        for rule in rules {
            idx.add(rule, cap);
        }
        for b in &mut idx.buckets {
            b.sort_by_key(|r| std::cmp::Reverse(r.len));
        }
        idx
    }

    fn add(&mut self, rule: Rule, cap: usize) {
        let pat = rule.pattern.tokens();
        if pat.len() > cap || rule.pattern.max_variable() > MAX_PATTERN_VARS {
            return;
        }
        self.max_len = self.max_len.max(pat.len());
        if rule.explicit {
            self.explicit
                .entry(pat.to_vec())
                .or_insert_with(|| rule.replacement.tokens().to_vec());
            self.rules.push(rule);
            return;
        }
        let id = self.rules.len() as u32;
        let root = pat[0].code() as usize;
        let bucket = &mut self.buckets[root];
        let trie = match bucket.iter_mut().position(|t| t.len == pat.len()) {
            Some(i) => &mut bucket[i],
            None => {
                bucket.push(Trie::new(pat.len()));
                bucket.last_mut().expect("just pushed")
            }
        };
        trie.insert(pat, id);
        self.rules.push(rule);
    }

    /// Adds rules to an existing index.
    pub fn extend(&mut self, rules: impl IntoIterator<Item = Rule>) {
        if self.buckets.is_empty() {
            self.buckets = vec![Vec::new(); 256];
        }
        for rule in rules {
            self.add(rule, usize::MAX);
        }
        for b in &mut self.buckets {
            b.sort_by_key(|r| std::cmp::Reverse(r.len));
        }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Indexed rules in insertion order.
    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Longest indexed pattern.
    pub fn max_pattern_len(&self) -> usize {
        self.max_len
    }

    /// Pattern lengths indexed, ascending and deduplicated.
    pub fn pattern_lengths(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.rules.iter().map(|r| r.pattern.len()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Replacement of an explicit rule with exactly this pattern.
    pub fn lookup_explicit(&self, pattern: &[Token]) -> Option<&[Token]> {
        self.explicit.get(pattern).map(Vec::as_slice)
    }

    /// Rewrites the subtree `node` once at its root, if any rule applies.
    fn apply_at_root(&self, node: &[Token]) -> Option<Vec<Token>> {
        if self.rules.is_empty() {
            return None;
        }
        if node.len() <= self.max_len {
            if let Some(r) = self.explicit.get(node) {
                return Some(r.clone());
            }
        }
        let bucket = self.buckets.get(node[0].code() as usize)?;
        let mut bind = [None; MAX_PATTERN_VARS];
        for trie in bucket {
            if trie.len > node.len() {
                continue;
            }
            if let Some(id) = trie.find(node, &mut bind) {
                let rule = &self.rules[id as usize];
                // Rebuild the bindings for substitution.
                let mut b = [None; MAX_PATTERN_VARS];
                let mut pos = 0;
                for &pt in rule.pattern.tokens() {
                    if let Some(v) = pt.as_variable() {
                        let end = subtree_end(node, pos);
                        b[v - 1].get_or_insert((pos, end));
                        pos = end;
                    } else {
                        pos += 1;
                    }
                }
                let mut out = Vec::with_capacity(node.len());
                for &t in rule.replacement.tokens() {
                    match t.as_variable() {
                        Some(v) => {
                            let (a, e) = b[v - 1].expect("replacement variables are bound");
                            out.extend_from_slice(&node[a..e]);
                        }
                        None => out.push(t),
                    }
                }
                return Some(out);
            }
        }
        None
    }

    fn pass(&self, node: &[Token]) -> Vec<Token> {
        if let Some(r) = self.apply_at_root(node) {
            return self.pass(&r);
        }
        if node.len() == 1 {
            return node.to_vec();
        }
        let mut rebuilt = Vec::with_capacity(node.len());
        rebuilt.push(node[0]);
        let mut changed = false;
        for span in child_spans(node, 0) {
            let c = self.pass(&node[span.clone()]);
            changed |= c.as_slice() != &node[span];
            rebuilt.extend(c);
        }
        if changed {
            if let Some(r) = self.apply_at_root(&rebuilt) {
                return self.pass(&r);
            }
        }
        rebuilt
    }
}

/// One top-down rule pass.
pub fn rules_pass(expr: &PrefixExpr, index: &RuleIndex) -> PrefixExpr {
    PrefixExpr::from_valid(index.pass(expr.tokens()))
}

pub(crate) fn simplify_tokens(tokens: &[Token], index: &RuleIndex, budget: usize) -> Vec<Token> {
    let mut cur = canonicalize_tokens(tokens);
    for _ in 0..budget {
        let a = index.pass(&cur);
        let b = cancel_tokens(&a);
        let c = canonicalize_tokens(&b);
        if c == cur {
            break;
        }
        cur = c;
    }
    cur
}

/// Rule passes followed by placeholder collapse, repeated until nothing
/// changes or the budget is spent. No other cancellation is applied.
pub(crate) fn rewrite_tokens(tokens: &[Token], index: &RuleIndex, budget: usize) -> Vec<Token> {
    let mut cur = tokens.to_vec();
    for _ in 0..budget {
        let next = collapse_tokens(&index.pass(&cur));
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

/// Alternates rule and cancellation passes until nothing changes or the
/// budget is spent, canonicalizing after each sweep.
pub fn simplify(expr: &PrefixExpr, index: &RuleIndex, budget: usize) -> PrefixExpr {
    PrefixExpr::from_valid(simplify_tokens(expr.tokens(), index, budget))
}
