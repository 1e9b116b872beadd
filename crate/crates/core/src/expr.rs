//! Flat pre-order expressions.
//!
//! An expression is a token buffer; subtrees are half-open spans found by a
//! running child-deficit walk. No linked tree is ever built.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::ExprError;
use crate::vocab::{Literal, Operator, Token, TokenKind};

/// A validated, arity-consistent pre-order token sequence.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrefixExpr {
    tokens: Vec<Token>,
}

/// End (exclusive) of the subtree rooted at `start`.
///
/// The slice must be arity-consistent from `start` on.
#[inline]
pub fn subtree_end(tokens: &[Token], start: usize) -> usize {
    let mut need = 1usize;
    let mut i = start;
    while need > 0 {
        need = need - 1 + tokens[i].arity();
        i += 1;
    }
    i
}

/// Spans of the direct children of the node at `start`.
pub fn child_spans(tokens: &[Token], start: usize) -> ChildSpans<'_> {
    ChildSpans {
        tokens,
        next: start + 1,
        remaining: tokens[start].arity(),
    }
}

pub struct ChildSpans<'a> {
    tokens: &'a [Token],
    next: usize,
    remaining: usize,
}

impl Iterator for ChildSpans<'_> {
    type Item = Range<usize>;

    fn next(&mut self) -> Option<Range<usize>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let start = self.next;
        let end = subtree_end(self.tokens, start);
        self.next = end;
        Some(start..end)
    }
}

/// Check the deficit walk; `Ok(())` iff the sequence is one complete tree.
pub fn check_arity(tokens: &[Token]) -> Result<(), ExprError> {
    if tokens.is_empty() {
        return Err(ExprError::Empty);
    }
    let mut need = 1usize;
    for (i, t) in tokens.iter().enumerate() {
        if need == 0 {
            return Err(ExprError::Overfull {
                used: i,
                len: tokens.len(),
            });
        }
        need = need - 1 + t.arity();
    }
    if need > 0 {
        return Err(ExprError::Underfull { missing: need });
    }
    Ok(())
}

/// Validate a token sequence into an expression.
pub fn validate(tokens: Vec<Token>) -> Result<PrefixExpr, ExprError> {
    check_arity(&tokens)?;
    Ok(PrefixExpr { tokens })
}

/// Parse whitespace separated token names.
pub fn parse_prefix(text: &str) -> Result<PrefixExpr, ExprError> {
    let tokens = text
        .split_whitespace()
        .map(Token::from_str)
        .collect::<Result<Vec<_>, _>>()?;
    validate(tokens)
}

/// Space separated token names; inverse of [`parse_prefix`].
pub fn format_prefix(expr: &PrefixExpr) -> String {
    format_tokens(expr.tokens())
}

pub fn format_tokens(tokens: &[Token]) -> String {
    let mut out = String::with_capacity(tokens.len() * 4);
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.to_string());
    }
    out
}

impl PrefixExpr {
    /// Wrap tokens that are known to be arity-consistent.
    ///
    /// Debug builds still check.
    #[inline]
    pub fn from_valid(tokens: Vec<Token>) -> PrefixExpr {
        debug_assert!(check_arity(&tokens).is_ok(), "{tokens:?}");
        PrefixExpr { tokens }
    }

    pub fn leaf(tok: Token) -> PrefixExpr {
        assert!(tok.is_leaf());
        PrefixExpr { tokens: vec![tok] }
    }

    #[inline]
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.tokens
    }

    #[inline]
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    #[inline]
    pub fn root(&self) -> Token {
        self.tokens[0]
    }

    pub fn subtree_span(&self, index: usize) -> Result<Range<usize>, ExprError> {
        if index >= self.tokens.len() {
            return Err(ExprError::OutOfBounds {
                index,
                len: self.tokens.len(),
            });
        }
        Ok(index..subtree_end(&self.tokens, index))
    }

    pub fn subtree(&self, index: usize) -> Result<PrefixExpr, ExprError> {
        let span = self.subtree_span(index)?;
        Ok(PrefixExpr {
            tokens: self.tokens[span].to_vec(),
        })
    }

    pub fn count_constants(&self) -> usize {
        count_constants(&self.tokens)
    }

    /// Sorted, deduplicated 1-based variable indices.
    pub fn variables(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.tokens.iter().filter_map(|t| t.as_variable()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn count_unique_variables(&self) -> usize {
        self.variables().len()
    }

    pub fn max_variable(&self) -> usize {
        self.tokens
            .iter()
            .filter_map(|t| t.as_variable())
            .max()
            .unwrap_or(0)
    }

    pub fn has_non_finite_literal(&self) -> bool {
        self.tokens.iter().any(|t| t.is_non_finite_literal())
    }

    pub fn canonicalize(&self) -> PrefixExpr {
        PrefixExpr {
            tokens: canonicalize_tokens(&self.tokens),
        }
    }

    pub fn prune_constants(&self) -> PrefixExpr {
        let tokens = prune(&self.tokens, 0).unwrap_or_else(|| vec![Token::lit(Literal::Zero)]);
        PrefixExpr::from_valid(tokens)
    }

    /// Replace every `mult-k`/`div-k` with a multiplication by a free constant.
    pub fn expand_integer_ops(&self) -> PrefixExpr {
        let mut out = Vec::with_capacity(self.tokens.len() + 4);
        for &t in &self.tokens {
            if t.as_operator().and_then(|o| o.info().fold).is_some() {
                out.push(Token::op(Operator::Mul));
                out.push(Token::CONST);
            } else {
                out.push(t);
            }
        }
        PrefixExpr::from_valid(out)
    }

    pub fn format_infix(&self) -> String {
        let mut s = String::new();
        infix(&self.tokens, 0, &mut s);
        s
    }
}

pub fn count_constants(tokens: &[Token]) -> usize {
    tokens.iter().filter(|t| t.is_constant()).count()
}

/// Bitmask of variables `x1..x64` present in the slice.
#[inline]
pub fn variable_mask(tokens: &[Token]) -> u64 {
    let mut m = 0u64;
    for t in tokens {
        if let Some(i) = t.as_variable() {
            if i <= 64 {
                m |= 1 << (i - 1);
            }
        }
    }
    m
}

/// Canonical operand order for every commutative node, children first.
pub fn canonicalize_tokens(tokens: &[Token]) -> Vec<Token> {
    let mut out = Vec::with_capacity(tokens.len());
    canon_into(tokens, 0, &mut out);
    out
}

fn canon_into(tokens: &[Token], start: usize, out: &mut Vec<Token>) -> usize {
    let root = tokens[start];
    match root.arity() {
        0 => {
            out.push(root);
            start + 1
        }
        1 => {
            out.push(root);
            canon_into(tokens, start + 1, out)
        }
        _ => {
            out.push(root);
            let at = out.len();
            let mid = canon_into(tokens, start + 1, out);
            let split = out.len();
            let end = canon_into(tokens, mid, out);
            let commutative = root.as_operator().is_some_and(|o| o.info().commutative);
            if commutative && out[at..split] > out[split..] {
                out[at..].rotate_left(split - at);
            }
            end
        }
    }
}

/// Whether the sequence is already in canonical operand order.
pub fn is_canonical(tokens: &[Token]) -> bool {
    canonicalize_tokens(tokens) == tokens
}

fn prune(tokens: &[Token], start: usize) -> Option<Vec<Token>> {
    let root = tokens[start];
    match root.arity() {
        0 => (!root.is_constant()).then(|| vec![root]),
        1 => {
            let child = prune(tokens, start + 1)?;
            let mut v = Vec::with_capacity(child.len() + 1);
            v.push(root);
            v.extend(child);
            Some(v)
        }
        _ => {
            let mut spans = child_spans(tokens, start);
            let a = spans.next().expect("binary node");
            let b = spans.next().expect("binary node");
            match (prune(tokens, a.start), prune(tokens, b.start)) {
                (None, None) => None,
                (Some(x), None) | (None, Some(x)) => Some(x),
                (Some(x), Some(y)) => {
                    let mut v = Vec::with_capacity(x.len() + y.len() + 1);
                    v.push(root);
                    v.extend(x);
                    v.extend(y);
                    Some(v)
                }
            }
        }
    }
}

fn infix(tokens: &[Token], start: usize, s: &mut String) -> usize {
    let t = tokens[start];
    let op = match t.kind() {
        TokenKind::Operator(op) => op,
        TokenKind::Variable(i) => {
            s.push_str(&format!("x{i}"));
            return start + 1;
        }
        TokenKind::Literal(l) => {
            s.push_str(l.name());
            return start + 1;
        }
        TokenKind::ConstantPlaceholder => {
            s.push('c');
            return start + 1;
        }
    };
    use Operator::*;
    match op {
        Add | Sub | Mul | Div | Pow => {
            let sym = match op {
                Add => " + ",
                Sub => " - ",
                Mul => " * ",
                Div => " / ",
                _ => " ^ ",
            };
            s.push('(');
            let mid = infix(tokens, start + 1, s);
            s.push_str(sym);
            let end = infix(tokens, mid, s);
            s.push(')');
            end
        }
        Pow2 | Pow3 | Pow4 | Pow5 | Pow1_2 | Pow1_3 | Pow1_4 | Pow1_5 => {
            let exp = match op {
                Pow2 => "2",
                Pow3 => "3",
                Pow4 => "4",
                Pow5 => "5",
                Pow1_2 => "(1/2)",
                Pow1_3 => "(1/3)",
                Pow1_4 => "(1/4)",
                _ => "(1/5)",
            };
            s.push('(');
            let end = infix(tokens, start + 1, s);
            s.push('^');
            s.push_str(exp);
            s.push(')');
            end
        }
        Mult2 | Mult3 | Mult4 | Mult5 => {
            let k = &op.name()[4..];
            s.push('(');
            s.push_str(k);
            s.push_str(" * ");
            let end = infix(tokens, start + 1, s);
            s.push(')');
            end
        }
        Div2 | Div3 | Div4 | Div5 => {
            let k = &op.name()[3..];
            s.push('(');
            let end = infix(tokens, start + 1, s);
            s.push_str(" / ");
            s.push_str(k);
            s.push(')');
            end
        }
        Neg => {
            s.push_str("(-");
            let end = infix(tokens, start + 1, s);
            s.push(')');
            end
        }
        Inv => {
            s.push_str("(1 / ");
            let end = infix(tokens, start + 1, s);
            s.push(')');
            end
        }
        _ => {
            s.push_str(op.name());
            s.push('(');
            let end = infix(tokens, start + 1, s);
            s.push(')');
            end
        }
    }
}

impl fmt::Display for PrefixExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_tokens(&self.tokens))
    }
}

impl fmt::Debug for PrefixExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", format_tokens(&self.tokens))
    }
}

impl FromStr for PrefixExpr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_prefix(s)
    }
}

impl TryFrom<Vec<Token>> for PrefixExpr {
    type Error = ExprError;

    fn try_from(tokens: Vec<Token>) -> Result<Self, Self::Error> {
        validate(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> PrefixExpr {
        parse_prefix(s).unwrap()
    }

    #[test]
    fn validate_examples() {
        assert!(parse_prefix("+ x1 C").is_ok());
        assert_eq!(
            parse_prefix("+ x1").unwrap_err(),
            ExprError::Underfull { missing: 1 }
        );
        assert!(parse_prefix("+ mult2 sin x1 pow2 C").is_ok());
        assert_eq!(
            parse_prefix("x1 x2").unwrap_err(),
            ExprError::Overfull { used: 1, len: 2 }
        );
        assert_eq!(parse_prefix("").unwrap_err(), ExprError::Empty);
        assert!(matches!(parse_prefix("+ x1 y"), Err(ExprError::Token(_))));
    }

    #[test]
    fn spans() {
        let e = p("* / x1 pow2 x2 C");
        assert_eq!(e.subtree_span(1).unwrap(), 1..5);
        assert_eq!(e.subtree_span(2).unwrap(), 2..3);
        assert_eq!(e.subtree_span(5).unwrap(), 5..6);
        assert!(e.subtree_span(6).is_err());
        assert_eq!(p("neg neg x1").subtree_span(0).unwrap(), 0..3);
        let kids: Vec<_> = child_spans(e.tokens(), 0).collect();
        assert_eq!(kids, vec![1..5, 5..6]);
    }

    #[test]
    fn infix_examples() {
        assert_eq!(p("+ x1 C").format_infix(), "(x1 + c)");
        assert_eq!(p("mult2 sin x1").format_infix(), "(2 * sin(x1))");
        assert_eq!(p("pow2 div2 x1").format_infix(), "((x1 / 2)^2)");
        assert_eq!(p("neg inv x3").format_infix(), "(-(1 / x3))");
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(p("+ x2 x1").canonicalize(), p("+ x1 x2"));
        assert_eq!(p("+ x1 x2").canonicalize(), p("+ x1 x2"));
        assert_eq!(p("* x1 + x2 x1").canonicalize(), p("* + x1 x2 x1"));
        assert_eq!(p("- x2 x1").canonicalize(), p("- x2 x1"));
        assert_eq!(p("+ C sin x1").canonicalize(), p("+ sin x1 C"));
    }

    #[test]
    fn prune_examples() {
        assert_eq!(p("+ mult2 sin x1 C").prune_constants(), p("mult2 sin x1"));
        assert_eq!(p("mult2 sin / x1 C").prune_constants(), p("mult2 sin x1"));
        assert_eq!(p("C").prune_constants(), p("0"));
        assert_eq!(p("sin C").prune_constants(), p("0"));
        assert_eq!(p("* / x1 pow2 x2 C").prune_constants(), p("/ x1 pow2 x2"));
    }

    #[test]
    fn expand_examples() {
        assert_eq!(p("mult2 x1").expand_integer_ops(), p("* C x1"));
        assert_eq!(p("x1").expand_integer_ops(), p("x1"));
        assert_eq!(p("div3 sin x1").expand_integer_ops(), p("* C sin x1"));
    }

    #[test]
    fn counts() {
        assert_eq!(p("+ x1 x1").count_unique_variables(), 1);
        assert_eq!(p("+ C * C x2").count_constants(), 2);
        let e = p("* / x1 pow2 x2 C");
        assert_eq!(e.len(), 6);
        assert_eq!(e.count_unique_variables(), 2);
        assert_eq!(e.count_constants(), 1);
        assert_eq!(variable_mask(e.tokens()), 0b11);
    }
}
