//! Multiplicity-based cancellation over sum and product clusters.
//!
//! The pass works bottom-up. At each node it considers a few rewrites
//! (constant collapse, inverse-pair folding, sum or product cluster
//! rebuild) and adopts the best one only if it is strictly smaller in
//! (length, constant count) than the node it replaces.

use rustc_hash::FxHashMap;

use crate::eval::compile_tokens;
use crate::expr::{canonicalize_tokens, child_spans, count_constants, PrefixExpr};
use crate::vocab::{Literal, Operator, Token, TokenKind};

/// One bottom-up cancellation sweep.
pub fn cancellation_pass(expr: &PrefixExpr) -> PrefixExpr {
    PrefixExpr::from_valid(cancel_tokens(expr.tokens()))
}

pub(crate) fn cancel_tokens(tokens: &[Token]) -> Vec<Token> {
    cancel_node(tokens)
}

/// Bottom-up collapse of variable-free placeholder subtrees, nothing else.
pub(crate) fn collapse_tokens(tokens: &[Token]) -> Vec<Token> {
    if tokens.len() == 1 || !tokens.iter().any(|t| t.is_constant()) {
        return tokens.to_vec();
    }
    let mut cur = Vec::with_capacity(tokens.len());
    cur.push(tokens[0]);
    for span in child_spans(tokens, 0) {
        cur.extend(collapse_tokens(&tokens[span]));
    }
    collapse_constant(&cur).unwrap_or(cur)
}

fn measure(t: &[Token]) -> (usize, usize) {
    (t.len(), count_constants(t))
}

fn cancel_node(node: &[Token]) -> Vec<Token> {
    if node.len() == 1 {
        return node.to_vec();
    }
    let mut cur = Vec::with_capacity(node.len());
    cur.push(node[0]);
    for span in child_spans(node, 0) {
        cur.extend(cancel_node(&node[span]));
    }
    let mut best: Option<Vec<Token>> = None;
    let mut consider = |cand: Option<Vec<Token>>| {
        if let Some(c) = cand {
            let target = best.as_deref().unwrap_or(&cur);
            if measure(&c) < measure(target) {
                best = Some(c);
            }
        }
    };
    consider(collapse_constant(&cur));
    consider(inverse_fold(&cur));
    let op = cur[0].as_operator().expect("non-leaf root is an operator");
    if is_sum_root(op) {
        consider(sum_cluster(&cur));
    }
    if is_product_root(op) {
        consider(product_cluster(&cur));
    }
    best.unwrap_or(cur)
}

fn is_sum_root(op: Operator) -> bool {
    matches!(op, Operator::Add | Operator::Sub | Operator::Neg) || op.mult_factor().is_some()
}

fn is_product_root(op: Operator) -> bool {
    matches!(op, Operator::Mul | Operator::Div | Operator::Inv)
        || op.integer_power().is_some()
        || op.div_factor().is_some()
}

const PROBE_CONSTANTS: [f64; 5] = [1.37, -0.59, 2.71, 0.83, -3.1];

/// Value of a variable-free subtree, trying a few constant assignments.
fn constant_value(t: &[Token]) -> Option<f64> {
    let plan = compile_tokens(t);
    let n = plan.slot_count();
    for s in 0..3 {
        let c: Vec<f64> = (0..n)
            .map(|i| PROBE_CONSTANTS[(i + s) % PROBE_CONSTANTS.len()])
            .collect();
        let v = plan.evaluate_point(&[], &c);
        if v.is_finite() {
            return Some(v);
        }
    }
    None
}

fn is_variable_free(t: &[Token]) -> bool {
    !t.iter().any(|x| x.is_variable())
}

/// A variable-free subtree containing the placeholder denotes a single free
/// constant, so it collapses to one placeholder.
fn collapse_constant(t: &[Token]) -> Option<Vec<Token>> {
    if t.len() == 1 || !is_variable_free(t) || !t.iter().any(|x| x.is_constant()) {
        return None;
    }
    if t.iter().any(|x| x.is_non_finite_literal()) {
        return None;
    }
    constant_value(t).map(|_| vec![Token::CONST])
}

fn inverse_fold(t: &[Token]) -> Option<Vec<Token>> {
    let u = t[0].as_operator()?;
    if u.arity() != 1 || t.len() < 3 {
        return None;
    }
    let v = t[1].as_operator()?;
    if v.arity() == 1 && v.total_bijection() && v.info().inverse == Some(u) {
        Some(t[2..].to_vec())
    } else {
        None
    }
}

#[derive(Default)]
struct SumState {
    // canonical term -> (integer coefficient, has placeholder coefficient)
    terms: FxHashMap<Vec<Token>, (i64, bool)>,
    constant: bool,
}

fn child(t: &[Token], i: usize) -> &[Token] {
    let span = child_spans(t, 0).nth(i).expect("child exists");
    &t[span]
}

fn is_const_leaf(t: &[Token]) -> bool {
    t.len() == 1 && t[0].is_constant()
}

fn collect_sum(t: &[Token], sign: i64, st: &mut SumState) -> Option<()> {
    let root = t[0];
    match root.kind() {
        TokenKind::ConstantPlaceholder => {
            st.constant = true;
            return Some(());
        }
        TokenKind::Literal(l) => {
            if !l.is_finite() {
                return None;
            }
            if l == Literal::Zero {
                return Some(());
            }
        }
        TokenKind::Operator(op) => match op {
            Operator::Add => {
                collect_sum(child(t, 0), sign, st)?;
                return collect_sum(child(t, 1), sign, st);
            }
            Operator::Sub => {
                collect_sum(child(t, 0), sign, st)?;
                return collect_sum(child(t, 1), -sign, st);
            }
            Operator::Neg => return collect_sum(&t[1..], -sign, st),
            Operator::Mul => {
                let (a, b) = (child(t, 0), child(t, 1));
                if is_const_leaf(b) {
                    add_term(st, a, 0, true);
                    return Some(());
                }
                if is_const_leaf(a) {
                    add_term(st, b, 0, true);
                    return Some(());
                }
            }
            Operator::Div => {
                if is_const_leaf(child(t, 1)) {
                    add_term(st, child(t, 0), 0, true);
                    return Some(());
                }
            }
            _ => {
                if let Some(k) = op.mult_factor() {
                    return collect_sum(&t[1..], sign.checked_mul(k)?, st);
                }
            }
        },
        TokenKind::Variable(_) => {}
    }
    add_term(st, t, sign, false);
    Some(())
}

fn add_term(st: &mut SumState, t: &[Token], coef: i64, c_coef: bool) {
    let key = canonicalize_tokens(t);
    let e = st.terms.entry(key).or_insert((0, false));
    e.0 = e.0.saturating_add(coef);
    e.1 |= c_coef;
}

fn sum_cluster(t: &[Token]) -> Option<Vec<Token>> {
    let mut st = SumState::default();
    collect_sum(t, 1, &mut st)?;
    let mut pos: Vec<(Vec<Token>, i64, bool)> = Vec::new();
    let mut neg: Vec<(Vec<Token>, i64)> = Vec::new();
    for (key, (coef, c_coef)) in st.terms {
        if coef.abs() > 1 << 40 {
            return None;
        }
        if st.constant && is_variable_free(&key) && constant_value(&key).is_some() {
            continue;
        }
        if c_coef {
            pos.push((key, 0, true));
        } else if coef > 0 {
            pos.push((key, coef, false));
        } else if coef < 0 {
            neg.push((key, -coef));
        }
    }
    pos.sort();
    neg.sort();
    let mut encoded: Vec<Vec<Token>> = pos
        .into_iter()
        .map(|(k, m, c)| {
            if c {
                let mut v = vec![Token::op(Operator::Mul)];
                v.extend(k);
                v.push(Token::CONST);
                v
            } else {
                encode_multiple(m, &k)
            }
        })
        .collect();
    if st.constant {
        encoded.push(vec![Token::CONST]);
    }
    let negs: Vec<Vec<Token>> = neg
        .into_iter()
        .map(|(k, m)| encode_multiple(m, &k))
        .collect();
    let mut acc: Option<Vec<Token>> = None;
    for e in encoded {
        acc = Some(match acc {
            None => e,
            Some(a) => binary(Operator::Add, &a, &e),
        });
    }
    for e in negs {
        acc = Some(match acc {
            None => {
                let mut v = vec![Token::op(Operator::Neg)];
                v.extend(e);
                v
            }
            Some(a) => binary(Operator::Sub, &a, &e),
        });
    }
    Some(acc.unwrap_or_else(|| vec![Token::lit(Literal::Zero)]))
}

fn binary(op: Operator, a: &[Token], b: &[Token]) -> Vec<Token> {
    let mut v = Vec::with_capacity(1 + a.len() + b.len());
    v.push(Token::op(op));
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Factors of `m` over {2..5}, largest first, if any exist.
fn small_factors(mut m: i64) -> Option<Vec<i64>> {
    let mut out = Vec::new();
    for f in [5, 4, 3, 2] {
        while m % f == 0 && m > 1 {
            out.push(f);
            m /= f;
        }
    }
    (m == 1).then_some(out)
}

fn largest_factorable(m: i64) -> i64 {
    (1..=m)
        .rev()
        .find(|&a| small_factors(a).is_some())
        .unwrap_or(1)
}

/// `m * t` using mult-k prefixes, splitting into a sum when `m` has a prime
/// factor above 5.
fn encode_multiple(m: i64, t: &[Token]) -> Vec<Token> {
    if m == 1 {
        return t.to_vec();
    }
    match small_factors(m) {
        Some(fs) => {
            let mut v: Vec<Token> = fs
                .iter()
                .map(|&f| Token::op(Operator::mult_k(f).expect("k in 2..=5")))
                .collect();
            v.extend_from_slice(t);
            v
        }
        None => {
            let a = largest_factorable(m);
            binary(
                Operator::Add,
                &encode_multiple(a, t),
                &encode_multiple(m - a, t),
            )
        }
    }
}

/// `t^e` using pow-k prefixes, splitting into a product when needed.
fn encode_power(e: i64, t: &[Token]) -> Vec<Token> {
    if e == 1 {
        return t.to_vec();
    }
    match small_factors(e) {
        Some(fs) => {
            let mut v: Vec<Token> = fs
                .iter()
                .map(|&f| Token::op(Operator::pow_k(f).expect("k in 2..=5")))
                .collect();
            v.extend_from_slice(t);
            v
        }
        None => {
            let a = largest_factorable(e);
            binary(Operator::Mul, &encode_power(a, t), &encode_power(e - a, t))
        }
    }
}

struct ProductState {
    factors: FxHashMap<Vec<Token>, i64>,
    constant: bool,
    zero: bool,
    negative: bool,
    num: i64,
    den: i64,
}

fn collect_product(t: &[Token], exp: i64, st: &mut ProductState) -> Option<()> {
    if exp.abs() > 1 << 20 {
        return None;
    }
    match t[0].kind() {
        TokenKind::ConstantPlaceholder => {
            st.constant = true;
            return Some(());
        }
        TokenKind::Literal(l) => match l {
            Literal::Zero => {
                if exp < 0 {
                    return None;
                }
                st.zero = true;
                return Some(());
            }
            Literal::One => return Some(()),
            Literal::MinusOne => {
                if exp % 2 != 0 {
                    st.negative = !st.negative;
                }
                return Some(());
            }
            Literal::Inf | Literal::NegInf | Literal::Nan => return None,
            Literal::Pi | Literal::E => {}
        },
        TokenKind::Operator(op) => match op {
            Operator::Mul => {
                collect_product(child(t, 0), exp, st)?;
                return collect_product(child(t, 1), exp, st);
            }
            Operator::Div => {
                collect_product(child(t, 0), exp, st)?;
                return collect_product(child(t, 1), -exp, st);
            }
            Operator::Inv => return collect_product(&t[1..], -exp, st),
            Operator::Neg => {
                if exp % 2 != 0 {
                    st.negative = !st.negative;
                }
                return collect_product(&t[1..], exp, st);
            }
            _ => {
                if let Some(k) = op.integer_power() {
                    return collect_product(&t[1..], exp.checked_mul(k)?, st);
                }
                if let Some(k) = op.mult_factor() {
                    scale(st, k, exp)?;
                    return collect_product(&t[1..], exp, st);
                }
                if let Some(k) = op.div_factor() {
                    scale(st, k, -exp)?;
                    return collect_product(&t[1..], exp, st);
                }
            }
        },
        TokenKind::Variable(_) => {}
    }
    let key = canonicalize_tokens(t);
    let e = st.factors.entry(key).or_insert(0);
    *e = e.checked_add(exp)?;
    Some(())
}

fn scale(st: &mut ProductState, k: i64, exp: i64) -> Option<()> {
    let p = k.checked_pow(u32::try_from(exp.unsigned_abs()).ok()?)?;
    if exp > 0 {
        st.num = st.num.checked_mul(p)?;
    } else {
        st.den = st.den.checked_mul(p)?;
    }
    Some(())
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn product_cluster(t: &[Token]) -> Option<Vec<Token>> {
    let mut st = ProductState {
        factors: FxHashMap::default(),
        constant: false,
        zero: false,
        negative: false,
        num: 1,
        den: 1,
    };
    collect_product(t, 1, &mut st)?;
    if st.zero {
        let has_pole = st.factors.values().any(|&e| e < 0);
        if has_pole && !st.constant {
            return None;
        }
        return Some(vec![if st.constant {
            Token::CONST
        } else {
            Token::lit(Literal::Zero)
        }]);
    }
    let mut num: Vec<(Vec<Token>, i64)> = Vec::new();
    let mut den: Vec<(Vec<Token>, i64)> = Vec::new();
    for (key, e) in st.factors {
        if st.constant && is_variable_free(&key) && constant_value(&key).is_some() {
            continue;
        }
        if e > 0 {
            num.push((key, e));
        } else if e < 0 {
            den.push((key, -e));
        }
    }
    num.sort();
    den.sort();
    let fold = |items: Vec<(Vec<Token>, i64)>| -> Option<Vec<Token>> {
        let mut acc: Option<Vec<Token>> = None;
        for (k, e) in items {
            let enc = encode_power(e, &k);
            acc = Some(match acc {
                None => enc,
                Some(a) => binary(Operator::Mul, &a, &enc),
            });
        }
        acc
    };
    let n = fold(num);
    let d = fold(den);
    let body = match (n, d) {
        (None, None) => None,
        (Some(n), None) => Some(n),
        (None, Some(d)) => {
            let mut v = vec![Token::op(Operator::Inv)];
            v.extend(d);
            Some(v)
        }
        (Some(n), Some(d)) => Some(binary(Operator::Div, &n, &d)),
    };
    if st.constant {
        return Some(match body {
            None => vec![Token::CONST],
            Some(b) => binary(Operator::Mul, &b, &[Token::CONST]),
        });
    }
    let mut out = body.unwrap_or_else(|| vec![Token::lit(Literal::One)]);
    let g = gcd(st.num, st.den);
    let (p, q) = (st.num / g, st.den / g);
    if q != 1 {
        let fs = small_factors(q)?;
        let mut v: Vec<Token> = fs
            .iter()
            .map(|&f| Token::op(Operator::div_k(f).expect("k")))
            .collect();
        v.extend(out);
        out = v;
    }
    if p != 1 {
        let fs = small_factors(p)?;
        let mut v: Vec<Token> = fs
            .iter()
            .map(|&f| Token::op(Operator::mult_k(f).expect("k")))
            .collect();
        v.extend(out);
        out = v;
    }
    if st.negative {
        out.insert(0, Token::op(Operator::Neg));
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_prefix;

    fn c(s: &str) -> String {
        cancellation_pass(&parse_prefix(s).unwrap()).to_string()
    }

    #[test]
    fn published_examples() {
        assert_eq!(c("+ x1 x1"), "mult2 x1");
        assert_eq!(c("- x2 x2"), "0");
        assert_eq!(c("* x1 inv x1"), "1");
    }

    #[test]
    fn constants_absorb() {
        assert_eq!(c("+ C C"), "C");
        assert_eq!(c("pow2 C"), "C");
        assert_eq!(c("* C 0"), "C");
        assert_eq!(c("+ + x1 C C"), "+ x1 C");
        assert_eq!(c("* / x1 pow2 x2 * C + x1 neg x1"), "* / x1 pow2 x2 C");
        assert_eq!(c("/ C 0"), "/ C 0");
    }

    #[test]
    fn folds() {
        assert_eq!(c("neg neg x1"), "x1");
        assert_eq!(c("log exp x1"), "x1");
        assert_eq!(c("exp log x1"), "exp log x1");
        assert_eq!(c("* x1 * x1 x1"), "pow3 x1");
        assert_eq!(c("+ x1 neg x2"), "- x1 x2");
        assert_eq!(c("+ x1 + x1 + x1 + x1 + x1 + x1 x1"), "+ x1 mult3 mult2 x1");
        assert_eq!(c("pow2 neg x1"), "pow2 x1");
    }

    #[test]
    fn never_grows() {
        for s in ["* x1 mult2 x2", "- x1 x2", "+ sin x1 cos x2", "/ x1 x2"] {
            assert_eq!(c(s), s);
        }
    }
}
