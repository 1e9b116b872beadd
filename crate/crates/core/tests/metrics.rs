use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use exprnorm::metrics::{
    bootstrap_ci, mean, median, nestedness, numeric_recovery, quantile, skeleton_report, token_f1,
    zss_distance, EPS32,
};
use exprnorm::{parse_prefix, EvalError, PrefixExpr, Token};

fn p(s: &str) -> PrefixExpr {
    parse_prefix(s).unwrap()
}

/// Labelled ordered tree read back from prefix tokens.
#[derive(Clone, Debug, PartialEq)]
struct Tree(Token, Vec<Tree>);

fn tree(tokens: &[Token]) -> (Tree, usize) {
    let mut used = 1;
    let mut kids = Vec::new();
    for _ in 0..tokens[0].arity() {
        let (t, n) = tree(&tokens[used..]);
        kids.push(t);
        used += n;
    }
    (Tree(tokens[0], kids), used)
}

fn size(f: &[Tree]) -> usize {
    f.iter().map(|t| 1 + size(&t.1)).sum()
}

/// Forest edit distance by the rightmost-root recursion, no memo: only
/// used on small trees.
fn forest_distance(a: &[Tree], b: &[Tree]) -> usize {
    if a.is_empty() || b.is_empty() {
        return size(a) + size(b);
    }
    let (ra, a_rest) = a.split_last().unwrap();
    let (rb, b_rest) = b.split_last().unwrap();
    let mut a_del = a_rest.to_vec();
    a_del.extend(ra.1.iter().cloned());
    let mut b_ins = b_rest.to_vec();
    b_ins.extend(rb.1.iter().cloned());
    (forest_distance(&a_del, b) + 1)
        .min(forest_distance(a, &b_ins) + 1)
        .min(
            forest_distance(a_rest, b_rest)
                + forest_distance(&ra.1, &rb.1)
                + usize::from(ra.0 != rb.0),
        )
}

fn small_tree() -> impl Strategy<Value = PrefixExpr> {
    let leaf = prop_oneof![Just("x1"), Just("x2"), Just("C")].prop_map(|s| s.to_string());
    leaf.prop_recursive(3, 6, 2, |inner| {
        prop_oneof![
            (prop_oneof![Just("sin"), Just("exp")], inner.clone())
                .prop_map(|(o, a)| format!("{o} {a}")),
            (prop_oneof![Just("+"), Just("*")], inner.clone(), inner)
                .prop_map(|(o, a, b)| format!("{o} {a} {b}")),
        ]
    })
    .prop_filter("at most six nodes", |s| s.split(' ').count() <= 6)
    .prop_map(|s| p(&s))
}

proptest! {
    #[test]
    fn zss_matches_brute_force(a in small_tree(), b in small_tree()) {
        let ta = tree(a.tokens()).0;
        let tb = tree(b.tokens()).0;
        prop_assert_eq!(zss_distance(a.tokens(), b.tokens()), forest_distance(&[ta], &[tb]));
    }

    #[test]
    fn zss_is_a_metric(a in small_tree(), b in small_tree(), c in small_tree()) {
        let d = |x: &PrefixExpr, y: &PrefixExpr| zss_distance(x.tokens(), y.tokens());
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert_eq!(d(&a, &b) == 0, a == b);
    }
}

#[test]
fn nestedness_examples() {
    assert_eq!(nestedness(p("sin log acosh x1").tokens()), 2);
    assert_eq!(nestedness(p("sin log + x1 C").tokens()), 1);
    assert_eq!(nestedness(p("+ sin x1 cos x2").tokens()), 0);
}

#[test]
fn token_f1_examples() {
    let f = |a: &str, b: &str| token_f1(p(a).tokens(), p(b).tokens());
    assert_eq!(f("+ x1 C", "+ x1 C"), 1.0);
    assert_eq!(f("x1", "x2"), 0.0);
    // overlap 2 of 3 predicted, 2 of 2 true
    assert!((f("+ x1 C", "sin x1") - 0.4).abs() < 1e-12);
    assert!((f("+ x1 x1", "* x1 x2") - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn report_fields() {
    let r = skeleton_report(&p("+ * C x1 C"), &p("* C x2"));
    assert!(!r.srr);
    assert_eq!(r.excess_constants, 1);
    assert_eq!(r.variable_recall, 0.0);
    assert!((r.length_ratio - 5.0 / 3.0).abs() < 1e-12);
}

#[test]
fn recovery_rate() {
    assert_eq!(numeric_recovery(&[0.0, EPS32, 1e-3, 1.0], EPS32), Ok(0.5));
    assert_eq!(
        numeric_recovery(&[], EPS32),
        Err(EvalError::TooFewValues(1))
    );
}

#[test]
fn quantiles() {
    let v = [3.0, 1.0, 2.0, 4.0];
    assert_eq!(median(&v), 2.5);
    assert_eq!(quantile(&v, 0.0), 1.0);
    assert_eq!(quantile(&v, 1.0), 4.0);
    assert!(quantile(&[], 0.5).is_nan());
}

#[test]
fn bootstrap_width_matches_normal_theory() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..1000).map(|_| n.sample(&mut rng)).collect();
    let (lo, hi) = bootstrap_ci(&v, &mean, 2000, 0.95, 4).unwrap();
    let expected = 2.0 * 1.96 / 1000f64.sqrt();
    let width = hi - lo;
    assert!(
        (width - expected).abs() <= 0.2 * expected,
        "{width} vs {expected}"
    );
    assert!(lo < mean(&v) && mean(&v) < hi);
    assert_eq!(
        bootstrap_ci(&[1.0], &mean, 10, 0.95, 0),
        Err(EvalError::TooFewValues(2))
    );
}
