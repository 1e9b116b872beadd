//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use exprnorm::datagen::{
    build_holdout_index, is_contaminated, n_ops_pmf, sample_n_ops, sample_skeletons, GenConfig,
    Generator,
};
use exprnorm::discover::{discover_rules, DiscoveryConfig};
use exprnorm::fit::{
    equivalent, parsimony_score, probe_matrix, ratio_prefers, select_best, EquivalenceConfig,
    FitResult,
};
use exprnorm::metrics::{nestedness, quantile, zss_distance};
use exprnorm::simplify::{rules_pass, DEFAULT_BUDGET};
use exprnorm::{
    compile, open_engine, parse_prefix, Alphabet, DataMatrix, Engine, PrefixExpr, RuleIndex, Token,
};

fn rules_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/rules_l5.txt")
}

fn full_engine() -> &'static Engine {
    static E: OnceLock<Engine> = OnceLock::new();
    E.get_or_init(|| open_engine(&rules_path(), None).expect("rules asset loads"))
}

fn capped_engine() -> &'static Engine {
    static E: OnceLock<Engine> = OnceLock::new();
    E.get_or_init(|| open_engine(&rules_path(), Some(4)).expect("rules asset loads"))
}

fn p(s: &str) -> PrefixExpr {
    parse_prefix(s).unwrap()
}

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

/// Skeletons from the training distribution shared by the suite checks.
fn suite() -> Vec<PrefixExpr> {
    sample_skeletons(&GenConfig::default(), 1000, 20_240_601)
}

#[test]
fn semantic_preservation() {
    let engine = capped_engine();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = EquivalenceConfig::new(probe_matrix(1024, 3, 5.0, &mut rng));
    let start = Instant::now();
    let exprs = suite();
    let mut failures = Vec::new();
    for e in &exprs {
        let s = engine.simplify(e);
        if !equivalent(e, &s, &cfg, &mut rng) {
            failures.push(format!("{e} => {s}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let rate = 1.0 - failures.len() as f64 / exprs.len() as f64;
    for f in &failures {
        println!("  not equivalent: {f}");
    }
    report(
        "semantic preservation",
        rate >= 0.995 && secs < 600.0,
        format!(
            "{:.1}% equivalent (need >= 99.5%), {secs:.1}s (limit 600s)",
            rate * 100.0
        ),
    );
}

#[test]
fn length_monotonicity() {
    let engine = capped_engine();
    let exprs = suite();
    let violations: Vec<String> = exprs
        .iter()
        .filter_map(|e| {
            let s = engine.simplify(e);
            (s.len() > e.len()).then(|| format!("{e} => {s}"))
        })
        .collect();
    report(
        "length monotonicity",
        violations.is_empty(),
        format!(
            "{} of {} longer after simplification {:?}",
            violations.len(),
            exprs.len(),
            violations
        ),
    );
}

#[test]
fn idempotence() {
    let engine = capped_engine();
    let exprs = suite();
    let violations: Vec<String> = exprs
        .iter()
        .filter_map(|e| {
            let s = engine.simplify(e);
            let t = engine.simplify(&s);
            (s != t).then(|| format!("{e} => {s} => {t}"))
        })
        .collect();
    report(
        "idempotence",
        violations.is_empty(),
        format!(
            "{} of {} change on a second pass {:?}",
            violations.len(),
            exprs.len(),
            violations
        ),
    );
}

#[test]
fn throughput() {
    let engine = capped_engine();
    let exprs = sample_skeletons(&GenConfig::default(), 1 << 16, 99);
    let times: Vec<f64> = exprs
        .iter()
        .map(|e| {
            let t = Instant::now();
            std::hint::black_box(engine.simplify(e));
            t.elapsed().as_secs_f64()
        })
        .collect();
    let p50 = quantile(&times, 0.5) * 1e3;
    let p99 = quantile(&times, 0.99) * 1e3;
    report(
        "throughput",
        p50 <= 10.0 && p99 <= 100.0,
        format!(
            "{} expressions, median {p50:.4} ms (limit 10), p99 {p99:.4} ms (limit 100)",
            times.len()
        ),
    );
}

/// Coefficients of `x1`, `x2` and the intercept. Every expression over
/// `{+, -, neg, x1, x2, 0, 1}` is an integer affine form, so two
/// expressions are equivalent exactly when their forms agree.
fn affine(tokens: &[&str]) -> ([i64; 3], usize) {
    match tokens[0] {
        "x1" => ([1, 0, 0], 1),
        "x2" => ([0, 1, 0], 1),
        "0" => ([0, 0, 0], 1),
        "1" => ([0, 0, 1], 1),
        "neg" => {
            let (a, n) = affine(&tokens[1..]);
            ([-a[0], -a[1], -a[2]], n + 1)
        }
        op => {
            let (a, n) = affine(&tokens[1..]);
            let (b, m) = affine(&tokens[1 + n..]);
            let s = if op == "+" { 1 } else { -1 };
            (
                [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]],
                n + m + 1,
            )
        }
    }
}

/// Every prefix sequence of exactly `len` tokens over the toy alphabet.
fn toy_expressions(len: usize) -> Vec<Vec<&'static str>> {
    fn grow(
        need: usize,
        left: usize,
        cur: &mut Vec<&'static str>,
        out: &mut Vec<Vec<&'static str>>,
    ) {
        if need == 0 {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        if need > left {
            return;
        }
        for (t, arity) in [
            ("+", 2),
            ("-", 2),
            ("neg", 1),
            ("x1", 0),
            ("x2", 0),
            ("0", 0),
            ("1", 0),
        ] {
            cur.push(t);
            grow(need - 1 + arity, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    grow(1, len, &mut Vec::new(), &mut out);
    out
}

fn vars(tokens: &[&str]) -> BTreeSet<String> {
    tokens
        .iter()
        .filter(|t| t.starts_with('x'))
        .map(|t| t.to_string())
        .collect()
}

/// Rule discovery by exhaustive enumeration and exact equivalence. The
/// current rules reduce each expression first; a rule is kept when some
/// strictly shorter candidate (at most three tokens, using only the
/// pattern's variables) is equivalent. Among equivalent candidates of the
/// first successful length the smallest in canonical token order wins.
fn toy_oracle(l_max: usize, l_tgt: usize) -> BTreeMap<String, String> {
    let mut rules: BTreeMap<String, String> = BTreeMap::new();
    let mut candidates: Vec<Vec<Vec<&str>>> = vec![Vec::new()];
    for j in 1..=l_tgt {
        let mut c = toy_expressions(j);
        c.sort_by_key(|t| p(&t.join(" ")));
        candidates.push(c);
    }
    for len in 1..=l_max {
        let index = RuleIndex::from_rules(
            rules
                .iter()
                .map(|(a, b)| exprnorm::Rule::new(p(a), p(b)).unwrap()),
            None,
        );
        let mut level = Vec::new();
        for tau in toy_expressions(len) {
            let text = tau.join(" ");
            let mut reduced = p(&text);
            for _ in 0..DEFAULT_BUDGET {
                let next = rules_pass(&reduced, &index);
                if next == reduced {
                    break;
                }
                reduced = next;
            }
            let bound = (reduced.len() - 1).min(l_tgt);
            let form = affine(&tau).0;
            let allowed = vars(&tau);
            let found = (1..=bound).find_map(|j| {
                candidates[j]
                    .iter()
                    .find(|c| affine(c).0 == form && vars(c).is_subset(&allowed))
            });
            if let Some(c) = found {
                level.push((text, c.join(" ")));
            }
        }
        rules.extend(level);
    }
    rules
}

#[test]
fn toy_discovery_matches_oracle() {
    let start = Instant::now();
    let cfg = DiscoveryConfig {
        l_max: 4,
        l_tgt: 3,
        ..DiscoveryConfig::default()
    };
    let set = discover_rules(&Alphabet::toy(), &cfg);
    let secs = start.elapsed().as_secs_f64();
    let found: BTreeMap<String, String> = set
        .rules()
        .iter()
        .map(|r| (r.pattern.to_string(), r.replacement.to_string()))
        .collect();
    let oracle = toy_oracle(4, 3);
    let missing: Vec<_> = oracle
        .iter()
        .filter(|(k, v)| found.get(*k) != Some(v))
        .collect();
    let extra: Vec<_> = found
        .iter()
        .filter(|(k, v)| oracle.get(*k) != Some(v))
        .collect();
    report(
        "toy discovery oracle",
        missing.is_empty() && extra.is_empty() && secs < 300.0,
        format!(
            "{} rules discovered, {} expected, {} missing {:?}, {} unexpected {:?}, {secs:.1}s (limit 300s)",
            found.len(),
            oracle.len(),
            missing.len(),
            missing,
            extra.len(),
            extra
        ),
    );
}

#[test]
fn worked_simplification() {
    let input = "+ + pow2 abs div2 x1 * C exp - x2 x2 C";
    let out = full_engine().simplify(&p(input)).to_string();
    let expected = "+ pow2 div2 x1 C";
    report(
        "worked simplification",
        out == expected,
        format!("{input} => {out} (expected {expected})"),
    );
}

#[test]
fn generation_walkthrough() {
    let engine = capped_engine();
    let cfg = GenConfig {
        dims: 2,
        ..GenConfig::default()
    };
    let holdout = build_holdout_index(&[p("mult2 sin / x1 C")], 2, 3).unwrap();
    let g = Generator {
        cfg: &cfg,
        engine: engine.index(),
        holdout: &holdout,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let first = p("+ mult2 sin x1 pow2 C");
    let first_s = engine.simplify(&first);
    let first_rejected = matches!(
        g.process_skeleton(&first, &mut rng),
        Err(exprnorm::datagen::Rejection::Contaminated)
    );

    let second = p("* / x1 pow2 x2 * C + x1 neg x1");
    let second_s = engine.simplify(&second);
    let accepted = g.process_skeleton(&second, &mut rng);

    let x = DataMatrix::from_columns(vec![
        (0..137).map(|_| rng.random_range(-3.1..7.4)).collect(),
        (0..137).map(|_| rng.random_range(-3.1..7.4)).collect(),
    ])
    .unwrap();
    let y = compile(&second_s).evaluate(&x, &[1.15]).unwrap();

    let pass = first_s.to_string() == "+ mult2 sin x1 C"
        && first_s.prune_constants().to_string() == "mult2 sin x1"
        && first_rejected
        && second_s.to_string() == "* / x1 pow2 x2 C"
        && second_s.prune_constants().to_string() == "/ x1 pow2 x2"
        && accepted
            .as_ref()
            .is_ok_and(|i| i.skeleton == second_s && i.y.iter().all(|v| v.is_finite()))
        && y.iter().all(|v| v.is_finite());
    report(
        "generation walkthrough",
        pass,
        format!(
            "first {first_s} rejected={first_rejected}, second {second_s} accepted={}",
            accepted.is_ok()
        ),
    );
}

/// Wraps random variable leaves and the root in a constant operation, which
/// constant pruning removes again.
fn perturb(e: &PrefixExpr, rng: &mut ChaCha8Rng) -> PrefixExpr {
    let mut out = Vec::new();
    let wrap = |out: &mut Vec<String>, rng: &mut ChaCha8Rng| {
        out.push(if rng.random_bool(0.5) { "+" } else { "*" }.to_string());
        out.push("C".to_string());
    };
    wrap(&mut out, rng);
    for t in e.tokens() {
        if t.is_variable() && rng.random_bool(0.5) {
            wrap(&mut out, rng);
        }
        out.push(t.to_string());
    }
    p(&out.join(" "))
}

/// Simplified training skeletons without extended-value literals.
fn simplified_pool(count: usize, seed: u64) -> Vec<PrefixExpr> {
    let engine = capped_engine();
    sample_skeletons(&GenConfig::default(), count, seed)
        .iter()
        .map(|e| engine.simplify(e))
        .filter(|e| !e.has_non_finite_literal())
        .collect()
}

#[test]
fn decontamination_conservatism() {
    let dims = GenConfig::default().dims;
    // Hold-out entries play the role of benchmark formulas: defined on the
    // whole probe.
    let probe = build_holdout_index(&[], dims, 5).unwrap().probe;
    let defined = |e: &PrefixExpr| {
        compile(&e.prune_constants())
            .evaluate(&probe, &[])
            .is_ok_and(|y| y.iter().all(|v| v.is_finite()))
    };
    let holdout_sk: Vec<PrefixExpr> = simplified_pool(2000, 1)
        .into_iter()
        .filter(|e| defined(e))
        .take(100)
        .collect();
    let holdout = build_holdout_index(&holdout_sk, dims, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let caught = holdout_sk
        .iter()
        .filter(|h| is_contaminated(&perturb(h, &mut rng), &holdout))
        .count();

    let known: BTreeSet<PrefixExpr> = holdout.pruned.iter().cloned().collect();
    let unrelated: Vec<PrefixExpr> = simplified_pool(1000, 2)
        .into_iter()
        .filter(|c| !known.contains(&c.prune_constants()))
        .take(100)
        .collect();
    let false_pos = unrelated
        .iter()
        .filter(|c| is_contaminated(c, &holdout))
        .count();
    let fp_rate = false_pos as f64 / unrelated.len() as f64;
    report(
        "decontamination conservatism",
        holdout_sk.len() == 100 && caught == 100 && unrelated.len() == 100 && fp_rate <= 0.05,
        format!(
            "perturbed copies caught {caught}/{}, unrelated false positives {false_pos}/{} (limit 5%)",
            holdout_sk.len(),
            unrelated.len()
        ),
    );
}

fn fit(fvu: f64) -> FitResult {
    FitResult {
        constants: Vec::new(),
        fvu,
        objective: 0.0,
        converged: true,
        iterations: 0,
    }
}

#[test]
fn parsimony_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let gamma = 0.05;
    let draw = |rng: &mut ChaCha8Rng| {
        (
            10f64.powf(rng.random_range(-12.0..0.5)),
            rng.random_range(1..36usize),
        )
    };
    let mut disagreements = 0;
    for _ in 0..10_000 {
        let (fa, la) = draw(&mut rng);
        let (fb, lb) = draw(&mut rng);
        let log_form = parsimony_score(fb, lb, gamma) < parsimony_score(fa, la, gamma);
        if log_form != ratio_prefers(fb, lb, fa, la, gamma) {
            disagreements += 1;
        }
    }

    let pool: Vec<PrefixExpr> = sample_skeletons(&GenConfig::default(), 200, 4);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..12);
        let cands: Vec<(PrefixExpr, FitResult)> = (0..n)
            .map(|_| {
                let e = pool[rng.random_range(0..pool.len())].clone();
                (e, fit(10f64.powf(rng.random_range(-12.0..0.5))))
            })
            .collect();
        let best = select_best(&cands, gamma).unwrap();
        let min = cands
            .iter()
            .map(|(e, f)| f.fvu.log10() + gamma * e.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let best_score = best.1.fvu.log10() + gamma * best.0.len() as f64;
        if best_score != min {
            mismatches += 1;
        }
    }
    report(
        "parsimony selection",
        disagreements == 0 && mismatches == 0,
        format!("{disagreements} log/ratio disagreements in 10000 pairs, {mismatches} argmin mismatches in 1000 lists"),
    );
}

/// Ordered tree given by its children.
#[derive(Clone, Debug)]
struct Tree(Vec<Tree>);

fn size(t: &Tree) -> usize {
    1 + t.0.iter().map(size).sum::<usize>()
}

/// Tokens of a tree over `{x1, sin, +}`: the label follows from the
/// number of children.
fn encode(t: &Tree, out: &mut Vec<Token>) {
    out.push(["x1", "sin", "+"][t.0.len()].parse().unwrap());
    for c in &t.0 {
        encode(c, out);
    }
}

/// Edit distance between ordered forests with unit costs, by the textbook
/// recursion on the rightmost roots.
fn forest_distance(
    a: &[Tree],
    b: &[Tree],
    memo: &mut BTreeMap<(Vec<Token>, Vec<Token>), usize>,
) -> usize {
    if a.is_empty() {
        return b.iter().map(size).sum();
    }
    if b.is_empty() {
        return a.iter().map(size).sum();
    }
    let flat = |f: &[Tree]| {
        let mut v = Vec::new();
        for t in f {
            encode(t, &mut v);
        }
        v
    };
    let key = (flat(a), flat(b));
    if let Some(&d) = memo.get(&key) {
        return d;
    }
    let (ra, a_rest) = a.split_last().unwrap();
    let (rb, b_rest) = b.split_last().unwrap();
    let mut a_del = a_rest.to_vec();
    a_del.extend(ra.0.iter().cloned());
    let mut b_ins = b_rest.to_vec();
    b_ins.extend(rb.0.iter().cloned());
    let delete = forest_distance(&a_del, b, memo) + 1;
    let insert = forest_distance(a, &b_ins, memo) + 1;
    let relabel = forest_distance(a_rest, b_rest, memo)
        + forest_distance(&ra.0, &rb.0, memo)
        + usize::from(ra.0.len() != rb.0.len());
    let d = delete.min(insert).min(relabel);
    memo.insert(key, d);
    d
}

/// All trees with exactly `n` nodes and at most two children per node.
fn trees(n: usize) -> Vec<Tree> {
    if n == 1 {
        return vec![Tree(Vec::new())];
    }
    let mut out: Vec<Tree> = trees(n - 1).into_iter().map(|c| Tree(vec![c])).collect();
    for k in 1..n - 1 {
        for l in trees(k) {
            for r in trees(n - 1 - k) {
                out.push(Tree(vec![l.clone(), r]));
            }
        }
    }
    out
}

#[test]
fn metrics_oracle() {
    let all: Vec<Tree> = (1..=6).flat_map(trees).collect();
    let mut memo = BTreeMap::new();
    let mut mismatches = Vec::new();
    for a in &all {
        for b in &all {
            let (mut ta, mut tb) = (Vec::new(), Vec::new());
            encode(a, &mut ta);
            encode(b, &mut tb);
            let got = zss_distance(&ta, &tb);
            let want = forest_distance(std::slice::from_ref(a), std::slice::from_ref(b), &mut memo);
            if got != want {
                mismatches.push(format!(
                    "{} vs {}: {got} != {want}",
                    PrefixExpr::from_valid(ta),
                    PrefixExpr::from_valid(tb)
                ));
            }
        }
    }
    let n2 = nestedness(p("sin log acosh x1").tokens());
    let n1 = nestedness(p("sin log + x1 C").tokens());
    report(
        "metrics oracle",
        mismatches.is_empty() && n2 == 2 && n1 == 1,
        format!(
            "{} tree pairs, {} mismatches {:?}; nestedness {n2} and {n1} (expected 2 and 1)",
            all.len() * all.len(),
            mismatches.len(),
            mismatches.iter().take(5).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn generator_distribution() {
    let cfg = GenConfig::default();
    let pmf = n_ops_pmf(0.7, 1.0, 17);
    let oracle: Vec<f64> = {
        let w: Vec<f64> = (0..=17).map(|n: i32| (n as f64).powf(0.7).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    };
    let pmf_err = pmf
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let draws = 1_000_000;
    let mut counts = [0usize; 18];
    for _ in 0..draws {
        counts[sample_n_ops(&mut rng, &cfg)] += 1;
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(&oracle)
            .map(|(&c, &q)| (c as f64 / draws as f64 - q).abs())
            .sum::<f64>();

    let mut op_counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in sample_skeletons(&cfg, 100_000, 15) {
        for t in e.tokens() {
            if let Some(op) = t.as_operator() {
                *op_counts.entry(op.name().to_string()).or_default() += 1;
            }
        }
    }
    let ratio = op_counts["+"] as f64 / op_counts["sin"] as f64;
    let ratio_ok = (ratio - 10.0).abs() <= 1.0;
    report(
        "generator distribution",
        pmf_err < 1e-15 && tv < 0.01 && ratio_ok,
        format!("n_ops total variation {tv:.5} (limit 0.01), + to sin ratio {ratio:.3} (expected 10 +/- 10%)"),
    );
}
