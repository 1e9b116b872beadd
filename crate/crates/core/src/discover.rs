//! Offline rule discovery by exhaustive enumeration and numeric equivalence.
//!
//! Expressions are processed level by level in ascending length. Each one is
//! first rewritten with the rules known from earlier levels plus placeholder
//! collapse. The other cancellations are left out, so identities they cover
//! still become rules. If the result is still long enough, shorter
//! candidates are scanned by ascending length and the first equivalent one
//! (fewest constants, then enumeration order) becomes a rule. Rules found
//! within a level are installed only after the whole level has been
//! processed.
//!
//! Constant-free candidates are matched through an index of their images on
//! the probe matrix, which gives the same answer as checking each candidate
//! in turn. Candidates with a placeholder are checked with the full
//! equivalence procedure after a cheap closed-form screen.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::eval::{apply_binary, compile_tokens, DataMatrix, Evaluator};
use crate::expr::{variable_mask, PrefixExpr};
use crate::fit::{allclose, probe_matrix, Checker, EquivalenceConfig};
use crate::rules::{visit_expressions, Rule, RuleSet};
use crate::simplify::{rewrite_tokens, RuleIndex, DEFAULT_BUDGET};
use crate::vocab::{Alphabet, Operator, Token};

/// Settings for [`discover_rules`].
#[derive(Debug, Clone)]
pub struct DiscoveryConfig {
    /// Longest pattern enumerated.
    pub l_max: usize,
    /// Longest replacement considered.
    pub l_tgt: usize,
    pub challenges: usize,
    pub retries: usize,
    pub probe_rows: usize,
    pub probe_sigma: f64,
    pub seed: u64,
    /// Sweep budget of the simplifier used to pre-reduce expressions.
    pub budget: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            l_max: 7,
            l_tgt: 3,
            challenges: 16,
            retries: 16,
            probe_rows: 1024,
            probe_sigma: 5.0,
            seed: 0,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl DiscoveryConfig {
    /// Equivalence settings with the probe matrix derived from the seed.
    pub fn equivalence(&self, variables: usize) -> EquivalenceConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let probe = probe_matrix(
            self.probe_rows,
            variables.max(1),
            self.probe_sigma,
            &mut rng,
        );
        let mut eq = EquivalenceConfig::new(probe);
        eq.challenges = self.challenges;
        eq.retries = self.retries;
        eq
    }
}

/// Progress record emitted after each length level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub length: usize,
    pub expressions: u64,
    pub scanned: u64,
    pub rules_added: usize,
    pub total_rules: usize,
    pub seconds: f64,
}

/// Runs discovery over `alphabet` and returns the rule set.
pub fn discover_rules(alphabet: &Alphabet, cfg: &DiscoveryConfig) -> RuleSet {
    discover_rules_with_progress(alphabet, cfg, &mut |_| {})
}

/// [`discover_rules`] with a callback after every length level.
pub fn discover_rules_with_progress(
    alphabet: &Alphabet,
    cfg: &DiscoveryConfig,
    progress: &mut dyn FnMut(&LevelReport),
) -> RuleSet {
    let eq = cfg.equivalence(alphabet.variables);
    let pattern_tokens = alphabet.pattern_tokens();
    let pool = CandidatePool::build(alphabet, cfg.l_tgt, &eq.probe);
    let mut set = RuleSet::new(alphabet.fingerprint(), cfg.l_max, cfg.l_tgt);
    let mut index = RuleIndex::default();
    for len in 1..=cfg.l_max {
        let start = Instant::now();
        let mut found: Vec<Rule> = Vec::new();
        let mut expressions = 0u64;
        let mut scanned = 0u64;
        let mut chunk: Vec<Token> = Vec::with_capacity(CHUNK * len);
        let mut first_id = 0u64;
        let ctx = LevelCtx {
            index: &index,
            pool: &pool,
            eq: &eq,
            cfg,
            len,
        };
        let flush =
            |chunk: &mut Vec<Token>, first_id: u64, found: &mut Vec<Rule>, scanned: &mut u64| {
                let results: Vec<(bool, Option<Rule>)> = chunk
                    .par_chunks(len)
                    .enumerate()
                    .map_init(Worker::default, |w, (i, tau)| {
                        ctx.process(w, tau, first_id + i as u64)
                    })
                    .collect();
                for (s, r) in results {
                    *scanned += u64::from(s);
                    found.extend(r);
                }
                chunk.clear();
            };
        visit_expressions(len, &pattern_tokens, &mut |tau| {
            chunk.extend_from_slice(tau);
            expressions += 1;
            if chunk.len() == CHUNK * len {
                flush(&mut chunk, first_id, &mut found, &mut scanned);
                first_id = expressions;
            }
        });
        if !chunk.is_empty() {
            flush(&mut chunk, first_id, &mut found, &mut scanned);
        }
        let added = found.len();
        index.extend(found.iter().cloned());
        set.extend(found).expect("each pattern is enumerated once");
        progress(&LevelReport {
            length: len,
            expressions,
            scanned,
            rules_added: added,
            total_rules: set.len(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    set
}

const CHUNK: usize = 4096;
/// Rows whose sorted values serve as range-query keys.
const KEY_ROWS: usize = 8;
/// Rows compared before a full-image check.
const PRESCREEN_ROWS: usize = 32;

#[derive(Default)]
struct Worker {
    ev: Evaluator,
    image: Vec<f64>,
}

struct LevelCtx<'a> {
    index: &'a RuleIndex,
    pool: &'a CandidatePool,
    eq: &'a EquivalenceConfig,
    cfg: &'a DiscoveryConfig,
    len: usize,
}

impl LevelCtx<'_> {
    /// Returns whether candidates were scanned, and the rule if one was found.
    fn process(&self, w: &mut Worker, tau: &[Token], id: u64) -> (bool, Option<Rule>) {
        let reduced = rewrite_tokens(tau, self.index, self.cfg.budget);
        let bound = reduced.len().saturating_sub(1).min(self.cfg.l_tgt);
        if bound == 0 {
            return (false, None);
        }
        let probe = &self.eq.probe;
        w.image.resize(probe.rows(), 0.0);
        let plan = compile_tokens(tau);
        if w.ev.run(&plan, probe, &[], &mut w.image).is_err() {
            return (true, None);
        }
        let mask = variable_mask(tau);
        let source = PrefixExpr::from_valid(tau.to_vec());
        for j in 1..=bound {
            if let Some(id) = self.pool.query_constant_free(j, &w.image, mask) {
                let cand = self.pool.exprs[id as usize].clone();
                return (true, Rule::new(source, cand).ok());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, self.len as u64, id));
            for cand in self.pool.constant_candidates(j) {
                if variable_mask(cand.tokens()) & !mask != 0 {
                    continue;
                }
                if !screen_constant_candidate(cand.tokens(), &w.image, probe) {
                    continue;
                }
                let cp = compile_tokens(cand.tokens());
                if Checker::new(self.eq).check(&plan, &cp, &mut rng) {
                    return (true, Rule::new(source, cand.clone()).ok());
                }
            }
        }
        (true, None)
    }
}

/// Seed derived from a global seed and two counters.
pub(crate) fn mix(seed: u64, level: u64, id: u64) -> u64 {
    let mut z =
        seed ^ level.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Candidate replacements of every length up to the target limit.
struct CandidatePool {
    exprs: Vec<PrefixExpr>,
    by_len: Vec<ImageIndex>,
    with_constant: Vec<Vec<PrefixExpr>>,
}

#[derive(Default)]
struct Group {
    image: Vec<f64>,
    // (variable mask, expression id) in enumeration order
    members: Vec<(u64, u32)>,
}

#[derive(Default)]
struct ImageIndex {
    groups: Vec<Group>,
    // per key row: (value, group) for finite values, sorted by value
    sorted: Vec<Vec<(f64, u32)>>,
    // groups whose image has no finite entry, keyed by exact bits
    non_finite: FxHashMap<Vec<u64>, u32>,
}

fn bits(v: f64) -> u64 {
    if v.is_nan() {
        f64::NAN.to_bits()
    } else {
        v.to_bits()
    }
}

impl CandidatePool {
    fn build(alphabet: &Alphabet, l_tgt: usize, probe: &DataMatrix) -> CandidatePool {
        let tokens = alphabet.pattern_tokens();
        let mut exprs = Vec::new();
        let mut by_len = vec![ImageIndex::default()];
        let mut with_constant = vec![Vec::new()];
        let mut ev = Evaluator::default();
        let mut img = vec![0.0; probe.rows()];
        for j in 1..=l_tgt {
            let mut idx = ImageIndex::default();
            let mut groups: FxHashMap<Vec<u64>, u32> = FxHashMap::default();
            visit_expressions(j, &tokens, &mut |t| {
                let plan = compile_tokens(t);
                if ev.run(&plan, probe, &[], &mut img).is_err() {
                    return;
                }
                let id = exprs.len() as u32;
                exprs.push(PrefixExpr::from_valid(t.to_vec()));
                let key: Vec<u64> = img.iter().map(|&v| bits(v)).collect();
                let g = *groups.entry(key).or_insert_with(|| {
                    idx.groups.push(Group {
                        image: img.clone(),
                        members: Vec::new(),
                    });
                    (idx.groups.len() - 1) as u32
                });
                idx.groups[g as usize].members.push((variable_mask(t), id));
            });
            let rows = KEY_ROWS.min(probe.rows());
            idx.sorted = (0..rows)
                .map(|r| {
                    let mut v: Vec<(f64, u32)> = idx
                        .groups
                        .iter()
                        .enumerate()
                        .filter(|(_, g)| g.image[r].is_finite())
                        .map(|(i, g)| (g.image[r], i as u32))
                        .collect();
                    v.sort_by(|a, b| a.0.total_cmp(&b.0));
                    v
                })
                .collect();
            for (i, g) in idx.groups.iter().enumerate() {
                if !g.image.iter().any(|v| v.is_finite()) {
                    idx.non_finite
                        .insert(g.image.iter().map(|&v| bits(v)).collect(), i as u32);
                }
            }
            by_len.push(idx);
            with_constant.push(if alphabet.constant {
                constant_candidates(j, &tokens)
            } else {
                Vec::new()
            });
        }
        CandidatePool {
            exprs,
            by_len,
            with_constant,
        }
    }

    fn constant_candidates(&self, j: usize) -> &[PrefixExpr] {
        self.with_constant.get(j).map_or(&[], Vec::as_slice)
    }

    /// First constant-free candidate of length `j` (in enumeration order)
    /// using only variables in `mask` whose image matches `y`.
    fn query_constant_free(&self, j: usize, y: &[f64], mask: u64) -> Option<u32> {
        let idx = self.by_len.get(j)?;
        let pick = |g: &Group, best: &mut Option<u32>| {
            if let Some(&(_, id)) = g.members.iter().find(|(m, _)| m & !mask == 0) {
                if best.is_none_or(|b| id < b) {
                    *best = Some(id);
                }
            }
        };
        let mut best = None;
        if !y.iter().any(|v| v.is_finite()) {
            let key: Vec<u64> = y.iter().map(|&v| bits(v)).collect();
            if let Some(&g) = idx.non_finite.get(&key) {
                let g = &idx.groups[g as usize];
                if allclose(&g.image, y) {
                    pick(g, &mut best);
                }
            }
            return best;
        }
        let pre = PRESCREEN_ROWS.min(y.len());
        let matches = |g: &Group| allclose(&g.image[..pre], &y[..pre]) && allclose(&g.image, y);
        match (0..idx.sorted.len()).find(|&r| y[r].is_finite()) {
            Some(r) => {
                let v = y[r];
                let tol = crate::fit::ALLCLOSE_ATOL + crate::fit::ALLCLOSE_RTOL * v.abs();
                let list = &idx.sorted[r];
                let lo = list.partition_point(|e| e.0 < v - tol);
                for &(val, g) in &list[lo..] {
                    if val > v + tol {
                        break;
                    }
                    let g = &idx.groups[g as usize];
                    if matches(g) {
                        pick(g, &mut best);
                    }
                }
            }
            None => {
                for g in &idx.groups {
                    if matches(g) {
                        pick(g, &mut best);
                    }
                }
            }
        }
        best
    }
}

/// Placeholder candidates worth checking at length `j`, in enumeration
/// order. Variable-free ones longer than `[C]` are left out: they denote a
/// constant function, so `[C]` matches whenever they do.
fn constant_candidates(j: usize, pattern_tokens: &[Token]) -> Vec<PrefixExpr> {
    let mut tokens = pattern_tokens.to_vec();
    tokens.push(Token::CONST);
    let mut out = Vec::new();
    visit_expressions(j, &tokens, &mut |t| {
        let has_c = t.iter().any(|x| x.is_constant());
        let var_free = !t.iter().any(|x| x.is_variable());
        if has_c && (j == 1 || !var_free) {
            out.push(PrefixExpr::from_valid(t.to_vec()));
        }
    });
    out
}

/// Cheap rejection test for a placeholder candidate against a constant-free
/// source image: solve for the constant on a few rows and check a handful of
/// rows at the median value. Returns true when the full check is worth running.
fn screen_constant_candidate(cand: &[Token], y: &[f64], probe: &DataMatrix) -> bool {
    if cand.iter().filter(|t| t.is_constant()).count() != 1 || !(cand.len() == 1 || cand.len() == 3)
    {
        return true;
    }
    let mut rows = [0usize; PRESCREEN_ROWS];
    let mut n = 0;
    for (i, v) in y.iter().enumerate() {
        if n == PRESCREEN_ROWS {
            break;
        }
        if v.is_finite() {
            rows[n] = i;
            n += 1;
        }
    }
    if n == 0 {
        return true;
    }
    let rows = &rows[..n];
    let mut guesses = [0.0f64; 5];
    let mut g = 0;
    for &r in rows.iter().take(5) {
        if let Some(c) =
            implied_constant(cand, y[r], |v| probe.get(r, v - 1)).filter(|c| c.is_finite())
        {
            guesses[g] = c;
            g += 1;
        }
    }
    if g == 0 {
        return true;
    }
    let guesses = &mut guesses[..g];
    guesses.sort_by(f64::total_cmp);
    let c = guesses[g / 2];
    let c_base =
        cand.len() == 3 && cand[0].as_operator() == Some(Operator::Pow) && cand[1].is_constant();
    // Loose tolerance: this only screens, the full check decides.
    let near = |c: f64, r: usize| {
        let a = value_at(cand, c, |v| probe.get(r, v - 1));
        let b = y[r];
        if b.is_finite() {
            a.is_finite() && (a - b).abs() <= 1e-3 * (1.0 + b.abs())
        } else {
            a.is_nan() == b.is_nan() && (b.is_nan() || a == b)
        }
    };
    let fits = |c: f64| rows.iter().all(|&r| near(c, r)) && (0..y.len()).all(|r| near(c, r));
    fits(c) || (c_base && fits(-c))
}

/// Value of a `C`, `[b C v]` or `[b v C]` candidate at one row.
fn value_at(cand: &[Token], c: f64, x: impl Fn(usize) -> f64) -> f64 {
    if cand.len() == 1 {
        return c;
    }
    let leaf = |t: Token| match (t.as_variable(), t.as_literal()) {
        (Some(i), _) => x(i),
        (_, Some(l)) => l.value(),
        _ => c,
    };
    match cand[0].as_operator() {
        Some(op) => apply_binary(op, leaf(cand[1]), leaf(cand[2])),
        None => f64::NAN,
    }
}

/// Constant that makes a one-placeholder candidate hit `y` at one row, for
/// the shapes `C`, `[b C v]` and `[b v C]`. Power shapes are solved on
/// magnitudes; a negative base is left to the caller.
fn implied_constant(cand: &[Token], y: f64, x: impl Fn(usize) -> f64) -> Option<f64> {
    if cand.len() == 1 {
        return Some(y);
    }
    if cand.len() != 3 {
        return None;
    }
    let op = cand[0].as_operator()?;
    let (c_first, other) = if cand[1].is_constant() {
        (true, cand[2])
    } else {
        (false, cand[1])
    };
    let v = match other.as_variable() {
        Some(i) => x(i),
        None => other.as_literal()?.value(),
    };
    Some(match (op, c_first) {
        (Operator::Add, _) => y - v,
        (Operator::Sub, true) => y + v,
        (Operator::Sub, false) => v - y,
        (Operator::Mul, _) => y / v,
        (Operator::Div, true) => y * v,
        (Operator::Div, false) => v / y,
        (Operator::Pow, true) => (y.abs().ln() / v).exp(),
        (Operator::Pow, false) => y.abs().ln() / v.abs().ln(),
        _ => return None,
    })
}
