//! Evaluation metrics comparing predicted and true skeletons and fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use crate::error::EvalError;
use crate::expr::{child_spans, PrefixExpr};
use crate::vocab::Token;

/// Machine epsilon of 32-bit floats, the default recovery threshold.
pub const EPS32: f64 = f32::EPSILON as f64;

/// Structural comparison of a predicted skeleton against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonReport {
    /// Token-for-token identical.
    pub srr: bool,
    pub token_f1: f64,
    pub zss: usize,
    pub length_ratio: f64,
    /// Placeholders in the prediction minus placeholders in the truth.
    pub excess_constants: i64,
    pub variable_recall: f64,
    /// Nestedness of the prediction.
    pub total_nestedness: usize,
}

/// Compares two skeletons, both expected to be simplified already.
pub fn skeleton_report(pred: &PrefixExpr, truth: &PrefixExpr) -> SkeletonReport {
    SkeletonReport {
        srr: pred == truth,
        token_f1: token_f1(pred.tokens(), truth.tokens()),
        zss: zss_distance(pred.tokens(), truth.tokens()),
        length_ratio: pred.len() as f64 / truth.len() as f64,
        excess_constants: pred.count_constants() as i64 - truth.count_constants() as i64,
        variable_recall: variable_recall(pred, truth),
        total_nestedness: nestedness(pred.tokens()),
    }
}

/// F1 over token multisets.
pub fn token_f1(pred: &[Token], truth: &[Token]) -> f64 {
    if pred.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let mut counts: FxHashMap<Token, (usize, usize)> = FxHashMap::default();
    for &t in pred {
        counts.entry(t).or_default().0 += 1;
    }
    for &t in truth {
        counts.entry(t).or_default().1 += 1;
    }
    let overlap: usize = counts.values().map(|&(a, b)| a.min(b)).sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / truth.len() as f64;
    2.0 * p * r / (p + r)
}

/// Share of the true variables that the prediction uses; 1 when the truth
/// has none.
pub fn variable_recall(pred: &PrefixExpr, truth: &PrefixExpr) -> f64 {
    let t = truth.variables();
    if t.is_empty() {
        return 1.0;
    }
    let p = pred.variables();
    t.iter().filter(|v| p.contains(v)).count() as f64 / t.len() as f64
}

/// Number of unary operators whose operand is itself a unary operator.
pub fn nestedness(tokens: &[Token]) -> usize {
    tokens
        .windows(2)
        .filter(|w| w[0].arity() == 1 && w[1].arity() == 1)
        .count()
}

/// Tree in post-order with leftmost-leaf indices.
struct PostOrder {
    labels: Vec<Token>,
    leftmost: Vec<usize>,
}

impl PostOrder {
    fn new(tokens: &[Token]) -> PostOrder {
        let mut t = PostOrder {
            labels: Vec::with_capacity(tokens.len()),
            leftmost: Vec::with_capacity(tokens.len()),
        };
        if !tokens.is_empty() {
            t.visit(tokens, 0);
        }
        t
    }

    fn visit(&mut self, tokens: &[Token], at: usize) -> usize {
        let mut first = None;
        for span in child_spans(tokens, at) {
            let lm = self.visit(tokens, span.start);
            first.get_or_insert(lm);
        }
        let idx = self.labels.len();
        self.labels.push(tokens[at]);
        self.leftmost.push(first.unwrap_or(idx));
        self.leftmost[idx]
    }

    fn keyroots(&self) -> Vec<usize> {
        let n = self.labels.len();
        let mut seen: FxHashMap<usize, usize> = FxHashMap::default();
        for i in 0..n {
            seen.insert(self.leftmost[i], i);
        }
        let mut k: Vec<usize> = seen.into_values().collect();
        k.sort_unstable();
        k
    }
}

/// Zhang-Shasha ordered tree edit distance with unit costs.
pub fn zss_distance(a: &[Token], b: &[Token]) -> usize {
    let ta = PostOrder::new(a);
    let tb = PostOrder::new(b);
    let (n, m) = (ta.labels.len(), tb.labels.len());
    if n == 0 || m == 0 {
        return n + m;
    }
    let mut td = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];
    for &i in &ta.keyroots() {
        for &j in &tb.keyroots() {
            let li = ta.leftmost[i];
            let lj = tb.leftmost[j];
            // fd[x][y] holds the forest distance for a[li..li+x) vs b[lj..lj+y)
            fd[0][0] = 0;
            for x in 1..=(i - li + 1) {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..=(j - lj + 1) {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..=(i - li + 1) {
                let ai = li + x - 1;
                for y in 1..=(j - lj + 1) {
                    let bj = lj + y - 1;
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if ta.leftmost[ai] == li && tb.leftmost[bj] == lj {
                        let rel = fd[x - 1][y - 1] + usize::from(ta.labels[ai] != tb.labels[bj]);
                        fd[x][y] = del.min(ins).min(rel);
                        td[ai][bj] = fd[x][y];
                    } else {
                        let px = ta.leftmost[ai] - li;
                        let py = tb.leftmost[bj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ai][bj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// Fraction of FVU values at or below `eps`.
pub fn numeric_recovery(fvus: &[f64], eps: f64) -> Result<f64, EvalError> {
    if fvus.is_empty() {
        return Err(EvalError::TooFewValues(1));
    }
    Ok(fvus.iter().filter(|&&v| v <= eps).count() as f64 / fvus.len() as f64)
}

/// Fraction of true values.
pub fn rate(flags: &[bool]) -> Result<f64, EvalError> {
    if flags.is_empty() {
        return Err(EvalError::TooFewValues(1));
    }
    Ok(flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linearly interpolated quantile of unsorted data.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    sorted_quantile(&s, q)
}

fn sorted_quantile(s: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap confidence interval of `statistic`.
pub fn bootstrap_ci(
    values: &[f64],
    statistic: &dyn Fn(&[f64]) -> f64,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    if values.len() < 2 {
        return Err(EvalError::TooFewValues(2));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; values.len()];
    let mut stats: Vec<f64> = (0..resamples.max(1))
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..values.len())];
            }
            statistic(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((
        sorted_quantile(&stats, tail),
        sorted_quantile(&stats, 1.0 - tail),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_prefix;

    fn p(s: &str) -> PrefixExpr {
        parse_prefix(s).unwrap()
    }

    #[test]
    fn report_identity() {
        let e = p("+ sin x1 C");
        let r = skeleton_report(&e, &e);
        assert!(r.srr);
        assert_eq!(r.token_f1, 1.0);
        assert_eq!(r.zss, 0);
        assert_eq!(r.length_ratio, 1.0);
        assert_eq!(r.excess_constants, 0);
        assert_eq!(r.variable_recall, 1.0);
    }

    #[test]
    fn single_relabel() {
        let r = skeleton_report(&p("cos x1"), &p("sin x1"));
        assert_eq!(r.zss, 1);
        assert_eq!(r.variable_recall, 1.0);
        assert!(!r.srr);
    }

    #[test]
    fn nestedness_examples() {
        assert_eq!(nestedness(p("sin log + x1 C").tokens()), 1);
        assert_eq!(nestedness(p("sin log acosh x1").tokens()), 2);
    }

    #[test]
    fn recovery_threshold() {
        assert_eq!(numeric_recovery(&[0.0, 0.0], EPS32).unwrap(), 1.0);
        assert_eq!(numeric_recovery(&[0.0, 1.0], EPS32).unwrap(), 0.5);
        assert_eq!(numeric_recovery(&[1.2e-7, 1.1e-7], EPS32).unwrap(), 0.5);
        assert!(numeric_recovery(&[], EPS32).is_err());
    }

    #[test]
    fn bootstrap_degenerate() {
        let (lo, hi) = bootstrap_ci(&[3.0; 10], &mean, 200, 0.95, 1).unwrap();
        assert_eq!((lo, hi), (3.0, 3.0));
        assert!(matches!(
            bootstrap_ci(&[1.0], &mean, 10, 0.95, 1),
            Err(EvalError::TooFewValues(2))
        ));
    }
}
