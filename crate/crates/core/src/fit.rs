//! Constant fitting, numeric equivalence checking and parsimony selection.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::FitError;
use crate::eval::{self, DataMatrix, EvalPlan, Evaluator};
use crate::expr::{variable_mask, PrefixExpr};

/// Default iteration cap for a single Levenberg-Marquardt run.
pub const MAX_ITERATIONS: usize = 100;
/// Default number of random restarts in [`fit_constants`].
pub const DEFAULT_RESTARTS: usize = 8;
/// Standard deviation of the constant prior.
pub const CONSTANT_SIGMA: f64 = 5.0;
/// Lower clamp applied to FVU before taking the logarithm.
pub const FVU_FLOOR: f64 = 1e-30;
/// Absolute tolerance of [`allclose`].
pub const ALLCLOSE_ATOL: f64 = 1e-6;
/// Relative tolerance of [`allclose`].
pub const ALLCLOSE_RTOL: f64 = 1e-4;

const INITIAL_DAMPING: f64 = 1e-3;
const DAMPING_UP: f64 = 2.0;
const DAMPING_DOWN: f64 = 1.0 / 3.0;
const MAX_DAMPING: f64 = 1e16;
const DIAG_EPS: f64 = 1e-12;
/// Rows used for the first LM fit inside the equivalence check.
const FIT_ROWS: usize = 64;
const SNAP_ZERO: f64 = 1e-3;
const PRESCREEN_STARTS: usize = 64;
const LOSS_CAP: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub constants: Vec<f64>,
    pub fvu: f64,
    /// Sum of squared residuals at `constants`.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    fn failed(constants: Vec<f64>) -> FitResult {
        FitResult {
            constants,
            fvu: f64::INFINITY,
            objective: f64::INFINITY,
            converged: false,
            iterations: 0,
        }
    }
}

fn sum_sq(pred: &[f64], y: &[f64]) -> f64 {
    weighted_sum_sq(pred, y, None)
}

fn weighted_sum_sq(pred: &[f64], y: &[f64], w: Option<&[f64]>) -> f64 {
    let s: f64 = match w {
        None => pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum(),
        Some(w) => pred
            .iter()
            .zip(y)
            .zip(w)
            .map(|((p, t), w)| (w * (p - t)).powi(2))
            .sum(),
    };
    if s.is_nan() {
        f64::INFINITY
    } else {
        s
    }
}

/// FVU that also handles a constant target: exact fits score 0, others `+inf`.
fn fit_fvu(y: &[f64], pred: &[f64], objective: f64) -> f64 {
    match eval::fvu(y, pred) {
        Ok(v) => v,
        Err(_) if objective == 0.0 => 0.0,
        Err(_) => f64::INFINITY,
    }
}

pub(crate) struct LmOutcome {
    pub constants: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub started: bool,
    pub pred: Vec<f64>,
}

/// Workspace for repeated Levenberg-Marquardt runs.
#[derive(Default)]
pub(crate) struct LmSolver {
    ev: Evaluator,
    plus: Vec<f64>,
    minus: Vec<f64>,
    trial: Vec<f64>,
}

impl LmSolver {
    /// Runs LM on residuals scaled by `w` (unit weights when `None`).
    /// `stop` is consulted on every accepted prediction and ends the run
    /// early (as converged) when it returns true.
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &mut self,
        plan: &EvalPlan,
        x: &DataMatrix,
        y: &[f64],
        w: Option<&[f64]>,
        c0: &[f64],
        budget: usize,
        stop: &mut dyn FnMut(&[f64]) -> bool,
    ) -> LmOutcome {
        let wi = |i: usize| w.map_or(1.0, |w| w[i]);
        let m = x.rows();
        let p = c0.len();
        let mut c = c0.to_vec();
        let mut pred = vec![0.0; m];
        if self.ev.run(plan, x, &c, &mut pred).is_err() || !eval::all_finite_real(&pred) {
            return LmOutcome {
                constants: c,
                objective: f64::INFINITY,
                converged: false,
                iterations: 0,
                started: false,
                pred,
            };
        }
        let mut s = weighted_sum_sq(&pred, y, w);
        if s == 0.0 || stop(&pred) {
            return LmOutcome {
                constants: c,
                objective: s,
                converged: true,
                iterations: 0,
                started: true,
                pred,
            };
        }
        self.plus.resize(m, 0.0);
        self.minus.resize(m, 0.0);
        self.trial.resize(m, 0.0);
        let mut jac = DMatrix::<f64>::zeros(m, p);
        let mut lambda = INITIAL_DAMPING;
        let mut converged = false;
        let mut iterations = 0;
        let mut cp = c.clone();
        while iterations < budget {
            iterations += 1;
            for k in 0..p {
                let h = 1e-6 * c[k].abs().max(1.0);
                cp.copy_from_slice(&c);
                cp[k] = c[k] + h;
                let _ = self.ev.run(plan, x, &cp, &mut self.plus);
                cp[k] = c[k] - h;
                let _ = self.ev.run(plan, x, &cp, &mut self.minus);
                for i in 0..m {
                    let d = wi(i) * (self.plus[i] - self.minus[i]) / (2.0 * h);
                    jac[(i, k)] = if d.is_finite() { d } else { 0.0 };
                }
            }
            let r = DVector::from_iterator(m, (0..m).map(|i| wi(i) * (pred[i] - y[i])));
            let jtj = jac.tr_mul(&jac);
            let g = jac.tr_mul(&r);
            let rnorm = s.sqrt();
            let flat = (0..p).all(|k| {
                let col = jac.column(k).norm();
                g[k].abs() <= 1e-10 * col * rnorm
            });
            if flat {
                converged = true;
                break;
            }
            let mut accepted = false;
            while lambda <= MAX_DAMPING {
                let mut a = jtj.clone();
                for k in 0..p {
                    a[(k, k)] += lambda * (jtj[(k, k)] + DIAG_EPS);
                }
                let step = match a.clone().cholesky() {
                    Some(ch) => ch.solve(&(-&g)),
                    None => match a.lu().solve(&(-&g)) {
                        Some(v) => v,
                        None => {
                            lambda *= DAMPING_UP;
                            continue;
                        }
                    },
                };
                for k in 0..p {
                    cp[k] = c[k] + step[k];
                }
                let ok = self.ev.run(plan, x, &cp, &mut self.trial).is_ok();
                let s_new = if ok {
                    weighted_sum_sq(&self.trial, y, w)
                } else {
                    f64::INFINITY
                };
                if s_new < s {
                    let small_step = (0..p).all(|k| step[k].abs() <= 1e-12 * (c[k].abs() + 1e-12));
                    let small_gain = s - s_new <= 1e-14 * s;
                    c.copy_from_slice(&cp);
                    pred.copy_from_slice(&self.trial);
                    s = s_new;
                    lambda = (lambda * DAMPING_DOWN).max(1e-12);
                    accepted = true;
                    if s == 0.0 || small_step || small_gain || stop(&pred) {
                        converged = true;
                    }
                    break;
                }
                lambda *= DAMPING_UP;
            }
            if !accepted {
                // No descent direction left at any damping: stationary point.
                converged = true;
                break;
            }
            if converged {
                break;
            }
        }
        LmOutcome {
            constants: c,
            objective: s,
            converged,
            iterations,
            started: true,
            pred,
        }
    }
}

/// Levenberg-Marquardt fit of the plan's constants to `y` starting at `c0`.
pub fn levmar(
    plan: &EvalPlan,
    x: &DataMatrix,
    y: &[f64],
    c0: &[f64],
    budget: usize,
) -> Result<FitResult, FitError> {
    check_shapes(plan, x, y, c0.len())?;
    let out = LmSolver::default().run(plan, x, y, None, c0, budget, &mut |_| false);
    Ok(outcome_to_result(out, y))
}

fn check_shapes(plan: &EvalPlan, x: &DataMatrix, y: &[f64], nc: usize) -> Result<(), FitError> {
    if y.len() != x.rows() {
        return Err(crate::error::EvalError::LengthMismatch(y.len(), x.rows()).into());
    }
    if nc != plan.slot_count() {
        return Err(crate::error::EvalError::ConstantCount {
            expected: plan.slot_count(),
            got: nc,
        }
        .into());
    }
    if plan.max_variable() > x.cols() {
        return Err(crate::error::EvalError::MissingColumn {
            needed: plan.max_variable(),
            cols: x.cols(),
        }
        .into());
    }
    Ok(())
}

fn outcome_to_result(out: LmOutcome, y: &[f64]) -> FitResult {
    if !out.started {
        return FitResult::failed(out.constants);
    }
    FitResult {
        fvu: fit_fvu(y, &out.pred, out.objective),
        constants: out.constants,
        objective: out.objective,
        converged: out.converged,
        iterations: out.iterations,
    }
}

/// Best-of-`restarts` constant fit with starts drawn from N(0, 5).
pub fn fit_constants<R: Rng + ?Sized>(
    expr: &PrefixExpr,
    data: &DataMatrix,
    restarts: usize,
    rng: &mut R,
) -> Result<FitResult, FitError> {
    let y = data.targets().ok_or(FitError::MissingTargets)?;
    let plan = eval::compile(expr);
    check_shapes(&plan, data, y, plan.slot_count())?;
    if plan.slot_count() == 0 {
        let pred = plan.evaluate(data, &[])?;
        let objective = sum_sq(&pred, y);
        let fvu = fit_fvu(y, &pred, objective);
        return Ok(FitResult {
            constants: Vec::new(),
            fvu,
            objective,
            converged: fvu.is_finite(),
            iterations: 0,
        });
    }
    let prior = Normal::new(0.0, CONSTANT_SIGMA).expect("valid sigma");
    let mut solver = LmSolver::default();
    let mut best: Option<FitResult> = None;
    let mut first_start = None;
    for _ in 0..restarts.max(1) {
        let c0: Vec<f64> = (0..plan.slot_count()).map(|_| prior.sample(rng)).collect();
        first_start.get_or_insert_with(|| c0.clone());
        let out = solver.run(&plan, data, y, None, &c0, MAX_ITERATIONS, &mut |_| false);
        if !out.started {
            continue;
        }
        let res = outcome_to_result(out, y);
        let better = match &best {
            None => true,
            Some(b) => res.fvu < b.fvu || (res.fvu == b.fvu && res.objective < b.objective),
        };
        if better {
            best = Some(res);
        }
        if best.as_ref().is_some_and(|b| b.objective == 0.0) {
            break;
        }
    }
    Ok(best.unwrap_or_else(|| FitResult::failed(first_start.unwrap_or_default())))
}

/// Element-wise closeness of `a` to the reference `b`.
///
/// Finite reference entries need a finite `a` within
/// `ALLCLOSE_ATOL + ALLCLOSE_RTOL * |b|`. Infinite entries need the identical
/// infinity and NaN entries need NaN at the same position.
pub fn allclose(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(&u, &v)| close(u, v))
}

#[inline]
fn close(u: f64, v: f64) -> bool {
    if v.is_finite() {
        u.is_finite() && (u - v).abs() <= ALLCLOSE_ATOL + ALLCLOSE_RTOL * v.abs()
    } else if v.is_nan() {
        u.is_nan()
    } else {
        u == v
    }
}

/// Settings of the numeric equivalence check.
#[derive(Debug, Clone)]
pub struct EquivalenceConfig {
    pub challenges: usize,
    pub retries: usize,
    pub sigma: f64,
    pub probe: DataMatrix,
    /// When `3^|C|` exceeds this, each challenge checks this many sign
    /// patterns drawn at random instead of all of them.
    pub max_sign_patterns: usize,
    /// Iteration cap for each LM run.
    pub lm_budget: usize,
}

impl EquivalenceConfig {
    pub fn new(probe: DataMatrix) -> EquivalenceConfig {
        EquivalenceConfig {
            challenges: 16,
            retries: 16,
            sigma: CONSTANT_SIGMA,
            probe,
            max_sign_patterns: 81,
            lm_budget: MAX_ITERATIONS,
        }
    }
}

/// Probe matrix with entries drawn from N(0, sigma).
pub fn probe_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    sigma: f64,
    rng: &mut R,
) -> DataMatrix {
    let n = Normal::new(0.0, sigma).expect("valid sigma");
    let cols: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..rows).map(|_| n.sample(rng)).collect())
        .collect();
    DataMatrix::from_columns(cols).expect("rectangular")
}

/// Numeric equivalence of `source` and `candidate` as skeleton families.
///
/// For every challenge and constant sign pattern the source is imaged on
/// the probe; the candidate must reproduce that image (directly when it has
/// no constants, otherwise after up to `retries` LM fits). A pattern whose
/// image has no finite entry carries no information and is skipped when the
/// source has constants; a constant-free source with such an image must be
/// matched exactly.
pub fn equivalent<R: Rng + ?Sized>(
    source: &PrefixExpr,
    candidate: &PrefixExpr,
    cfg: &EquivalenceConfig,
    rng: &mut R,
) -> bool {
    let mask_s = variable_mask(source.tokens());
    let mask_c = variable_mask(candidate.tokens());
    if mask_c & !mask_s != 0 {
        return false;
    }
    if source.max_variable() > cfg.probe.cols() || candidate.max_variable() > cfg.probe.cols() {
        return false;
    }
    let sp = eval::compile(source);
    let cp = eval::compile(candidate);
    Checker::new(cfg).check(&sp, &cp, rng)
}

/// Reusable equivalence checker over precompiled plans.
pub(crate) struct Checker<'a> {
    cfg: &'a EquivalenceConfig,
    ev: Evaluator,
    lm: LmSolver,
    image: Vec<f64>,
    cand: Vec<f64>,
}

impl<'a> Checker<'a> {
    pub fn new(cfg: &'a EquivalenceConfig) -> Checker<'a> {
        Checker {
            cfg,
            ev: Evaluator::default(),
            lm: LmSolver::default(),
            image: vec![0.0; cfg.probe.rows()],
            cand: vec![0.0; cfg.probe.rows()],
        }
    }

    pub fn check<R: Rng + ?Sized>(
        &mut self,
        source: &EvalPlan,
        candidate: &EvalPlan,
        rng: &mut R,
    ) -> bool {
        let n = source.slot_count();
        if n == 0 {
            let mut image = std::mem::take(&mut self.image);
            let ok = self
                .ev
                .run(source, &self.cfg.probe, &[], &mut image)
                .is_ok()
                && self.matches_image(candidate, &image, &[], rng);
            self.image = image;
            return ok;
        }
        let normal = Normal::new(0.0, self.cfg.sigma).expect("valid sigma");
        let total = 3usize.checked_pow(n as u32).unwrap_or(usize::MAX);
        let sampled = total > self.cfg.max_sign_patterns;
        let per_challenge = if sampled {
            self.cfg.max_sign_patterns
        } else {
            total
        };
        let mut informative = false;
        let mut c = vec![0.0; n];
        for _ in 0..self.cfg.challenges {
            let r: Vec<f64> = (0..n).map(|_| normal.sample(rng).abs()).collect();
            for idx in 0..per_challenge {
                let mut code = if sampled {
                    rng.random::<u64>() as usize
                } else {
                    idx
                };
                for k in 0..n {
                    let s = (code % 3) as f64 - 1.0;
                    code /= 3;
                    c[k] = r[k] * s;
                }
                let mut image = std::mem::take(&mut self.image);
                let ran = self.ev.run(source, &self.cfg.probe, &c, &mut image).is_ok();
                let ok = if !ran {
                    false
                } else if !image.iter().any(|v| v.is_finite()) {
                    true
                } else {
                    informative = true;
                    self.matches_image(candidate, &image, &c, rng)
                };
                self.image = image;
                if !ok {
                    return false;
                }
            }
        }
        if !informative {
            // Every image was non-finite: fall back to exact comparison of
            // the all-positive pattern.
            let c: Vec<f64> = (0..n).map(|_| normal.sample(rng).abs()).collect();
            let mut image = std::mem::take(&mut self.image);
            let ok = self.ev.run(source, &self.cfg.probe, &c, &mut image).is_ok()
                && self.matches_image(candidate, &image, &c, rng);
            self.image = image;
            return ok;
        }
        true
    }

    /// `retries` LM starts: the best of `PRESCREEN_STARTS` random draws by
    /// a bounded loss on the fit rows. Half the draws take some entries
    /// from the source constants, with random sign.
    fn ranked_starts<R: Rng + ?Sized>(
        &mut self,
        candidate: &EvalPlan,
        x: &DataMatrix,
        y: &[f64],
        w: &[f64],
        source_c: &[f64],
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        let k = candidate.slot_count();
        let normal = Normal::new(0.0, self.cfg.sigma).expect("valid sigma");
        let mut pred = vec![0.0; x.rows()];
        let mut scored: Vec<(f64, Vec<f64>)> = (0..PRESCREEN_STARTS)
            .map(|i| {
                let c0: Vec<f64> = (0..k)
                    .map(|_| {
                        if i % 2 == 1 && !source_c.is_empty() && rng.random_bool(0.5) {
                            let v = source_c[rng.random_range(0..source_c.len())];
                            if rng.random_bool(0.5) {
                                v
                            } else {
                                -v
                            }
                        } else {
                            normal.sample(rng)
                        }
                    })
                    .collect();
                let loss = match self.ev.run(candidate, x, &c0, &mut pred) {
                    Ok(()) => bounded_loss(&pred, y, w),
                    Err(_) => f64::INFINITY,
                };
                (loss, c0)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        scored
            .into_iter()
            .take(self.cfg.retries)
            .map(|(_, c)| c)
            .collect()
    }

    /// Whether the candidate at constants `c` reproduces `image` on the probe.
    fn reproduces(&mut self, candidate: &EvalPlan, c: &[f64], image: &[f64]) -> bool {
        self.ev
            .run(candidate, &self.cfg.probe, c, &mut self.cand)
            .is_ok()
            && allclose(&self.cand, image)
    }

    /// Whether the candidate can reproduce `image`, the source imaged at
    /// constants `source_c`. The source constants and the zero vector are
    /// tried as witnesses before any fit, and every fit is also tried with
    /// its near-zero constants set to exactly zero.
    fn matches_image<R: Rng + ?Sized>(
        &mut self,
        candidate: &EvalPlan,
        image: &[f64],
        source_c: &[f64],
        rng: &mut R,
    ) -> bool {
        let probe = &self.cfg.probe;
        let uninformative = !image.iter().any(|v| v.is_finite());
        let compare = |a: &[f64]| allclose(a, image);
        let k = candidate.slot_count();
        if k == 0 {
            if self.ev.run(candidate, probe, &[], &mut self.cand).is_err() {
                return false;
            }
            return compare(&self.cand);
        }
        if source_c.len() == k && self.reproduces(candidate, source_c, image) {
            return true;
        }
        if self.reproduces(candidate, &vec![0.0; k], image) {
            return true;
        }
        let normal = Normal::new(0.0, self.cfg.sigma).expect("valid sigma");
        if uninformative {
            for _ in 0..self.cfg.retries {
                let c0: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
                if self.ev.run(candidate, probe, &c0, &mut self.cand).is_ok() && compare(&self.cand)
                {
                    return true;
                }
            }
            return false;
        }
        let rows: Vec<usize> = (0..image.len()).filter(|&i| image[i].is_finite()).collect();
        let fit_rows: Vec<usize> = if rows.len() > FIT_ROWS {
            let stride = rows.len() / FIT_ROWS;
            rows.iter()
                .step_by(stride)
                .take(FIT_ROWS)
                .copied()
                .collect()
        } else {
            rows.clone()
        };
        let xf = probe.select_rows(&fit_rows);
        let yf: Vec<f64> = fit_rows.iter().map(|&i| image[i]).collect();
        let wf = tolerance_weights(&yf);
        let mut full: Option<(DataMatrix, Vec<f64>, Vec<f64>)> = None;
        // Nested row subsets: fits on few rows cross fewer poles of the
        // candidate, and each level warm-starts the next.
        let levels: Vec<(DataMatrix, Vec<f64>, Vec<f64>)> = [k + 2, 4 * (k + 2)]
            .into_iter()
            .filter(|&n| n < fit_rows.len())
            .map(|n| {
                let idx: Vec<usize> = (0..n).map(|j| j * fit_rows.len() / n).collect();
                let y: Vec<f64> = idx.iter().map(|&j| yf[j]).collect();
                let w = tolerance_weights(&y);
                (xf.select_rows(&idx), y, w)
            })
            .collect();
        for start in self.ranked_starts(candidate, &xf, &yf, &wf, source_c, rng) {
            let mut c0 = start;
            for (x, y, w) in &levels {
                let out = self.lm.run(
                    candidate,
                    x,
                    y,
                    Some(w),
                    &c0,
                    self.cfg.lm_budget,
                    &mut |pred| allclose(pred, y),
                );
                if out.started {
                    c0 = out.constants;
                }
            }
            let out = self.lm.run(
                candidate,
                &xf,
                &yf,
                Some(&wf),
                &c0,
                self.cfg.lm_budget,
                &mut |pred| allclose(pred, &yf),
            );
            if !out.started {
                continue;
            }
            if let Some(z) = snap_to_zero(&out.constants) {
                if self.reproduces(candidate, &z, image) {
                    return true;
                }
            }
            if !allclose(&out.pred, &yf) {
                continue;
            }
            if self
                .ev
                .run(candidate, probe, &out.constants, &mut self.cand)
                .is_ok()
                && compare(&self.cand)
            {
                return true;
            }
            if fit_rows.len() == rows.len() {
                continue;
            }
            // The subsample fit is not accurate enough everywhere: refine on
            // every finite row.
            let (xs, ys, ws) = full.get_or_insert_with(|| {
                let ys: Vec<f64> = rows.iter().map(|&i| image[i]).collect();
                let ws = tolerance_weights(&ys);
                (probe.select_rows(&rows), ys, ws)
            });
            let ys_ref: &[f64] = ys;
            let out = self.lm.run(
                candidate,
                xs,
                ys_ref,
                Some(ws),
                &out.constants,
                self.cfg.lm_budget,
                &mut |pred| allclose(pred, ys_ref),
            );
            if out.started
                && self
                    .ev
                    .run(candidate, probe, &out.constants, &mut self.cand)
                    .is_ok()
                && compare(&self.cand)
            {
                return true;
            }
        }
        false
    }
}

/// Per-row weights that put every residual on the scale of its `allclose`
/// tolerance.
fn tolerance_weights(y: &[f64]) -> Vec<f64> {
    y.iter()
        .map(|v| 1.0 / (ALLCLOSE_ATOL + ALLCLOSE_RTOL * v.abs()))
        .collect()
}

/// Sum over rows of `ln(1 + (w r)^2)` capped at `LOSS_CAP`, with
/// non-finite predictions scoring the cap.
fn bounded_loss(pred: &[f64], y: &[f64], w: &[f64]) -> f64 {
    pred.iter()
        .zip(y)
        .zip(w)
        .map(|((p, t), w)| {
            let r = w * (p - t);
            if r.is_finite() {
                (r * r).ln_1p().min(LOSS_CAP)
            } else {
                LOSS_CAP
            }
        })
        .sum()
}

/// `c` with entries below `SNAP_ZERO` in magnitude set to zero, if any are.
fn snap_to_zero(c: &[f64]) -> Option<Vec<f64>> {
    c.iter().any(|v| v.abs() < SNAP_ZERO && *v != 0.0).then(|| {
        c.iter()
            .map(|&v| if v.abs() < SNAP_ZERO { 0.0 } else { v })
            .collect()
    })
}

/// Parsimony score `log10(max(fvu, floor)) + gamma * length`.
pub fn parsimony_score(fvu: f64, length: usize, gamma: f64) -> f64 {
    let f = if fvu.is_nan() {
        f64::INFINITY
    } else {
        fvu.max(FVU_FLOOR)
    };
    f.log10() + gamma * length as f64
}

/// Ratio form of the parsimony comparison: whether `(fvu_b, len_b)` beats
/// `(fvu_a, len_a)`.
pub fn ratio_prefers(fvu_b: f64, len_b: usize, fvu_a: f64, len_a: usize, gamma: f64) -> bool {
    let fa = fvu_a.max(FVU_FLOOR);
    let fb = fvu_b.max(FVU_FLOOR);
    fb / fa < 10f64.powf(-gamma * (len_b as f64 - len_a as f64))
}

/// Index of the parsimony-optimal candidate. Ties go to the shorter
/// expression, then to the smaller canonical token sequence.
pub fn select_best_index(
    candidates: &[(PrefixExpr, FitResult)],
    gamma: f64,
) -> Result<usize, FitError> {
    if candidates.is_empty() {
        return Err(FitError::EmptyCandidates);
    }
    let key = |i: usize| {
        let (e, f) = &candidates[i];
        (
            parsimony_score(f.fvu, e.len(), gamma),
            e.len(),
            e.canonicalize(),
        )
    };
    let mut best = 0;
    let mut best_key = key(0);
    for i in 1..candidates.len() {
        let k = key(i);
        let ord =
            k.0.total_cmp(&best_key.0)
                .then(k.1.cmp(&best_key.1))
                .then_with(|| k.2.cmp(&best_key.2));
        if ord.is_lt() {
            best = i;
            best_key = k;
        }
    }
    Ok(best)
}

/// The parsimony-optimal candidate.
pub fn select_best(
    candidates: &[(PrefixExpr, FitResult)],
    gamma: f64,
) -> Result<&(PrefixExpr, FitResult), FitError> {
    select_best_index(candidates, gamma).map(|i| &candidates[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_prefix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(s: &str) -> PrefixExpr {
        parse_prefix(s).unwrap()
    }

    fn line_data(n: usize, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> DataMatrix {
        let xs: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        let ys = xs.iter().map(|&v| f(v)).collect();
        DataMatrix::from_columns(vec![xs])
            .unwrap()
            .with_targets(ys)
            .unwrap()
    }

    #[test]
    fn allclose_semantics() {
        assert!(allclose(&[1.0, f64::INFINITY], &[1.00001, f64::INFINITY]));
        assert!(!allclose(&[1.0], &[1.1]));
        assert!(!allclose(&[f64::NEG_INFINITY], &[f64::INFINITY]));
        assert!(!allclose(&[3.0], &[f64::NAN]));
        assert!(!allclose(&[f64::NAN], &[3.0]));
        assert!(allclose(&[f64::NAN], &[f64::NAN]));
    }

    #[test]
    fn already_optimal_start() {
        let d = line_data(20, -1.0, 1.0, |x| 2.5 * x);
        let plan = eval::compile(&p("* C x1"));
        let r = levmar(&plan, &d, d.targets().unwrap(), &[2.5], 100).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert_eq!(r.constants, vec![2.5]);
    }

    #[test]
    fn nan_everywhere_fails() {
        let d = line_data(10, -3.0, -1.0, |x| x);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = fit_constants(&p("log * C pow2 x1"), &d, 8, &mut rng).unwrap();
        let r2 = fit_constants(&p("log neg abs x1"), &d, 8, &mut rng).unwrap();
        assert!(!r2.converged);
        assert_eq!(r2.fvu, f64::INFINITY);
        assert!(r.fvu >= 0.0);
    }

    #[test]
    fn constant_free_uses_no_restarts() {
        let d = line_data(10, -2.0, 2.0, |x| x * x);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = fit_constants(&p("pow2 x1"), &d, 8, &mut rng).unwrap();
        assert_eq!(r.fvu, 0.0);
        assert_eq!(r.iterations, 0);
        assert!(r.constants.is_empty());
    }

    #[test]
    fn missing_targets() {
        let d = DataMatrix::from_rows(&[vec![1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            fit_constants(&p("+ C x1"), &d, 8, &mut rng),
            Err(FitError::MissingTargets)
        );
    }

    #[test]
    fn parsimony_examples() {
        assert!((parsimony_score(1e-8, 5, 0.05) + 7.75).abs() < 1e-12);
        assert!(parsimony_score(0.1, 5, 0.05) < parsimony_score(0.1, 6, 0.05));
        assert_eq!(parsimony_score(0.0, 0, 0.05), -30.0);
    }

    #[test]
    fn select_best_examples() {
        let mk = |s: &str, fvu: f64| {
            (
                p(s),
                FitResult {
                    constants: vec![],
                    fvu,
                    objective: 0.0,
                    converged: true,
                    iterations: 0,
                },
            )
        };
        let one = vec![mk("x1", 0.5)];
        assert_eq!(select_best_index(&one, 0.05).unwrap(), 0);
        assert_eq!(select_best_index(&[], 0.05), Err(FitError::EmptyCandidates));
        let ties = vec![mk("x2", 0.5), mk("x1", 0.5)];
        assert_eq!(select_best(&ties, 0.05).unwrap().0, p("x1"));
    }

    #[test]
    fn equivalence_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let probe = probe_matrix(1024, 4, 5.0, &mut rng);
        let cfg = EquivalenceConfig::new(probe);
        assert!(equivalent(&p("+ x1 x1"), &p("mult2 x1"), &cfg, &mut rng));
        assert!(!equivalent(&p("x1"), &p("x2"), &cfg, &mut rng));
        assert!(!equivalent(&p("sin x1"), &p("cos x1"), &cfg, &mut rng));
        assert!(equivalent(&p("log x1"), &p("log x1"), &cfg, &mut rng));
        assert!(equivalent(&p("log neg abs x1"), &p("nan"), &cfg, &mut rng));
        assert!(!equivalent(&p("log neg abs x1"), &p("x1"), &cfg, &mut rng));
        assert!(equivalent(&p("pow2 C"), &p("C"), &cfg, &mut rng));
        assert!(equivalent(&p("exp neg inf"), &p("0"), &cfg, &mut rng));
        assert!(!equivalent(&p("* C x1"), &p("C"), &cfg, &mut rng));
    }
}
