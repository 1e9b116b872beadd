//! Training data generation: skeleton sampling, simplification,
//! decontamination against a hold-out set and numeric data synthesis.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;

use crate::discover::mix;
use crate::error::{DatasetError, EvalError};
use crate::eval::{compile, DataMatrix, Evaluator};
use crate::expr::{parse_prefix, PrefixExpr};
use crate::simplify::{simplify, RuleIndex, DEFAULT_BUDGET};
use crate::vocab::{Operator, Token};

/// Rows of the decontamination probe matrix.
pub const HOLDOUT_ROWS: usize = 512;
/// Half-width of the decontamination probe domain.
pub const HOLDOUT_RANGE: f64 = 10.0;
/// Point-wise tolerance of the decontamination check.
pub const HOLDOUT_TOL: f64 = 1e-4;
/// Attempts allowed per instance slot before the slot is left empty.
pub const MAX_ATTEMPTS: usize = 10_000;

/// Generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub dims: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub max_ops: usize,
    pub max_symbols: usize,
    pub constant_sigma: f64,
    pub max_points: usize,
    pub domain_sigma: f64,
    /// Extra data draws after the first one fails.
    pub resample_limit: usize,
    /// Pattern length cap of the engine used for simplification.
    pub simplify_lmax: usize,
    pub budget: usize,
    /// Fixed per-dimension domains replacing the N(0, 10) endpoint draw.
    pub domain: Option<Vec<(f64, f64)>>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            dims: 3,
            alpha: 0.7,
            lambda: 1.0,
            max_ops: 17,
            max_symbols: 35,
            constant_sigma: 5.0,
            max_points: 1024,
            domain_sigma: 10.0,
            resample_limit: 4,
            simplify_lmax: 4,
            budget: DEFAULT_BUDGET,
            domain: None,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// One `key=value` pair per field, in a fixed order.
    pub fn describe(&self) -> Vec<(String, String)> {
        let domain = match &self.domain {
            None => "sampled".to_string(),
            Some(d) => d
                .iter()
                .map(|(a, b)| format!("{a}:{b}"))
                .collect::<Vec<_>>()
                .join(","),
        };
        vec![
            ("dims".into(), self.dims.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("lambda".into(), self.lambda.to_string()),
            ("max_ops".into(), self.max_ops.to_string()),
            ("max_symbols".into(), self.max_symbols.to_string()),
            ("constant_sigma".into(), self.constant_sigma.to_string()),
            ("max_points".into(), self.max_points.to_string()),
            ("domain_sigma".into(), self.domain_sigma.to_string()),
            ("resample_limit".into(), self.resample_limit.to_string()),
            ("simplify_lmax".into(), self.simplify_lmax.to_string()),
            ("budget".into(), self.budget.to_string()),
            ("domain".into(), domain),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// Probability of each operator count `0..=max_ops`, proportional to
/// `exp(n^alpha / lambda)`.
pub fn n_ops_pmf(alpha: f64, lambda: f64, max_ops: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..=max_ops)
        .map(|n| ((n as f64).powf(alpha) / lambda).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Draws an operator count from [`n_ops_pmf`].
pub fn sample_n_ops<R: Rng + ?Sized>(rng: &mut R, cfg: &GenConfig) -> usize {
    let pmf = n_ops_pmf(cfg.alpha, cfg.lambda, cfg.max_ops);
    WeightedIndex::new(&pmf)
        .expect("positive weights")
        .sample(rng)
}

/// Tree-shape sampler over unlabeled unary/binary trees.
///
/// `counts[e][n]` is the weighted number of ways to complete a tree with
/// `e` empty slots and `n` operators still to place.
struct ShapeTable {
    counts: Vec<Vec<f64>>,
}

impl ShapeTable {
    fn new(max_ops: usize, w_unary: f64, w_binary: f64) -> ShapeTable {
        let max_e = max_ops + 2;
        let mut counts = vec![vec![0.0; max_ops + 1]; max_e + 2];
        for row in counts.iter_mut().skip(1) {
            row[0] = 1.0;
        }
        for n in 1..=max_ops {
            for e in 1..=max_e {
                counts[e][n] =
                    counts[e - 1][n] + w_unary * counts[e][n - 1] + w_binary * counts[e + 1][n - 1];
            }
        }
        ShapeTable { counts }
    }

    /// Index among the `e` empty slots that receives an operator of arity `a`.
    fn position<R: Rng + ?Sized>(&self, rng: &mut R, e: usize, n: usize, a: usize) -> usize {
        let w: Vec<f64> = (0..e).map(|k| self.counts[e - k + a - 1][n - 1]).collect();
        WeightedIndex::new(&w)
            .expect("feasible position")
            .sample(rng)
    }
}

/// Operator vocabulary with sampling weights.
struct OperatorTable {
    ops: Vec<Operator>,
    dist: WeightedIndex<u32>,
    w_unary: f64,
    w_binary: f64,
}

impl OperatorTable {
    fn new() -> OperatorTable {
        let ops = Operator::ALL.to_vec();
        let weights: Vec<u32> = ops.iter().map(|o| o.info().weight).collect();
        let total: f64 = weights.iter().map(|&w| w as f64).sum();
        let w_unary = ops
            .iter()
            .filter(|o| o.arity() == 1)
            .map(|o| o.info().weight as f64)
            .sum::<f64>()
            / total;
        OperatorTable {
            dist: WeightedIndex::new(&weights).expect("positive weights"),
            ops,
            w_unary,
            w_binary: 1.0 - w_unary,
        }
    }
}

/// Samples a skeleton with `n_ops` operators.
///
/// Each operator is drawn by weight first; its slot among the open leaves
/// is then drawn in proportion to the number of trees that can still be
/// completed. Leaves get `n_var*` distinct symbols from `x1..xD` and `C`,
/// duplicated at random to fill every leaf.
pub fn sample_skeleton_with<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &GenConfig,
    n_ops: usize,
) -> PrefixExpr {
    let table = OperatorTable::new();
    let shapes = ShapeTable::new(n_ops.max(1), table.w_unary, table.w_binary);
    // None marks an open leaf slot
    let mut stack: Vec<Option<Operator>> = vec![None];
    let mut empty = 1usize;
    let mut skipped = 0usize;
    for remaining in (1..=n_ops).rev() {
        let op = table.ops[table.dist.sample(rng)];
        let a = op.arity() as usize;
        let k = shapes.position(rng, empty, remaining, a);
        skipped += k;
        empty = empty + a - 1 - k;
        let pos = stack
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .nth(skipped)
            .map(|(i, _)| i)
            .expect("slot exists");
        stack.splice(
            pos..=pos,
            std::iter::once(Some(op)).chain(std::iter::repeat_n(None, a)),
        );
    }
    let n_leaves = stack.iter().filter(|s| s.is_none()).count();
    let mut symbols: Vec<Token> = (1..=cfg.dims).map(Token::var).collect();
    symbols.push(Token::CONST);
    let n_unique = rng.random_range(1..=n_leaves.min(cfg.dims).max(1));
    let unique: Vec<Token> = symbols.choose_multiple(rng, n_unique).copied().collect();
    let mut leaves = unique.clone();
    while leaves.len() < n_leaves {
        leaves.push(*unique.choose(rng).expect("non-empty"));
    }
    leaves.shuffle(rng);
    let mut it = leaves.into_iter();
    let tokens: Vec<Token> = stack
        .into_iter()
        .map(|s| match s {
            Some(op) => Token::op(op),
            None => it.next().expect("one symbol per leaf"),
        })
        .collect();
    PrefixExpr::from_valid(tokens)
}

/// Samples an operator count, then a skeleton.
pub fn sample_skeleton<R: Rng + ?Sized>(rng: &mut R, cfg: &GenConfig) -> PrefixExpr {
    let n = sample_n_ops(rng, cfg);
    sample_skeleton_with(rng, cfg, n)
}

/// `count` raw skeletons, skeleton `i` drawn from the stream of slot `i`.
pub fn sample_skeletons(cfg: &GenConfig, count: usize, seed: u64) -> Vec<PrefixExpr> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(seed, i as u64));
            sample_skeleton(&mut rng, cfg)
        })
        .collect()
}

/// Constant-pruned hold-out skeletons with their images on a fixed probe.
#[derive(Debug, Clone)]
pub struct HoldoutIndex {
    pub skeletons: Vec<PrefixExpr>,
    pub pruned: Vec<PrefixExpr>,
    pub probe: DataMatrix,
    pub images: Vec<Vec<f64>>,
}

/// Prunes, compiles and images every hold-out skeleton on a
/// `512 x dims` probe drawn from U(-10, 10).
pub fn build_holdout_index(
    skeletons: &[PrefixExpr],
    dims: usize,
    seed: u64,
) -> Result<HoldoutIndex, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new_inclusive(-HOLDOUT_RANGE, HOLDOUT_RANGE).expect("valid range");
    let cols: Vec<Vec<f64>> = (0..dims.max(1))
        .map(|_| (0..HOLDOUT_ROWS).map(|_| u.sample(&mut rng)).collect())
        .collect();
    let probe = DataMatrix::from_columns(cols)?;
    let pruned: Vec<PrefixExpr> = skeletons.iter().map(PrefixExpr::prune_constants).collect();
    let images = pruned
        .iter()
        .map(|p| compile(p).evaluate(&probe, &[]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HoldoutIndex {
        skeletons: skeletons.to_vec(),
        pruned,
        probe,
        images,
    })
}

/// Point-wise decontamination match: within tolerance, equal, or NaN on
/// either side.
#[inline]
fn holdout_match(a: f64, b: f64) -> bool {
    a.is_nan() || b.is_nan() || a == b || (a - b).abs() <= HOLDOUT_TOL
}

impl HoldoutIndex {
    pub fn len(&self) -> usize {
        self.skeletons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skeletons.is_empty()
    }

    /// Index of the first hold-out entry the candidate collides with.
    pub fn find_match(&self, candidate: &PrefixExpr) -> Option<usize> {
        let pruned = candidate.prune_constants();
        if pruned.max_variable() > self.probe.cols() {
            return None;
        }
        let image = compile(&pruned).evaluate(&self.probe, &[]).ok()?;
        self.images
            .iter()
            .position(|h| h.iter().zip(&image).all(|(&a, &b)| holdout_match(a, b)))
    }
}

/// Whether the constant-pruned candidate matches any hold-out image.
pub fn is_contaminated(candidate: &PrefixExpr, index: &HoldoutIndex) -> bool {
    index.find_match(candidate).is_some()
}

/// A generated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub skeleton: PrefixExpr,
    pub constants: Vec<f64>,
    pub x: DataMatrix,
    pub y: Vec<f64>,
}

/// Why a draw was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rejection {
    SimplifiedToNonFinite,
    /// Neither a variable nor a placeholder survived simplification.
    Degenerate,
    Contaminated,
    DataRejected,
}

impl Rejection {
    pub const ALL: [Rejection; 4] = [
        Rejection::SimplifiedToNonFinite,
        Rejection::Degenerate,
        Rejection::Contaminated,
        Rejection::DataRejected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rejection::SimplifiedToNonFinite => "simplified_to_non_finite",
            Rejection::Degenerate => "degenerate",
            Rejection::Contaminated => "contaminated",
            Rejection::DataRejected => "data_rejected",
        }
    }
}

/// Per-type rejection counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenStats {
    pub accepted: u64,
    pub simplified_to_non_finite: u64,
    pub degenerate: u64,
    pub contaminated: u64,
    pub data_rejected: u64,
}

impl GenStats {
    pub fn record(&mut self, r: Rejection) {
        match r {
            Rejection::SimplifiedToNonFinite => self.simplified_to_non_finite += 1,
            Rejection::Degenerate => self.degenerate += 1,
            Rejection::Contaminated => self.contaminated += 1,
            Rejection::DataRejected => self.data_rejected += 1,
        }
    }

    pub fn rejected(&self) -> u64 {
        self.simplified_to_non_finite + self.degenerate + self.contaminated + self.data_rejected
    }

    pub fn merge(&mut self, o: &GenStats) {
        self.accepted += o.accepted;
        self.simplified_to_non_finite += o.simplified_to_non_finite;
        self.degenerate += o.degenerate;
        self.contaminated += o.contaminated;
        self.data_rejected += o.data_rejected;
    }
}

/// The generation pipeline over a fixed engine and hold-out set.
pub struct Generator<'a> {
    pub cfg: &'a GenConfig,
    pub engine: &'a RuleIndex,
    pub holdout: &'a HoldoutIndex,
}

impl Generator<'_> {
    /// Simplifies and checks a skeleton, then synthesizes data for it.
    pub fn process_skeleton<R: Rng + ?Sized>(
        &self,
        skeleton: &PrefixExpr,
        rng: &mut R,
    ) -> Result<TrainingInstance, Rejection> {
        let s = simplify(skeleton, self.engine, self.cfg.budget);
        if s.has_non_finite_literal() {
            return Err(Rejection::SimplifiedToNonFinite);
        }
        if s.count_constants() == 0 && s.variables().is_empty() {
            return Err(Rejection::Degenerate);
        }
        if is_contaminated(&s, self.holdout) {
            return Err(Rejection::Contaminated);
        }
        self.sample_data(s, rng)
    }

    /// Draws points, domains and constants until the image is finite.
    pub fn sample_data<R: Rng + ?Sized>(
        &self,
        skeleton: PrefixExpr,
        rng: &mut R,
    ) -> Result<TrainingInstance, Rejection> {
        let cfg = self.cfg;
        let plan = compile(&skeleton);
        let domain_prior = Normal::new(0.0, cfg.domain_sigma).expect("valid sigma");
        let constant_prior = Normal::new(0.0, cfg.constant_sigma).expect("valid sigma");
        let mut ev = Evaluator::default();
        for _ in 0..=cfg.resample_limit {
            let m = rng.random_range(1..=cfg.max_points.max(1));
            let mut cols = Vec::with_capacity(cfg.dims);
            for j in 0..cfg.dims {
                let (mut a, mut b) = match &cfg.domain {
                    Some(d) => d[j % d.len()],
                    None => (domain_prior.sample(rng), domain_prior.sample(rng)),
                };
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                cols.push(
                    (0..m)
                        .map(|_| if a == b { a } else { rng.random_range(a..b) })
                        .collect(),
                );
            }
            let constants: Vec<f64> = (0..plan.slot_count())
                .map(|_| constant_prior.sample(rng))
                .collect();
            let x = DataMatrix::from_columns(cols).expect("rectangular");
            let mut y = vec![0.0; m];
            if ev.run(&plan, &x, &constants, &mut y).is_err() {
                return Err(Rejection::DataRejected);
            }
            if y.iter().all(|v| v.is_finite()) {
                return Ok(TrainingInstance {
                    skeleton,
                    constants,
                    x,
                    y,
                });
            }
        }
        Err(Rejection::DataRejected)
    }

    /// One full draw: sample a skeleton and process it.
    pub fn sample_instance<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<TrainingInstance, Rejection> {
        let sk = sample_skeleton(rng, self.cfg);
        self.process_skeleton(&sk, rng)
    }

    /// Draws until one instance is accepted, counting rejections.
    pub fn fill_slot<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        stats: &mut GenStats,
    ) -> Option<TrainingInstance> {
        for _ in 0..MAX_ATTEMPTS {
            match self.sample_instance(rng) {
                Ok(inst) => {
                    stats.accepted += 1;
                    return Some(inst);
                }
                Err(r) => stats.record(r),
            }
        }
        None
    }

    /// `count` instances in slot order. Slot `i` draws from its own stream
    /// seeded by `(seed, i)`, so the output does not depend on threading.
    pub fn generate(&self, count: usize, seed: u64) -> (Vec<TrainingInstance>, GenStats) {
        let slots: Vec<(Option<TrainingInstance>, GenStats)> = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(seed, i as u64));
                let mut st = GenStats::default();
                let inst = self.fill_slot(&mut rng, &mut st);
                (inst, st)
            })
            .collect();
        let mut stats = GenStats::default();
        let mut out = Vec::with_capacity(count);
        for (inst, st) in slots {
            stats.merge(&st);
            out.extend(inst);
        }
        (out, stats)
    }
}

/// Seed of instance slot `index`.
pub fn instance_seed(seed: u64, index: u64) -> u64 {
    mix(seed, u64::MAX, index)
}

/// Dataset file header line prefix and version.
pub const DATASET_MAGIC: &str = "#exprnorm-dataset 1";

/// Dataset text: header, then per instance `>skeleton`, `>constants`,
/// `>points` and one comma separated row of `x1..xD,y` per point.
pub fn dataset_text(cfg: &GenConfig, instances: &[TrainingInstance], stats: &GenStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{DATASET_MAGIC}");
    for (k, v) in cfg.describe() {
        let _ = writeln!(s, "#{k} {v}");
    }
    let _ = writeln!(s, "#count {}", instances.len());
    let _ = writeln!(
        s,
        "#rejected simplified_to_non_finite={} degenerate={} contaminated={} data_rejected={}",
        stats.simplified_to_non_finite, stats.degenerate, stats.contaminated, stats.data_rejected
    );
    for inst in instances {
        write_instance(&mut s, inst);
    }
    s
}

fn write_instance(s: &mut String, inst: &TrainingInstance) {
    let _ = writeln!(s, ">skeleton {}", inst.skeleton);
    let cs: Vec<String> = inst.constants.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(s, ">constants {}", cs.join(" "));
    let _ = writeln!(s, ">points {}", inst.y.len());
    for i in 0..inst.y.len() {
        for j in 0..inst.x.cols() {
            let _ = write!(s, "{},", inst.x.get(i, j));
        }
        let _ = writeln!(s, "{}", inst.y[i]);
    }
}

/// `#key value` header fields of a dataset file, in file order.
pub type DatasetHeader = Vec<(String, String)>;

/// Parses dataset text written by [`dataset_text`], returning the header
/// fields and the instances.
pub fn parse_dataset(text: &str) -> Result<(DatasetHeader, Vec<TrainingInstance>), DatasetError> {
    let mut lines = text.lines().enumerate().peekable();
    let err = |line: usize, message: String| DatasetError {
        line: line + 1,
        message,
    };
    match lines.next() {
        Some((_, l)) if l.trim() == DATASET_MAGIC => {}
        _ => return Err(err(0, format!("expected `{DATASET_MAGIC}`"))),
    }
    let mut header = Vec::new();
    while let Some((_, l)) = lines.peek() {
        let Some(rest) = l.strip_prefix('#') else {
            break;
        };
        let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
        header.push((k.to_string(), v.to_string()));
        lines.next();
    }
    let field = |lines: &mut std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'_>>>,
                 name: &str|
     -> Result<(usize, String), DatasetError> {
        let prefix = format!(">{name}");
        let (no, l) = lines.next().ok_or_else(|| DatasetError {
            line: 0,
            message: format!("missing `{prefix}`"),
        })?;
        let rest = l
            .strip_prefix(&prefix)
            .ok_or_else(|| err(no, format!("expected `{prefix}`")))?;
        Ok((no, rest.trim().to_string()))
    };
    let mut out = Vec::new();
    while lines.peek().is_some() {
        let (no, sk) = field(&mut lines, "skeleton")?;
        let skeleton = parse_prefix(&sk).map_err(|e| err(no, e.to_string()))?;
        let (no, cs) = field(&mut lines, "constants")?;
        let constants = cs
            .split_whitespace()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| err(no, format!("bad constant `{c}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (no, m) = field(&mut lines, "points")?;
        let m: usize = m
            .parse()
            .map_err(|_| err(no, format!("bad point count `{m}`")))?;
        let mut rows = Vec::with_capacity(m);
        let mut y = Vec::with_capacity(m);
        for _ in 0..m {
            let (no, l) = lines
                .next()
                .ok_or_else(|| err(no, "missing data rows".into()))?;
            let mut vals = l
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| err(no, format!("bad value `{v}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            y.push(vals.pop().ok_or_else(|| err(no, "empty row".into()))?);
            rows.push(vals);
        }
        let x = DataMatrix::from_rows(&rows).map_err(|e| err(no, e.to_string()))?;
        out.push(TrainingInstance {
            skeleton,
            constants,
            x,
            y,
        });
    }
    Ok((header, out))
}

/// Instances packed into contiguous buffers.
///
/// Instance `i` owns rows `row_offsets[i]..row_offsets[i + 1]` of the
/// row-major `x` (shape `rows x dims`) and `y`, and constants
/// `constant_offsets[i]..constant_offsets[i + 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceBatch {
    pub dims: usize,
    pub skeletons: Vec<String>,
    pub constants: Vec<f64>,
    pub constant_offsets: Vec<usize>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub row_offsets: Vec<usize>,
    pub stats: GenStats,
}

impl InstanceBatch {
    pub fn from_instances(
        dims: usize,
        instances: &[TrainingInstance],
        stats: GenStats,
    ) -> InstanceBatch {
        let mut b = InstanceBatch {
            dims,
            constant_offsets: vec![0],
            row_offsets: vec![0],
            stats,
            ..InstanceBatch::default()
        };
        for inst in instances {
            b.skeletons.push(inst.skeleton.to_string());
            b.constants.extend(&inst.constants);
            b.constant_offsets.push(b.constants.len());
            for i in 0..inst.y.len() {
                b.x.extend((0..inst.x.cols()).map(|j| inst.x.get(i, j)));
            }
            b.y.extend(&inst.y);
            b.row_offsets.push(b.y.len());
        }
        b
    }

    pub fn len(&self) -> usize {
        self.skeletons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skeletons.is_empty()
    }

    /// `(rows, dims)` of the packed `x` buffer.
    pub fn x_shape(&self) -> (usize, usize) {
        (self.y.len(), self.dims)
    }
}
