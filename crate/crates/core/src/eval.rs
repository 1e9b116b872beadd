//! Numeric evaluation of expressions on data matrices.
//!
//! Kernels follow IEEE semantics: out-of-domain inputs give NaN, division
//! by a signed zero gives a signed infinity, and non-finite values flow
//! through. Nothing here panics or errors for numeric reasons.

use crate::error::EvalError;
use crate::expr::PrefixExpr;
use crate::vocab::{Operator, TokenKind};

/// Column-major `M x D` inputs with optional targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    y: Option<Vec<f64>>,
}

impl DataMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DataMatrix, EvalError> {
        let m = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(EvalError::Ragged);
        }
        let mut data = vec![0.0; m * d];
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                data[j * m + i] = v;
            }
        }
        Ok(DataMatrix {
            rows: m,
            cols: d,
            data,
            y: None,
        })
    }

    pub fn from_columns(cols: Vec<Vec<f64>>) -> Result<DataMatrix, EvalError> {
        let m = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != m) {
            return Err(EvalError::Ragged);
        }
        let d = cols.len();
        Ok(DataMatrix {
            rows: m,
            cols: d,
            data: cols.into_iter().flatten().collect(),
            y: None,
        })
    }

    pub fn with_targets(mut self, y: Vec<f64>) -> Result<DataMatrix, EvalError> {
        if y.len() != self.rows {
            return Err(EvalError::LengthMismatch(y.len(), self.rows));
        }
        self.y = Some(y);
        Ok(self)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    pub fn targets(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// New matrix made of the given rows (targets carried along).
    pub fn select_rows(&self, idx: &[usize]) -> DataMatrix {
        let m = idx.len();
        let mut data = Vec::with_capacity(m * self.cols);
        for j in 0..self.cols {
            let col = self.column(j);
            data.extend(idx.iter().map(|&i| col[i]));
        }
        DataMatrix {
            rows: m,
            cols: self.cols,
            data,
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
        }
    }

    /// First `n` rows (or all when fewer).
    pub fn head(&self, n: usize) -> DataMatrix {
        let idx: Vec<usize> = (0..n.min(self.rows)).collect();
        self.select_rows(&idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Var(usize),
    Const(usize),
    Value(f64),
    Unary(Operator),
    Binary(Operator),
}

/// Postfix program for one expression.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPlan {
    code: Vec<Instr>,
    slots: usize,
    max_var: usize,
    depth: usize,
}

/// Compile an expression. Constant slots follow pre-order position.
pub fn compile(expr: &PrefixExpr) -> EvalPlan {
    compile_tokens(expr.tokens())
}

pub(crate) fn compile_tokens(tokens: &[crate::vocab::Token]) -> EvalPlan {
    let mut code = Vec::with_capacity(tokens.len());
    let mut slot = 0;
    let mut max_var = 0;
    // Walk right to left: a reversed prefix sequence is a postfix program
    // with binary operands swapped, which the Binary instruction undoes.
    let mut slots_seen = tokens.iter().filter(|t| t.is_constant()).count();
    for t in tokens.iter().rev() {
        let ins = match t.kind() {
            TokenKind::Operator(op) if op.arity() == 1 => Instr::Unary(op),
            TokenKind::Operator(op) => Instr::Binary(op),
            TokenKind::Variable(i) => {
                max_var = max_var.max(i);
                Instr::Var(i - 1)
            }
            TokenKind::Literal(l) => Instr::Value(l.value()),
            TokenKind::ConstantPlaceholder => {
                slots_seen -= 1;
                slot += 1;
                Instr::Const(slots_seen)
            }
        };
        code.push(ins);
    }
    let mut depth = 0usize;
    let mut max_depth = 0usize;
    for ins in &code {
        match ins {
            Instr::Var(_) | Instr::Const(_) | Instr::Value(_) => depth += 1,
            Instr::Unary(_) => {}
            Instr::Binary(_) => depth -= 1,
        }
        max_depth = max_depth.max(depth);
    }
    EvalPlan {
        code,
        slots: slot,
        max_var,
        depth: max_depth,
    }
}

impl EvalPlan {
    /// Number of constant slots.
    pub fn slot_count(&self) -> usize {
        self.slots
    }

    /// Highest variable index referenced (0 when none).
    pub fn max_variable(&self) -> usize {
        self.max_var
    }

    fn check(&self, x: &DataMatrix, c: &[f64]) -> Result<(), EvalError> {
        if c.len() != self.slots {
            return Err(EvalError::ConstantCount {
                expected: self.slots,
                got: c.len(),
            });
        }
        if self.max_var > x.cols() {
            return Err(EvalError::MissingColumn {
                needed: self.max_var,
                cols: x.cols(),
            });
        }
        Ok(())
    }

    /// Evaluate on every row of `x`.
    pub fn evaluate(&self, x: &DataMatrix, c: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; x.rows()];
        Evaluator::default().run(self, x, c, &mut out)?;
        Ok(out)
    }

    /// Evaluate a single row given as a slice of variable values.
    pub fn evaluate_point(&self, point: &[f64], c: &[f64]) -> f64 {
        let mut stack: Vec<f64> = Vec::with_capacity(self.depth);
        for ins in &self.code {
            match *ins {
                Instr::Var(j) => stack.push(point[j]),
                Instr::Const(k) => stack.push(c[k]),
                Instr::Value(v) => stack.push(v),
                Instr::Unary(op) => {
                    let a = stack.pop().expect("stack");
                    stack.push(apply_unary(op, a));
                }
                Instr::Binary(op) => {
                    let left = stack.pop().expect("stack");
                    let right = stack.pop().expect("stack");
                    stack.push(apply_binary(op, left, right));
                }
            }
        }
        stack.pop().expect("stack")
    }
}

/// Reusable column buffers for vectorized evaluation.
#[derive(Debug, Default)]
pub struct Evaluator {
    pool: Vec<Vec<f64>>,
    stack: Vec<Vec<f64>>,
}

impl Evaluator {
    pub fn run(
        &mut self,
        plan: &EvalPlan,
        x: &DataMatrix,
        c: &[f64],
        out: &mut [f64],
    ) -> Result<(), EvalError> {
        plan.check(x, c)?;
        let m = x.rows();
        if out.len() != m {
            return Err(EvalError::LengthMismatch(out.len(), m));
        }
        for ins in &plan.code {
            match *ins {
                Instr::Var(j) => {
                    let mut b = self.take(m);
                    b.copy_from_slice(x.column(j));
                    self.stack.push(b);
                }
                Instr::Const(k) => {
                    let mut b = self.take(m);
                    b.fill(c[k]);
                    self.stack.push(b);
                }
                Instr::Value(v) => {
                    let mut b = self.take(m);
                    b.fill(v);
                    self.stack.push(b);
                }
                Instr::Unary(op) => {
                    let b = self.stack.last_mut().expect("stack");
                    unary_in_place(op, b);
                }
                Instr::Binary(op) => {
                    let left = self.stack.pop().expect("stack");
                    let right = self.stack.last_mut().expect("stack");
                    for (r, &l) in right.iter_mut().zip(&left) {
                        *r = apply_binary(op, l, *r);
                    }
                    self.pool.push(left);
                }
            }
        }
        let res = self.stack.pop().expect("stack");
        out.copy_from_slice(&res);
        self.pool.push(res);
        Ok(())
    }

    fn take(&mut self, m: usize) -> Vec<f64> {
        match self.pool.pop() {
            Some(mut b) => {
                b.resize(m, 0.0);
                b
            }
            None => vec![0.0; m],
        }
    }
}

fn unary_in_place(op: Operator, b: &mut [f64]) {
    for v in b.iter_mut() {
        *v = apply_unary(op, *v);
    }
}

/// Scalar kernel for a unary operator.
#[inline]
pub fn apply_unary(op: Operator, x: f64) -> f64 {
    use Operator::*;
    match op {
        Abs => x.abs(),
        Inv => 1.0 / x,
        Neg => -x,
        Pow2 => x * x,
        Pow3 => x * x * x,
        Pow4 => {
            let s = x * x;
            s * s
        }
        Pow5 => {
            let s = x * x;
            s * s * x
        }
        Pow1_2 => x.sqrt(),
        Pow1_3 => x.cbrt(),
        Pow1_4 => x.sqrt().sqrt(),
        Pow1_5 => x.signum() * x.abs().powf(0.2),
        Sin => x.sin(),
        Cos => x.cos(),
        Tan => x.tan(),
        Asin => x.asin(),
        Acos => x.acos(),
        Atan => x.atan(),
        Sinh => x.sinh(),
        Cosh => x.cosh(),
        Tanh => x.tanh(),
        Asinh => x.asinh(),
        Acosh => x.acosh(),
        Atanh => x.atanh(),
        Exp => x.exp(),
        Log => x.ln(),
        Mult2 => 2.0 * x,
        Mult3 => 3.0 * x,
        Mult4 => 4.0 * x,
        Mult5 => 5.0 * x,
        Div2 => x / 2.0,
        Div3 => x / 3.0,
        Div4 => x / 4.0,
        Div5 => x / 5.0,
        Add | Sub | Mul | Div | Pow => f64::NAN,
    }
}

/// Scalar kernel for a binary operator.
#[inline]
pub fn apply_binary(op: Operator, a: f64, b: f64) -> f64 {
    match op {
        Operator::Add => a + b,
        Operator::Sub => a - b,
        Operator::Mul => a * b,
        Operator::Div => a / b,
        Operator::Pow => a.powf(b),
        _ => f64::NAN,
    }
}

/// Fraction of variance unexplained. Any NaN prediction counts as a failed
/// fit and yields `+inf`.
pub fn fvu(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    if y.len() != y_hat.len() {
        return Err(EvalError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.len() < 2 {
        return Err(EvalError::TooFewValues(2));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if tss.is_nan() || tss == 0.0 {
        return Err(EvalError::ConstantTarget);
    }
    if y_hat.iter().any(|v| v.is_nan()) {
        return Ok(f64::INFINITY);
    }
    let rss: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    if rss.is_nan() {
        return Ok(f64::INFINITY);
    }
    Ok(rss / tss)
}

pub fn all_finite_real(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_prefix;

    fn p(s: &str) -> PrefixExpr {
        parse_prefix(s).unwrap()
    }

    #[test]
    fn compile_counts_slots() {
        assert_eq!(compile(&p("+ x1 C")).slot_count(), 1);
        let plan = compile(&p("* / x1 pow2 x2 C"));
        assert_eq!(plan.slot_count(), 1);
        assert_eq!(plan.max_variable(), 2);
        assert_eq!(compile(&p("0")).slot_count(), 0);
    }

    #[test]
    fn evaluate_simple() {
        let x = DataMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let y = compile(&p("+ x1 C")).evaluate(&x, &[3.0]).unwrap();
        assert_eq!(y, vec![4.0, 5.0]);
    }

    #[test]
    fn slots_follow_preorder() {
        let x = DataMatrix::from_rows(&[vec![10.0]]).unwrap();
        let y = compile(&p("- C / x1 C")).evaluate(&x, &[1.0, 5.0]).unwrap();
        assert_eq!(y, vec![1.0 - 2.0]);
        let y = compile(&p("pow C C")).evaluate(&x, &[2.0, 3.0]).unwrap();
        assert_eq!(y, vec![8.0]);
    }

    #[test]
    fn extended_values() {
        let x = DataMatrix::from_rows(&[vec![f64::NEG_INFINITY], vec![0.0], vec![-0.0]]).unwrap();
        let y = compile(&p("exp x1")).evaluate(&x, &[]).unwrap();
        assert_eq!(y[0], 0.0);
        let y = compile(&p("/ 1 x1")).evaluate(&x, &[]).unwrap();
        assert_eq!(y[1], f64::INFINITY);
        assert_eq!(y[2], f64::NEG_INFINITY);
        let y = compile(&p("/ x1 x1")).evaluate(&x, &[]).unwrap();
        assert!(y[1].is_nan());
    }

    #[test]
    fn out_of_domain_is_nan() {
        let x = DataMatrix::from_rows(&[vec![-2.0]]).unwrap();
        for s in [
            "log x1",
            "asin x1",
            "pow1_2 x1",
            "pow1_4 x1",
            "acosh x1",
            "pow x1 0.5",
        ] {
            if let Ok(e) = parse_prefix(s) {
                let v = compile(&e).evaluate(&x, &[]).unwrap()[0];
                assert!(v.is_nan(), "{s}: {v}");
            }
        }
        let v = compile(&p("pow x1 div3 1")).evaluate(&x, &[]).unwrap()[0];
        assert!(v.is_nan());
        assert!(
            (compile(&p("pow1_3 x1")).evaluate(&x, &[]).unwrap()[0] + 2f64.cbrt()).abs() < 1e-15
        );
        assert!(
            (compile(&p("pow1_5 x1")).evaluate(&x, &[]).unwrap()[0] + 2f64.powf(0.2)).abs() < 1e-15
        );
    }

    #[test]
    fn shape_errors() {
        let x = DataMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            compile(&p("+ x1 x2")).evaluate(&x, &[]),
            Err(EvalError::MissingColumn { needed: 2, cols: 1 })
        ));
        assert!(matches!(
            compile(&p("+ x1 C")).evaluate(&x, &[]),
            Err(EvalError::ConstantCount { .. })
        ));
    }

    #[test]
    fn fvu_examples() {
        assert_eq!(fvu(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(fvu(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(fvu(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(fvu(&[0.0, 1.0], &[f64::NAN, 1.0]).unwrap(), f64::INFINITY);
        assert_eq!(
            fvu(&[1.0, 1.0], &[1.0, 1.0]),
            Err(EvalError::ConstantTarget)
        );
    }

    #[test]
    fn finiteness() {
        assert!(all_finite_real(&[1.0, 2.0]));
        assert!(!all_finite_real(&[1.0, f64::INFINITY]));
        assert!(!all_finite_real(&[f64::NAN]));
    }
}
