//! Token alphabet and the operator property table.
//!
//! Every token is a single byte. The byte values are laid out so that the
//! canonical total order over tokens is plain integer order: operators (in
//! table order), then variables by index, then literals, then the constant
//! placeholder.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::VocabError;

/// Highest variable index a token can carry.
pub const MAX_VARIABLES: usize = 200;

/// Default dimensionality for data generation.
pub const DEFAULT_MAX_DIMS: usize = 10;

/// Number of variables used by the rule-discovery alphabet.
pub const DISCOVERY_VARIABLES: usize = 4;

const N_OPS: u8 = 38;
const VAR_BASE: u8 = N_OPS;
const LIT_BASE: u8 = VAR_BASE + MAX_VARIABLES as u8;
const CONST_CODE: u8 = LIT_BASE + 8;

macro_rules! operators {
    ($( $variant:ident = $code:expr, $name:expr, $arity:expr, $weight:expr, $comm:expr, $cluster:ident, $inverse:expr, $fold:expr ;)*) => {
        /// The fixed operator vocabulary, in table order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum Operator {
            $( $variant = $code, )*
        }

        impl Operator {
            pub const ALL: [Operator; N_OPS as usize] = [ $( Operator::$variant, )* ];

            const INFO: [OperatorInfo; N_OPS as usize] = [ $(
                OperatorInfo {
                    op: Operator::$variant,
                    name: $name,
                    arity: $arity,
                    weight: $weight,
                    commutative: $comm,
                    cluster: ClusterFamily::$cluster,
                    inverse: $inverse,
                    fold: $fold,
                },
            )* ];
        }
    };
}

operators! {
    Add = 0, "+", 2, 10, true, Sum, None, None;
    Sub = 1, "-", 2, 10, false, Sum, None, None;
    Mul = 2, "*", 2, 10, true, Product, None, None;
    Div = 3, "/", 2, 10, false, Product, None, None;
    Abs = 4, "abs", 1, 1, false, None, None, None;
    Inv = 5, "inv", 1, 1, false, None, Some(Operator::Inv), None;
    Neg = 6, "neg", 1, 1, false, None, Some(Operator::Neg), None;
    Pow = 7, "pow", 2, 1, false, None, None, None;
    Pow2 = 8, "pow2", 1, 1, false, None, None, None;
    Pow3 = 9, "pow3", 1, 1, false, None, Some(Operator::Pow1_3), None;
    Pow4 = 10, "pow4", 1, 1, false, None, None, None;
    Pow5 = 11, "pow5", 1, 1, false, None, Some(Operator::Pow1_5), None;
    Pow1_2 = 12, "pow1_2", 1, 1, false, None, None, None;
    Pow1_3 = 13, "pow1_3", 1, 1, false, None, Some(Operator::Pow3), None;
    Pow1_4 = 14, "pow1_4", 1, 1, false, None, None, None;
    Pow1_5 = 15, "pow1_5", 1, 1, false, None, Some(Operator::Pow5), None;
    Sin = 16, "sin", 1, 1, false, None, None, None;
    Cos = 17, "cos", 1, 1, false, None, None, None;
    Tan = 18, "tan", 1, 1, false, None, None, None;
    Asin = 19, "asin", 1, 1, false, None, None, None;
    Acos = 20, "acos", 1, 1, false, None, None, None;
    Atan = 21, "atan", 1, 1, false, None, None, None;
    Sinh = 22, "sinh", 1, 1, false, None, Some(Operator::Asinh), None;
    Cosh = 23, "cosh", 1, 1, false, None, None, None;
    Tanh = 24, "tanh", 1, 1, false, None, None, None;
    Asinh = 25, "asinh", 1, 1, false, None, Some(Operator::Sinh), None;
    Acosh = 26, "acosh", 1, 1, false, None, None, None;
    Atanh = 27, "atanh", 1, 1, false, None, None, None;
    Exp = 28, "exp", 1, 1, false, None, Some(Operator::Log), None;
    Log = 29, "log", 1, 1, false, None, Some(Operator::Exp), None;
    Mult2 = 30, "mult2", 1, 1, false, None, Some(Operator::Div2), Some(IntegerFold::Mult(2));
    Mult3 = 31, "mult3", 1, 1, false, None, Some(Operator::Div3), Some(IntegerFold::Mult(3));
    Mult4 = 32, "mult4", 1, 1, false, None, Some(Operator::Div4), Some(IntegerFold::Mult(4));
    Mult5 = 33, "mult5", 1, 1, false, None, Some(Operator::Div5), Some(IntegerFold::Mult(5));
    Div2 = 34, "div2", 1, 1, false, None, Some(Operator::Mult2), Some(IntegerFold::Div(2));
    Div3 = 35, "div3", 1, 1, false, None, Some(Operator::Mult3), Some(IntegerFold::Div(3));
    Div4 = 36, "div4", 1, 1, false, None, Some(Operator::Mult4), Some(IntegerFold::Div(4));
    Div5 = 37, "div5", 1, 1, false, None, Some(Operator::Mult5), Some(IntegerFold::Div(5));
}

/// Associative/commutative cluster an operator belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClusterFamily {
    Sum,
    Product,
    None,
}

/// Integer scaling folded into a unary token: `mult-k` or `div-k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntegerFold {
    Mult(u8),
    Div(u8),
}

/// Static property record of one operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperatorInfo {
    pub op: Operator,
    pub name: &'static str,
    pub arity: u8,
    /// Relative sampling weight used by the skeleton generator.
    pub weight: u32,
    pub commutative: bool,
    pub cluster: ClusterFamily,
    /// Operator `g` such that `g(self(x)) = x` on a useful domain.
    pub inverse: Option<Operator>,
    pub fold: Option<IntegerFold>,
}

impl Operator {
    #[inline]
    pub fn info(self) -> &'static OperatorInfo {
        &Self::INFO[self as usize]
    }

    #[inline]
    pub fn arity(self) -> u8 {
        self.info().arity
    }

    #[inline]
    pub fn name(self) -> &'static str {
        self.info().name
    }

    fn from_code(code: u8) -> Operator {
        Self::ALL[code as usize]
    }

    pub fn from_name(name: &str) -> Option<Operator> {
        Self::ALL.iter().copied().find(|op| op.name() == name)
    }

    /// `pow-k` exponent for `pow2..pow5`.
    pub fn integer_power(self) -> Option<i64> {
        match self {
            Operator::Pow2 => Some(2),
            Operator::Pow3 => Some(3),
            Operator::Pow4 => Some(4),
            Operator::Pow5 => Some(5),
            _ => None,
        }
    }

    pub fn pow_k(k: i64) -> Option<Operator> {
        match k {
            2 => Some(Operator::Pow2),
            3 => Some(Operator::Pow3),
            4 => Some(Operator::Pow4),
            5 => Some(Operator::Pow5),
            _ => None,
        }
    }

    pub fn mult_k(k: i64) -> Option<Operator> {
        match k {
            2 => Some(Operator::Mult2),
            3 => Some(Operator::Mult3),
            4 => Some(Operator::Mult4),
            5 => Some(Operator::Mult5),
            _ => None,
        }
    }

    pub fn div_k(k: i64) -> Option<Operator> {
        match k {
            2 => Some(Operator::Div2),
            3 => Some(Operator::Div3),
            4 => Some(Operator::Div4),
            5 => Some(Operator::Div5),
            _ => None,
        }
    }

    /// `k` for `mult2..mult5`.
    pub fn mult_factor(self) -> Option<i64> {
        match self.info().fold {
            Some(IntegerFold::Mult(k)) => Some(k as i64),
            _ => None,
        }
    }

    /// `k` for `div2..div5`.
    pub fn div_factor(self) -> Option<i64> {
        match self.info().fold {
            Some(IntegerFold::Div(k)) => Some(k as i64),
            _ => None,
        }
    }

    /// Whether the operator maps every finite real to a finite real and is
    /// injective there, so that `inverse(self(x)) = x` holds everywhere.
    pub fn total_bijection(self) -> bool {
        matches!(
            self,
            Operator::Neg
                | Operator::Inv
                | Operator::Exp
                | Operator::Sinh
                | Operator::Asinh
                | Operator::Pow3
                | Operator::Pow1_3
                | Operator::Pow5
                | Operator::Pow1_5
                | Operator::Mult2
                | Operator::Mult3
                | Operator::Mult4
                | Operator::Mult5
                | Operator::Div2
                | Operator::Div3
                | Operator::Div4
                | Operator::Div5
        )
    }
}

/// Look up the full property record of an operator by name.
pub fn properties(name: &str) -> Result<&'static OperatorInfo, VocabError> {
    Operator::from_name(name)
        .map(Operator::info)
        .ok_or_else(|| VocabError::UnknownOperator(name.to_string()))
}

/// The closed set of numeric literals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Literal {
    Zero = 0,
    One = 1,
    MinusOne = 2,
    Pi = 3,
    E = 4,
    Inf = 5,
    NegInf = 6,
    Nan = 7,
}

impl Literal {
    pub const ALL: [Literal; 8] = [
        Literal::Zero,
        Literal::One,
        Literal::MinusOne,
        Literal::Pi,
        Literal::E,
        Literal::Inf,
        Literal::NegInf,
        Literal::Nan,
    ];

    pub fn value(self) -> f64 {
        match self {
            Literal::Zero => 0.0,
            Literal::One => 1.0,
            Literal::MinusOne => -1.0,
            Literal::Pi => std::f64::consts::PI,
            Literal::E => std::f64::consts::E,
            Literal::Inf => f64::INFINITY,
            Literal::NegInf => f64::NEG_INFINITY,
            Literal::Nan => f64::NAN,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Literal::Zero => "0",
            Literal::One => "1",
            Literal::MinusOne => "-1",
            Literal::Pi => "pi",
            Literal::E => "e",
            Literal::Inf => "inf",
            Literal::NegInf => "-inf",
            Literal::Nan => "nan",
        }
    }

    pub fn is_finite(self) -> bool {
        !matches!(self, Literal::Inf | Literal::NegInf | Literal::Nan)
    }
}

/// Decoded view of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Operator(Operator),
    /// 1-based variable index.
    Variable(usize),
    Literal(Literal),
    ConstantPlaceholder,
}

/// One symbol of a prefix expression.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(transparent)]
pub struct Token(u8);

impl Token {
    pub const CONST: Token = Token(CONST_CODE);

    #[inline]
    pub const fn op(op: Operator) -> Token {
        Token(op as u8)
    }

    /// Variable `x<index>`; `index` is 1-based.
    pub fn var(index: usize) -> Token {
        assert!(
            (1..=MAX_VARIABLES).contains(&index),
            "variable index {index} out of range"
        );
        Token(VAR_BASE + (index - 1) as u8)
    }

    #[inline]
    pub const fn lit(lit: Literal) -> Token {
        Token(LIT_BASE + lit as u8)
    }

    #[inline]
    pub fn code(self) -> u8 {
        self.0
    }

    #[inline]
    pub fn kind(self) -> TokenKind {
        match self.0 {
            c if c < VAR_BASE => TokenKind::Operator(Operator::from_code(c)),
            c if c < LIT_BASE => TokenKind::Variable((c - VAR_BASE) as usize + 1),
            c if c < CONST_CODE => TokenKind::Literal(Literal::ALL[(c - LIT_BASE) as usize]),
            _ => TokenKind::ConstantPlaceholder,
        }
    }

    #[inline]
    pub fn as_operator(self) -> Option<Operator> {
        (self.0 < VAR_BASE).then(|| Operator::from_code(self.0))
    }

    #[inline]
    pub fn as_variable(self) -> Option<usize> {
        (VAR_BASE..LIT_BASE)
            .contains(&self.0)
            .then(|| (self.0 - VAR_BASE) as usize + 1)
    }

    #[inline]
    pub fn as_literal(self) -> Option<Literal> {
        (LIT_BASE..CONST_CODE)
            .contains(&self.0)
            .then(|| Literal::ALL[(self.0 - LIT_BASE) as usize])
    }

    #[inline]
    pub fn is_constant(self) -> bool {
        self.0 == CONST_CODE
    }

    #[inline]
    pub fn is_variable(self) -> bool {
        (VAR_BASE..LIT_BASE).contains(&self.0)
    }

    #[inline]
    pub fn is_leaf(self) -> bool {
        self.0 >= VAR_BASE
    }

    /// Number of children: operator arity, 0 for every leaf.
    #[inline]
    pub fn arity(self) -> usize {
        match self.as_operator() {
            Some(op) => op.arity() as usize,
            None => 0,
        }
    }

    /// Whether the token is a literal outside the finite reals.
    pub fn is_non_finite_literal(self) -> bool {
        self.as_literal().is_some_and(|l| !l.is_finite())
    }
}

/// Canonical total order over tokens.
#[inline]
pub fn token_order(a: Token, b: Token) -> Ordering {
    a.cmp(&b)
}

/// Arity of a token (0, 1 or 2).
#[inline]
pub fn arity(token: Token) -> usize {
    token.arity()
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            TokenKind::Operator(op) => f.write_str(op.name()),
            TokenKind::Variable(i) => write!(f, "x{i}"),
            TokenKind::Literal(l) => f.write_str(l.name()),
            TokenKind::ConstantPlaceholder => f.write_str("C"),
        }
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Token {
    type Err = VocabError;

    fn from_str(s: &str) -> Result<Token, VocabError> {
        if s == "C" {
            return Ok(Token::CONST);
        }
        if let Some(op) = Operator::from_name(s) {
            return Ok(Token::op(op));
        }
        if let Some(lit) = Literal::ALL.iter().find(|l| l.name() == s) {
            return Ok(Token::lit(*lit));
        }
        if let Some(digits) = s.strip_prefix('x') {
            if let Ok(i) = digits.parse::<usize>() {
                if (1..=MAX_VARIABLES).contains(&i) && !digits.starts_with('0') {
                    return Ok(Token::var(i));
                }
            }
        }
        Err(VocabError::UnknownToken(s.to_string()))
    }
}

/// A set of tokens over which expressions are enumerated or checked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    pub operators: Vec<Operator>,
    pub variables: usize,
    pub literals: Vec<Literal>,
    /// Whether the constant placeholder may appear (replacement side only).
    pub constant: bool,
}

impl Alphabet {
    /// Every operator, four variables, all literals and the placeholder.
    pub fn discovery() -> Alphabet {
        Alphabet {
            operators: Operator::ALL.to_vec(),
            variables: DISCOVERY_VARIABLES,
            literals: Literal::ALL.to_vec(),
            constant: true,
        }
    }

    /// `{+, -, neg, x1, x2, 0, 1}`.
    pub fn toy() -> Alphabet {
        Alphabet {
            operators: vec![Operator::Add, Operator::Sub, Operator::Neg],
            variables: 2,
            literals: vec![Literal::Zero, Literal::One],
            constant: false,
        }
    }

    /// Parse a comma separated token list, e.g. `+,neg,x1,0,1`.
    ///
    /// Variables must form a prefix `x1..xk`. The names `toy` and `full`
    /// select the built-in alphabets.
    pub fn parse(spec: &str) -> Result<Alphabet, VocabError> {
        match spec.trim() {
            "full" | "discovery" => return Ok(Alphabet::discovery()),
            "toy" => return Ok(Alphabet::toy()),
            _ => {}
        }
        let mut operators = Vec::new();
        let mut literals = Vec::new();
        let mut vars = Vec::new();
        let mut constant = false;
        for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let tok: Token = name.parse()?;
            match tok.kind() {
                TokenKind::Operator(op) => operators.push(op),
                TokenKind::Variable(i) => vars.push(i),
                TokenKind::Literal(l) => literals.push(l),
                TokenKind::ConstantPlaceholder => constant = true,
            }
        }
        operators.sort();
        operators.dedup();
        literals.sort();
        literals.dedup();
        vars.sort_unstable();
        vars.dedup();
        if vars.iter().enumerate().any(|(i, &v)| v != i + 1) {
            return Err(VocabError::BadAlphabet(
                "variables must be x1..xk without gaps".into(),
            ));
        }
        Ok(Alphabet {
            operators,
            variables: vars.len(),
            literals,
            constant,
        })
    }

    /// Leaf tokens usable on the pattern side, in canonical order.
    pub fn pattern_leaves(&self) -> Vec<Token> {
        let mut leaves: Vec<Token> = (1..=self.variables).map(Token::var).collect();
        leaves.extend(self.literals.iter().map(|&l| Token::lit(l)));
        leaves.sort();
        leaves
    }

    /// All tokens usable on the pattern side, in canonical order.
    pub fn pattern_tokens(&self) -> Vec<Token> {
        let mut toks: Vec<Token> = self.operators.iter().map(|&o| Token::op(o)).collect();
        toks.extend(self.pattern_leaves());
        toks.sort();
        toks
    }

    pub fn contains(&self, tok: Token) -> bool {
        match tok.kind() {
            TokenKind::Operator(op) => self.operators.contains(&op),
            TokenKind::Variable(i) => i <= self.variables,
            TokenKind::Literal(l) => self.literals.contains(&l),
            TokenKind::ConstantPlaceholder => self.constant,
        }
    }

    /// Stable description that the fingerprint is computed from.
    pub fn describe(&self) -> String {
        let ops: Vec<&str> = self.operators.iter().map(|o| o.name()).collect();
        let lits: Vec<&str> = self.literals.iter().map(|l| l.name()).collect();
        format!(
            "ops={};vars={};lits={};const={}",
            ops.join(","),
            self.variables,
            lits.join(","),
            u8::from(self.constant)
        )
    }

    /// Short hex digest of the vocabulary table plus the alphabet description.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(vocabulary_table().as_bytes());
        h.update(self.describe().as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Version tag of the vocabulary text table.
pub const VOCAB_VERSION: u32 = 1;

/// The operator table as versioned text, one operator per line:
/// `name arity weight flags`.
pub fn vocabulary_table() -> String {
    let mut out = format!("#vocab {VOCAB_VERSION}\n");
    for op in Operator::ALL {
        let info = op.info();
        let mut flags = Vec::new();
        if info.commutative {
            flags.push("commutative".to_string());
        }
        match info.cluster {
            ClusterFamily::Sum => flags.push("sum".into()),
            ClusterFamily::Product => flags.push("product".into()),
            ClusterFamily::None => {}
        }
        if let Some(inv) = info.inverse {
            flags.push(format!("inverse={}", inv.name()));
        }
        match info.fold {
            Some(IntegerFold::Mult(k)) => flags.push(format!("fold=mult{k}")),
            Some(IntegerFold::Div(k)) => flags.push(format!("fold=div{k}")),
            None => {}
        }
        let flags = if flags.is_empty() {
            "-".to_string()
        } else {
            flags.join(",")
        };
        out.push_str(&format!(
            "{} {} {} {}\n",
            info.name, info.arity, info.weight, flags
        ));
    }
    out
}
