use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("invalid alphabet: {0}")]
    BadAlphabet(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("expression is missing {missing} operand(s)")]
    Underfull { missing: usize },
    #[error("expression is complete after {used} of {len} tokens")]
    Overfull { used: usize, len: usize },
    #[error("position {index} out of bounds for length {len}")]
    OutOfBounds { index: usize, len: usize },
    #[error(transparent)]
    Token(#[from] VocabError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("expected {expected} constants, got {got}")]
    ConstantCount { expected: usize, got: usize },
    #[error("expression uses x{needed} but data has {cols} column(s)")]
    MissingColumn { needed: usize, cols: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("target is constant, FVU is undefined")]
    ConstantTarget,
    #[error("need at least {0} values")]
    TooFewValues(usize),
    #[error("ragged data matrix")]
    Ragged,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("data matrix has no targets")]
    MissingTargets,
    #[error("no candidates to select from")]
    EmptyCandidates,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RulesError {
    #[error("unsupported rules file version `{0}`")]
    VersionMismatch(String),
    #[error("rules file alphabet {found} does not match expected {expected}")]
    AlphabetMismatch { expected: String, found: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for RulesError {
    fn from(e: std::io::Error) -> Self {
        RulesError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct DatasetError {
    pub line: usize,
    pub message: String,
}
