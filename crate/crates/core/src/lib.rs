//! Rule-based simplification of prefix-notation expression skeletons.

pub mod cancel;
pub mod datagen;
pub mod discover;
pub mod engine;
pub mod error;
pub mod eval;
pub mod expr;
pub mod fit;
pub mod metrics;
pub mod rules;
pub mod simplify;
pub mod vocab;

pub use engine::{open_engine, Engine, EngineError};
pub use error::{EvalError, ExprError, FitError, RulesError, VocabError};
pub use eval::{compile, fvu, DataMatrix, EvalPlan};
pub use expr::{parse_prefix, PrefixExpr};
pub use rules::{Rule, RuleSet};
pub use simplify::{build_index, simplify, RuleIndex};
pub use vocab::{Alphabet, Literal, Operator, Token, TokenKind};
