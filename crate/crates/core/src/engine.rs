//! A loaded simplification engine with batch entry points.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datagen::{
    build_holdout_index, instance_seed, GenConfig, Generator, HoldoutIndex, InstanceBatch,
};
use crate::error::{EvalError, ExprError, FitError, RulesError};
use crate::eval::DataMatrix;
use crate::expr::{parse_prefix, PrefixExpr};
use crate::fit::{fit_constants, FitResult};
use crate::rules::RuleSet;
use crate::simplify::{build_index, simplify, RuleIndex, DEFAULT_BUDGET};
use crate::vocab::Alphabet;

/// Version string shared by every front end.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("{path}: {source}")]
    Rules { path: PathBuf, source: RulesError },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {source}")]
    Holdout {
        path: PathBuf,
        line: usize,
        source: ExprError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Immutable rule index plus settings; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Engine {
    index: RuleIndex,
    pub l_max: Option<usize>,
    pub budget: usize,
    /// Hex SHA-256 of the rules file contents.
    pub rules_digest: String,
    pub alphabet: String,
}

/// Loads a rules file checked against the discovery alphabet, keeping
/// patterns up to `l_max` tokens.
pub fn open_engine(path: &Path, l_max: Option<usize>) -> Result<Engine, EngineError> {
    Engine::open(path, l_max, &Alphabet::discovery())
}

impl Engine {
    /// Loads a rules file that must have been discovered over `alphabet`.
    pub fn open(
        path: &Path,
        l_max: Option<usize>,
        alphabet: &Alphabet,
    ) -> Result<Engine, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let set = RuleSet::parse(&text, Some(&alphabet.fingerprint())).map_err(|source| {
            EngineError::Rules {
                path: path.to_path_buf(),
                source,
            }
        })?;
        Ok(Engine::from_rules(&set, l_max, digest(text.as_bytes())))
    }

    pub fn from_rules(set: &RuleSet, l_max: Option<usize>, rules_digest: String) -> Engine {
        Engine {
            index: build_index(set, l_max),
            l_max,
            budget: DEFAULT_BUDGET,
            rules_digest,
            alphabet: set.alphabet.clone(),
        }
    }

    /// An engine without rules: cancellation and canonical ordering only.
    pub fn empty() -> Engine {
        Engine {
            index: RuleIndex::default(),
            l_max: None,
            budget: DEFAULT_BUDGET,
            rules_digest: digest(b""),
            alphabet: String::new(),
        }
    }

    pub fn index(&self) -> &RuleIndex {
        &self.index
    }

    pub fn simplify(&self, expr: &PrefixExpr) -> PrefixExpr {
        simplify(expr, &self.index, self.budget)
    }

    /// Parses and simplifies each line; errors stay in place.
    pub fn simplify_batch<S: AsRef<str> + Sync>(
        &self,
        exprs: &[S],
    ) -> Vec<Result<String, ExprError>> {
        exprs
            .par_iter()
            .map(|s| parse_prefix(s.as_ref()).map(|e| self.simplify(&e).to_string()))
            .collect()
    }

    /// Generates `count` instances against the hold-out skeletons in `holdout`.
    pub fn generate_batch(
        &self,
        cfg: &GenConfig,
        holdout: &Path,
        count: usize,
        seed: u64,
    ) -> Result<InstanceBatch, EngineError> {
        let skeletons = read_holdout(holdout)?;
        let index = build_holdout_index(&skeletons, cfg.dims, seed)?;
        Ok(self.generate_with(cfg, &index, count, seed))
    }

    pub fn generate_with(
        &self,
        cfg: &GenConfig,
        holdout: &HoldoutIndex,
        count: usize,
        seed: u64,
    ) -> InstanceBatch {
        let capped;
        let index = if self.l_max.is_some_and(|l| l <= cfg.simplify_lmax) {
            &self.index
        } else {
            capped =
                RuleIndex::from_rules(self.index.rules().iter().cloned(), Some(cfg.simplify_lmax));
            &capped
        };
        let g = Generator {
            cfg,
            engine: index,
            holdout,
        };
        let (instances, stats) = g.generate(count, seed);
        InstanceBatch::from_instances(cfg.dims, &instances, stats)
    }

    /// Fits the constants of each expression to the matching dataset.
    pub fn fit_constants_batch<S: AsRef<str> + Sync>(
        &self,
        exprs: &[S],
        data: &[DataMatrix],
        restarts: usize,
        seed: u64,
    ) -> Vec<Result<FitResult, BatchFitError>> {
        exprs
            .par_iter()
            .zip(data.par_iter())
            .enumerate()
            .map(|(i, (s, d))| {
                let e = parse_prefix(s.as_ref())?;
                let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(seed, i as u64));
                Ok(fit_constants(&e, d, restarts, &mut rng)?)
            })
            .collect()
    }
}

/// Per-item failure of [`Engine::fit_constants_batch`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatchFitError {
    #[error(transparent)]
    Parse(#[from] ExprError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Hex SHA-256 digest.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Reads one prefix skeleton per non-empty line; `#` starts a comment line.
pub fn read_holdout(path: &Path) -> Result<Vec<PrefixExpr>, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            parse_prefix(l).map_err(|source| EngineError::Holdout {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}
