//! Command-line flags merged with an optional TOML config file.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

/// Flags shared by every command. Any flag left unset falls back to the
/// config file, then to the command default.
#[derive(Args, Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Rules file.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Longest pattern: enumerated by `discover`, indexed by the engine elsewhere.
    #[arg(long)]
    pub lmax: Option<usize>,
    /// Longest replacement considered by `discover`.
    #[arg(long)]
    pub ltgt: Option<usize>,
    /// Sweep budget of the simplifier.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of input variables.
    #[arg(long)]
    pub dims: Option<usize>,
    /// Hold-out skeletons, one per line.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Parsimony weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Constant-fit restarts.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Per-line timing and length ratio.
    #[arg(long)]
    #[serde(default)]
    pub stats: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Discovery alphabet: `full`, `toy` or a comma separated token list.
    #[arg(long)]
    pub alphabet: Option<String>,
    /// Where to write the run manifest (default: next to `--out`, else stderr).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Predictions for `score`: one line per case, candidates separated by `;`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// True skeletons for `score`, one per line.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Dataset file for `score`, instance `i` holding the data of case `i`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

macro_rules! fill {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f; } )*
    };
}

impl Flags {
    /// Fills unset flags from the config file named by `--config`.
    pub fn resolve(mut self) -> Result<Flags, String> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = load_config(&path)?;
        fill!(self, file; rules, lmax, ltgt, budget, seed, dims, holdout, count, gamma, restarts, workers, out,
            alphabet, manifest, pred, truth, data);
        self.stats |= file.stats;
        Ok(self)
    }
}

fn load_config(path: &Path) -> Result<Flags, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
