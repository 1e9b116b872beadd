//! Run manifest emitted once per command.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct Versions {
    pub engine: String,
    pub vocabulary: u32,
    pub rules_format: u32,
    /// SHA-256 of the rules file used, if any.
    pub rules_sha256: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub versions: Versions,
    /// Wall-clock seconds per stage, in execution order.
    pub timings: Vec<(String, f64)>,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            versions: Versions {
                engine: exprnorm::engine::ENGINE_VERSION.to_string(),
                vocabulary: exprnorm::vocab::VOCAB_VERSION,
                rules_format: exprnorm::rules::RULES_VERSION,
                rules_sha256: None,
            },
            timings: Vec::new(),
            exit_code: 0,
        }
    }

    /// Runs `f`, recording its wall time under `stage`.
    pub fn stage<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let v = f();
        self.timings.push((stage.to_string(), t.elapsed().as_secs_f64()));
        v
    }

    /// Writes the manifest to `explicit`, else next to `out`, else stderr.
    pub fn emit(&self, explicit: Option<&Path>, out: Option<&Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable manifest");
        let path: Option<PathBuf> = explicit.map(Path::to_path_buf).or_else(|| {
            out.map(|o| {
                let mut s = o.as_os_str().to_owned();
                s.push(".manifest.json");
                PathBuf::from(s)
            })
        });
        match path {
            Some(p) => std::fs::write(p, text + "\n"),
            None => {
                eprintln!("{text}");
                Ok(())
            }
        }
    }
}
