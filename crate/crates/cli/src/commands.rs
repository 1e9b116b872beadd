//! Command implementations. Each returns a fatal error message or a status.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use exprnorm::datagen::{
    build_holdout_index, dataset_text, parse_dataset, sample_skeletons, GenConfig, Generator, HoldoutIndex,
};
use exprnorm::discover::{discover_rules_with_progress, DiscoveryConfig};
use exprnorm::engine::{read_holdout, Engine};
use exprnorm::fit::{select_best_index, DEFAULT_RESTARTS};
use exprnorm::metrics::{bootstrap_ci, mean, numeric_recovery, quantile, skeleton_report, EPS32};
use exprnorm::{parse_prefix, Alphabet, PrefixExpr};

use crate::manifest::RunManifest;
use crate::settings::Flags;
use crate::Status;

type Outcome = Result<Status, String>;

const BOOTSTRAP_RESAMPLES: usize = 1000;
const DEFAULT_GAMMA: f64 = 0.05;

fn config_json(flags: &Flags) -> serde_json::Value {
    serde_json::to_value(flags).expect("serializable flags")
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), String> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| e.to_string()),
    }
}

fn finish(mut m: RunManifest, flags: &Flags, status: Status) -> Outcome {
    m.exit_code = match status {
        Status::Ok => 0,
        Status::Partial => 1,
    };
    m.emit(flags.manifest.as_deref(), flags.out.as_deref())
        .map_err(|e| format!("manifest: {e}"))?;
    Ok(status)
}

fn load_engine(flags: &Flags, m: &mut RunManifest, default_lmax: Option<usize>) -> Result<Engine, String> {
    let Some(path) = &flags.rules else {
        return Err("--rules is required".into());
    };
    let lmax = flags.lmax.or(default_lmax);
    let mut engine = m
        .stage("load_rules", || Engine::open(path, lmax, &Alphabet::discovery()))
        .map_err(|e| e.to_string())?;
    if let Some(b) = flags.budget {
        engine.budget = b;
    }
    m.versions.rules_sha256 = Some(engine.rules_digest.clone());
    Ok(engine)
}

pub fn discover(flags: &Flags) -> Outcome {
    let alphabet = Alphabet::parse(flags.alphabet.as_deref().unwrap_or("full")).map_err(|e| e.to_string())?;
    let mut cfg = DiscoveryConfig {
        l_max: flags.lmax.unwrap_or(5),
        l_tgt: flags.ltgt.unwrap_or(3),
        seed: flags.seed.unwrap_or(0),
        ..DiscoveryConfig::default()
    };
    if let Some(b) = flags.budget {
        cfg.budget = b;
    }
    let mut m = RunManifest::new("discover", config_json(flags), cfg.seed);
    let set = m.stage("discover", || {
        discover_rules_with_progress(&alphabet, &cfg, &mut |r| {
            eprintln!(
                "length {}: expressions={} scanned={} rules_added={} total_rules={} seconds={:.3}",
                r.length, r.expressions, r.scanned, r.rules_added, r.total_rules, r.seconds
            );
        })
    });
    let text = set.to_text();
    m.versions.rules_sha256 = Some(exprnorm::engine::digest(text.as_bytes()));
    m.stage("write", || write_output(flags.out.as_deref(), &text))?;
    finish(m, flags, Status::Ok)
}

pub fn simplify(flags: &Flags, input: Option<&Path>) -> Outcome {
    let mut m = RunManifest::new("simplify", config_json(flags), flags.seed.unwrap_or(0));
    let engine = load_engine(flags, &mut m, None)?;
    let text = match input {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).map_err(|e| e.to_string())?;
            s
        }
    };
    let lines: Vec<&str> = text.lines().collect();
    let results: Vec<Result<(PrefixExpr, usize, f64), String>> = m.stage("simplify", || {
        lines
            .par_iter()
            .map(|l| {
                let e = parse_prefix(l).map_err(|e| e.to_string())?;
                let t = Instant::now();
                let s = engine.simplify(&e);
                Ok((s, e.len(), t.elapsed().as_secs_f64()))
            })
            .collect()
    });
    let mut out = String::new();
    let mut failed = false;
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok((s, len_in, secs)) => {
                if flags.stats {
                    let _ = writeln!(out, "{s}\t{:.3}\t{}", secs * 1e6, s.len() as f64 / *len_in as f64);
                } else {
                    let _ = writeln!(out, "{s}");
                }
            }
            Err(e) => {
                failed = true;
                eprintln!("line {}: {e}", i + 1);
            }
        }
    }
    m.stage("write", || write_output(flags.out.as_deref(), &out))?;
    finish(m, flags, if failed { Status::Partial } else { Status::Ok })
}

fn gen_config(flags: &Flags, dims: usize) -> GenConfig {
    let mut cfg = GenConfig {
        dims,
        seed: flags.seed.unwrap_or(0),
        ..GenConfig::default()
    };
    if let Some(l) = flags.lmax {
        cfg.simplify_lmax = l;
    }
    if let Some(b) = flags.budget {
        cfg.budget = b;
    }
    cfg
}

pub fn generate(flags: &Flags) -> Outcome {
    let dims = flags.dims.ok_or("--dims is required")?;
    let holdout_path = flags.holdout.as_deref().ok_or("--holdout is required")?;
    let count = flags.count.unwrap_or(0);
    let cfg = gen_config(flags, dims);
    let mut m = RunManifest::new("generate", config_json(flags), cfg.seed);
    let engine = match &flags.rules {
        Some(_) => load_engine(flags, &mut m, Some(cfg.simplify_lmax))?,
        None => Engine::empty(),
    };
    let holdout: HoldoutIndex = m
        .stage("holdout", || {
            let sk = read_holdout(holdout_path)?;
            build_holdout_index(&sk, dims, cfg.seed).map_err(exprnorm::EngineError::from)
        })
        .map_err(|e| e.to_string())?;
    let g = Generator {
        cfg: &cfg,
        engine: engine.index(),
        holdout: &holdout,
    };
    let (instances, stats) = m.stage("generate", || g.generate(count, cfg.seed));
    eprintln!(
        "accepted={} simplified_to_non_finite={} degenerate={} contaminated={} data_rejected={}",
        stats.accepted, stats.simplified_to_non_finite, stats.degenerate, stats.contaminated, stats.data_rejected
    );
    let text = dataset_text(&cfg, &instances, &stats);
    m.stage("write", || write_output(flags.out.as_deref(), &text))?;
    finish(m, flags, Status::Ok)
}

pub fn bench(flags: &Flags) -> Outcome {
    let count = flags.count.unwrap_or(1 << 16);
    let cfg = gen_config(flags, flags.dims.unwrap_or(3));
    let mut m = RunManifest::new("bench", config_json(flags), cfg.seed);
    let engine = load_engine(flags, &mut m, Some(4))?;
    let skeletons = m.stage("sample", || sample_skeletons(&cfg, count, cfg.seed));
    let rows: Vec<(usize, usize, f64)> = m.stage("simplify", || {
        skeletons
            .iter()
            .map(|e| {
                let t = Instant::now();
                let s = engine.simplify(e);
                (e.len(), s.len(), t.elapsed().as_secs_f64())
            })
            .collect()
    });
    let times: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let ratios: Vec<f64> = rows.iter().map(|r| r.1 as f64 / r.0 as f64).collect();
    if let Some(out) = &flags.out {
        let mut s = String::from("id\tlength_in\tlength_out\tratio\tseconds\n");
        for (i, (a, b, t)) in rows.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{a}\t{b}\t{}\t{t:e}", *b as f64 / *a as f64);
        }
        std::fs::write(out, s).map_err(|e| format!("{}: {e}", out.display()))?;
    }
    let mut summary = String::new();
    let _ = writeln!(summary, "count\t{count}");
    for (name, q) in [("p50", 0.5), ("p90", 0.9), ("p99", 0.99)] {
        let _ = writeln!(summary, "time_{name}_ms\t{:.6}", quantile(&times, q) * 1e3);
    }
    for (name, q) in [("p50", 0.5), ("p90", 0.9), ("p99", 0.99)] {
        let _ = writeln!(summary, "ratio_{name}\t{:.6}", quantile(&ratios, q));
    }
    let _ = writeln!(summary, "ratio_max\t{:.6}", ratios.iter().copied().fold(0.0, f64::max));
    print!("{summary}");
    finish(m, flags, Status::Ok)
}

fn read_lines(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn score(flags: &Flags) -> Outcome {
    let pred_path = flags.pred.as_deref().ok_or("--pred is required")?;
    let truth_path = flags.truth.as_deref().ok_or("--truth is required")?;
    let data_path = flags.data.as_deref().ok_or("--data is required")?;
    let gamma = flags.gamma.unwrap_or(DEFAULT_GAMMA);
    let restarts = flags.restarts.unwrap_or(DEFAULT_RESTARTS);
    let seed = flags.seed.unwrap_or(0);
    let mut m = RunManifest::new("score", config_json(flags), seed);
    let engine = match &flags.rules {
        Some(_) => load_engine(flags, &mut m, None)?,
        None => Engine::empty(),
    };
    let preds = read_lines(pred_path)?;
    let truths = read_lines(truth_path)?;
    let text = std::fs::read_to_string(data_path).map_err(|e| format!("{}: {e}", data_path.display()))?;
    let (_, data) = parse_dataset(&text).map_err(|e| format!("{}: {e}", data_path.display()))?;
    if preds.len() != truths.len() || truths.len() != data.len() {
        return Err(format!(
            "case counts differ: {} predictions, {} truths, {} datasets",
            preds.len(),
            truths.len(),
            data.len()
        ));
    }
    let mut failed = false;
    let mut rows = String::from(
        "case\tbest\tfvu\tsrr\ttoken_f1\tzss\tlength_ratio\texcess_constants\tvariable_recall\tnestedness\n",
    );
    let mut fvus = Vec::new();
    let mut srr = Vec::new();
    let mut f1 = Vec::new();
    let mut zss = Vec::new();
    m.stage("score", || {
        for (i, ((p, t), inst)) in preds.iter().zip(&truths).zip(&data).enumerate() {
            let truth = match parse_prefix(t) {
                Ok(e) => e,
                Err(e) => {
                    failed = true;
                    eprintln!("case {}: truth: {e}", i + 1);
                    continue;
                }
            };
            let cands: Vec<&str> = p.split(';').map(str::trim).filter(|s| !s.is_empty()).collect();
            let xy = inst.x.clone().with_targets(inst.y.clone()).expect("aligned targets");
            let datasets = vec![xy; cands.len()];
            let fits = engine.fit_constants_batch(&cands, &datasets, restarts, seed ^ i as u64);
            let mut scored = Vec::new();
            for (c, f) in cands.iter().zip(fits) {
                match (parse_prefix(c), f) {
                    (Ok(e), Ok(r)) => scored.push((e, r)),
                    (_, Err(e)) => {
                        failed = true;
                        eprintln!("case {}: `{c}`: {e}", i + 1);
                    }
                    (Err(e), _) => {
                        failed = true;
                        eprintln!("case {}: `{c}`: {e}", i + 1);
                    }
                }
            }
            let Ok(best) = select_best_index(&scored, gamma) else {
                failed = true;
                eprintln!("case {}: no usable candidate", i + 1);
                continue;
            };
            let (expr, fit) = &scored[best];
            let rep = skeleton_report(&engine.simplify(expr), &engine.simplify(&truth));
            let _ = writeln!(
                rows,
                "{}\t{}\t{:e}\t{}\t{:.6}\t{}\t{:.6}\t{}\t{:.6}\t{}",
                i + 1,
                expr,
                fit.fvu,
                u8::from(rep.srr),
                rep.token_f1,
                rep.zss,
                rep.length_ratio,
                rep.excess_constants,
                rep.variable_recall,
                rep.total_nestedness
            );
            fvus.push(fit.fvu);
            srr.push(if rep.srr { 1.0 } else { 0.0 });
            f1.push(rep.token_f1);
            zss.push(rep.zss as f64);
        }
    });
    if let Some(out) = &flags.out {
        std::fs::write(out, &rows).map_err(|e| format!("{}: {e}", out.display()))?;
    }
    let nrr_flags: Vec<f64> = fvus.iter().map(|&v| if v <= EPS32 { 1.0 } else { 0.0 }).collect();
    let mut summary = String::from("metric\tvalue\tci_low\tci_high\n");
    let nrr = numeric_recovery(&fvus, EPS32).unwrap_or(f64::NAN);
    for (name, value, vals) in [
        ("nrr", nrr, &nrr_flags),
        ("srr", mean(&srr), &srr),
        ("token_f1", mean(&f1), &f1),
        ("zss", mean(&zss), &zss),
    ] {
        let (lo, hi) = bootstrap_ci(vals, &mean, BOOTSTRAP_RESAMPLES, 0.95, seed).unwrap_or((value, value));
        let _ = writeln!(summary, "{name}\t{value:.6}\t{lo:.6}\t{hi:.6}");
    }
    print!("{summary}");
    finish(m, flags, if failed { Status::Partial } else { Status::Ok })
}
