use std::path::Path;

use exprnorm::datagen::GenConfig;
use exprnorm::discover::{discover_rules, DiscoveryConfig};
use exprnorm::engine::{read_holdout, BatchFitError, ENGINE_VERSION};
use exprnorm::rules::save_rules;
use exprnorm::{open_engine, Alphabet, DataMatrix, Engine, EngineError, ExprError, RulesError};

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn small_engine(dir: &Path) -> Engine {
    let alphabet = Alphabet::discovery();
    let cfg = DiscoveryConfig {
        l_max: 2,
        l_tgt: 1,
        ..DiscoveryConfig::default()
    };
    let set = discover_rules(&alphabet, &cfg);
    let path = dir.join("rules.txt");
    save_rules(&set, &path).unwrap();
    open_engine(&path, None).unwrap()
}

#[test]
fn open_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let err = open_engine(&missing, None).unwrap_err();
    assert!(matches!(err, EngineError::Io { .. }));
    assert!(err.to_string().contains("nope.txt"));

    let toy = write(
        dir.path(),
        "toy.txt",
        &format!("#version 1\n#alphabet {}\n", Alphabet::toy().fingerprint()),
    );
    let err = open_engine(&toy, None).unwrap_err();
    assert!(matches!(
        err,
        EngineError::Rules {
            source: RulesError::AlphabetMismatch { .. },
            ..
        }
    ));
    assert!(!ENGINE_VERSION.is_empty());
}

#[test]
fn simplify_batch_keeps_order_and_tags_errors() {
    let dir = tempfile::tempdir().unwrap();
    let engine = small_engine(dir.path());
    assert!(engine.simplify_batch::<&str>(&[]).is_empty());
    let mut lines: Vec<String> = (0..10)
        .map(|i| format!("+ x1 mult{} x2", 2 + i % 4))
        .collect();
    lines[6] = "+ x1".into();
    let out = engine.simplify_batch(&lines);
    assert_eq!(out.len(), 10);
    assert_eq!(out.iter().filter(|r| r.is_ok()).count(), 9);
    assert!(matches!(out[6], Err(ExprError::Underfull { .. })));
    assert_eq!(out[0].as_deref(), Ok("+ mult2 x2 x1"));
    assert_eq!(engine.simplify_batch(&["- x2 x2"])[0].as_deref(), Ok("0"));
}

#[test]
fn two_engines_do_not_interfere() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_engine(dir.path());
    let b = Engine::empty();
    let input = ["neg neg x1", "abs abs x2", "* 1 x3"];
    let before: Vec<_> = b.simplify_batch(&input);
    let _ = a.simplify_batch(&input);
    assert_eq!(b.simplify_batch(&input), before);
}

#[test]
fn generate_batch_reads_holdout() {
    let dir = tempfile::tempdir().unwrap();
    let engine = small_engine(dir.path());
    let holdout = write(
        dir.path(),
        "holdout.txt",
        "# test set\nmult2 sin / x1 C\n\n* x1 x2\n",
    );
    assert_eq!(read_holdout(&holdout).unwrap().len(), 2);
    let cfg = GenConfig {
        dims: 2,
        max_points: 16,
        ..GenConfig::default()
    };
    let a = engine.generate_batch(&cfg, &holdout, 5, 3).unwrap();
    let b = engine.generate_batch(&cfg, &holdout, 5, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    assert_eq!(a.x.len(), a.y.len() * 2);

    let bad = write(dir.path(), "bad.txt", "x1\n+ x1\n");
    assert!(matches!(
        engine.generate_batch(&cfg, &bad, 1, 0),
        Err(EngineError::Holdout { line: 2, .. })
    ));
}

#[test]
fn fit_constants_batch_per_item_results() {
    let engine = Engine::empty();
    let xs: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
    let y: Vec<f64> = xs.iter().map(|x| 1.5 * x + 0.5).collect();
    let d = DataMatrix::from_columns(vec![xs])
        .unwrap()
        .with_targets(y)
        .unwrap();
    let no_y = DataMatrix::from_columns(vec![vec![1.0, 2.0]]).unwrap();
    let out = engine.fit_constants_batch(
        &["+ * C x1 C", "+ x1", "* C x1"],
        &[d.clone(), d, no_y],
        4,
        0,
    );
    let first = out[0].as_ref().unwrap();
    assert!((first.constants[0] - 1.5).abs() < 1e-8 && (first.constants[1] - 0.5).abs() < 1e-8);
    assert!(matches!(out[1], Err(BatchFitError::Parse(_))));
    assert!(matches!(out[2], Err(BatchFitError::Fit(_))));
}
