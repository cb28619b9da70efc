mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::small_config;

fn sau(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sau")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// The last stderr line must be a machine-readable error line.
fn error_line(o: &Output) -> (i32, String, String) {
    let stderr = String::from_utf8(o.stderr.clone()).unwrap();
    let line = stderr.lines().last().unwrap_or_default().to_string();
    let rest = line.strip_prefix("sau-error code=").unwrap_or_else(|| panic!("bad error line: {line}"));
    let (c, rest) = rest.split_once(" kind=").unwrap();
    let (kind, msg) = rest.split_once(" message=").unwrap();
    let msg: String = serde_json::from_str(msg).unwrap();
    (c.parse().unwrap(), kind.to_string(), msg)
}

/// gen-data → train → prune in `dir` with the small config.
fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), small_config().to_json()).unwrap();
    for args in [
        vec!["gen-data", "--config", "cfg.json", "--out", "data.txt"],
        vec!["train", "--config", "cfg.json", "--data", "data.txt", "--out", "model.ckpt"],
        vec!["prune", "--config", "cfg.json", "--model", "model.ckpt", "--data", "data.txt", "--out", "mask.ckpt"],
    ] {
        let o = sau(d, &args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    dir
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [vec![], vec!["frobnicate"], vec!["train", "--data"]] {
        let o = sau(dir.path(), &args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert_eq!(error_line(&o).1, "usage");
    }
    assert_eq!(code(&sau(dir.path(), &["--help"])), 0);
}

#[test]
fn config_errors_exit_3_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"topk_ratio": 2.0}"#).unwrap();
    let o = sau(dir.path(), &["gen-data", "--config", "bad.json", "--out", "x.txt"]);
    assert_eq!(code(&o), 3);
    let (c, kind, msg) = error_line(&o);
    assert_eq!((c, kind.as_str()), (3, "config"));
    assert!(msg.contains("topk_ratio"), "{msg}");
    assert!(!dir.path().join("x.txt").exists());
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sau(dir.path(), &["eval", "--model", "nope.ckpt", "--data", "nope.txt"]);
    assert_eq!(error_line(&o).0, code(&o));
    assert_ne!(code(&o), 0);
}

#[test]
fn corrupted_checkpoint_exits_5() {
    let dir = prepared();
    let d = dir.path();
    let mut bytes = std::fs::read(d.join("model.ckpt")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x80;
    std::fs::write(d.join("model.ckpt"), bytes).unwrap();
    let o = sau(d, &["eval", "--model", "model.ckpt", "--data", "data.txt"]);
    assert_eq!(code(&o), 5);
    assert_eq!(error_line(&o).1, "checkpoint");
}

#[test]
fn plan_for_another_mask_exits_4() {
    let dir = prepared();
    let d = dir.path();
    let mut other = small_config();
    other.sparsity = 0.25;
    std::fs::write(d.join("other.json"), other.to_json()).unwrap();
    for args in [
        vec!["prune", "--config", "other.json", "--model", "model.ckpt", "--data", "data.txt", "--out", "mask25.ckpt"],
        vec!["saliency", "--config", "other.json", "--model", "model.ckpt", "--mask", "mask25.ckpt", "--data", "data.txt", "--out", "sal.ckpt"],
        vec!["plan", "--config", "other.json", "--saliency", "sal.ckpt", "--mask", "mask25.ckpt", "--out", "plan.ckpt"],
    ] {
        assert_eq!(code(&sau(d, &args)), 0, "{args:?}");
    }
    let o = sau(
        d,
        &["unlearn", "--config", "cfg.json", "--model", "model.ckpt", "--mask", "mask.ckpt", "--plan", "plan.ckpt", "--data", "data.txt", "--out", "u.ckpt"],
    );
    assert_eq!(code(&o), 4);
    assert_eq!(error_line(&o).1, "hash_mismatch");
    assert!(!d.join("u.ckpt").exists());
}

#[test]
fn sau_unlearning_needs_a_plan() {
    let dir = prepared();
    let o = sau(
        dir.path(),
        &["unlearn", "--config", "cfg.json", "--model", "model.ckpt", "--mask", "mask.ckpt", "--data", "data.txt", "--out", "u.ckpt"],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn verify_theory_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = sau(dir.path(), &["verify-theory", "--out", "a.json"]);
    let b = sau(dir.path(), &["verify-theory", "--out", "b.json"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(std::fs::read(dir.path().join("a.json")).unwrap(), std::fs::read(dir.path().join("b.json")).unwrap());
}

#[test]
fn eval_reports_scores() {
    let dir = prepared();
    let o = sau(dir.path(), &["eval", "--model", "model.ckpt", "--data", "data.txt", "--out", "s.json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    for key in ["forget_quality", "utility", "aggregate", "forget_em", "retain_em"] {
        assert!(v.get(key).is_some_and(|x| x.is_number()), "{key} missing in {v}");
    }
}
