use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_triad");

/// Small, fast settings shared by the training commands.
const FAST: &[&str] = &["--synth-mode", "vector", "--n-per-cell", "12", "--widths", "8", "--batch-size", "8"];

fn triad(root: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("TRIAD_RUN_DIR", root)
        .env("RUST_LOG", "warn")
        .current_dir(root)
        .output()
        .expect("spawn triad")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn with_fast<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(FAST).copied().collect()
}

fn value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(':')))
        .map(str::trim)
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = triad(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage:"));
}

#[test]
fn help_lists_config_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = triad(dir.path(), &["generate-data", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for flag in ["--n-per-cell", "--shift", "--separation", "--seed"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    assert!(text.contains("[default: 200]"));
}

#[test]
fn invalid_value_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = triad(dir.path(), &["train", "--batch-size", "6"]);
    assert_eq!(o.status.code(), Some(1));
    let o = triad(dir.path(), &["train", "--arm", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generate_data_digest_depends_only_on_seed() {
    let dir = tempfile::tempdir().unwrap();
    let digest = |out: &str, seed: &str| {
        let o = triad(dir.path(), &["generate-data", "--seed", seed, "--n-per-cell", "6", "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        value(&stdout(&o), "digest").unwrap().to_string()
    };
    let a = digest("a", "7");
    assert_eq!(a, digest("b", "7"));
    assert_ne!(a, digest("c", "8"));
    assert!(dir.path().join("a/manifest.txt").exists());
}

#[test]
fn default_data_dir_follows_the_run_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = triad(dir.path(), &["generate-data", "--seed", "3", "--n-per-cell", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("data/seed3/manifest.txt").exists());
}

#[test]
fn config_precedence_is_defaults_then_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.txt"), "# overrides\nepochs:3\nlr:0.01\n").unwrap();
    let args = with_fast(&["train", "--config", "exp.txt", "--epochs", "0", "--print-config"]);
    let o = triad(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(value(&text, "epochs"), Some("0"));
    assert_eq!(value(&text, "lr"), Some("0.01"));
    assert_eq!(value(&text, "tau"), Some("0.1"));
}

#[test]
fn bad_config_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.txt"), "epochs:three\n").unwrap();
    let o = triad(dir.path(), &["train", "--config", "bad.txt"]);
    assert_eq!(o.status.code(), Some(1));
    let o = triad(dir.path(), &["train", "--config", "missing.txt"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_then_evaluate_reproduces_the_test_score() {
    let dir = tempfile::tempdir().unwrap();
    let o = triad(dir.path(), &with_fast(&["train", "--arm", "joint", "--epochs", "2", "--seed", "4"]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("joint/seed4/fold0");
    for f in ["config.txt", "steps.csv", "epochs.csv", "last.ckpt", "best.ckpt", "report.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let trained = stdout(&o);

    let o = triad(dir.path(), &["evaluate", "--run-dir", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let evaluated = stdout(&o);
    assert_eq!(value(&trained, "test_auroc"), value(&evaluated, "test_auroc"));
    assert!(run.join("evaluation.txt").exists());
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = triad(dir.path(), &with_fast(&["train", "--epochs", "0"]));
    assert_eq!(o.status.code(), Some(0));
    let run = dir.path().join("triad_full/seed0/fold0");
    fs::write(run.join("best.ckpt"), b"TRIAD1 truncated").unwrap();
    let o = triad(dir.path(), &["evaluate", "--run-dir", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_requires_a_selection() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(triad(dir.path(), &["gradcheck"]).status.code(), Some(1));
    let o = triad(dir.path(), &["gradcheck", "--case", "focal", "--case", "conv2d_stride2_pad1", "--points", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().filter(|l| l.ends_with(" ok")).count(), 2);
}

#[test]
fn gradcheck_all_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = triad(dir.path(), &["gradcheck", "--all", "--points", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn ablate_reports_every_arm_and_report_rebuilds_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = triad(dir.path(), &with_fast(&["ablate", "--seeds", "2", "--epochs", "1", "--svg"]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("ablation");
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    for arm in ["adult_only", "pediatric_only", "joint", "joint+contrastive", "triad_full"] {
        let rows = csv.lines().filter(|l| l.split(',').next() == Some(arm)).count();
        assert_eq!(rows, 2 * 4, "{arm}");
    }
    assert!(out.join("ablation.txt").exists());
    assert!(out.join("ablation.svg").exists());

    fs::remove_file(out.join("ablation.csv")).unwrap();
    let o = triad(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap(), csv);
}

#[test]
fn report_on_missing_dir_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(triad(dir.path(), &["report", "--dir", "nowhere"]).status.code(), Some(1));
}
