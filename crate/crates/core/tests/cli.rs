use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn bgn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgn"))
        .args(args)
        .env("BGN_LOG", "quiet")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn train_diabetes(out: &Path, extra: &[&str]) -> Output {
    let d = data("diabetes.csv");
    let mut args = vec!["train", "--data", d.to_str().unwrap(), "--target", "target", "--seed", "3", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    bgn(&args)
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_train_mse() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = train_diabetes(&out, &["--max-depth", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("test mse:"));
    assert!(text.contains("retained features:"));
    for f in ["model.json", "trace.json", "train.manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let manifest = read_json(&out.join("train.manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["flags"]["max_width"], 1000);
    assert_eq!(manifest["dataset"]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["duration_seconds"].as_f64().unwrap() >= 0.0);
    let train_mse = manifest["metrics"]["train_mse"].as_f64().unwrap();

    let d = data("diabetes.csv");
    let model = out.join("model.json");
    let o = bgn(&[
        "eval", "--model", model.to_str().unwrap(), "--data", d.to_str().unwrap(), "--target", "target",
        "--seed", "3", "--split", "train", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval = read_json(&out.join("eval.manifest.json"));
    let mse = eval["metrics"]["mse"].as_f64().unwrap();
    assert!((mse - train_mse).abs() <= 1e-9, "{mse} vs {train_mse}");
}

#[test]
fn printed_numbers_have_six_significant_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train_diabetes(tmp.path(), &["--max-depth", "1", "--max-width", "3"]);
    let line = stdout(&o).lines().find(|l| l.starts_with("train mse:")).unwrap().to_string();
    let number = line.split_whitespace().last().unwrap();
    let digits: String = number.chars().filter(|c| c.is_ascii_digit()).collect();
    assert_eq!(digits.trim_start_matches('0').len(), 6, "{number}");
}

#[test]
fn missing_target_is_a_usage_error() {
    let d = data("diabetes.csv");
    let o = bgn(&["train", "--data", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = bgn(&["train", "--data", d.to_str().unwrap(), "--target", "target", "--train-frac", "1.5"]);
    assert_eq!(o.status.code(), Some(3));
    let o = bgn(&["train", "--data", d.to_str().unwrap(), "--target", "target", "--d0star", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_exits_zero_without_side_effects() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["train", "eval", "bounds", "explain", "equation", "tree"] {
        let o = Command::new(env!("CARGO_BIN_EXE_bgn"))
            .args([cmd, "--help"])
            .current_dir(tmp.path())
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(stdout(&o).contains("--"), "{cmd}");
    }
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn width_cap_is_respected_on_housing() {
    let tmp = tempfile::tempdir().unwrap();
    let h = data("housing.csv");
    let o = bgn(&[
        "train", "--data", h.to_str().unwrap(), "--target", "MedHouseVal", "--seed", "1",
        "--max-width", "5", "--out", tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = read_json(&tmp.path().join("model.json"));
    let neurons: usize = model["hidden_layers"].as_array().unwrap().iter().map(|l| l.as_array().unwrap().len()).sum();
    assert!(neurons <= 5 * model["hidden_layers"].as_array().unwrap().len());
    for layer in model["hidden_layers"].as_array().unwrap() {
        assert!(layer.as_array().unwrap().len() <= 5);
    }
}

#[test]
fn bounds_equation_and_explain_on_trained_models() {
    let tmp = tempfile::tempdir().unwrap();
    let d = data("diabetes.csv");
    let ds = d.to_str().unwrap();

    let one = tmp.path().join("one");
    assert!(train_diabetes(&one, &["--max-depth", "1", "--max-width", "4"]).status.success());
    let m1 = one.join("model.json");
    let m1 = m1.to_str().unwrap();
    let o = bgn(&["bounds", "--model", m1, "--data", ds, "--target", "target", "--seed", "3", "--out", one.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("chain holds: true"));

    let o = bgn(&["equation", "--model", m1, "--out", one.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("B("));
    assert!(stdout(&o).contains("𝟙{"));

    let o = bgn(&["explain", "--model", m1, "--data", ds, "--target", "target", "--seed", "3", "--out", one.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("digraph"));
    assert!(one.join("explain.dot").exists());

    let o = bgn(&[
        "explain", "--model", m1, "--data", ds, "--target", "target", "--seed", "3", "--format", "json",
        "--background-size", "16", "--out", one.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let report = read_json(&one.join("explain.json"));
    let total: f64 = report["feature_rsi"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(report["background"], 16);

    // a deeper model: equation and dot fall back with a warning
    let deep = tmp.path().join("deep");
    let mut depth = 0;
    for seed in ["0", "3", "5"] {
        assert!(bgn(&[
            "train", "--data", ds, "--target", "target", "--seed", seed, "--out", deep.to_str().unwrap(),
        ])
        .status
        .success());
        depth = read_json(&deep.join("model.json"))["hidden_layers"].as_array().unwrap().len();
        if depth > 1 {
            break;
        }
    }
    assert!(depth > 1, "no seed produced a deeper model");
    let md = deep.join("model.json");
    let md = md.to_str().unwrap();
    let o = bgn(&["equation", "--model", md, "--out", deep.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"));
    assert!(stdout(&o).contains("layer 2"));
    let o = bgn(&["explain", "--model", md, "--data", ds, "--target", "target", "--out", deep.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"));
    assert!(stdout(&o).contains("feature importance"));
    let o = bgn(&["bounds", "--model", md, "--data", ds, "--target", "target", "--out", deep.to_str().unwrap()]);
    assert!(stdout(&o).contains("chain holds: true"));
}

#[test]
fn data_problems_exit_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = bgn(&["train", "--data", "/nonexistent/file.csv", "--target", "y", "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    let d = data("diabetes.csv");
    let o = bgn(&["train", "--data", d.to_str().unwrap(), "--target", "nope", "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope"));

    assert!(train_diabetes(tmp.path(), &["--max-width", "2", "--max-depth", "1"]).status.success());
    let h = data("housing.csv");
    let model = tmp.path().join("model.json");
    let o = bgn(&[
        "eval", "--model", model.to_str().unwrap(), "--data", h.to_str().unwrap(), "--target", "MedHouseVal",
        "--out", out,
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("expects 10 features"));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\"format_version\": 99}").unwrap();
    let o = bgn(&["equation", "--model", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn constant_labels_are_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("flat.csv");
    let mut text = String::from("a,b,y\n");
    for i in 0..30 {
        text.push_str(&format!("{},{},5\n", i, (i * 7) % 11));
    }
    std::fs::write(&csv, text).unwrap();
    let out = tmp.path().join("out");
    let o = bgn(&["train", "--data", csv.to_str().unwrap(), "--target", "y", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(!out.join("model.json").exists());
}

#[test]
fn tree_prints_rendering_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let h = data("housing.csv");
    let mut files = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("t{run}"));
        let o = bgn(&[
            "tree", "--data", h.to_str().unwrap(), "--target", "MedHouseVal", "--seed", "2", "--max-depth", "2",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let text = stdout(&o);
        assert!(text.starts_with("MedInc <= "));
        assert!(text.contains("test mse:"));
        files.push(std::fs::read(out.join("tree.json")).unwrap());
        assert_eq!(read_json(&out.join("tree.manifest.json"))["flags"]["max_depth"], 2);
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn log_level_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = data("diabetes.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_bgn"))
        .args(["train", "--data", d.to_str().unwrap(), "--target", "target", "--max-depth", "1", "--out"])
        .arg(tmp.path())
        .env("BGN_LOG", "debug")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stderr(&o).contains("valid mse"));
    let o = bgn(&["train", "--data", d.to_str().unwrap(), "--target", "target", "--max-depth", "1", "--out", tmp.path().to_str().unwrap()]);
    assert!(stderr(&o).is_empty());
}
