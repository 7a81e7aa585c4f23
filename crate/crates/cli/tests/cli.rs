use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
family = "sinusoid"
seed = 3

[data]
n_train = 96
n_val = 0
n_test = 24

[encoder]
batch_size = 32
epochs = 2
d_repr = 8

[decoder]
epochs = 2
batch_size = 32
hidden = 8

[eval]
seeds = [0, 1]
"#;

fn fcrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcrl"))
        .args(args)
        .current_dir(dir)
        .env("FCRL_LAB_OUT", dir.join("lab"))
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn error_json(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default().to_string();
    let v: Value = serde_json::from_str(&line).expect("stderr ends with error json");
    assert_eq!(v["exit_code"], code);
    v
}

fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    tmp
}

#[test]
fn sinusoid_pipeline_emits_metrics_and_reproduces() {
    let tmp = workspace();
    let dir = tmp.path();
    let enc = stdout_json(&fcrl(dir, &["train-encoder", "--config", "tiny.toml"]));
    let enc_dir = enc["run_dir"].as_str().unwrap().to_string();
    assert!(enc_dir.starts_with(dir.join("lab").to_str().unwrap()));

    // The decoder and evaluation runs inherit the encoder run's config.
    let dec = stdout_json(&fcrl(dir, &["train-decoder", "--encoder-run", &enc_dir, "--task", "fsr"]));
    let dec_dir = dec["run_dir"].as_str().unwrap().to_string();
    let eval = stdout_json(&fcrl(dir, &["evaluate", "--model-run", &dec_dir]));
    let eval_dir = Path::new(eval["run_dir"].as_str().unwrap());
    let csv = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "run_id,model,task,shots,noise_sigma,seed,metric,value");
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().any(|r| r.contains(",fsr,5,")));
    assert!(eval["summary"].is_array() || eval["summary"].is_object());

    let repro = stdout_json(&fcrl(dir, &["reproduce", eval_dir.to_str().unwrap()]));
    assert_eq!(repro["identical"], true);
    assert_eq!(repro["metrics_compared"], 4);
}

#[test]
fn cnp_representations_are_probed_for_parameters() {
    let tmp = workspace();
    let dir = tmp.path();
    let cnp = stdout_json(&fcrl(dir, &["train-cnp", "--config", "tiny.toml", "--seed", "11"]));
    assert_eq!(cnp["model"], "cnp");
    let cnp_dir = cnp["run_dir"].as_str().unwrap().to_string();
    let eval = stdout_json(&fcrl(dir, &["evaluate", "--model-run", &cnp_dir, "--task", "fspi"]));
    let csv = std::fs::read_to_string(Path::new(eval["run_dir"].as_str().unwrap()).join("metrics.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|r| r.contains(",cnp,fspi,")));
}

#[test]
fn failures_exit_with_codes_and_json() {
    let tmp = workspace();
    let dir = tmp.path();
    let v = error_json(&fcrl(dir, &["train-encoder"]), 2);
    assert_eq!(v["error"], "config");

    std::fs::write(dir.join("unseeded.toml"), TINY.replace("seed = 3\n", "")).unwrap();
    error_json(&fcrl(dir, &["train-encoder", "--config", "unseeded.toml"]), 2);
    stdout_json(&fcrl(dir, &["train-encoder", "--config", "unseeded.toml", "--seed", "1", "--out", "elsewhere"]));
    assert!(dir.join("elsewhere").is_dir());

    std::fs::write(dir.join("bad.toml"), TINY.replace("d_repr = 8", "d_repr = 8\ntemperature = -1")).unwrap();
    let v = error_json(&fcrl(dir, &["train-encoder", "--config", "bad.toml"]), 2);
    assert!(v["message"].as_str().unwrap().contains("temperature"), "{v}");

    let v = error_json(&fcrl(dir, &["train-decoder", "--encoder-run", "missing", "--task", "fsr", "--config", "tiny.toml"]), 3);
    assert_eq!(v["error"], "missing_artifact");

    stdout_json(&fcrl(dir, &["train-encoder", "--config", "tiny.toml"]));
    error_json(&fcrl(dir, &["train-encoder", "--config", "tiny.toml"]), 2);
    stdout_json(&fcrl(dir, &["train-encoder", "--config", "tiny.toml", "--force"]));
    stdout_json(&fcrl(dir, &["train-encoder", "--config", "tiny.toml", "--reuse"]));

    error_json(&fcrl(dir, &["train-encoder", "--config", "absent.toml"]), 3);
    std::fs::write(dir.join("mnist.toml"), "family = \"mnist\"\nseed = 1\n").unwrap();
    let v = error_json(&fcrl(dir, &["train-encoder", "--config", "mnist.toml"]), 3);
    assert!(v["message"].as_str().unwrap().contains("IDX"), "{v}");
}

#[test]
fn oracle_check_reports_tv_against_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fcrl(tmp.path(), &["oracle-check", "--seed", "0", "--episodes", "100"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("PASS mean TV") && last.ends_with("(threshold 0.1)"), "{last}");

    let strict = fcrl(tmp.path(), &["oracle-check", "--seed", "0", "--episodes", "100", "--threshold", "0"]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8(strict.stdout).unwrap().lines().last().unwrap().starts_with("FAIL"));

    let unseeded = fcrl(tmp.path(), &["oracle-check"]);
    assert!(!unseeded.status.success());
}

#[test]
fn grad_check_passes_every_objective() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fcrl(tmp.path(), &["grad-check"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}
