//! End-to-end checks of the `safl-sim` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
n = 6
rounds = 8
seed = 11
repetitions = 2
variants = ["fedavg", "safl", "safl_extended"]

[objective]
kind = "ridge"
reg = 0.1

[data]
source = "synthetic_regression"
samples = 300
dim = 3

[[partition]]
devices = 6
mean_size = 15
max_labels = 1

[learning_rate]
schedule = "constant"
alpha = 0.05
"#;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safl-sim")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn run_to(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--config", config, "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    sim(&args)
}

#[test]
fn writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let res = run_to(&config, &out, &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("metrics_safl.csv")).unwrap();
    assert!(text.starts_with(
        "variant,seed,round,mse,accuracy_proxy,uploads_cumulative,p,bound_theorem1,bound_corollary1\n"
    ));
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().count(), 1 + 2 * 8);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn variants_flag_limits_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    assert!(run_to(&config, &out, &["--variants", "safl"]).status.success());
    assert!(out.join("metrics_safl.csv").exists());
    assert!(!out.join("metrics_fedavg.csv").exists());
}

#[test]
fn seed_override_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "small.toml", SMALL);
    let moved = write_config(dir.path(), "moved.toml", &SMALL.replace("seed = 11", "seed = 40"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(run_to(&config, &a, &["--seed-override", "40"]).status.success());
    assert!(run_to(&config, &b, &["--seed-override", "40"]).status.success());
    assert!(run_to(&moved, &c, &[]).status.success());
    let read = |d: &Path| fs::read(d.join("metrics_safl_extended.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a), read(&c));
}

#[test]
fn config_errors_exit_with_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "bad.toml", &SMALL.replace("n = 6", "n = 7"));
    let res = run_to(&config, &dir.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("n"));

    let config = write_config(dir.path(), "typo.toml", &SMALL.replace("reg = 0.1", "reg = 0.1\nregg = 2"));
    let res = run_to(&config, &dir.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("regg"));

    let config = write_config(dir.path(), "small.toml", SMALL);
    let res = Command::new(env!("CARGO_BIN_EXE_safl-sim"))
        .args(["--config", &config, "--out", dir.path().join("o").to_str().unwrap()])
        .env("SAFL_SIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("SAFL_SIM_THREADS"));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "hot.toml", &SMALL.replace("alpha = 0.05", "alpha = 1000.0"));
    let res = run_to(&config, &dir.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn io_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_to(dir.path().join("missing.toml").to_str().unwrap(), &dir.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(3));

    let config = write_config(dir.path(), "small.toml", SMALL);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let res = run_to(&config, &blocker, &[]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn compare_reports_rounds_to_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    assert!(run_to(&config, &out, &[]).status.success());
    let a = out.join("metrics_fedavg.csv");
    let b = out.join("metrics_safl.csv");
    let res = sim(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--threshold", "1e9"]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("fedavg: reached by 2/2 seeds, median rounds 1"), "{text}");

    let res = sim(&["compare", a.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}
