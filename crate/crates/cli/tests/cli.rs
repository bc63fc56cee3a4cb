use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const QUICK: &str = r#"{"t_max": 2, "epochs_per_iteration": 2, "task": {"train_samples": 128, "test_samples": 32}}"#;

fn sparsenas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsenas"))
        .args(args)
        .env_remove("MNIST_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_search(config: &Path, out: &Path) -> Output {
    sparsenas(&["search", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn search_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUICK);
    let out = dir.path().join("run");
    let result = run_search(&config, &out);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    for name in ["arch.json", "arch.dot", "metrics.csv", "report.json"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    let arch: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("arch.json")).unwrap()).unwrap();
    assert_eq!(arch["config_hash"], report["config_hash"]);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("iteration,epoch,loss,test_error,alive_edges,"));
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUICK);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_search(&config, &a).status.success());
    assert!(run_search(&config, &b).status.success());
    for name in ["metrics.csv", "arch.json", "arch.dot"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_and_mode_overrides_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUICK);
    let out = dir.path().join("seeded");
    let result = sparsenas(&[
        "search",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
        "--mode",
        "exact",
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let arch: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("arch.json")).unwrap()).unwrap();
    assert_eq!(arch["seed"], 3);
}

#[test]
fn export_and_eval_read_a_searched_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUICK);
    let run = dir.path().join("run");
    assert!(run_search(&config, &run).status.success());
    let arch = run.join("arch.json");
    let (cfg, input) = (config.to_str().unwrap(), arch.to_str().unwrap());

    let dot_dir = dir.path().join("dot");
    let result = sparsenas(&["export", "--config", cfg, "--input", input, "--out", dot_dir.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    assert!(std::fs::read_to_string(dot_dir.join("arch.dot")).unwrap().starts_with("digraph"));

    let json_dir = dir.path().join("json");
    let result = sparsenas(&[
        "export",
        "--config",
        cfg,
        "--input",
        input,
        "--format",
        "json",
        "--out",
        json_dir.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    assert_eq!(std::fs::read_to_string(json_dir.join("arch.json")).unwrap(), std::fs::read_to_string(&arch).unwrap());

    let eval_dir = dir.path().join("eval");
    let result = sparsenas(&["eval", "--config", cfg, "--input", input, "--out", eval_dir.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval_dir.join("eval.json")).unwrap()).unwrap();
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(eval["test_metric"], report["test_error"]);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(sparsenas(&["search"]).status.code(), Some(1));
    assert_eq!(sparsenas(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sparsenas(&["search", "--config", "c.json", "--mode", "fast"]).status.code(), Some(1));
}

#[test]
fn help_and_version_exit_with_zero() {
    assert_eq!(sparsenas(&["--help"]).status.code(), Some(0));
    assert_eq!(sparsenas(&["--version"]).status.code(), Some(0));
}

#[test]
fn invalid_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for text in [r#"{"lambda_w": -1}"#, r#"{"no_such_key": 1}"#, "{"] {
        let config = write_config(dir.path(), text);
        let result = run_search(&config, &dir.path().join("out"));
        assert_eq!(result.status.code(), Some(1), "{text}");
        assert!(String::from_utf8_lossy(&result.stderr).starts_with("error:"));
    }
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(run_search(&missing, dir.path()).status.code(), Some(2));
}

#[test]
fn compress_without_data_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let result = sparsenas(&["compress", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("MNIST"));
}
