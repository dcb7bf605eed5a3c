use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use holstein_core::resolvent::{green_magnitudes, PairSet};
use holstein_core::rng::task_seed;
use holstein_core::Model;
use holstein_harness::config::{ExperimentConfig, DEFAULT_CONFIG, OUTPUT_DIR_ENV};
use holstein_harness::experiments::green_pairs;
use holstein_harness::{execute, EnsembleOptions, Experiment, RunManifest};
use nalgebra::Complex;
use tempfile::TempDir;

fn small_config(samples: usize) -> String {
    DEFAULT_CONFIG
        .replace("L = 4", "L = 3")
        .replace("n_samples = 50", &format!("n_samples = {samples}"))
        .replace("T = [10.0, 100.0, 1e3, 1e4, 1e5, 1e6]", "T = [10.0, 1e3, 1e5]")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn holstein(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holstein"))
        .args(args)
        .env_remove(OUTPUT_DIR_ENV)
        .output()
        .unwrap()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

/// `n · C(n + K − 1, K − 1)` in machine integers.
fn multiset_count(n: u128, k: u128) -> u128 {
    let mut c = 1u128;
    for i in 0..k - 1 {
        c = c * (n + k - 1 - i) / (i + 1);
    }
    n * c
}

#[test]
fn count_table_matches_direct_count() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let run = holstein(&["count", "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let table = rows(&out.join("count.csv"));
    assert_eq!(table.len(), 16);
    for r in table {
        let n: u128 = r[2].parse().unwrap();
        let k: u128 = r[3].parse().unwrap();
        assert_eq!(r[4].parse::<u128>().unwrap(), multiset_count(n, k));
        assert!(r[4].parse::<f64>().unwrap() <= r[7].parse::<f64>().unwrap());
    }
}

#[test]
fn decoupled_spectrum_sits_in_the_bands() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config(3));
    let out = tmp.path().join("out");
    let run = holstein(&["spectrum", "--config", cfg.to_str().unwrap(), "--gamma", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let table = rows(&out.join("spectrum.csv"));
    assert!(!table.is_empty());
    assert!(table.iter().all(|r| r[3].parse::<f64>().unwrap() < 1e-6));
}

#[test]
fn missing_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let text: String = small_config(3).lines().filter(|l| !l.starts_with("gamma")).map(|l| format!("{l}\n")).collect();
    let cfg = write_config(tmp.path(), &text);
    let run = holstein(&["count", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_slice(run.stderr.trim_ascii()).unwrap();
    assert_eq!(record["key"], "gamma");
}

#[test]
fn invalid_value_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config(3).replace("s = 0.5", "s = 1.5"));
    let run = holstein(&["green", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_slice(run.stderr.trim_ascii()).unwrap();
    assert_eq!(record["key"], "s");
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config(6));
    let mut outputs = Vec::new();
    for w in ["1", "8"] {
        let out = tmp.path().join(format!("w{w}"));
        let run = holstein(&["green", "--config", cfg.to_str().unwrap(), "--workers", w, "--out", out.to_str().unwrap()]);
        assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
        outputs.push((fs::read(out.join("green.csv")).unwrap(), fs::read(out.join("fit.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn poisoned_task_is_isolated() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config(5));
    let out = tmp.path().join("out");
    let run = holstein(&["green", "--config", cfg.to_str().unwrap(), "--poison-task", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(4));
    let manifest = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.experiments[0].failures.len(), 1);
    assert_eq!(manifest.experiments[0].failures[0].index, 2);
    let fit: serde_json::Value = serde_json::from_slice(&fs::read(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["samples"], 4);
    assert!(rows(&out.join("green.csv")).iter().all(|r| &r[13] == "4"));
}

#[test]
fn manifest_rerun_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config(2));
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    let run = holstein(&["all", "--config", cfg.to_str().unwrap(), "--out", first.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let manifest_path = first.join("manifest.json");
    let again = holstein(&["rerun", manifest_path.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0), "{}", String::from_utf8_lossy(&again.stderr));
    let a = RunManifest::load(&manifest_path).unwrap();
    let b = RunManifest::load(&second.join("manifest.json")).unwrap();
    assert_eq!(a.config_hash, b.config_hash);
    assert_eq!(a.outputs, b.outputs);
    for f in &a.outputs {
        assert_eq!(fs::read(first.join(&f.file)).unwrap(), fs::read(second.join(&f.file)).unwrap(), "{}", f.file);
    }
    assert!(a.outputs.iter().filter(|f| f.file.ends_with(".csv")).count() >= 6);
}

#[test]
fn output_dir_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("env_out");
    let run = Command::new(env!("CARGO_BIN_EXE_holstein"))
        .args(["count"])
        .env(OUTPUT_DIR_ENV, &out)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(run.status.success());
    assert!(out.join("count.csv").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn single_sample_equals_a_direct_run() {
    let tmp = TempDir::new().unwrap();
    let mut config = ExperimentConfig::parse(&small_config(1)).unwrap();
    config.output.dir = tmp.path().to_path_buf();
    execute(&[Experiment::Green], &config, &EnsembleOptions::default()).unwrap();
    let model = Model::new(config.params()).unwrap();
    let pairs = PairSet::new(&model, green_pairs(&model).into_iter().map(|(a, b, _)| (a, b)).collect()).unwrap();
    let z = config.analysis.z[0];
    let dis = model.sample_disorder(task_seed(config.ensemble.seed, 0));
    let direct = green_magnitudes(&model, &pairs, Complex::new(z[0], z[1]), &dis).unwrap();
    let table = rows(&tmp.path().join("green.csv"));
    assert_eq!(table.len(), direct.len());
    for (r, g) in table.iter().zip(&direct) {
        assert_eq!(&r[11], format!("{:e}", g.powf(config.analysis.s)));
        assert_eq!(&r[12], "0e0");
    }
}
