use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const METRICS_HEADER: &str = "step,loss_total,loss_mean,loss_equiv,percent_equiv,grad_norm_total,grad_norm_mean,\
grad_norm_equiv,grad_norm_ratio,head_deviation_sq,epsilon,n_rotations,seed";
const SENSITIVITY_HEADER: &str = "n,percent_mean,percent_stderr";

struct Run {
    _dir: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

/// A short run directory with a config file built from `extra` TOML.
fn setup(extra: &str) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    let base = "[task]\natoms = 4\ntrain_samples = 128\nheldout_samples = 64\n\
                [train]\nsteps = 40\nmeasure_every = 10\nbatch_size = 8\nprobe_size = 8\n";
    std::fs::write(&config, merge(base, extra)).unwrap();
    let out = dir.path().join("out");
    Run { _dir: dir, config, out }
}

/// Appends `extra` lines under matching section headers of `base`.
fn merge(base: &str, extra: &str) -> String {
    let mut top = String::new();
    let mut sections: Vec<(String, String)> = Vec::new();
    for text in [base, extra] {
        let mut current: Option<usize> = None;
        for line in text.lines() {
            if line.starts_with('[') {
                let name = line.to_string();
                current = Some(sections.iter().position(|(n, _)| *n == name).unwrap_or_else(|| {
                    sections.push((name, String::new()));
                    sections.len() - 1
                }));
            } else if let Some(i) = current {
                sections[i].1 += &format!("{line}\n");
            } else {
                top += &format!("{line}\n");
            }
        }
    }
    sections.iter().fold(top, |acc, (n, body)| format!("{acc}{n}\n{body}"))
}

fn equidiag(run: &Run, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equidiag"))
        .arg("--config")
        .arg(&run.config)
        .arg("--out")
        .arg(&run.out)
        .args(args)
        .env_remove("EQUIDIAG_OUT")
        .output()
        .unwrap()
}

fn ok(output: &Output) -> String {
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    String::from_utf8(output.stdout.clone()).unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn json_at(path: &Path) -> Value {
    serde_json::from_str(&read(path)).unwrap()
}

#[test]
fn train_writes_declared_artifacts_with_golden_header() {
    let run = setup("");
    ok(&equidiag(&run, &["train"]));
    for name in ["metrics.csv", "model.bin", "model.json", "manifest.json", "percent.svg", "percent_loglog.svg", "losses.svg", "correlation.json"] {
        assert!(run.out.join(name).is_file(), "{name} missing");
    }
    let csv = read(&run.out.join("metrics.csv"));
    assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(csv.lines().count(), 1 + 5);
    let manifest = json_at(&run.out.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["train"]["steps"], 40);
    // Defaults that were absent from the file are recorded too.
    assert_eq!(manifest["config"]["train"]["learning_rate"], 1e-3);
    assert_eq!(manifest["source_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["dataset_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn train_is_deterministic() {
    let a = setup("");
    let b = setup("");
    ok(&equidiag(&a, &["train"]));
    ok(&equidiag(&b, &["--threads", "2", "train"]));
    for name in ["metrics.csv", "model.bin", "percent.svg", "losses.svg"] {
        assert_eq!(std::fs::read(a.out.join(name)).unwrap(), std::fs::read(b.out.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_flag_changes_the_run() {
    let a = setup("");
    let b = setup("");
    ok(&equidiag(&a, &["train"]));
    ok(&equidiag(&b, &["--seed", "7", "train"]));
    assert_ne!(read(&a.out.join("metrics.csv")), read(&b.out.join("metrics.csv")));
    assert_eq!(json_at(&b.out.join("manifest.json"))["config"]["task"]["seed"], 7);
}

#[test]
fn out_dir_from_environment() {
    let run = setup("");
    let status = Command::new(env!("CARGO_BIN_EXE_equidiag"))
        .arg("--config")
        .arg(&run.config)
        .arg("train")
        .env("EQUIDIAG_OUT", &run.out)
        .output()
        .unwrap();
    ok(&status);
    assert!(run.out.join("metrics.csv").is_file());
}

#[test]
fn usage_errors_exit_2() {
    let run = setup("");
    let missing = Command::new(env!("CARGO_BIN_EXE_equidiag"))
        .args(["--config", "/nonexistent/config.toml", "train"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("config"));

    let bad = setup("[train]\nbogus = 1\n");
    assert_eq!(equidiag(&bad, &["train"]).status.code(), Some(2));
    assert_eq!(equidiag(&run, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(equidiag(&run, &["--threads", "0", "train"]).status.code(), Some(2));
    // No checkpoint yet.
    assert_eq!(equidiag(&run, &["measure"]).status.code(), Some(2));
}

#[test]
fn checkpoint_layout_mismatch_exits_2() {
    let run = setup("");
    ok(&equidiag(&run, &["train"]));
    let other = setup("[model]\nkind = \"invariant-graph-head\"\n");
    let ckpt = run.out.join("model.bin");
    let out = equidiag(&other, &["measure", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("models:"));
}

#[test]
fn measure_with_one_rotation_exits_2() {
    let run = setup("");
    ok(&equidiag(&run, &["train"]));
    let out = equidiag(&run, &["--rotations", "1", "measure"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("metrics:"));
}

#[test]
fn measure_prints_decomposition_and_estimator() {
    let run = setup("");
    ok(&equidiag(&run, &["train"]));
    let report: Value = serde_json::from_str(&ok(&equidiag(&run, &["measure"]))).unwrap();
    let d = &report["decomposition"];
    let (t, m, e) = (d["total"].as_f64().unwrap(), d["mean"].as_f64().unwrap(), d["equiv"].as_f64().unwrap());
    assert!((t - m - e).abs() <= 1e-12 * t);
    assert!(report["estimator"]["equiv_loss_unbiased"].is_number());
    assert_eq!(report, json_at(&run.out.join("measure.json")));
}

#[test]
fn baseline_measures_zero_percent() {
    let run = setup("[model]\nkind = \"equivariant-baseline\"\n");
    ok(&equidiag(&run, &["train"]));
    for args in [&["measure"][..], &["measure", "--exact-group"][..]] {
        let report: Value = serde_json::from_str(&ok(&equidiag(&run, args))).unwrap();
        assert!(report["decomposition"]["percent"].as_f64().unwrap().abs() <= 1e-12);
    }
}

#[test]
fn sampled_measure_agrees_with_exact_group() {
    let run = setup("group = \"c4z\"\n[analysis]\nsensitivity_max_rotations = 10\nsensitivity_repeats = 200\n");
    ok(&equidiag(&run, &["train"]));
    let sampled: Value = serde_json::from_str(&ok(&equidiag(&run, &["--rotations", "10", "measure"]))).unwrap();
    let exact: Value = serde_json::from_str(&ok(&equidiag(&run, &["measure", "--exact-group"]))).unwrap();
    assert_eq!(exact["group"].as_str().unwrap().to_lowercase(), "c4z");
    assert_eq!(exact["surrogate_for_so3"], false);
    ok(&equidiag(&run, &["sensitivity"]));
    let csv = read(&run.out.join("sensitivity.csv"));
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(last[0], 10.0);
    let se = last[2];
    let diff = (sampled["decomposition"]["percent"].as_f64().unwrap() - exact["decomposition"]["percent"].as_f64().unwrap()).abs();
    assert!(diff <= 3.0 * se, "diff {diff}, stderr {se}");
}

#[test]
fn sensitivity_with_two_rotations_is_one_row() {
    let run = setup("");
    ok(&equidiag(&run, &["train"]));
    ok(&equidiag(&run, &["--rotations", "2", "sensitivity", "--repeats", "20"]));
    let csv = read(&run.out.join("sensitivity.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], SENSITIVITY_HEADER);
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("2,"));
    assert!(run.out.join("sensitivity.svg").is_file());
}

#[test]
fn few_bootstrap_repeats_warn() {
    let run = setup("");
    ok(&equidiag(&run, &["train"]));
    let out = equidiag(&run, &["--rotations", "4", "sensitivity", "--repeats", "5"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn hessian_records_per_batch_and_kind() {
    let run = setup("");
    ok(&equidiag(&run, &["train"]));
    ok(&equidiag(&run, &["hessian", "--batches", "20"]));
    let records = json_at(&run.out.join("hessian.json"));
    let records = records.as_array().unwrap();
    for kind in ["mean", "equiv", "total"] {
        let n = records.iter().filter(|r| r["loss_kind"] == kind).count();
        assert_eq!(n, 20, "{kind}");
    }
    assert_eq!(read(&run.out.join("hessian.csv")).lines().count(), 61);
}

#[test]
fn degenerate_hessian_exits_3() {
    let run = setup("[model]\nkind = \"equivariant-baseline\"\n");
    ok(&equidiag(&run, &["train"]));
    let out = equidiag(&run, &["hessian"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("analysis:"));
}

#[test]
fn landscape_writes_square_grids() {
    let run = setup("[analysis]\nlandscape_radius = 3\n");
    ok(&equidiag(&run, &["train"]));
    ok(&equidiag(&run, &["landscape"]));
    for name in ["landscape_mean.csv", "landscape_equiv.csv"] {
        let csv = read(&run.out.join(name));
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.lines().all(|l| l.split(',').count() == 7));
    }
    let meta = json_at(&run.out.join("landscape.json"));
    assert_eq!(meta["radius"], 3);
    assert!(run.out.join("landscape.svg").is_file());
}

#[test]
fn graph_head_theorems_and_projection() {
    let run = setup("[model]\nkind = \"invariant-graph-head\"\n");
    ok(&equidiag(&run, &["train"]));
    ok(&equidiag(&run, &["theorems"]));
    let report = json_at(&run.out.join("theorems.json"));
    assert_eq!(report["surrogate_for_so3"], true);
    let t1 = &report["theorem1"];
    assert!(t1["identity_rel_error"].as_f64().unwrap() <= 1e-8);
    let t23 = &report["theorem2_3"][0];
    assert!((t23["loss_slope"].as_f64().unwrap() - 2.0).abs() <= 1e-6);
    assert!((t23["grad_slope"].as_f64().unwrap() - 1.0).abs() <= 1e-6);

    let split: Value = serde_json::from_str(&ok(&equidiag(&run, &["project-head"]))).unwrap();
    assert!(split["deviation_norm_sq"].as_f64().unwrap() > 0.0);
    assert_eq!(split["deviation"].as_array().unwrap().len(), 3);
}

#[test]
fn project_head_rejects_other_models() {
    let run = setup("");
    ok(&equidiag(&run, &["train"]));
    assert_eq!(equidiag(&run, &["project-head"]).status.code(), Some(2));
}

#[test]
fn baseline_theorems_exit_3() {
    let run = setup("[model]\nkind = \"equivariant-baseline\"\n");
    ok(&equidiag(&run, &["train"]));
    assert_eq!(equidiag(&run, &["theorems"]).status.code(), Some(3));
}

#[test]
fn json_config_is_accepted() {
    let run = setup("");
    let json = run.config.with_extension("json");
    std::fs::write(&json, r#"{"task": {"atoms": 4, "train_samples": 64, "heldout_samples": 32}, "train": {"steps": 10, "measure_every": 5}}"#)
        .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_equidiag"))
        .arg("--config")
        .arg(&json)
        .arg("--out")
        .arg(&run.out)
        .arg("train")
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(read(&run.out.join("metrics.csv")).lines().count(), 1 + 3);
}
