mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{tree_bytes, SMALL_CONFIG};
use serde_json::Value;

fn curconmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curconmix")).args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn error_json(o: &Output) -> Value {
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(err.lines().last().unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn staged_run_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let args = |cmd: &'static str| vec![cmd, "--config", &cfg, "--out", out];

    let v = stdout_json(&curconmix(&args("gen-data")));
    assert_eq!(v["sha256"].as_str().unwrap().len(), 64);
    stdout_json(&curconmix(&args("pretrain")));
    stdout_json(&curconmix(&args("distill")));
    let v = stdout_json(&curconmix(&args("train-temporal")));
    let gamma: Vec<f64> = serde_json::from_value(v["gamma"].clone()).unwrap();
    assert!(common::fusion_weights_valid(&gamma, v["beta"].as_f64().unwrap()));

    let mut eval = args("evaluate");
    eval.extend(["--split", "train"]);
    let v = stdout_json(&curconmix(&eval));
    assert_eq!(v["split"], "train");
    assert!(v["mean_ap"]["AP_IVT"].as_f64().is_some());
    let mut eval = args("evaluate");
    eval.push("--spatial-only");
    stdout_json(&curconmix(&eval));

    let root = Path::new(out);
    for f in ["eval_train.json", "eval_train.csv", "eval_val_spatial_only.json"] {
        assert!(root.join("reports").join(f).exists(), "{f}");
    }
    assert!(root.join("plots/eval_train_ap.svg").exists());
    assert!(root.join("config.lock").exists());
}

#[test]
fn run_is_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let v = stdout_json(&curconmix(&["run", "--config", &cfg, "--out", d.to_str().unwrap()]));
        assert!(v["val_ap_ivt"].as_f64().is_some());
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    let c = dir.path().join("c");
    stdout_json(&curconmix(&["run", "--config", &cfg, "--seed", "9", "--out", c.to_str().unwrap()]));
    assert_ne!(tree_bytes(&a)["checkpoints/student.ckpt"], tree_bytes(&c)["checkpoints/student.ckpt"]);
}

#[test]
fn ablation_table_has_the_requested_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let sweep = dir.path().join("sweep.toml");
    std::fs::write(&sweep, "kind = \"curriculum_order\"\nseeds = [0]\norders = [\"T->IT->IVT\", \"IVT\"]\n").unwrap();
    let out = dir.path().join("abl");
    let o = curconmix(&["ablate", "--config", &cfg, "--sweep", sweep.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("reports/ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "stage1,stage2,stage3,ap_ivt_mean,ap_ivt_std,seed_0");
    assert!(lines.next().unwrap().starts_with("T,IT,IVT,"));
    assert!(lines.next().unwrap().starts_with("IVT,,,"));
    assert!(out.join("reports/ablation.md").exists());
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();

    let e = error_json(&curconmix(&["pretrain", "--config", "/nonexistent/cfg.toml", "--out", out]));
    assert_eq!(e["error"], "missing_file");

    let bad = write_config(dir.path(), "seed = 1\n[toggles]\nsupcon = false\ncurriculum = true\n");
    let e = error_json(&curconmix(&["run", "--config", &bad, "--out", out]));
    assert_eq!(e["error"], "invalid_config");

    let typo = write_config(dir.path(), "sede = 1\n");
    assert_eq!(error_json(&curconmix(&["run", "--config", &typo, "--out", out]))["error"], "invalid_config");

    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let e = error_json(&curconmix(&["evaluate", "--config", &cfg, "--out", out]));
    assert_eq!(e["error"], "missing_file");

    let e = error_json(&curconmix(&["evaluate", "--config", &cfg, "--out", out, "--split", "test"]));
    assert_eq!(e["error"], "usage");
    assert_eq!(error_json(&curconmix(&["frobnicate"]))["error"], "usage");
    assert!(curconmix(&["--help"]).status.success());
}
