use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use locenc::pretrain::{load_checkpoint, ClipModel, PretrainConfig};
use serde_json::Value;

fn locenc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locenc"))
        .args(args)
        .env("LOCENC_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(path: &Path) -> Value {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    serde_json::from_str(&std::fs::read_to_string(PathBuf::from(s)).unwrap()).unwrap()
}

fn write_spec(dir: &Path) -> PathBuf {
    let spec = dir.join("world.json");
    std::fs::write(&spec, r#"{"seed": 3, "bump_count": 4, "feature_dim": 6}"#).unwrap();
    spec
}

fn gen(dir: &Path, n: usize) -> PathBuf {
    let prefix = dir.join("w");
    let out = locenc(&["gen-data", "--spec", p(&write_spec(dir)), "--n", &n.to_string(), "--out", p(&prefix)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    prefix
}

const TINY: [&str; 12] = ["--L", "3", "--d", "8", "--hidden-dim", "16", "--batch", "16", "--quiet", "--seed", "4", "--no-jitter"];

fn pretrain(dir: &Path, pairs: &Path, name: &str, epochs: &str) -> (PathBuf, Output) {
    let ckpt = dir.join(name);
    let mut args = vec!["pretrain", "--pairs", p(pairs), "--epochs", epochs, "--out", p(&ckpt)];
    args.extend(TINY);
    let out = locenc(&args);
    (ckpt, out)
}

#[test]
fn gen_data_rows_determinism_and_missing_spec() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen(dir.path(), 100);
    let pairs = std::fs::read_to_string(dir.path().join("w.pairs.csv")).unwrap();
    let labels = std::fs::read_to_string(dir.path().join("w.labels.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 101);
    assert_eq!(labels.lines().count(), 101);
    let m = manifest(&prefix);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["resolved"]["world"]["centers"].as_array().unwrap().len(), 4);

    let other = dir.path().join("again");
    let out = locenc(&["gen-data", "--spec", p(&dir.path().join("world.json")), "--n", "100", "--out", p(&other)]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("again.pairs.csv")).unwrap(), pairs);

    let missing = dir.path().join("nope.json");
    let out = locenc(&["gen-data", "--spec", p(&missing), "--n", "10", "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
    let m = manifest(&dir.path().join("x"));
    assert_eq!(m["status"], "error");
    assert_eq!(m["exit_code"], 2);
}

#[test]
fn pretrain_outputs_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 120);
    let pairs = dir.path().join("w.pairs.csv");
    let (a, out) = pretrain(dir.path(), &pairs, "a.ckpt", "3");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("best val loss"));
    let (b, _) = pretrain(dir.path(), &pairs, "b.ckpt", "3");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a.ckpt.json")).unwrap(),
        std::fs::read(dir.path().join("b.ckpt.json")).unwrap()
    );
    let log = std::fs::read_to_string(dir.path().join("a.ckpt.log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,train_loss,val_loss,tau,seconds");
    assert_eq!(log.lines().count(), 4);
    let m = manifest(&a);
    assert_eq!(m["resolved"]["lr"], 0.0001);
    assert_eq!(m["resolved"]["weight_decay"], 0.01);
    assert_eq!(m["args"]["lr"], 0.0001);
    assert!(m["started_at"].as_str().unwrap().len() > 10);
}

#[test]
fn pretrain_zero_epochs_is_initialization() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 60);
    let (ckpt, out) = pretrain(dir.path(), &dir.path().join("w.pairs.csv"), "z.ckpt", "0");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = PretrainConfig {
        l_max: 3,
        embed_dim: 8,
        hidden_dim: 16,
        batch_size: 16,
        epochs: 0,
        seed: 4,
        jitter: false,
        ..PretrainConfig::default()
    };
    assert_eq!(load_checkpoint(&ckpt).unwrap(), ClipModel::init(&cfg, 6).unwrap());
    let log = std::fs::read_to_string(dir.path().join("z.ckpt.log.csv")).unwrap();
    assert_eq!(log, "epoch,train_loss,val_loss,tau,seconds\n");
}

#[test]
fn pretrain_failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 12);
    let (_, out) = pretrain(dir.path(), &dir.path().join("w.pairs.csv"), "small.ckpt", "1");
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(manifest(&dir.path().join("small.ckpt"))["status"], "error");

    let huge = dir.path().join("huge.pairs.csv");
    let mut text = String::from("lon,lat,f0,f1,f2,f3,f4,f5\n");
    for i in 0..60 {
        text.push_str(&format!("{},{},1e308,1e308,1e308,1e308,1e308,1e308\n", i * 5 - 150, (i % 17) * 5 - 40));
    }
    std::fs::write(&huge, text).unwrap();
    let (_, out) = pretrain(dir.path(), &huge, "nan.ckpt", "1");
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 1"));
}

#[test]
fn embed_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 60);
    let (ckpt, out) = pretrain(dir.path(), &dir.path().join("w.pairs.csv"), "m.ckpt", "1");
    assert!(out.status.success());

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "lon,lat\n").unwrap();
    let e0 = dir.path().join("e0.csv");
    assert!(locenc(&["embed", "--ckpt", p(&ckpt), "--coords", p(&empty), "--out", p(&e0)]).status.success());
    assert_eq!(std::fs::read_to_string(&e0).unwrap(), "lon,lat,e0,e1,e2,e3,e4,e5,e6,e7\n");

    let coords = dir.path().join("w.pairs.csv");
    let e1 = dir.path().join("e1.csv");
    let e2 = dir.path().join("e2.csv");
    assert!(locenc(&["embed", "--ckpt", p(&ckpt), "--coords", p(&coords), "--out", p(&e1)]).status.success());
    assert!(locenc(&["embed", "--ckpt", p(&ckpt), "--coords", p(&coords), "--out", p(&e2)]).status.success());
    let text = std::fs::read_to_string(&e1).unwrap();
    assert_eq!(text, std::fs::read_to_string(&e2).unwrap());
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 10);

    let pca_out = dir.path().join("pca");
    let out = locenc(&["analyze", "pca", "--k", "3", "--emb", p(&e1), "--out", p(&pca_out)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scores = std::fs::read_to_string(dir.path().join("pca.scores.csv")).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "lon,lat,pc1,pc2,pc3");
    assert_eq!(scores.lines().count(), 61);
    let ratios = std::fs::read_to_string(dir.path().join("pca.ratios.csv")).unwrap();
    assert_eq!(ratios.lines().count(), 9);
    let via_ckpt = dir.path().join("pca2");
    let out = locenc(&["analyze", "pca", "--ckpt", p(&ckpt), "--coords", p(&coords), "--out", p(&via_ckpt)]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("pca2.scores.csv")).unwrap(), scores);

    let grid = dir.path().join("grid.csv");
    let out = locenc(&["analyze", "simmap", "--ckpt", p(&ckpt), "--ref", "-165,15", "--resolution", "30", "--out", p(&grid)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let g = locenc::analysis::read_grid(&grid).unwrap();
    let best = g.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((best - 1.0).abs() < 1e-12);
    let (i, j) = (3, 0);
    assert_eq!(g.value(i, j), best);

    let out = locenc(&["analyze", "simmap", "--ckpt", p(&ckpt), "--ref", "10", "--out", p(&grid)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn downstream_reports() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 300);
    let labels = dir.path().join("w.labels.csv");
    let report = dir.path().join("r.json");
    let args = |split: &str, out: &Path| {
        locenc(&[
            "downstream", "--labels", p(&labels), "--featurizer", "identity", "--split", split, "--repeats", "1",
            "--trials", "2", "--max-epochs", "10", "--patience", "5", "--out", p(out),
        ])
    };
    let out = args("random", &report);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["std"], 0.0);
    assert_eq!(r["metric"], "r2");
    assert_eq!(r["values"].as_array().unwrap().len(), 1);

    let holdout = dir.path().join("h.json");
    let out = args("holdout:0,60,0.01", &holdout);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&holdout);
    assert_eq!(m["resolved"]["eval"]["split"]["fewshot_fraction"], 0.01);
    assert_eq!(m["resolved"]["featurizer"], "identity");

    let again = dir.path().join("r2.json");
    args("random", &again);
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(&again).unwrap());

    let out = args("holdout:5", &report);
    assert_eq!(out.status.code(), Some(2));
}
