//! Helpers shared by the CLI tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub const LEGO: &str = env!("CARGO_BIN_EXE_lego");

/// Runs `lego` in `dir` with `LEGO_LOG` cleared.
pub fn lego(dir: &Path, args: &[&str]) -> Output {
    Command::new(LEGO)
        .args(args)
        .current_dir(dir)
        .env_remove("LEGO_LOG")
        .output()
        .expect("spawn lego")
}

/// Like [`lego`] but panics with stderr unless the exit code is 0.
pub fn lego_ok(dir: &Path, args: &[&str]) -> Output {
    let out = lego(dir, args);
    assert!(
        out.status.success(),
        "lego {args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write_ids(path: &Path, ids: &[u64]) {
    let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
    fs::write(path, text).unwrap();
}

/// Drops `total_seconds` and every per-adapter `seconds` from an unlearn
/// report.
pub fn strip_report_timing(bytes: &[u8]) -> Vec<u8> {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).expect("report json");
    let obj = v.as_object_mut().unwrap();
    obj.remove("total_seconds");
    if let Some(list) = obj.get_mut("adapter_timings").and_then(|t| t.as_array_mut()) {
        for t in list {
            t.as_object_mut().unwrap().remove("seconds");
        }
    }
    serde_json::to_vec(&v).unwrap()
}

/// Removes the `unlearn_ms` column from a metrics CSV.
pub fn strip_csv_timing(bytes: &[u8]) -> Vec<u8> {
    let text = std::str::from_utf8(bytes).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "unlearn_ms").unwrap();
    let mut out = String::new();
    for line in text.lines() {
        let kept: Vec<&str> = line
            .split(',')
            .enumerate()
            .filter(|(i, _)| *i != col)
            .map(|(_, f)| f)
            .collect();
        out.push_str(&kept.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

/// Runs every subcommand once in `dir` with `--threads threads` and returns
/// each output file and captured stdout with timing fields removed.
pub fn run_pipeline(dir: &Path, threads: usize) -> BTreeMap<String, Vec<u8>> {
    let t = threads.to_string();
    let mut stdout = BTreeMap::new();
    let mut run = |name: &str, args: &[&str]| {
        let mut full = vec!["--threads", t.as_str()];
        full.extend_from_slice(args);
        let out = lego_ok(dir, &full);
        stdout.insert(format!("stdout:{name}"), out.stdout);
    };

    run("gen", &["data", "gen", "--classes", "4", "--dim", "8", "--per-class", "100", "--seed", "7", "--out", "d.lgem"]);
    run("gen-csv", &["data", "gen", "--classes", "3", "--dim", "4", "--per-class", "20", "--seed", "7", "--out", "d.csv"]);
    run("validate", &["data", "validate", "d.lgem"]);
    run("validate-csv", &["data", "validate", "d.csv"]);
    run("split", &["data", "split", "d.lgem", "--test-fraction", "0.2", "--seed", "7", "--train-out", "tr.lgem", "--test-out", "te.lgem"]);
    run("train", &["train", "--data", "tr.lgem", "--n", "20", "--k", "3", "--seed", "1", "--out", "m.ckpt"]);
    run("train-logit", &["train", "--data", "tr.lgem", "--n", "12", "--k", "2", "--seed", "2", "--ensemble", "logit", "--bias", "--out", "ml.ckpt"]);
    run("infer", &["infer", "--ckpt", "m.ckpt", "--data", "te.lgem", "--out", "pred.csv"]);
    run("infer-stdout", &["infer", "--ckpt", "ml.ckpt", "--data", "te.lgem"]);

    let train = legonet::data::load_dataset(&dir.join("tr.lgem")).unwrap();
    let ids: Vec<u64> = train.ids().into_iter().step_by(37).take(3).collect();
    write_ids(&dir.join("ids.txt"), &ids);
    run("unlearn", &["unlearn", "--ckpt", "m.ckpt", "--data", "tr.lgem", "--ids", "ids.txt", "--out", "m2.ckpt", "--report", "r2.json"]);
    run("unlearn-class", &["unlearn", "--ckpt", "m.ckpt", "--data", "tr.lgem", "--class", "1", "--batched", "--out", "m3.ckpt", "--report", "r3.json"]);
    run("diff", &["ckpt", "diff", "m2.ckpt", "m2.ckpt"]);

    run("single", &["baseline", "--method", "retrain", "--data", "tr.lgem", "--seed", "3", "--out", "single.ckpt"]);
    run("retrain", &["baseline", "--method", "retrain", "--data", "tr.lgem", "--ckpt", "single.ckpt", "--ids", "ids.txt", "--seed", "3", "--out", "retrain.ckpt"]);
    run("tune", &["baseline", "--method", "tune", "--data", "tr.lgem", "--ckpt", "single.ckpt", "--ids", "ids.txt", "--seed", "3", "--out", "tune.ckpt"]);
    run("ngrad", &["baseline", "--method", "ngrad", "--data", "tr.lgem", "--ckpt", "single.ckpt", "--ids", "ids.txt", "--seed", "3", "--out", "ngrad.ckpt"]);
    run("sisa", &["baseline", "--method", "fixsisa", "--data", "tr.lgem", "--shards", "4", "--seed", "3", "--out", "sisa.ckpt"]);
    run("sisa-unlearn", &["baseline", "--method", "fixsisa", "--data", "tr.lgem", "--ckpt", "sisa.ckpt", "--ids", "ids.txt", "--seed", "3", "--out", "sisa2.ckpt"]);

    run("bench-run", &["bench", "run", "--data", "tr.lgem", "--test", "te.lgem", "--task", "random:3", "--n", "20", "--k", "3", "--shards", "4", "--epochs", "5", "--seed", "5", "--out", "bench.csv"]);
    run("bench-unclass", &["bench", "run", "--data", "d.lgem", "--task", "unclass", "--n", "10", "--k", "2", "--shards", "3", "--epochs", "3", "--seed", "5", "--out", "unclass.csv"]);
    run("sweep", &["bench", "sweep", "--data", "tr.lgem", "--test", "te.lgem", "--fix", "n", "--value", "20", "--grid", "1,3", "--deletions", "2", "--epochs", "5", "--seed", "5", "--out", "sweep.csv"]);
    run("cost", &["bench", "cost", "--dim", "512", "--classes", "10", "--n", "100", "--k", "10", "--shards", "10", "--samples", "50000", "--out", "cost.json"]);

    let mut outputs = stdout;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let bytes = fs::read(&path).unwrap();
        let bytes = if name.ends_with(".json") && name.starts_with('r') {
            strip_report_timing(&bytes)
        } else if matches!(name.as_str(), "bench.csv" | "unclass.csv" | "sweep.csv") {
            strip_csv_timing(&bytes)
        } else {
            bytes
        };
        outputs.insert(name, bytes);
    }
    outputs
}
