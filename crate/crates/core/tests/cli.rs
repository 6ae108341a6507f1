mod common;

use std::fs;

use common::{lego, lego_ok, run_pipeline, write_ids};
use legonet::data::load_dataset;

#[test]
fn generate_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    lego_ok(dir.path(), &["data", "gen", "--classes", "4", "--dim", "16", "--per-class", "500", "--seed", "7", "--out", "d.lgem"]);
    let out = lego_ok(dir.path(), &["data", "validate", "d.lgem"]);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "ok: 2000 samples, dim 16, 4 classes\n"
    );
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    lego_ok(p, &["data", "gen", "--classes", "4", "--dim", "16", "--per-class", "500", "--seed", "7", "--out", "d.lgem"]);
    lego_ok(p, &["train", "--data", "d.lgem", "--n", "50", "--k", "3", "--seed", "1", "--out", "a.ckpt"]);
    lego_ok(p, &["train", "--data", "d.lgem", "--n", "50", "--k", "3", "--seed", "1", "--out", "b.ckpt"]);
    let out = lego_ok(p, &["ckpt", "diff", "a.ckpt", "b.ckpt"]);
    assert_eq!(out.stdout, b"equal\n");
    assert_eq!(fs::read(p.join("a.ckpt")).unwrap(), fs::read(p.join("b.ckpt")).unwrap());

    lego_ok(p, &["train", "--data", "d.lgem", "--n", "50", "--k", "3", "--seed", "2", "--out", "c.ckpt"]);
    let out = lego(p, &["ckpt", "diff", "a.ckpt", "c.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("differ: "));
}

#[test]
fn unlearned_checkpoint_equals_scratch_training() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    lego_ok(p, &["data", "gen", "--classes", "4", "--dim", "16", "--per-class", "500", "--seed", "7", "--out", "d.lgem"]);
    lego_ok(p, &["train", "--data", "d.lgem", "--n", "50", "--k", "3", "--seed", "1", "--out", "m.ckpt"]);
    write_ids(&p.join("one_id.txt"), &[1234]);
    lego_ok(p, &["unlearn", "--ckpt", "m.ckpt", "--data", "d.lgem", "--ids", "one_id.txt", "--out", "m2.ckpt"]);

    let full = load_dataset(&p.join("d.lgem")).unwrap();
    full.without(&[1234].into_iter().collect()).save(&p.join("reduced.lgem")).unwrap();
    lego_ok(p, &["train", "--data", "reduced.lgem", "--n", "50", "--k", "3", "--seed", "1", "--keys-from", "m.ckpt", "--out", "scratch.ckpt"]);
    let out = lego_ok(p, &["ckpt", "diff", "m2.ckpt", "scratch.ckpt"]);
    assert_eq!(out.stdout, b"equal\n");

    // Without the original keys the fit differs.
    lego_ok(p, &["train", "--data", "reduced.lgem", "--n", "50", "--k", "3", "--seed", "1", "--out", "fresh.ckpt"]);
    assert_eq!(lego(p, &["ckpt", "diff", "m2.ckpt", "fresh.ckpt"]).status.code(), Some(1));
}

#[test]
fn pipeline_is_reproducible_across_runs_and_threads() {
    let runs: Vec<_> = [1usize, 1, 4]
        .iter()
        .map(|&t| {
            let dir = tempfile::tempdir().unwrap();
            run_pipeline(dir.path(), t)
        })
        .collect();
    assert_eq!(runs[0].keys().collect::<Vec<_>>(), runs[1].keys().collect::<Vec<_>>());
    for (name, bytes) in &runs[0] {
        assert!(runs[1][name] == *bytes, "{name} differs between runs");
        assert!(runs[2][name] == *bytes, "{name} differs between 1 and 4 threads");
    }
}

#[test]
fn exit_codes_follow_error_families() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(lego(p, &["train", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(lego(p, &[]).status.code(), Some(2));
    assert_eq!(lego(p, &["data", "validate", "missing.lgem"]).status.code(), Some(4));

    fs::write(p.join("junk.lgem"), b"LGEM\x01\x00garbage").unwrap();
    assert_eq!(lego(p, &["data", "validate", "junk.lgem"]).status.code(), Some(3));

    lego_ok(p, &["data", "gen", "--classes", "2", "--dim", "3", "--per-class", "20", "--seed", "1", "--out", "d.lgem"]);
    assert_eq!(
        lego(p, &["train", "--data", "d.lgem", "--n", "5", "--k", "6", "--out", "m.ckpt"]).status.code(),
        Some(3)
    );
    lego_ok(p, &["train", "--data", "d.lgem", "--n", "5", "--k", "2", "--out", "m.ckpt"]);
    write_ids(&p.join("ids.txt"), &[999_999]);
    let out = lego(p, &["unlearn", "--ckpt", "m.ckpt", "--data", "d.lgem", "--ids", "ids.txt", "--out", "m2.ckpt"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!p.join("m2.ckpt").exists());

    let mut bytes = fs::read(p.join("m.ckpt")).unwrap();
    let last = bytes.len() - 40;
    bytes[last] ^= 0x10;
    fs::write(p.join("bad.ckpt"), bytes).unwrap();
    let out = lego(p, &["infer", "--ckpt", "bad.ckpt", "--data", "d.lgem"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
}

#[test]
fn logs_stay_off_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(common::LEGO)
        .args(["bench", "cost", "--dim", "8", "--classes", "3", "--n", "10", "--k", "2", "--shards", "5", "--samples", "100"])
        .env("LEGO_LOG", "trace")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["retrain_params_lego"], 48);
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [
        &["data", "gen"][..],
        &["data", "validate"],
        &["data", "split"],
        &["train"],
        &["infer"],
        &["unlearn"],
        &["baseline"],
        &["bench", "run"],
        &["bench", "sweep"],
        &["bench", "cost"],
        &["ckpt", "diff"],
    ] {
        let mut args = cmd.to_vec();
        args.push("--help");
        let out = lego_ok(dir.path(), &args);
        assert!(String::from_utf8(out.stdout).unwrap().contains("Usage: lego"));
    }
}
