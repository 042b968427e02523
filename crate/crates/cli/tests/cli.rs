use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
  "vg": {"model": {"d_model": 16, "blocks": 1, "step_dim": 8}, "train": {"steps": 30, "batch_size": 4}, "inference_steps": 5},
  "vc": {"model": {"d_model": 8, "blocks": 1, "step_dim": 8, "content_dim": 4}, "train": {"steps": 20, "batch_size": 2}, "inference_steps": 5},
  "db": {"samples_per_profile": 8}
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dreamdiff"));
    c.env_remove("DREAMDIFF_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.json");
    std::fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn identities_suite_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let line = ok(dir.path(), &["eval", "--suite", "identities", "--out", "r.json"]);
    assert_eq!(line.lines().count(), 1);
    let r = json(dir.path().join("r.json"));
    assert_eq!(r["passed"], true);
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("r.timings.json").exists());
}

#[test]
fn bad_config_lists_offending_keys() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"vg": {"tran": {}}, "guidance": {"w": -1}}"#).unwrap();
    let out = run(dir.path(), &["synth-db", "--out", "db.json", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vg.tran"));

    std::fs::write(dir.path().join("bad.json"), r#"{"guidance": {"w": 3}, "vg": {"train": {"cond_dropout_p": 0}}}"#).unwrap();
    let out = run(dir.path(), &["synth-db", "--out", "db.json", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vg.train.cond_dropout_p"));
    assert!(!dir.path().join("db.json").exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["aggregate-db", "--in", "nope.csv", "--out", "db.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-db", "--out", "a.json"]);
    let out = bin().current_dir(dir.path()).env("DREAMDIFF_SEED", "77").args(["synth-db", "--out", "b.json"]).output().unwrap();
    assert!(out.status.success());
    let (a, b) = (json(dir.path().join("a.json")), json(dir.path().join("b.json")));
    assert_eq!(b["seed"], 77);
    assert_ne!(a["config_hash"], b["config_hash"]);
    assert_ne!(a["db"], b["db"]);
}

#[test]
fn annotation_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/annotations.csv");
    let line = ok(dir.path(), &["aggregate-db", "--in", fixture.to_str().unwrap(), "--out", "db.json"]);
    assert!(line.contains("2080 records, 20 speakers"), "{line}");
    let db = json(dir.path().join("db.json"));
    let spk02 = &db["speakers"][1];
    assert_eq!(spk02["speaker_id"], "spk02");
    assert_eq!(spk02["flags"], serde_json::json!(["storytelling"]));
    assert_eq!(spk02["prompts"].as_array().unwrap().len(), 0);

    ok(dir.path(), &["gen-prompts", "--db", "db.json", "--cap", "50", "--seed", "3"]);
    let db = json(dir.path().join("db.json"));
    assert_eq!(db["speakers"][0]["prompts"].as_array().unwrap().len(), 15);
    assert_eq!(db["speakers"][1]["prompts"].as_array().unwrap().len(), 50);
}

#[test]
fn train_sample_convert_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(d, &["train-vg", "--config", "small.json", "--out", "vg.dvck"]);
    let manifest = json(d.join("vg.dvck.json"));
    assert_eq!(manifest["kind"], "vg");
    assert_eq!(manifest["loss_history"].as_array().unwrap().len(), 30);

    ok(d, &["sample", "--model", "vg.dvck", "--prompt", "a male voice", "--n", "3", "--seed", "4", "--out", "s.json"]);
    let s = json(d.join("s.json"));
    assert_eq!(s["embeddings"].as_array().unwrap().len(), 3);
    assert_eq!(s["nearest_profile"].as_array().unwrap().len(), 3);
    let out = run(d, &["sample", "--model", "vg.dvck", "--prompt", "a purple voice", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(1));

    ok(d, &["train-vc", "--mode", "dreamvc", "--config", "small.json", "--out", "dvc.dvck"]);
    ok(d, &["train-vc", "--mode", "rediffvc", "--config", "small.json", "--out", "rvc.dvck"]);
    ok(d, &["convert", "--model", "dvc.dvck", "--content", "0,1,2,3,4,5,6,7", "--voice", "1", "--prompt", "a female voice", "--out", "g1.json"]);
    let g1 = json(d.join("g1.json"));
    assert_eq!(g1["grid"].as_array().unwrap().len(), 32);
    assert_eq!(g1["grid"][0].as_array().unwrap().len(), 16);

    let src = serde_json::json!({"content": g1["content"], "voice": null, "grid": g1["grid"]});
    std::fs::write(d.join("src.json"), src.to_string()).unwrap();
    ok(d, &["convert", "--model", "rvc.dvck", "--vg", "vg.dvck", "--source", "src.json", "--prompt", "a male voice", "--out", "g2.json"]);
    assert!(json(d.join("g2.json"))["sampled_embedding"].is_array());
    ok(d, &["convert", "--model", "rvc.dvck", "--source", "src.json", "--target-profile", "2", "--out", "g3.json"]);
    let out = run(d, &["convert", "--model", "dvc.dvck", "--source", "src.json", "--target-profile", "2", "--out", "g4.json"]);
    assert_eq!(out.status.code(), Some(1));

    ok(d, &["eval", "--suite", "schedule", "--config", "small.json", "--out", "a.json"]);
    ok(d, &["eval", "--suite", "db", "--out", "b.json"]);
    let table = ok(d, &["report", "--in", "a.json", "b.json"]);
    assert!(table.contains("schedule_alpha_bar_final"));
    std::fs::write(d.join("short.json"), r#"{"schedule": {"steps": 200}, "vg": {"inference_steps": 50}, "vc": {"inference_steps": 50}}"#).unwrap();
    ok(d, &["eval", "--suite", "schedule", "--config", "short.json", "--out", "c.json"]);
    let out = run(d, &["report", "--in", "a.json", "c.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schedule hash"));
}

#[test]
fn guided_sampling_of_a_dropout_free_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg: Value = serde_json::from_str(SMALL).unwrap();
    cfg["guidance"] = serde_json::json!({"w": 1.0, "phi": 0.0});
    cfg["vg"]["train"]["cond_dropout_p"] = 0.0.into();
    std::fs::write(d.join("nodrop.json"), cfg.to_string()).unwrap();
    ok(d, &["train-vg", "--config", "nodrop.json", "--out", "vg.dvck"]);
    ok(d, &["sample", "--model", "vg.dvck", "--prompt", "a male voice", "--out", "s.json"]);
    std::fs::remove_file(d.join("s.json")).unwrap();
    let out = run(d, &["sample", "--model", "vg.dvck", "--prompt", "a male voice", "--w", "3", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid configuration"));
    assert!(!d.join("s.json").exists());
}

#[test]
fn damaged_checkpoints_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(d, &["train-vg", "--config", "small.json", "--out", "vg.dvck"]);
    let bytes = std::fs::read(d.join("vg.dvck")).unwrap();
    std::fs::write(d.join("vg.dvck"), &bytes[..bytes.len() / 2]).unwrap();
    let out = run(d, &["sample", "--model", "vg.dvck", "--prompt", "a male voice", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint format error"));
}
