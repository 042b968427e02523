//! The ten acceptance criteria, one test each. Every test writes a single
//! `PASS`/`FAIL` line to stderr, outside the test harness's capture.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use dreamdiff_cli::config::ExperimentConfig;
use dreamdiff_cli::report::SuiteOutcome;
use dreamdiff_cli::suites::{run_suite, Context};

fn ctx() -> &'static Context {
    static CTX: OnceLock<Context> = OnceLock::new();
    CTX.get_or_init(|| Context::new(ExperimentConfig::default()).expect("default config is valid"))
}

fn verdict(id: u32, title: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{tag} criterion {id}: {title} ({detail})");
    assert!(passed, "criterion {id} failed: {detail}");
}

fn summary(out: &SuiteOutcome) -> String {
    let failed: Vec<String> = out.failures().iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
    if failed.is_empty() {
        format!("{} checks", out.checks.len())
    } else {
        failed.join("; ")
    }
}

/// Runs a suite and judges it together with a wall-clock limit in seconds.
fn timed_suite(id: u32, title: &str, suite: &str, limit: f64) {
    let start = Instant::now();
    let out = run_suite(ctx(), suite, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{}, {secs:.3}s of {limit}s", summary(&out));
    verdict(id, title, out.passed() && secs < limit, &detail);
}

fn metric(out: &SuiteOutcome, name: &str) -> f64 {
    out.metrics[name]
}

#[test]
fn criterion_01_algebraic_identities() {
    timed_suite(1, "forward/velocity/inverse round trip", "identities", 1.0);
}

#[test]
fn criterion_02_schedule() {
    let cfg = &ctx().cfg.schedule;
    assert_eq!((cfg.steps, cfg.beta_start, cfg.beta_end), (1000, 1e-4, 0.02));
    timed_suite(2, "linear beta schedule invariants", "schedule", 1.0);
}

#[test]
fn criterion_03_cfg_properties() {
    timed_suite(3, "guidance combine and rescale properties", "cfg", 1.0);
}

#[test]
fn criterion_04_oracle_sampler() {
    timed_suite(4, "oracle sampler recovers N(2, 0.5^2)", "oracle", 30.0);
}

#[test]
fn criterion_05_gradient_checks() {
    timed_suite(5, "finite-difference gradient checks in f64", "gradcheck", 30.0);
}

#[test]
fn criterion_06_generation_experiment() {
    let out = run_suite(ctx(), "vg", None).unwrap();
    let train = out.seconds.get("train/vg").copied().unwrap_or(0.0);
    let detail = format!(
        "accuracy guided {:.3}, w=1 {:.3}, w=0 {:.3}; trained in {train:.1}s; {}",
        metric(&out, "vg_accuracy_guided"),
        metric(&out, "vg_accuracy_w1"),
        metric(&out, "vg_accuracy_w0"),
        summary(&out)
    );
    verdict(6, "prompt-to-embedding generation at w=3", out.passed() && train <= 600.0, &detail);
}

#[test]
fn criterion_07_conversion_experiment() {
    let out = run_suite(ctx(), "vc", None).unwrap();
    let train = out.seconds.get("train/dreamvc").copied().unwrap_or(0.0);
    let eval = out.seconds["eval/vc"] + out.seconds["eval/vc-self"];
    let detail = format!(
        "voice {:.3}, content {:.3}, self {:.3}; trained in {train:.1}s, evaluated in {eval:.1}s; {}",
        metric(&out, "vc_voice_accuracy_guided"),
        metric(&out, "vc_content_accuracy_guided"),
        metric(&out, "vc_self_conversion_accuracy"),
        summary(&out)
    );
    verdict(7, "text-guided conversion", out.passed() && train <= 900.0 && eval < 60.0, &detail);
}

#[test]
fn criterion_08_plugin_strategy() {
    let out = run_suite(ctx(), "plugin", None).unwrap();
    let detail = format!(
        "voice {:.3}, reuse consistency {:.3}, one-shot voice {:.3}; {}",
        metric(&out, "plugin_voice_accuracy"),
        metric(&out, "plugin_reuse_consistency"),
        metric(&out, "oneshot_voice_accuracy"),
        summary(&out)
    );
    verdict(8, "generation plugged into one-shot conversion", out.passed(), &detail);
}

#[test]
fn criterion_09_voice_db_pipeline() {
    timed_suite(9, "annotation consensus and prompt generation", "db", 1.0);
}

const SMALL: &str = r#"{
  "vg": {"model": {"d_model": 16, "blocks": 1, "step_dim": 8}, "train": {"steps": 40, "batch_size": 4}, "inference_steps": 5},
  "vc": {"model": {"d_model": 8, "blocks": 1, "step_dim": 8, "content_dim": 4}, "train": {"steps": 20, "batch_size": 2}, "inference_steps": 5},
  "db": {"samples_per_profile": 8},
  "eval": {"vg_samples": 20, "vc_contents": 2, "plugin_trials": 2}
}"#;

fn invoke(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_dreamdiff"))
        .env_remove("DREAMDIFF_SEED")
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    // Evaluation of an undertrained model may fail its checks; that still has to be reproducible.
    let code = out.status.code();
    assert!(
        code == Some(0) || (args[0] == "eval" && code == Some(3)),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn pipeline(dir: &Path) {
    std::fs::write(dir.join("small.json"), SMALL).unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/annotations.csv");
    let fixture = fixture.to_str().unwrap();
    let c = ["--config", "small.json"];
    let runs: Vec<Vec<&str>> = vec![
        vec!["aggregate-db", "--in", fixture, "--out", "annotated.json"],
        vec!["gen-prompts", "--db", "annotated.json", "--out", "prompts.json"],
        vec!["synth-db", "--out", "db.json"],
        vec!["train-vg", "--out", "vg.dvck"],
        vec!["train-vg", "--db", "db.json", "--out", "vg-db.dvck"],
        vec!["train-vc", "--mode", "dreamvc", "--out", "dvc.dvck"],
        vec!["train-vc", "--mode", "rediffvc", "--out", "rvc.dvck"],
    ];
    for mut args in runs {
        args.extend(c);
        invoke(dir, &args);
    }
    let prompt = "a young male voice";
    invoke(dir, &["sample", "--model", "vg.dvck", "--prompt", prompt, "--n", "4", "--seed", "9", "--out", "samples.json"]);
    invoke(dir, &["convert", "--model", "dvc.dvck", "--content", "0,1,2,3,4,5,6,7", "--voice", "2", "--prompt", prompt, "--seed", "5", "--out", "g1.json"]);
    invoke(dir, &["convert", "--model", "rvc.dvck", "--vg", "vg.dvck", "--content", "7,6,5,4,3,2,1,0", "--voice", "0", "--prompt", prompt, "--seed", "5", "--out", "g2.json"]);
    invoke(dir, &["convert", "--model", "rvc.dvck", "--content", "1,1,2,2,3,3,4,4", "--voice", "3", "--target-profile", "1", "--out", "g3.json"]);
    invoke(dir, &["eval", "--suite", "algebra", "--out", "algebra.json"]);
    invoke(dir, &["eval", "--suite", "db", "--config", "small.json", "--out", "db-report.json"]);
    invoke(dir, &["eval", "--suite", "vg", "--vg", "vg.dvck", "--out", "vg-report.json"]);
    invoke(dir, &["eval", "--suite", "plugin", "--vg", "vg.dvck", "--vc", "rvc.dvck", "--out", "plugin-report.json"]);
    invoke(dir, &["report", "--in", "vg-report.json", "plugin-report.json", "--out", "table.tsv"]);
}

#[test]
fn criterion_10_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| !n.ends_with(".timings.json"))
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(a.path().join(n)).unwrap() != std::fs::read(b.path().join(n)).unwrap_or_default())
        .collect();
    let detail = format!("{} artifacts compared, differing: {differing:?}", names.len());
    verdict(10, "identical config and seed reproduce every artifact bit for bit", names.len() >= 20 && differing.is_empty(), &detail);
}
