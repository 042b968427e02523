//! Evaluation suites shared by `eval` and the acceptance tests.

use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use dreamdiff::denoiser::{Condition, ConditioningMode, Denoiser, TrainExample, VelocityLoss};
use dreamdiff::diffusion::{forward_marginal, sample, v_target, x0_from_v, GaussianOracle, NoiseSchedule, VelocityModel};
use dreamdiff::dreamvc::{
    evaluation_contents, plugin_convert, symbol_accuracy, DreamVc, PluginSettings, ToyDomain, VcDataset, VcMode, VoiceClassifier,
};
use dreamdiff::dreamvg::{evaluate_prompt, label_entropy, DreamVg};
use dreamdiff::guidance::{cfg_combine, cfg_rescale, guide, guided_velocity, std_dev, GuidanceParams};
use dreamdiff::nn::finite_diff_check;
use dreamdiff::rng::{self, derive_seed, normal_vec};
use dreamdiff::voicedb::{
    aggregate, generate_prompt_set, parse_annotations, synth_speaker_db, KeywordSchema, SpeakerDb, SpeakerKeywords, Tokenizer,
};
use dreamdiff::{Error, Result};
use rand::Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::report::SuiteOutcome;

/// Annotation fixture: 8 annotators rating 20 speakers.
pub const FIXTURE_CSV: &str = include_str!("../fixtures/annotations.csv");

pub const SUITES: &[&str] = &[
    "identities",
    "schedule",
    "cfg",
    "algebra",
    "oracle",
    "gradcheck",
    "db",
    "vg",
    "vc",
    "plugin",
    "all",
];

pub fn synth_db(cfg: &ExperimentConfig) -> Result<SpeakerDb> {
    synth_speaker_db(&KeywordSchema::default(), &cfg.db, cfg.sub_seed("db"))
}

pub fn toy_domain(cfg: &ExperimentConfig) -> Result<ToyDomain> {
    ToyDomain::new(cfg.vc.grid, cfg.sub_seed("vc/domain"))
}

pub fn train_vg(cfg: &ExperimentConfig, db: &SpeakerDb) -> Result<(DreamVg<f32>, Vec<f64>)> {
    let sched = cfg.schedule()?;
    let tok = Tokenizer::new(&KeywordSchema::default());
    let mut model = DreamVg::new(tok, db.emb_dim, &cfg.vg.model, cfg.sub_seed("vg/init"))?;
    let tc = cfg.vg.train.to_train_config(cfg.sub_seed("vg/train"));
    let history = model.train(db, &sched, &tc, cfg.vg.train.full_prompt_p)?;
    Ok((model, history))
}

pub fn train_vc(cfg: &ExperimentConfig, db: &SpeakerDb, domain: &ToyDomain, mode: VcMode) -> Result<(DreamVc<f32>, Vec<f64>)> {
    let sched = cfg.schedule()?;
    let tok = Tokenizer::new(&KeywordSchema::default());
    let name = match mode {
        VcMode::DreamVc => "dreamvc",
        VcMode::ReDiffVc => "rediffvc",
    };
    let mut model = DreamVc::new(mode, cfg.vc.grid, &cfg.vc.model, Some(tok), db.emb_dim, cfg.sub_seed(&format!("{name}/init")))?;
    let data = VcDataset::from_db(domain.clone(), db, mode)?;
    let tc = cfg.vc.train.to_train_config(cfg.sub_seed(&format!("{name}/train")));
    let history = model.train(&data, &sched, &tc, cfg.vc.train.full_prompt_p)?;
    Ok((model, history))
}

/// Config-derived data plus models trained on first use.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub sched: NoiseSchedule,
    pub schema: KeywordSchema,
    pub db: SpeakerDb,
    pub domain: ToyDomain,
    vg: OnceLock<DreamVg<f32>>,
    dreamvc: OnceLock<DreamVc<f32>>,
    rediffvc: OnceLock<DreamVc<f32>>,
    training: Mutex<BTreeMap<String, f64>>,
    init: Mutex<()>,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            sched: cfg.schedule()?,
            schema: KeywordSchema::default(),
            db: synth_db(&cfg)?,
            domain: toy_domain(&cfg)?,
            cfg,
            vg: OnceLock::new(),
            dreamvc: OnceLock::new(),
            rediffvc: OnceLock::new(),
            training: Mutex::new(BTreeMap::new()),
            init: Mutex::new(()),
        })
    }

    /// Uses a trained generation model instead of training one.
    pub fn with_vg(self, model: DreamVg<f32>) -> Self {
        let _ = self.vg.set(model);
        self
    }

    pub fn with_vc(self, model: DreamVc<f32>) -> Self {
        let _ = match model.mode {
            VcMode::DreamVc => self.dreamvc.set(model),
            VcMode::ReDiffVc => self.rediffvc.set(model),
        };
        self
    }

    fn lazy<'a, T>(&'a self, cell: &'a OnceLock<T>, name: &str, train: impl FnOnce() -> Result<T>) -> Result<&'a T> {
        if let Some(v) = cell.get() {
            return Ok(v);
        }
        let _guard = self.init.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(v) = cell.get() {
            return Ok(v);
        }
        let start = Instant::now();
        let v = train()?;
        self.training
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(format!("train/{name}"), start.elapsed().as_secs_f64());
        Ok(cell.get_or_init(|| v))
    }

    pub fn vg(&self) -> Result<&DreamVg<f32>> {
        self.lazy(&self.vg, "vg", || Ok(train_vg(&self.cfg, &self.db)?.0))
    }

    pub fn vc(&self, mode: VcMode) -> Result<&DreamVc<f32>> {
        match mode {
            VcMode::DreamVc => self.lazy(&self.dreamvc, "dreamvc", || Ok(train_vc(&self.cfg, &self.db, &self.domain, mode)?.0)),
            VcMode::ReDiffVc => self.lazy(&self.rediffvc, "rediffvc", || Ok(train_vc(&self.cfg, &self.db, &self.domain, mode)?.0)),
        }
    }

    /// Seconds spent training each model so far.
    pub fn training_seconds(&self) -> BTreeMap<String, f64> {
        self.training.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn with_training_time(&self, mut out: SuiteOutcome, models: &[&str]) -> SuiteOutcome {
        let t = self.training_seconds();
        for m in models {
            if let Some(s) = t.get(&format!("train/{m}")) {
                out.seconds.insert(format!("train/{m}"), *s);
            }
        }
        out
    }
}

/// Runs a named suite; `annotations` replaces the built-in fixture for `db`.
pub fn run_suite(ctx: &Context, name: &str, annotations: Option<&str>) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::default();
    let start = Instant::now();
    match name {
        "identities" => identities(ctx, &mut out)?,
        "schedule" => schedule(ctx, &mut out)?,
        "cfg" => cfg_properties(ctx, &mut out)?,
        "algebra" => {
            identities(ctx, &mut out)?;
            schedule(ctx, &mut out)?;
            cfg_properties(ctx, &mut out)?;
        }
        "oracle" => oracle(ctx, &mut out)?,
        "gradcheck" => gradcheck(ctx, &mut out)?,
        "db" => db_pipeline(ctx, annotations.unwrap_or(FIXTURE_CSV), &mut out)?,
        "vg" => vg(ctx, &mut out)?,
        "vc" => vc(ctx, &mut out)?,
        "plugin" => plugin(ctx, &mut out)?,
        "all" => {
            for s in SUITES.iter().filter(|s| !matches!(**s, "all" | "algebra")) {
                out.merge(run_suite(ctx, s, annotations)?);
            }
            return Ok(out);
        }
        other => {
            return Err(Error::Config(format!("unknown suite {other:?}, expected one of {}", SUITES.join(", "))));
        }
    }
    out.seconds.insert(format!("suite/{name}"), start.elapsed().as_secs_f64());
    Ok(ctx.with_training_time(out, &["vg", "dreamvc", "rediffvc"]))
}

const IDENTITY_DRAWS: usize = 1000;
const IDENTITY_DIM: usize = 16;

fn identities(ctx: &Context, out: &mut SuiteOutcome) -> Result<()> {
    let sched = &ctx.sched;
    let mut rng = rng::stream(ctx.cfg.seed, "suite/identities");
    let (mut err64, mut err32) = (0f64, 0f64);
    for _ in 0..IDENTITY_DRAWS {
        let t = rng.random_range(1..=sched.steps());
        let x0: Vec<f64> = normal_vec(&mut rng, IDENTITY_DIM);
        let eps: Vec<f64> = normal_vec(&mut rng, IDENTITY_DIM);
        let xt = forward_marginal(&x0, &eps, t, sched)?;
        let v = v_target(&x0, &eps, t, sched)?;
        let back = x0_from_v(&xt, &v, t, sched, None)?;
        err64 = back.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(err64, f64::max);

        let x0_32: Vec<f32> = x0.iter().map(|&v| v as f32).collect();
        let eps_32: Vec<f32> = eps.iter().map(|&v| v as f32).collect();
        let xt = forward_marginal(&x0_32, &eps_32, t, sched)?;
        let v = v_target(&x0_32, &eps_32, t, sched)?;
        let back = x0_from_v(&xt, &v, t, sched, None)?;
        err32 = back.iter().zip(&x0_32).map(|(a, b)| f64::from((a - b).abs())).fold(err32, f64::max);
    }
    out.metric("identity_max_err_f64", err64);
    out.metric("identity_max_err_f32", err32);
    out.check("round trip recovers x0 in f64 within 1e-12", err64 < 1e-12, format!("{err64:e}"));
    out.check("round trip recovers x0 in f32 within 1e-5", err32 < 1e-5, format!("{err32:e}"));
    Ok(())
}

fn schedule(ctx: &Context, out: &mut SuiteOutcome) -> Result<()> {
    let s = &ctx.sched;
    let steps = s.steps();
    let decreasing = (2..=steps).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1));
    let worst_excess = (1..=steps).map(|t| s.beta_tilde(t) - s.beta(t)).fold(f64::NEG_INFINITY, f64::max);
    out.metric("schedule_alpha_bar_final", s.alpha_bar(steps));
    out.metric("schedule_beta_tilde_1", s.beta_tilde(1));
    out.metric("schedule_max_beta_tilde_excess", worst_excess);
    out.check("alpha_bar strictly decreasing", decreasing, format!("{steps} steps"));
    out.check("beta_tilde_1 is zero", s.beta_tilde(1) == 0.0, format!("{:e}", s.beta_tilde(1)));
    out.check("beta_tilde_t <= beta_t", worst_excess <= 0.0, format!("max excess {worst_excess:e}"));
    Ok(())
}

/// Velocity model that records how often it is queried.
struct Counting<'a> {
    pos: &'a [f64],
    neg: &'a [f64],
    calls: std::cell::Cell<usize>,
}

impl VelocityModel<f64> for Counting<'_> {
    type Cond = bool;

    fn velocity(&self, _: &[f64], _: usize, positive: &bool) -> Result<Vec<f64>> {
        self.calls.set(self.calls.get() + 1);
        Ok(if *positive { self.pos } else { self.neg }.to_vec())
    }
}

const CFG_TRIALS: usize = 500;
const CFG_DIM: usize = 32;

fn cfg_properties(ctx: &Context, out: &mut SuiteOutcome) -> Result<()> {
    let mut rng = rng::stream(ctx.cfg.seed, "suite/cfg");
    let mut fails: BTreeMap<&str, usize> = BTreeMap::new();
    let mut count = |name: &'static str, ok: bool| *fails.entry(name).or_default() += usize::from(!ok);
    let mut worst_std = 0f64;
    let mut worst_linear = 0f64;
    for _ in 0..CFG_TRIALS {
        let pos: Vec<f64> = normal_vec(&mut rng, CFG_DIM);
        let neg: Vec<f64> = normal_vec::<f64, _>(&mut rng, CFG_DIM).iter().map(|v| v * 0.5 + 0.1).collect();
        let w = rng.random_range(0.0..8.0);
        let phi = rng.random_range(0.0..=1.0);

        count("w=1 gives v_pos", cfg_combine(&pos, &neg, 1.0)? == pos);
        let model = Counting {
            pos: &pos,
            neg: &neg,
            calls: std::cell::Cell::new(0),
        };
        let v = guided_velocity(&model, &pos, 1, &true, &false, &GuidanceParams { w: 1.0, phi })?;
        count("w=1 skips the negative branch", v == pos && model.calls.get() == 1);
        count("w=0 gives v_neg", cfg_combine(&pos, &neg, 0.0)? == neg);

        let v_cfg = cfg_combine(&pos, &neg, w)?;
        count("phi=0 passes v_cfg through", cfg_rescale(&v_cfg, &pos, 0.0)? == v_cfg);
        let matched = cfg_rescale(&v_cfg, &pos, 1.0)?;
        worst_std = worst_std.max((std_dev(&matched) - std_dev(&pos)).abs());

        let params = GuidanceParams { w, phi };
        let base = guide(pos.clone(), neg.clone(), &params)?.v_cfg_prime;
        for c in [0.25, 0.5, 2.0, 4.0] {
            let scaled = guide(pos.iter().map(|v| c * v).collect(), neg.iter().map(|v| c * v).collect(), &params)?.v_cfg_prime;
            count("positive power-of-two scaling commutes exactly", scaled.iter().zip(&base).all(|(s, b)| *s == c * b));
        }
        let c = rng.random_range(0.1..10.0);
        let scaled = guide(pos.iter().map(|v| c * v).collect(), neg.iter().map(|v| c * v).collect(), &params)?.v_cfg_prime;
        let rel = scaled
            .iter()
            .zip(&base)
            .map(|(s, b)| (s - c * b).abs() / (c * b).abs().max(1e-300))
            .fold(0.0, f64::max);
        worst_linear = worst_linear.max(rel);
    }
    for (name, n) in &fails {
        out.check(name, *n == 0, format!("{n} of {CFG_TRIALS} trials failed"));
    }
    out.metric("cfg_phi1_max_std_gap", worst_std);
    out.metric("cfg_scaling_max_rel_err", worst_linear);
    out.check("phi=1 matches std(v_pos) within 1e-6", worst_std < 1e-6, format!("{worst_std:e}"));
    out.check("arbitrary positive scaling commutes within 1e-12", worst_linear < 1e-12, format!("{worst_linear:e}"));
    Ok(())
}

pub const ORACLE_MEAN: f64 = 2.0;
pub const ORACLE_STD: f64 = 0.5;
pub const ORACLE_STEPS: usize = 50;

fn oracle(ctx: &Context, out: &mut SuiteOutcome) -> Result<()> {
    let oracle = GaussianOracle {
        mean: ORACLE_MEAN,
        std: ORACLE_STD,
        sched: &ctx.sched,
    };
    let sconf = dreamdiff::diffusion::SamplerConfig {
        strided_variance: ctx.cfg.schedule.strided_variance,
        ..dreamdiff::diffusion::SamplerConfig::new(ORACLE_STEPS, ctx.cfg.sub_seed("suite/oracle"))
    };
    // Coordinates are independent chains: the oracle acts per coordinate and w = 1 never couples them.
    let xs: Vec<f64> = sample(&oracle, &(), &(), &GuidanceParams::unguided(), &sconf, &ctx.sched, ctx.cfg.eval.oracle_chains)?;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    out.metric("oracle_mean", mean);
    out.metric("oracle_std", std);
    out.check("|mean - 2| < 0.05", (mean - ORACLE_MEAN).abs() < 0.05, format!("mean {mean:.4}"));
    out.check("|std / 0.5 - 1| < 0.05", (std / ORACLE_STD - 1.0).abs() < 0.05, format!("std {std:.4}"));
    Ok(())
}

fn random_batch(model: &Denoiser<f64>, seed: u64) -> Vec<TrainExample<f64>> {
    let config = *model.config();
    let mut rng = rng::seeded(seed);
    (0..3)
        .map(|_| {
            let cond = match config.mode {
                ConditioningMode::CrossAttention { vocab } => Condition::prompt((0..5).map(|_| rng.random_range(1..vocab)).collect()),
                ConditioningMode::SelfAttention { speaker_dim } => Condition::speaker(normal_vec(&mut rng, speaker_dim)),
            };
            let cond = match config.content {
                Some(c) => cond.with_content((0..c.length).map(|_| rng.random_range(0..c.alphabet)).collect()),
                None => cond,
            };
            TrainExample {
                xt: normal_vec(&mut rng, config.input_len()),
                t: rng.random_range(1..=1000),
                cond,
                target: normal_vec(&mut rng, config.input_len()),
            }
        })
        .collect()
}

pub const GRADCHECK_EPS: f64 = 1e-4;
pub const GRADCHECK_TOL: f64 = 1e-4;

fn gradcheck(ctx: &Context, out: &mut SuiteOutcome) -> Result<()> {
    let cfg = &ctx.cfg;
    let tok = Tokenizer::new(&ctx.schema);
    let seed = cfg.sub_seed("suite/gradcheck");
    let models: Vec<(&str, Denoiser<f64>)> = vec![
        ("vg", DreamVg::<f64>::new(tok.clone(), cfg.db.emb_dim, &cfg.vg.model, seed)?.denoiser),
        (
            "dreamvc",
            DreamVc::<f64>::new(VcMode::DreamVc, cfg.vc.grid, &cfg.vc.model, Some(tok.clone()), cfg.db.emb_dim, seed)?.denoiser,
        ),
        (
            "rediffvc",
            DreamVc::<f64>::new(VcMode::ReDiffVc, cfg.vc.grid, &cfg.vc.model, None, cfg.db.emb_dim, seed)?.denoiser,
        ),
    ];
    for (name, model) in &models {
        let batch = random_batch(model, seed);
        let objective = VelocityLoss {
            arch: &model.arch,
            batch: &batch,
        };
        let report = finite_diff_check(&model.params, &objective, GRADCHECK_EPS, 12, seed)?;
        let worst = report.per_tensor.iter().filter(|(_, e)| *e >= GRADCHECK_TOL).collect::<Vec<_>>();
        out.metric(&format!("gradcheck_{name}_max_rel_err"), report.max_rel_error);
        out.check(
            &format!("{name}: every tensor within relative error 1e-4"),
            worst.is_empty(),
            format!("{} tensors, failing: {worst:?}", report.per_tensor.len()),
        );
        out.trial(&format!("gradcheck_{name}"), &report.per_tensor)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SpeakerTrial {
    speaker_id: String,
    keywords: usize,
    flagged: usize,
    prompts: usize,
}

fn db_pipeline(ctx: &Context, csv: &str, out: &mut SuiteOutcome) -> Result<()> {
    let th = ctx.cfg.consensus;
    let cap = ctx.cfg.db.prompt_cap;
    let records = parse_annotations(csv.as_bytes(), &ctx.schema)?;
    let speakers: Vec<SpeakerKeywords> = aggregate(&records, &th)?;
    let (mut unanimous, mut moderate, mut dropped) = ([0usize; 2], [0usize; 2], [0usize; 2]);
    let mut count_bad = 0;
    let mut subset_bad = 0;
    let mut trials = Vec::new();
    let mut by_size: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for sk in &speakers {
        for (kw, &a) in &sk.agreement {
            let kept = sk.consensus.contains_key(kw);
            let flagged = sk.flags.contains(kw);
            let bucket = if a >= th.unanimity {
                &mut unanimous
            } else if a >= th.moderate {
                &mut moderate
            } else {
                &mut dropped
            };
            let ok = if a >= th.unanimity {
                kept && !flagged
            } else if a >= th.moderate {
                kept && flagged
            } else {
                !kept && !flagged
            };
            bucket[usize::from(ok)] += 1;
        }
        let k = sk.consensus.len();
        let prompts = if k == 0 {
            Vec::new()
        } else {
            generate_prompt_set(&ctx.schema, &sk.consensus, cap, prompt_seed(ctx.cfg.seed, &sk.speaker_id))?
        };
        let expected = ((1usize << k) - 1).min(cap);
        count_bad += usize::from(prompts.len() != expected);
        if (1usize << k) - 1 > cap {
            let has = |n: usize| prompts.iter().filter(|p| p.keywords.len() == n).count();
            subset_bad += usize::from(has(k) != 1 || has(k - 1) != k);
        }
        by_size.entry(k).or_default().push(prompts.len());
        trials.push(SpeakerTrial {
            speaker_id: sk.speaker_id.clone(),
            keywords: k,
            flagged: sk.flags.len(),
            prompts: prompts.len(),
        });
    }
    out.metric("db_speakers", speakers.len() as f64);
    out.metric("db_records", records.len() as f64);
    out.metric("db_unanimous_keywords", (unanimous[0] + unanimous[1]) as f64);
    out.metric("db_flagged_keywords", (moderate[0] + moderate[1]) as f64);
    out.metric("db_dropped_keywords", (dropped[0] + dropped[1]) as f64);
    for (name, c) in [("unanimous keywords integrate", unanimous), ("moderate keywords flag", moderate), ("sub-threshold keywords drop", dropped)] {
        out.check(name, c[1] > 0 && c[0] == 0, format!("{} correct, {} wrong", c[1], c[0]));
    }
    out.check("prompt count is min(2^k - 1, cap)", count_bad == 0, format!("{count_bad} speakers off"));
    out.check("capped sets keep the full set and every leave-one-out subset", subset_bad == 0, format!("{subset_bad} speakers off"));
    let four = by_size.get(&4).cloned().unwrap_or_default();
    out.check(
        "a 4-keyword speaker yields exactly 15 prompts",
        !four.is_empty() && four.iter().all(|&n| n == 15),
        format!("{four:?}"),
    );
    let six = by_size.get(&6).cloned().unwrap_or_default();
    out.check(
        &format!("a 6-keyword speaker yields exactly {} prompts under cap {cap}", 63.min(cap)),
        !six.is_empty() && six.iter().all(|&n| n == 63.min(cap)),
        format!("{six:?}"),
    );
    out.trial("db_speakers", &trials)
}

/// Seed of one speaker's prompt subsampling.
pub fn prompt_seed(root: u64, speaker_id: &str) -> u64 {
    derive_seed(root, &format!("prompts/{speaker_id}"), 0)
}

/// Guidance settings compared by the scaled experiments: the configured one, plain
/// conditional, and unconditional.
pub fn guidance_settings(cfg: &ExperimentConfig) -> [(&'static str, GuidanceParams); 3] {
    [
        ("guided", cfg.guidance),
        ("w1", GuidanceParams::unguided()),
        ("w0", GuidanceParams { w: 0.0, phi: 0.0 }),
    ]
}

fn vg(ctx: &Context, out: &mut SuiteOutcome) -> Result<()> {
    let model = ctx.vg()?;
    let cfg = &ctx.cfg;
    let target = cfg.eval.vg_target;
    let prompt = ctx.db.profiles[target].full_prompt().to_string();
    let sconf = cfg.vg_sampler(cfg.sub_seed("eval/vg"));
    let mut acc = BTreeMap::new();
    for (label, g) in guidance_settings(cfg) {
        let trials = out.timed("eval/vg", || evaluate_prompt(model, &ctx.db, target, &prompt, cfg.eval.vg_samples, &g, &sconf, &ctx.sched))?;
        out.metric(&format!("vg_accuracy_{label}"), trials.accuracy());
        out.metric(&format!("vg_mean_distance_{label}"), trials.mean_distance());
        out.metric(&format!("vg_label_entropy_{label}"), label_entropy(&trials.predicted));
        acc.insert(label, trials.accuracy());
        out.trial(&format!("vg_{label}"), &trials)?;
    }
    out.check("accuracy at the configured guidance >= 0.9", acc["guided"] >= 0.9, format!("{:.3}", acc["guided"]));
    out.check("guided accuracy >= unconditional accuracy", acc["guided"] >= acc["w0"], format!("{:.3} vs {:.3}", acc["guided"], acc["w0"]));
    out.check("guided accuracy >= w=1 accuracy", acc["guided"] >= acc["w1"], format!("{:.3} vs {:.3}", acc["guided"], acc["w1"]));
    Ok(())
}

#[derive(Serialize)]
struct ConversionTrial {
    content: Vec<usize>,
    source_voice: usize,
    target_voice: usize,
    predicted_voice: usize,
    symbol_accuracy: f64,
}

/// Source voice of trial `i` towards `target`, never the target itself.
fn source_voice(target: usize, i: usize, voices: usize) -> usize {
    (target + 1 + i % (voices - 1)) % voices
}

fn classifier(ctx: &Context) -> Result<VoiceClassifier> {
    VoiceClassifier::fit(&ctx.domain, &evaluation_contents(&ctx.domain, 16, ctx.cfg.sub_seed("eval/vc-classifier")))
}

fn vc(ctx: &Context, out: &mut SuiteOutcome) -> Result<()> {
    let model = ctx.vc(VcMode::DreamVc)?;
    let cfg = &ctx.cfg;
    let clf = classifier(ctx)?;
    let contents = evaluation_contents(&ctx.domain, cfg.eval.vc_contents, cfg.sub_seed("eval/vc"));
    let n = ctx.domain.voices.len();
    let clean_voice = contents
        .iter()
        .flat_map(|c| (0..n).map(move |k| (c, k)))
        .map(|(c, k)| Ok(usize::from(clf.classify(&ctx.domain.render(c, k)?.grid)? == k)))
        .sum::<Result<usize>>()?;
    out.metric("vc_clean_voice_accuracy", clean_voice as f64 / (contents.len() * n) as f64);
    let mut voice_acc = BTreeMap::new();
    let mut content_acc = BTreeMap::new();
    for (label, g) in guidance_settings(cfg) {
        let mut trials = Vec::new();
        out.timed("eval/vc", || {
            for (i, c) in contents.iter().enumerate() {
                for k in 0..n {
                    let src = ctx.domain.render(c, source_voice(k, i, n))?;
                    let sconf = cfg.vc_sampler(derive_seed(cfg.seed, "eval/vc-sample", (i * n + k) as u64));
                    let grid = model.convert_text_guided(&src, ctx.db.profiles[k].full_prompt(), &g, &sconf, &ctx.sched)?;
                    trials.push(ConversionTrial {
                        content: c.clone(),
                        source_voice: src.voice,
                        target_voice: k,
                        predicted_voice: clf.classify(&grid)?,
                        symbol_accuracy: symbol_accuracy(&ctx.domain.decode_content(&grid)?, c),
                    });
                }
            }
            Ok(())
        })?;
        let m = trials.len() as f64;
        let va = trials.iter().filter(|t| t.predicted_voice == t.target_voice).count() as f64 / m;
        let ca = trials.iter().map(|t| t.symbol_accuracy).sum::<f64>() / m;
        out.metric(&format!("vc_voice_accuracy_{label}"), va);
        out.metric(&format!("vc_content_accuracy_{label}"), ca);
        voice_acc.insert(label, va);
        content_acc.insert(label, ca);
        out.trial(&format!("vc_{label}"), &trials)?;
    }
    let mut own = Vec::new();
    out.timed("eval/vc-self", || {
        for (i, c) in contents.iter().enumerate() {
            for k in 0..n {
                let src = ctx.domain.render(c, k)?;
                let sconf = cfg.vc_sampler(derive_seed(cfg.seed, "eval/vc-self", (i * n + k) as u64));
                let grid = model.convert_text_guided(&src, ctx.db.profiles[k].full_prompt(), &cfg.guidance, &sconf, &ctx.sched)?;
                own.push(clf.classify(&grid)? == k);
            }
        }
        Ok(())
    })?;
    let self_acc = own.iter().filter(|&&h| h).count() as f64 / own.len() as f64;
    out.metric("vc_self_conversion_accuracy", self_acc);
    out.check("voice classification >= 0.8", voice_acc["guided"] >= 0.8, format!("{:.3}", voice_acc["guided"]));
    out.check("conversion to the source's own voice keeps it >= 0.8", self_acc >= 0.8, format!("{self_acc:.3}"));
    out.check("decoded content accuracy >= 0.9", content_acc["guided"] >= 0.9, format!("{:.3}", content_acc["guided"]));
    Ok(())
}

#[derive(Serialize)]
struct PluginTrial {
    target_voice: usize,
    sampled_profile: usize,
    first: ConversionTrial,
    second: ConversionTrial,
}

fn plugin(ctx: &Context, out: &mut SuiteOutcome) -> Result<()> {
    let vg = ctx.vg()?;
    let vc = ctx.vc(VcMode::ReDiffVc)?;
    let cfg = &ctx.cfg;
    let clf = classifier(ctx)?;
    let n = ctx.domain.voices.len();
    let contents = evaluation_contents(&ctx.domain, cfg.eval.vc_contents.max(2), cfg.sub_seed("eval/plugin"));

    let mut one_shot = Vec::new();
    out.timed("eval/one-shot", || {
        for (i, c) in contents.iter().enumerate() {
            for k in 0..n {
                let src = ctx.domain.render(c, source_voice(k, i, n))?;
                let sconf = cfg.vc_sampler(derive_seed(cfg.seed, "eval/one-shot", (i * n + k) as u64));
                let target = ctx.db.centroid(k).ok_or_else(|| Error::Domain(format!("profile {k} not in db")))?;
                let grid = vc.convert_one_shot(&src, target, &cfg.guidance, &sconf, &ctx.sched)?;
                one_shot.push((clf.classify(&grid)? == k, symbol_accuracy(&ctx.domain.decode_content(&grid)?, c)));
            }
        }
        Ok(())
    })?;
    let m = one_shot.len() as f64;
    out.metric("oneshot_voice_accuracy", one_shot.iter().filter(|t| t.0).count() as f64 / m);
    out.metric("oneshot_content_accuracy", one_shot.iter().map(|t| t.1).sum::<f64>() / m);

    let zero = dreamdiff::voicedb::SpeakerEmbedding::zeros(ctx.db.emb_dim);
    let unguided = GuidanceParams { w: 0.0, phi: 0.0 };
    let mut free = Vec::new();
    out.timed("eval/one-shot", || {
        for (i, c) in contents.iter().enumerate() {
            for k in 0..n {
                let src = ctx.domain.render(c, k)?;
                let sconf = cfg.vc_sampler(derive_seed(cfg.seed, "eval/zero-embedding", (i * n + k) as u64));
                free.push(clf.classify(&vc.convert_one_shot(&src, &zero, &unguided, &sconf, &ctx.sched)?)?);
            }
        }
        Ok(())
    })?;
    let entropy = label_entropy(&free);
    out.metric("oneshot_zero_embedding_entropy", entropy);
    out.check("zero embedding at w=0 gives varied voices", entropy > 0.0, format!("{entropy:.3} nats"));

    let mut trials = Vec::new();
    out.timed("eval/plugin", || {
        for j in 0..cfg.eval.plugin_trials {
            for k in 0..n {
                let idx = (j * n + k) as u64;
                let vg_sampler = cfg.vg_sampler(derive_seed(cfg.seed, "eval/plugin-vg", idx));
                let vc_sampler = cfg.vc_sampler(derive_seed(cfg.seed, "eval/plugin-vc", idx));
                let settings = PluginSettings {
                    vg_guidance: &cfg.guidance,
                    vc_guidance: &cfg.guidance,
                    vg_sampler: &vg_sampler,
                    vc_sampler: &vc_sampler,
                    sched: &ctx.sched,
                };
                let (c1, c2) = (&contents[j % contents.len()], &contents[(j + 1) % contents.len()]);
                let s1 = ctx.domain.render(c1, source_voice(k, j, n))?;
                let s2 = ctx.domain.render(c2, source_voice(k, j + 1, n))?;
                let (e, g1) = plugin_convert(vg, vc, &s1, ctx.db.profiles[k].full_prompt(), &settings)?;
                let g2 = vc.convert_one_shot(&s2, &e, &cfg.guidance, &vc_sampler, &ctx.sched)?;
                let conv = |src: &dreamdiff::dreamvc::ToyUtterance, grid: &[f64]| -> Result<ConversionTrial> {
                    Ok(ConversionTrial {
                        content: src.content.clone(),
                        source_voice: src.voice,
                        target_voice: k,
                        predicted_voice: clf.classify(grid)?,
                        symbol_accuracy: symbol_accuracy(&ctx.domain.decode_content(grid)?, &src.content),
                    })
                };
                trials.push(PluginTrial {
                    target_voice: k,
                    sampled_profile: ctx.db.classify(e.as_slice())?.0,
                    first: conv(&s1, &g1)?,
                    second: conv(&s2, &g2)?,
                });
            }
        }
        Ok(())
    })?;
    let m = trials.len() as f64;
    let acc = trials.iter().filter(|t| t.first.predicted_voice == t.target_voice).count() as f64 / m;
    let consistent = trials.iter().filter(|t| t.first.predicted_voice == t.second.predicted_voice).count() as f64 / m;
    let content = trials.iter().map(|t| t.first.symbol_accuracy + t.second.symbol_accuracy).sum::<f64>() / (2.0 * m);
    out.metric("plugin_voice_accuracy", acc);
    out.metric("plugin_reuse_consistency", consistent);
    out.metric("plugin_content_accuracy", content);
    out.check("prompt-to-conversion voice accuracy >= 0.7", acc >= 0.7, format!("{acc:.3}"));
    out.check(
        "a reused embedding classifies the same across two sources in >= 90% of trials",
        consistent >= 0.9,
        format!("{consistent:.3}"),
    );
    out.trial("plugin", &trials)
}
