//! Subcommand definitions and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dreamdiff::dreamvc::{plugin_convert, DreamVc, PluginSettings, ToyUtterance, VcMode, VoiceClassifier};
use dreamdiff::dreamvg::{trial_seed, DreamVg};
use dreamdiff::guidance::GuidanceParams;
use dreamdiff::voicedb::{aggregate, generate_prompts, load_annotations, KeywordSchema, SpeakerEmbedding};
use dreamdiff::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, AnnotatedDb, AnnotatedSpeaker, DbArtifact, Manifest};
use crate::config::{canonical_hash, config_hash, ExperimentConfig};
use crate::report::{self, write_report};
use crate::suites::{self, prompt_seed, Context, SUITES};

/// Exit status of `eval` when the suite ran but a check failed.
pub const EXIT_CHECKS_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dreamdiff", version, about = "Text-guided voice generation and conversion experiments at toy scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GuidanceArgs {
    /// Guidance scale w; defaults to the model's config.
    #[arg(long)]
    pub w: Option<f64>,
    /// Rescale strength phi; defaults to the model's config.
    #[arg(long)]
    pub phi: Option<f64>,
}

impl GuidanceArgs {
    fn resolve(&self, base: GuidanceParams) -> Result<GuidanceParams> {
        GuidanceParams::new(self.w.unwrap_or(base.w), self.phi.unwrap_or(base.phi))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate annotator CSV into per-speaker consensus keywords.
    AggregateDb {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Fill an aggregated database with descriptor prompts.
    GenPrompts {
        #[arg(long)]
        db: PathBuf,
        /// Prompts per speaker; defaults to db.prompt_cap.
        #[arg(long)]
        cap: Option<usize>,
        /// Subsampling seed; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output path; defaults to rewriting --db.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Generate the synthetic speaker-embedding database.
    SynthDb {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train the text-to-embedding generator.
    TrainVg {
        #[arg(long)]
        out: PathBuf,
        /// Synthetic database to train on; generated from the config when omitted.
        #[arg(long)]
        db: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train a conversion model.
    TrainVc {
        #[arg(long)]
        mode: VcMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        db: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Sample speaker embeddings for a prompt.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        guidance: GuidanceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a source grid to a target voice.
    Convert {
        #[arg(long)]
        model: PathBuf,
        /// Generation model for prompt-driven conversion with a rediffvc model.
        #[arg(long)]
        vg: Option<PathBuf>,
        /// Source utterance JSON.
        #[arg(long, conflicts_with_all = ["content", "voice"])]
        source: Option<PathBuf>,
        /// Comma-separated content symbols, rendered in --voice.
        #[arg(long, value_delimiter = ',', requires = "voice")]
        content: Option<Vec<usize>>,
        #[arg(long, requires = "content")]
        voice: Option<usize>,
        #[arg(long)]
        prompt: Option<String>,
        /// Convert towards this db profile's centroid with a rediffvc model.
        #[arg(long, conflicts_with = "prompt")]
        target_profile: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        guidance: GuidanceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation suite and write a metrics report.
    Eval {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
        suite: String,
        /// Ready generation model; its config is used.
        #[arg(long)]
        vg: Option<PathBuf>,
        /// Ready conversion models; their configs are used.
        #[arg(long)]
        vc: Vec<PathBuf>,
        /// Annotation CSV for the db suite instead of the built-in fixture.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Tabulate reports that share a schedule.
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs a subcommand and returns the summary line and exit status.
pub fn execute(command: Command) -> Result<(String, i32)> {
    match command {
        Command::AggregateDb { input, out, config } => aggregate_db(&input, &out, &config),
        Command::GenPrompts { db, cap, seed, out, config } => gen_prompts(&db, cap, seed, out.as_deref(), &config),
        Command::SynthDb { out, config } => synth_db(&out, &config),
        Command::TrainVg { out, db, config } => train_vg(&out, db.as_deref(), &config),
        Command::TrainVc { mode, out, db, config } => train_vc(mode, &out, db.as_deref(), &config),
        Command::Sample {
            model,
            prompt,
            n,
            seed,
            guidance,
            out,
        } => sample(&model, &prompt, n, seed, &guidance, &out),
        Command::Convert {
            model,
            vg,
            source,
            content,
            voice,
            prompt,
            target_profile,
            seed,
            guidance,
            out,
        } => {
            let source = match (source, content, voice) {
                (Some(p), _, _) => Source::File(p),
                (None, Some(c), Some(v)) => Source::Render(c, v),
                _ => return Err(Error::Config("convert needs --source or --content with --voice".into())),
            };
            let target = match (prompt, target_profile) {
                (Some(p), _) => Target::Prompt(p),
                (None, Some(k)) => Target::Profile(k),
                (None, None) => return Err(Error::Config("convert needs --prompt or --target-profile".into())),
            };
            convert(&model, vg.as_deref(), source, target, seed, &guidance, &out)
        }
        Command::Eval {
            suite,
            vg,
            vc,
            annotations,
            out,
            config,
        } => eval(&suite, vg.as_deref(), &vc, annotations.as_deref(), out, &config),
        Command::Report { inputs, out } => report_cmd(&inputs, out.as_deref()),
    }
}

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig> {
    ExperimentConfig::load_or_default(arg.config.as_deref())
}

fn aggregate_db(input: &Path, out: &Path, config: &ConfigArg) -> Result<(String, i32)> {
    let cfg = load_config(config)?;
    let schema = KeywordSchema::default();
    let records = load_annotations(input, &schema)?;
    let speakers: Vec<AnnotatedSpeaker> = aggregate(&records, &cfg.consensus)?
        .into_iter()
        .map(|keywords| AnnotatedSpeaker {
            keywords,
            prompts: Vec::new(),
        })
        .collect();
    let flagged: usize = speakers.iter().map(|s| s.keywords.flags.len()).sum();
    let db = AnnotatedDb {
        config_hash: config_hash(&cfg)?,
        speakers,
    };
    artifacts::write_json(out, &db)?;
    Ok((
        format!(
            "aggregate-db: {} records, {} speakers, {flagged} flagged keywords -> {}",
            records.len(),
            db.speakers.len(),
            out.display()
        ),
        0,
    ))
}

fn gen_prompts(path: &Path, cap: Option<usize>, seed: Option<u64>, out: Option<&Path>, config: &ConfigArg) -> Result<(String, i32)> {
    let cfg = load_config(config)?;
    let cap = cap.unwrap_or(cfg.db.prompt_cap);
    let seed = seed.unwrap_or(cfg.seed);
    let schema = KeywordSchema::default();
    let mut db: AnnotatedDb = artifacts::read_json(path)?;
    let mut total = 0;
    let mut empty = 0;
    for s in &mut db.speakers {
        s.prompts = if s.keywords.consensus.is_empty() {
            empty += 1;
            Vec::new()
        } else {
            generate_prompts(&schema, &s.keywords.consensus, cap, prompt_seed(seed, &s.keywords.speaker_id))?
        };
        total += s.prompts.len();
    }
    #[derive(Serialize)]
    struct Invocation<'a> {
        config: &'a ExperimentConfig,
        cap: usize,
        seed: u64,
    }
    db.config_hash = canonical_hash(&Invocation { config: &cfg, cap, seed })?;
    let out = out.unwrap_or(path);
    artifacts::write_json(out, &db)?;
    Ok((
        format!(
            "gen-prompts: {total} prompts for {} speakers ({empty} without consensus), cap {cap} -> {}",
            db.speakers.len(),
            out.display()
        ),
        0,
    ))
}

fn synth_db(out: &Path, config: &ConfigArg) -> Result<(String, i32)> {
    let cfg = load_config(config)?;
    let db = suites::synth_db(&cfg)?;
    let art = DbArtifact {
        config_hash: config_hash(&cfg)?,
        seed: cfg.seed,
        db,
    };
    artifacts::write_json(out, &art)?;
    Ok((
        format!(
            "synth-db: {} profiles, {} embeddings of dim {} -> {}",
            art.db.profiles.len(),
            art.db.embeddings.len(),
            art.db.emb_dim,
            out.display()
        ),
        0,
    ))
}

fn training_db(cfg: &ExperimentConfig, db: Option<&Path>) -> Result<(dreamdiff::voicedb::SpeakerDb, String)> {
    match db {
        Some(p) => {
            let art: DbArtifact = artifacts::read_json(p)?;
            let digest = art.digest()?;
            Ok((art.db, digest))
        }
        None => {
            let db = suites::synth_db(cfg)?;
            let digest = canonical_hash(&db)?;
            Ok((db, digest))
        }
    }
}

fn loss_summary(history: &[f64]) -> String {
    let (first, last) = dreamdiff::denoiser::loss_endpoints(history, (history.len() / 10).clamp(1, 100));
    format!("loss {first:.4} -> {last:.4}")
}

fn train_vg(out: &Path, db: Option<&Path>, config: &ConfigArg) -> Result<(String, i32)> {
    let cfg = load_config(config)?;
    let (db, digest) = training_db(&cfg, db)?;
    let (model, history) = suites::train_vg(&cfg, &db)?;
    let summary = loss_summary(&history);
    let m = artifacts::save_vg(out, &model, &cfg, digest, history)?;
    Ok((
        format!("train-vg: {} steps, {summary}, config {} -> {}", cfg.vg.train.steps, &m.config_hash[..12], out.display()),
        0,
    ))
}

fn train_vc(mode: VcMode, out: &Path, db: Option<&Path>, config: &ConfigArg) -> Result<(String, i32)> {
    let cfg = load_config(config)?;
    let (db, digest) = training_db(&cfg, db)?;
    let domain = suites::toy_domain(&cfg)?;
    let (model, history) = suites::train_vc(&cfg, &db, &domain, mode)?;
    let summary = loss_summary(&history);
    let m = artifacts::save_vc(out, &model, &cfg, digest, history)?;
    Ok((
        format!(
            "train-vc: {mode:?} {} steps, {summary}, config {} -> {}",
            cfg.vc.train.steps,
            &m.config_hash[..12],
            out.display()
        ),
        0,
    ))
}

/// The synthetic database a model was trained on, when it can be regenerated.
fn manifest_db(m: &Manifest) -> Option<dreamdiff::voicedb::SpeakerDb> {
    let db = suites::synth_db(&m.config).ok()?;
    (canonical_hash(&db).ok()? == m.db_digest).then_some(db)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleOutput {
    pub config_hash: String,
    pub checkpoint_sha256: String,
    pub prompt: String,
    pub guidance: GuidanceParams,
    pub inference_steps: usize,
    pub seeds: Vec<u64>,
    pub embeddings: Vec<SpeakerEmbedding>,
    /// Nearest profile of each embedding when the training db is known.
    pub nearest_profile: Option<Vec<usize>>,
}

fn sample(model: &Path, prompt: &str, n: usize, seed: Option<u64>, guidance: &GuidanceArgs, out: &Path) -> Result<(String, i32)> {
    let (vg, m) = artifacts::load_vg(model)?;
    let g = guidance.resolve(m.config.guidance)?;
    vg.check_guidance(&g)?;
    let sched = m.config.schedule()?;
    let root = seed.unwrap_or(m.config.sub_seed("sample"));
    let seeds: Vec<u64> = (0..n).map(|i| trial_seed(root, i)).collect();
    let embeddings = seeds
        .iter()
        .map(|&s| vg.sample(prompt, &g, &m.config.vg_sampler(s), &sched))
        .collect::<Result<Vec<_>>>()?;
    let nearest_profile = match manifest_db(&m) {
        Some(db) => Some(embeddings.iter().map(|e| Ok(db.classify(e.as_slice())?.0)).collect::<Result<Vec<_>>>()?),
        None => None,
    };
    let output = SampleOutput {
        config_hash: m.config_hash.clone(),
        checkpoint_sha256: m.checkpoint_sha256.clone(),
        prompt: prompt.to_string(),
        guidance: g,
        inference_steps: m.config.vg.inference_steps,
        seeds,
        embeddings,
        nearest_profile,
    };
    artifacts::write_json(out, &output)?;
    let nearest = match &output.nearest_profile {
        Some(p) => format!(", nearest profiles {p:?}"),
        None => String::new(),
    };
    Ok((format!("sample: {n} embeddings at w={} phi={}{nearest} -> {}", g.w, g.phi, out.display()), 0))
}

/// A toy utterance on disk: the grid as nested rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceFile {
    pub content: Vec<usize>,
    pub voice: Option<usize>,
    pub grid: Vec<Vec<f64>>,
}

impl UtteranceFile {
    pub fn to_utterance(&self) -> Result<ToyUtterance> {
        let frames = self.grid.len();
        let bins = self.grid.first().map_or(0, Vec::len);
        if frames == 0 || bins == 0 || self.grid.iter().any(|r| r.len() != bins) {
            return Err(Error::Shape("source grid must be a non-empty rectangle".into()));
        }
        Ok(ToyUtterance {
            content: self.content.clone(),
            voice: self.voice.unwrap_or(usize::MAX),
            frames,
            bins,
            grid: self.grid.concat(),
        })
    }
}

pub enum Source {
    File(PathBuf),
    Render(Vec<usize>, usize),
}

pub enum Target {
    Prompt(String),
    Profile(usize),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConvertOutput {
    pub config_hash: String,
    pub checkpoint_sha256: String,
    pub mode: VcMode,
    pub target: String,
    pub guidance: GuidanceParams,
    pub seed: u64,
    pub content: Vec<usize>,
    pub source_voice: Option<usize>,
    /// Embedding sampled by the generation model on the plugin path.
    pub sampled_embedding: Option<SpeakerEmbedding>,
    pub predicted_voice: usize,
    pub decoded_content: Vec<usize>,
    pub grid: Vec<Vec<f64>>,
}

fn convert(
    model: &Path,
    vg_path: Option<&Path>,
    source: Source,
    target: Target,
    seed: Option<u64>,
    guidance: &GuidanceArgs,
    out: &Path,
) -> Result<(String, i32)> {
    let (vc, m): (DreamVc<f32>, Manifest) = artifacts::load_vc(model)?;
    let cfg = &m.config;
    let domain = suites::toy_domain(cfg)?;
    let src = match source {
        Source::File(p) => artifacts::read_json::<UtteranceFile>(&p)?.to_utterance()?,
        Source::Render(content, voice) => domain.render(&content, voice)?,
    };
    let g = guidance.resolve(cfg.guidance)?;
    let sched = cfg.schedule()?;
    let seed = seed.unwrap_or(cfg.sub_seed("convert"));
    let sconf = cfg.vc_sampler(seed);
    let (grid, sampled, label) = match (&target, vc.mode, vg_path) {
        (Target::Prompt(p), VcMode::DreamVc, None) => (vc.convert_text_guided(&src, p, &g, &sconf, &sched)?, None, p.clone()),
        (Target::Prompt(p), VcMode::ReDiffVc, Some(vgp)) => {
            let (vg, vm): (DreamVg<f32>, Manifest) = artifacts::load_vg(vgp)?;
            let vg_guidance = guidance.resolve(vm.config.guidance)?;
            let vg_sampler = vm.config.vg_sampler(dreamdiff::rng::derive_seed(seed, "plugin/vg", 0));
            let settings = PluginSettings {
                vg_guidance: &vg_guidance,
                vc_guidance: &g,
                vg_sampler: &vg_sampler,
                vc_sampler: &sconf,
                sched: &sched,
            };
            let (e, grid) = plugin_convert(&vg, &vc, &src, p, &settings)?;
            (grid, Some(e), p.clone())
        }
        (Target::Profile(k), VcMode::ReDiffVc, None) => {
            let db = manifest_db(&m).ok_or_else(|| {
                Error::Config("the model was trained on a db file; its centroids cannot be regenerated from the config".into())
            })?;
            let e = db.centroid(*k).ok_or_else(|| Error::Domain(format!("profile {k} not in db")))?.clone();
            (vc.convert_one_shot(&src, &e, &g, &sconf, &sched)?, None, format!("profile {k}"))
        }
        (Target::Prompt(_), VcMode::ReDiffVc, None) => {
            return Err(Error::Config("a rediffvc model converts from a prompt only with --vg".into()));
        }
        (_, VcMode::DreamVc, _) => return Err(Error::Config("a dreamvc model takes --prompt and no --vg".into())),
        (Target::Profile(_), VcMode::ReDiffVc, Some(_)) => {
            return Err(Error::Config("--target-profile does not use --vg".into()));
        }
    };
    let clf = VoiceClassifier::fit(&domain, &dreamdiff::dreamvc::evaluation_contents(&domain, 16, cfg.sub_seed("eval/vc-classifier")))?;
    let output = ConvertOutput {
        config_hash: m.config_hash.clone(),
        checkpoint_sha256: m.checkpoint_sha256.clone(),
        mode: vc.mode,
        target: label,
        guidance: g,
        seed,
        content: src.content.clone(),
        source_voice: (src.voice != usize::MAX).then_some(src.voice),
        sampled_embedding: sampled,
        predicted_voice: clf.classify(&grid)?,
        decoded_content: domain.decode_content(&grid)?,
        grid: grid.chunks(vc.grid.bins).map(<[f64]>::to_vec).collect(),
    };
    artifacts::write_json(out, &output)?;
    Ok((
        format!(
            "convert: {:?} towards {:?}, classified as voice {}, content {:?} -> {}",
            vc.mode,
            output.target,
            output.predicted_voice,
            output.decoded_content,
            out.display()
        ),
        0,
    ))
}

fn eval(
    suite: &str,
    vg: Option<&Path>,
    vc: &[PathBuf],
    annotations: Option<&Path>,
    out: Option<PathBuf>,
    config: &ConfigArg,
) -> Result<(String, i32)> {
    let mut cfg: Option<ExperimentConfig> = match &config.config {
        Some(_) => Some(load_config(config)?),
        None => None,
    };
    let mut adopt = |m: &Manifest, path: &Path| -> Result<()> {
        match &cfg {
            Some(c) if config_hash(c)? != m.config_hash => Err(Error::Validation(vec![format!(
                "{}: trained under config {}, expected {}",
                path.display(),
                m.config_hash,
                config_hash(c)?
            )])),
            Some(_) => Ok(()),
            None => {
                cfg = Some(m.config.clone());
                Ok(())
            }
        }
    };
    let vg_model = match vg {
        Some(p) => {
            let (model, m) = artifacts::load_vg(p)?;
            adopt(&m, p)?;
            Some(model)
        }
        None => None,
    };
    let mut vc_models = Vec::new();
    for p in vc {
        let (model, m) = artifacts::load_vc(p)?;
        adopt(&m, p)?;
        vc_models.push(model);
    }
    let cfg = match cfg {
        Some(c) => c,
        None => load_config(config)?,
    };
    let mut ctx = Context::new(cfg)?;
    if let Some(m) = vg_model {
        ctx = ctx.with_vg(m);
    }
    for m in vc_models {
        ctx = ctx.with_vc(m);
    }
    let csv = match annotations {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let outcome = suites::run_suite(&ctx, suite, csv.as_deref())?;
    let failures: Vec<String> = outcome.failures().iter().map(|c| format!("{} ({})", c.name, c.detail)).collect();
    let (report, timings) = outcome.into_report(&ctx.cfg, suite)?;
    let out = out.unwrap_or_else(|| PathBuf::from(format!("report-{suite}.json")));
    write_report(&out, &report, &timings)?;
    let passed = report.checks.iter().filter(|c| c.passed).count();
    let mut line = format!(
        "eval {suite}: {passed}/{} checks passed, run {} -> {}",
        report.checks.len(),
        report.run_id,
        out.display()
    );
    if !failures.is_empty() {
        line.push_str(&format!("; failed: {}", failures.join("; ")));
    }
    Ok((line, if report.passed { 0 } else { EXIT_CHECKS_FAILED }))
}

fn report_cmd(inputs: &[PathBuf], out: Option<&Path>) -> Result<(String, i32)> {
    let reports = report::load_comparable(inputs)?;
    let table = report::render_table(&reports);
    match out {
        Some(p) => dreamdiff::nn::checkpoint::write_atomic(p, table.as_bytes())?,
        None => {
            let _ = std::io::Write::write_all(&mut std::io::stdout(), table.as_bytes());
        }
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    Ok((format!("report: {} reports, {failed} with failed checks", reports.len()), 0))
}
