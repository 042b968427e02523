//! Experiment configuration, validation and hashing.

use std::path::Path;

use dreamdiff::denoiser::TrainConfig;
use dreamdiff::diffusion::{build_schedule, NoiseSchedule, SamplerConfig, StridedVariance};
use dreamdiff::dreamvc::{GridParams, VcModelConfig};
use dreamdiff::dreamvg::VgModelConfig;
use dreamdiff::guidance::GuidanceParams;
use dreamdiff::rng::derive_seed;
use dreamdiff::voicedb::{ConsensusThresholds, SynthParams};
use dreamdiff::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "DREAMDIFF_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub strided_variance: StridedVariance,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            strided_variance: StridedVariance::Forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub cond_dropout_p: f64,
    /// Probability of pairing a training sample with its full descriptor.
    pub full_prompt_p: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 32,
            lr: 2e-3,
            lr_floor: 0.05,
            cond_dropout_p: 0.1,
            full_prompt_p: 0.5,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            cond_dropout_p: self.cond_dropout_p,
            lr_floor: self.lr_floor,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VgSection {
    pub model: VgModelConfig,
    pub train: TrainSection,
    pub inference_steps: usize,
}

impl Default for VgSection {
    fn default() -> Self {
        Self {
            model: VgModelConfig::default(),
            train: TrainSection::default(),
            inference_steps: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VcSection {
    pub grid: GridParams,
    pub model: VcModelConfig,
    pub train: TrainSection,
    pub inference_steps: usize,
}

impl Default for VcSection {
    fn default() -> Self {
        Self {
            grid: GridParams::default(),
            model: VcModelConfig::default(),
            train: TrainSection {
                steps: 2500,
                batch_size: 16,
                ..TrainSection::default()
            },
            inference_steps: 50,
        }
    }
}

/// Sizes of the evaluation suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub vg_target: usize,
    pub vg_samples: usize,
    pub vc_contents: usize,
    pub plugin_trials: usize,
    pub oracle_chains: usize,
    pub identity_draws: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            vg_target: 3,
            vg_samples: 500,
            vc_contents: 10,
            plugin_trials: 10,
            oracle_chains: 10_000,
            identity_draws: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub schedule: ScheduleSection,
    pub guidance: GuidanceParams,
    pub consensus: ConsensusThresholds,
    pub db: SynthParams,
    pub vg: VgSection,
    pub vc: VcSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240501,
            schedule: ScheduleSection::default(),
            guidance: GuidanceParams::default(),
            consensus: ConsensusThresholds::default(),
            db: SynthParams::default(),
            vg: VgSection::default(),
            vc: VcSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Dotted paths of keys in `given` that `known` does not have.
fn unknown_keys(given: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(g), Value::Object(k)) = (given, known) {
        for (key, v) in g {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match k.get(key) {
                Some(kv) => unknown_keys(v, kv, &path, out),
                None => out.push(format!("{path}: unknown key")),
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let known = serde_json::to_value(Self::default())?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Validation(unknown));
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Validation(vec![e.to_string()]))?;
        Ok(cfg)
    }

    /// Reads, applies the seed override from the environment, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults with the environment seed override, validated.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => {
                let mut cfg = Self::default();
                cfg.apply_env()?;
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Validation(vec![format!("{SEED_ENV}: {raw:?} is not a 64-bit seed")]))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let s = &self.schedule;
        if let Err(e) = build_schedule(s.steps, s.beta_start, s.beta_end) {
            bad.push(format!("schedule: {e}"));
        }
        if let Err(e) = self.guidance.validate() {
            bad.push(format!("guidance: {e}"));
        }
        for (name, steps) in [("vg.inference_steps", self.vg.inference_steps), ("vc.inference_steps", self.vc.inference_steps)] {
            if steps == 0 || steps > s.steps {
                bad.push(format!("{name}: must lie in 1..={}", s.steps));
            }
        }
        for (name, train) in [("vg.train", &self.vg.train), ("vc.train", &self.vc.train)] {
            if let Err(Error::Validation(errs)) = train.to_train_config(0).validate() {
                bad.extend(errs.into_iter().map(|e| e.replacen("train.", &format!("{name}."), 1)));
            }
            if !(0.0..=1.0).contains(&train.full_prompt_p) {
                bad.push(format!("{name}.full_prompt_p: must lie in [0, 1]"));
            }
            if self.guidance.needs_negative() && train.cond_dropout_p <= 0.0 {
                bad.push(format!(
                    "{name}.cond_dropout_p: guidance.w = {} needs a positive dropout rate to train the negative condition",
                    self.guidance.w
                ));
            }
        }
        let c = &self.consensus;
        if !(0.0 < c.moderate && c.moderate <= c.unanimity && c.unanimity <= 1.0) {
            bad.push("consensus: thresholds must satisfy 0 < moderate <= unanimity <= 1".into());
        }
        if self.db.n_profiles < 2 || self.db.emb_dim < 2 {
            bad.push("db: n_profiles and emb_dim must be at least 2".into());
        }
        if self.db.samples_per_profile == 0 {
            bad.push("db.samples_per_profile: must be positive".into());
        }
        if self.db.prompt_cap == 0 {
            bad.push("db.prompt_cap: must be positive".into());
        }
        if self.vc.grid.n_voices > self.db.n_profiles {
            bad.push(format!(
                "vc.grid.n_voices: {} voices need as many db profiles, db.n_profiles is {}",
                self.vc.grid.n_voices, self.db.n_profiles
            ));
        }
        if let Err(Error::Validation(errs)) = self.vc.grid.validate() {
            bad.extend(errs);
        }
        if !(self.vg.model.latent_scale > 0.0) {
            bad.push("vg.model.latent_scale: must be positive".into());
        }
        if self.eval.vg_target >= self.db.n_profiles {
            bad.push("eval.vg_target: must name a db profile".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        build_schedule(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)
    }

    pub fn sub_seed(&self, name: &str) -> u64 {
        derive_seed(self.seed, name, 0)
    }

    pub fn vg_sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            strided_variance: self.schedule.strided_variance,
            ..SamplerConfig::new(self.vg.inference_steps, seed)
        }
    }

    /// VC sampling clips the `x_0` estimate to the grid's value range.
    pub fn vc_sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            strided_variance: self.schedule.strided_variance,
            ..SamplerConfig::new(self.vc.inference_steps, seed).with_clip(-1.0, 1.0)
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the canonical serialization: object keys sorted, no whitespace.
pub fn canonical_hash<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    canonical_hash(cfg)
}

pub fn schedule_hash(cfg: &ExperimentConfig) -> Result<String> {
    canonical_hash(&cfg.schedule)
}
