//! Text-to-speaker-embedding generation: a cross-attention denoiser over speaker embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, ConditioningMode, Denoiser, DenoiserConfig, TrainConfig};
use crate::diffusion::{sample, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::guidance::GuidanceParams;
use crate::scalar::Scalar;
use crate::voicedb::{SpeakerDb, SpeakerEmbedding, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VgModelConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub step_dim: usize,
    /// Embeddings are multiplied by this factor before diffusion and divided after sampling.
    pub latent_scale: f64,
}

impl Default for VgModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            blocks: 2,
            step_dim: 32,
            latent_scale: 8.0,
        }
    }
}

/// A trained or freshly initialized generation model with its tokenizer.
#[derive(Debug, Clone)]
pub struct DreamVg<S> {
    pub denoiser: Denoiser<S>,
    pub tokenizer: Tokenizer,
    pub latent_scale: f64,
}

impl<S: Scalar> DreamVg<S> {
    pub fn new(tokenizer: Tokenizer, emb_dim: usize, mc: &VgModelConfig, seed: u64) -> Result<Self> {
        if !(mc.latent_scale > 0.0 && mc.latent_scale.is_finite()) {
            return Err(Error::Config(format!("latent_scale must be positive, got {}", mc.latent_scale)));
        }
        let config = DenoiserConfig {
            rows: 1,
            features: emb_dim,
            d_model: mc.d_model,
            blocks: mc.blocks,
            step_dim: mc.step_dim,
            mode: ConditioningMode::CrossAttention {
                vocab: tokenizer.table_size(),
            },
            content: None,
        };
        Ok(Self {
            denoiser: Denoiser::new(config, seed)?,
            tokenizer,
            latent_scale: mc.latent_scale,
        })
    }

    pub fn emb_dim(&self) -> usize {
        self.denoiser.config().features
    }

    pub fn condition(&self, prompt: &str) -> Result<Condition<S>> {
        Ok(Condition::prompt(self.tokenizer.encode(prompt)?))
    }

    /// Trains on `(embedding, prompt)` pairs: a uniformly drawn database embedding
    /// paired with its profile's full descriptor with probability `full_prompt_p`,
    /// otherwise with a uniformly drawn descriptor of that profile.
    pub fn train(&mut self, db: &SpeakerDb, sched: &NoiseSchedule, tc: &TrainConfig, full_prompt_p: f64) -> Result<Vec<f64>> {
        if db.embeddings.is_empty() {
            return Err(Error::Domain("speaker db has no embeddings to train on".into()));
        }
        if db.emb_dim != self.emb_dim() {
            return Err(Error::Shape(format!("db dim {} but model dim {}", db.emb_dim, self.emb_dim())));
        }
        if !(0.0..=1.0).contains(&full_prompt_p) {
            return Err(Error::Config(format!("full_prompt_p must lie in [0, 1], got {full_prompt_p}")));
        }
        let prompts: Vec<Vec<Vec<usize>>> = db
            .profiles
            .iter()
            .map(|p| {
                if p.prompts.is_empty() {
                    return Err(Error::Domain(format!("profile {} has no prompts", p.id)));
                }
                p.prompts.iter().map(|t| self.tokenizer.encode(t)).collect()
            })
            .collect::<Result<_>>()?;
        let scale = self.latent_scale;
        let embeddings = &db.embeddings;
        self.denoiser.train(sched, tc, |rng| {
            let (id, e) = &embeddings[rng.random_range(0..embeddings.len())];
            let list = &prompts[*id];
            let tokens = if rng.random::<f64>() < full_prompt_p {
                list[0].clone()
            } else {
                list[rng.random_range(0..list.len())].clone()
            };
            let x0 = e.as_slice().iter().map(|&v| S::c(v * scale)).collect();
            Ok((x0, Condition::prompt(tokens)))
        })
    }

    pub fn check_guidance(&self, guidance: &GuidanceParams) -> Result<()> {
        guidance.validate()?;
        if guidance.needs_negative() && !self.denoiser.trained_unconditional {
            return Err(Error::Validation(vec![format!(
                "guidance_scale {} needs a model trained with cond_dropout_p > 0",
                guidance.w
            )]));
        }
        Ok(())
    }

    /// One embedding for `prompt`; the unconditional token is the negative condition.
    pub fn sample(&self, prompt: &str, guidance: &GuidanceParams, sconf: &SamplerConfig, sched: &NoiseSchedule) -> Result<SpeakerEmbedding> {
        self.check_guidance(guidance)?;
        let pos = self.condition(prompt)?;
        self.sample_condition(&pos, guidance, sconf, sched)
    }

    pub fn sample_condition(
        &self,
        pos: &Condition<S>,
        guidance: &GuidanceParams,
        sconf: &SamplerConfig,
        sched: &NoiseSchedule,
    ) -> Result<SpeakerEmbedding> {
        let neg = self.denoiser.negative(pos);
        let x: Vec<S> = sample(&self.denoiser, pos, &neg, guidance, sconf, sched, self.emb_dim())?;
        Ok(SpeakerEmbedding(x.iter().map(|v| v.as_f64() / self.latent_scale).collect()))
    }
}

/// Outcome of sampling a prompt repeatedly and classifying each embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTrials {
    pub target: usize,
    pub predicted: Vec<usize>,
    /// Distance of each sample to the target centroid.
    pub distances: Vec<f64>,
}

impl PromptTrials {
    pub fn accuracy(&self) -> f64 {
        let hits = self.predicted.iter().filter(|&&p| p == self.target).count();
        hits as f64 / self.predicted.len().max(1) as f64
    }

    pub fn mean_distance(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len().max(1) as f64
    }
}

/// Samples `n` embeddings of `prompt`, trial `i` seeded by [`trial_seed`], and classifies them against `db`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_prompt<S: Scalar>(
    model: &DreamVg<S>,
    db: &SpeakerDb,
    target: usize,
    prompt: &str,
    n: usize,
    guidance: &GuidanceParams,
    sconf: &SamplerConfig,
    sched: &NoiseSchedule,
) -> Result<PromptTrials> {
    let centroid = db
        .centroid(target)
        .ok_or_else(|| Error::Domain(format!("profile {target} not in db")))?
        .clone();
    let mut predicted = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for i in 0..n {
        let e = model.sample(prompt, guidance, &sconf.with_seed(trial_seed(sconf.seed, i)), sched)?;
        predicted.push(db.classify(e.as_slice())?.0);
        distances.push(e.distance(centroid.as_slice()));
    }
    Ok(PromptTrials {
        target,
        predicted,
        distances,
    })
}

/// Sampler seed of trial `i` under a root seed.
pub fn trial_seed(root: u64, i: usize) -> u64 {
    crate::rng::derive_seed(root, "trial", i as u64)
}

/// Shannon entropy, in nats, of a label histogram.
pub fn label_entropy(labels: &[usize]) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let n = labels.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}
