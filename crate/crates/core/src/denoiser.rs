//! Conditional velocity network shared by the generation and conversion models.
//!
//! Inputs are `rows × features` grids (a single row for speaker embeddings). A step
//! MLP turns `t` into a conditioning vector that drives FiLM in every block, and the
//! block's attention site either cross-attends to prompt tokens or self-attends over
//! rows with a projected speaker embedding added to the step embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, VelocityModel};
use crate::error::{Error, Result};
use crate::nn::layers::{film_rows, film_rows_backward, silu, silu_backward, AttentionCache};
use crate::nn::{
    fit_step, sinusoidal_embed, Adam, AdamConfig, Attention, Dense, Film, Grads, Init, Matrix, Objective, ParamId,
    ParamStore,
};
use crate::rng::{self, StreamRng};
use crate::scalar::Scalar;
use crate::voicedb::UNCONDITIONAL_TOKEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ConditioningMode {
    /// Cross-attention over a learned token table of `vocab` rows; row 0 is unconditional.
    CrossAttention { vocab: usize },
    /// Self-attention over rows; a speaker embedding is projected onto the step embedding.
    SelfAttention { speaker_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentSpec {
    pub alphabet: usize,
    pub length: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub rows: usize,
    pub features: usize,
    pub d_model: usize,
    pub blocks: usize,
    pub step_dim: usize,
    pub mode: ConditioningMode,
    pub content: Option<ContentSpec>,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.rows == 0 || self.features == 0 {
            bad.push("model input shape must be non-empty".to_string());
        }
        if self.d_model == 0 || self.blocks == 0 {
            bad.push("model.d_model and model.blocks must be positive".to_string());
        }
        if self.step_dim == 0 || !self.step_dim.is_multiple_of(2) {
            bad.push("model.step_dim must be even and positive".to_string());
        }
        match self.mode {
            ConditioningMode::CrossAttention { vocab } if vocab < 2 => {
                bad.push("token table needs the unconditional token and at least one word".to_string())
            }
            ConditioningMode::SelfAttention { speaker_dim: 0 } => bad.push("speaker_dim must be positive".to_string()),
            _ => {}
        }
        if let Some(c) = self.content {
            if c.alphabet == 0 || c.length == 0 || c.dim == 0 {
                bad.push("content alphabet, length and dim must be positive".to_string());
            } else if !self.rows.is_multiple_of(c.length) {
                bad.push(format!("frames {} must be a multiple of content length {}", self.rows, c.length));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn input_len(&self) -> usize {
        self.rows * self.features
    }
}

/// Conditioning for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition<S> {
    /// Prompt token ids, for cross-attention models.
    pub tokens: Vec<usize>,
    /// Speaker embedding, for self-attention models.
    pub speaker: Vec<S>,
    /// Content symbols, when the model carries a content table.
    pub content: Vec<usize>,
}

impl<S: Scalar> Condition<S> {
    pub fn prompt(tokens: Vec<usize>) -> Self {
        Self {
            tokens,
            speaker: Vec::new(),
            content: Vec::new(),
        }
    }

    pub fn speaker(speaker: Vec<S>) -> Self {
        Self {
            tokens: Vec::new(),
            speaker,
            content: Vec::new(),
        }
    }

    pub fn with_content(mut self, content: Vec<usize>) -> Self {
        self.content = content;
        self
    }

    /// The negative condition for this mode: the unconditional token or an all-zero speaker embedding.
    pub fn unconditional(&self, mode: ConditioningMode) -> Self {
        let mut out = self.clone();
        match mode {
            ConditioningMode::CrossAttention { .. } => out.tokens = vec![UNCONDITIONAL_TOKEN],
            ConditioningMode::SelfAttention { speaker_dim } => out.speaker = vec![S::zero(); speaker_dim],
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Block {
    dense_in: Dense,
    film: Film,
    attention: Attention,
    dense_out: Dense,
}

/// Parameter layout of a denoiser; shared by every scalar type.
#[derive(Debug, Clone)]
pub struct Architecture {
    config: DenoiserConfig,
    step_in: Dense,
    step_out: Dense,
    speaker: Option<Dense>,
    tokens: Option<ParamId>,
    content: Option<ParamId>,
    input: Dense,
    blocks: Vec<Block>,
    output: Dense,
}

struct BlockCache<S> {
    h: Matrix<S>,
    pre: Matrix<S>,
    act: Matrix<S>,
    gamma: Vec<S>,
    filmed: Matrix<S>,
    attn: AttentionCache<S>,
    mixed: Matrix<S>,
}

struct Cache<S> {
    sinus: Matrix<S>,
    step_pre: Matrix<S>,
    step_act: Matrix<S>,
    temb: Matrix<S>,
    cond: Matrix<S>,
    speaker: Option<Matrix<S>>,
    ctx: Option<Matrix<S>>,
    input: Matrix<S>,
    blocks: Vec<BlockCache<S>>,
    last: Matrix<S>,
}

impl Architecture {
    pub fn build<S: Scalar, R: Rng + ?Sized>(config: DenoiserConfig, store: &mut ParamStore<S>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let unit = Init::Normal { gain: 1.0 };
        let step_in = Dense::new(store, "step.in", config.step_dim, d, unit, rng);
        let step_out = Dense::new(store, "step.out", d, d, unit, rng);
        let (speaker, tokens) = match config.mode {
            ConditioningMode::SelfAttention { speaker_dim } => {
                (Some(Dense::new(store, "speaker", speaker_dim, d, unit, rng)), None)
            }
            ConditioningMode::CrossAttention { vocab } => {
                let table: Vec<S> = (0..vocab * d).map(|_| rng::normal::<S, _>(rng)).collect();
                (None, Some(store.add_matrix("tokens", Matrix::from_vec(vocab, d, table)?)))
            }
        };
        let content = match config.content {
            Some(c) => {
                let table: Vec<S> = (0..c.alphabet * c.dim).map(|_| rng::normal::<S, _>(rng)).collect();
                Some(store.add_matrix("content", Matrix::from_vec(c.alphabet, c.dim, table)?))
            }
            None => None,
        };
        let in_dim = config.features + config.content.map_or(0, |c| c.dim);
        let input = Dense::new(store, "input", in_dim, d, unit, rng);
        let blocks = (0..config.blocks)
            .map(|b| Block {
                dense_in: Dense::new(store, &format!("block{b}.dense_in"), d, d, unit, rng),
                film: Film::new(store, &format!("block{b}.film"), d, d, rng),
                attention: Attention::new(store, &format!("block{b}.attention"), d, d, rng),
                dense_out: Dense::new(store, &format!("block{b}.dense_out"), d, d, Init::Normal { gain: 0.5 }, rng),
            })
            .collect();
        let output = Dense::new(store, "output", d, config.features, Init::Normal { gain: 0.1 }, rng);
        Ok(Self {
            config,
            step_in,
            step_out,
            speaker,
            tokens,
            content,
            input,
            blocks,
            output,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    fn check_condition<S: Scalar>(&self, cond: &Condition<S>) -> Result<()> {
        match self.config.mode {
            ConditioningMode::CrossAttention { vocab } => {
                if cond.tokens.is_empty() {
                    return Err(Error::Domain("cross-attention model needs at least one prompt token".into()));
                }
                if let Some(&bad) = cond.tokens.iter().find(|&&t| t >= vocab) {
                    return Err(Error::Vocabulary(format!("token id {bad} outside table of {vocab}")));
                }
            }
            ConditioningMode::SelfAttention { speaker_dim } => {
                if cond.speaker.len() != speaker_dim {
                    return Err(Error::Shape(format!(
                        "speaker embedding has dim {}, model expects {speaker_dim}",
                        cond.speaker.len()
                    )));
                }
            }
        }
        match self.config.content {
            Some(c) => {
                if cond.content.len() != c.length {
                    return Err(Error::Shape(format!("content has {} symbols, model expects {}", cond.content.len(), c.length)));
                }
                if let Some(&bad) = cond.content.iter().find(|&&s| s >= c.alphabet) {
                    return Err(Error::Domain(format!("content symbol {bad} outside alphabet of {}", c.alphabet)));
                }
            }
            None if !cond.content.is_empty() => {
                return Err(Error::Config("model has no content conditioning".into()));
            }
            None => {}
        }
        Ok(())
    }

    /// Content embeddings repeated `rows / length` times each, in order.
    pub fn duplicated_content<S: Scalar>(&self, store: &ParamStore<S>, symbols: &[usize]) -> Option<Matrix<S>> {
        let (id, spec) = (self.content?, self.config.content?);
        let table = store.get(id);
        let copies = self.config.rows / spec.length;
        let mut m = Matrix::zeros(self.config.rows, spec.dim);
        for r in 0..self.config.rows {
            m.row_mut(r).copy_from_slice(table.row(symbols[r / copies]));
        }
        Some(m)
    }

    fn forward<S: Scalar>(&self, store: &ParamStore<S>, xt: &[S], t: usize, cond: &Condition<S>) -> Result<(Matrix<S>, Cache<S>)> {
        if xt.len() != self.config.input_len() {
            return Err(Error::Shape(format!("input has {} values, model expects {}", xt.len(), self.config.input_len())));
        }
        self.check_condition(cond)?;
        let sinus = Matrix::row_vector(sinusoidal_embed::<S>(t, self.config.step_dim)?);
        let step_pre = self.step_in.forward(store, &sinus);
        let step_act = silu(&step_pre);
        let mut temb = self.step_out.forward(store, &step_act);
        let speaker = match &self.speaker {
            Some(proj) => {
                let s = Matrix::row_vector(cond.speaker.clone());
                temb.add_assign(&proj.forward(store, &s));
                Some(s)
            }
            None => None,
        };
        let cond_vec = silu(&temb);
        let ctx = self.tokens.map(|id| {
            let table = store.get(id);
            let rows: Vec<Vec<S>> = cond.tokens.iter().map(|&t| table.row(t).to_vec()).collect();
            Matrix::from_rows(&rows).expect("token rows share a width")
        });
        let grid = Matrix::from_vec(self.config.rows, self.config.features, xt.to_vec())?;
        let input = match self.duplicated_content(store, &cond.content) {
            Some(c) => grid.hconcat(&c)?,
            None => grid,
        };
        let mut h = self.input.forward(store, &input);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let pre = b.dense_in.forward(store, &h);
            let act = silu(&pre);
            let (gamma, delta) = b.film.params(store, &cond_vec);
            let filmed = film_rows(&act, &gamma, &delta)?;
            let (attended, attn) = b.attention.forward(store, &filmed, ctx.as_ref().unwrap_or(&filmed))?;
            let mixed = filmed.add(&attended);
            let next = h.add(&b.dense_out.forward(store, &mixed));
            blocks.push(BlockCache {
                h: std::mem::replace(&mut h, next),
                pre,
                act,
                gamma,

                filmed,
                attn,
                mixed,
            });
        }
        let out = self.output.forward(store, &h);
        Ok((
            out,
            Cache {
                sinus,
                step_pre,
                step_act,
                temb,
                cond: cond_vec,
                speaker,
                ctx,
                input,
                blocks,
                last: h,
            },
        ))
    }

    fn backward<S: Scalar>(&self, store: &ParamStore<S>, grads: &mut Grads<S>, cond: &Condition<S>, cache: &Cache<S>, dout: &Matrix<S>) {
        let d = self.config.d_model;
        let mut dh = self.output.backward(store, grads, &cache.last, dout);
        let mut dcond = Matrix::zeros(1, d);
        let mut dctx = cache.ctx.as_ref().map(|c| Matrix::zeros(c.rows(), c.cols()));
        for (b, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let dmixed = b.dense_out.backward(store, grads, &bc.mixed, &dh);
            let ctx = cache.ctx.as_ref().unwrap_or(&bc.filmed);
            let (dx, dc) = b.attention.backward(store, grads, &bc.filmed, ctx, &bc.attn, &dmixed);
            let mut dfilmed = dmixed;
            dfilmed.add_assign(&dx);
            match dctx.as_mut() {
                Some(acc) => acc.add_assign(&dc),
                None => dfilmed.add_assign(&dc),
            }
            let (dact, dgamma, ddelta) = film_rows_backward(&bc.act, &bc.gamma, &dfilmed);
            dcond.add_assign(&b.film.backward(store, grads, &cache.cond, dgamma, ddelta));
            let dpre = silu_backward(&bc.pre, &dact);
            dh.add_assign(&b.dense_in.backward(store, grads, &bc.h, &dpre));
        }
        let dinput = self.input.backward(store, grads, &cache.input, &dh);
        if let (Some(id), Some(spec)) = (self.content, self.config.content) {
            let (_, dcontent) = dinput.hsplit(self.config.features);
            let copies = self.config.rows / spec.length;
            let table = grads.get_mut(id);
            for r in 0..self.config.rows {
                let row = table.row_mut(cond.content[r / copies]);
                for (g, &v) in row.iter_mut().zip(dcontent.row(r)) {
                    *g += v;
                }
            }
        }
        if let (Some(id), Some(dctx)) = (self.tokens, dctx) {
            let table = grads.get_mut(id);
            for (i, &tok) in cond.tokens.iter().enumerate() {
                let row = table.row_mut(tok);
                for (g, &v) in row.iter_mut().zip(dctx.row(i)) {
                    *g += v;
                }
            }
        }
        let dtemb = silu_backward(&cache.temb, &dcond);
        if let (Some(proj), Some(s)) = (&self.speaker, &cache.speaker) {
            proj.backward(store, grads, s, &dtemb);
        }
        let dact = self.step_out.backward(store, grads, &cache.step_act, &dtemb);
        let dpre = silu_backward(&cache.step_pre, &dact);
        self.step_in.backward(store, grads, &cache.sinus, &dpre);
    }

    pub fn velocity<S: Scalar>(&self, store: &ParamStore<S>, xt: &[S], t: usize, cond: &Condition<S>) -> Result<Vec<S>> {
        Ok(self.forward(store, xt, t, cond)?.0.into_vec())
    }

    /// Attention weights of every block, for inspection.
    pub fn attention_weights<S: Scalar>(&self, store: &ParamStore<S>, xt: &[S], t: usize, cond: &Condition<S>) -> Result<Vec<Matrix<S>>> {
        let (_, cache) = self.forward(store, xt, t, cond)?;
        Ok(cache.blocks.iter().map(|b| b.attn.weights().clone()).collect())
    }
}

/// One training example: noisy input, step, condition and velocity target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample<S> {
    pub xt: Vec<S>,
    pub t: usize,
    pub cond: Condition<S>,
    pub target: Vec<S>,
}

impl<S: Scalar> TrainExample<S> {
    pub fn cast<T: Scalar>(&self) -> TrainExample<T> {
        TrainExample {
            xt: self.xt.iter().map(|v| v.cast()).collect(),
            t: self.t,
            cond: Condition {
                tokens: self.cond.tokens.clone(),
                speaker: self.cond.speaker.iter().map(|v| v.cast()).collect(),
                content: self.cond.content.clone(),
            },
            target: self.target.iter().map(|v| v.cast()).collect(),
        }
    }
}

/// Mean squared velocity error over a batch.
pub struct VelocityLoss<'a, S> {
    pub arch: &'a Architecture,
    pub batch: &'a [TrainExample<S>],
}

impl<S: Scalar> Objective<S> for VelocityLoss<'_, S> {
    fn loss(&self, params: &ParamStore<S>) -> Result<S> {
        let mut total = S::zero();
        let mut n = 0;
        for ex in self.batch {
            let pred = self.arch.velocity(params, &ex.xt, ex.t, &ex.cond)?;
            total += pred.iter().zip(&ex.target).map(|(&p, &y)| (p - y) * (p - y)).sum::<S>();
            n += pred.len();
        }
        Ok(total / S::count(n.max(1)))
    }

    fn loss_and_grad(&self, params: &ParamStore<S>, grads: &mut Grads<S>) -> Result<S> {
        let n: usize = self.batch.iter().map(|ex| ex.target.len()).sum();
        let scale = S::c(2.0) / S::count(n.max(1));
        let mut total = S::zero();
        for ex in self.batch {
            let (pred, cache) = self.arch.forward(params, &ex.xt, ex.t, &ex.cond)?;
            let mut dout = pred.clone();
            for (d, &y) in dout.as_mut_slice().iter_mut().zip(&ex.target) {
                let r = *d - y;
                total += r * r;
                *d = r * scale;
            }
            self.arch.backward(params, grads, &ex.cond, &cache, &dout);
        }
        Ok(total / S::count(n.max(1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub cond_dropout_p: f64,
    /// Final learning rate as a fraction of `lr` under cosine decay.
    pub lr_floor: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.steps == 0 {
            bad.push("train.steps must be positive".to_string());
        }
        if self.batch_size == 0 {
            bad.push("train.batch_size must be positive".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push("train.lr must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.cond_dropout_p) {
            bad.push("train.cond_dropout_p must lie in [0, 1)".to_string());
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            bad.push("train.lr_floor must lie in [0, 1]".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let progress = step as f64 / self.steps.max(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.lr_floor + (1.0 - self.lr_floor) * cosine)
    }
}

/// A velocity network with its parameters.
#[derive(Debug, Clone)]
pub struct Denoiser<S> {
    pub arch: Architecture,
    pub params: ParamStore<S>,
    /// Whether training replaced conditions with the negative condition.
    pub trained_unconditional: bool,
}

impl<S: Scalar> Denoiser<S> {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let arch = Architecture::build(config, &mut params, &mut rng::stream(seed, "init"))?;
        Ok(Self {
            arch,
            params,
            trained_unconditional: false,
        })
    }

    /// Rebuilds the architecture for `config` and loads `params` into it.
    pub fn from_params(config: DenoiserConfig, params: &ParamStore<S>, trained_unconditional: bool) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_from(params)?;
        model.trained_unconditional = trained_unconditional;
        Ok(model)
    }

    pub fn config(&self) -> &DenoiserConfig {
        self.arch.config()
    }

    pub fn cast<T: Scalar>(&self) -> Denoiser<T> {
        Denoiser {
            arch: self.arch.clone(),
            params: self.params.cast(),
            trained_unconditional: self.trained_unconditional,
        }
    }

    pub fn negative(&self, cond: &Condition<S>) -> Condition<S> {
        cond.unconditional(self.config().mode)
    }

    /// Trains on examples drawn by `draw`, which returns a clean sample and its condition.
    ///
    /// Returns the per-step batch loss.
    pub fn train<F>(&mut self, sched: &NoiseSchedule, tc: &TrainConfig, mut draw: F) -> Result<Vec<f64>>
    where
        F: FnMut(&mut StreamRng) -> Result<(Vec<S>, Condition<S>)>,
    {
        tc.validate()?;
        let mut rng = rng::stream(tc.seed, "train");
        let mut adam = Adam::new(&self.params, AdamConfig::default());
        let mut history = Vec::with_capacity(tc.steps);
        let mode = self.config().mode;
        for step in 0..tc.steps {
            let mut batch = Vec::with_capacity(tc.batch_size);
            for _ in 0..tc.batch_size {
                let (x0, mut cond) = draw(&mut rng)?;
                if x0.len() != self.config().input_len() {
                    return Err(Error::Shape(format!(
                        "training sample has {} values, model expects {}",
                        x0.len(),
                        self.config().input_len()
                    )));
                }
                if rng.random::<f64>() < tc.cond_dropout_p {
                    cond = cond.unconditional(mode);
                }
                let sample = crate::diffusion::DiffusionSample::draw(x0, sched, &mut rng);
                batch.push(TrainExample {
                    xt: sample.xt,
                    t: sample.t,
                    cond,
                    target: sample.v,
                });
            }
            let objective = VelocityLoss {
                arch: &self.arch,
                batch: &batch,
            };
            let loss = fit_step(&mut self.params, &mut adam, &objective, tc.lr_at(step))?;
            history.push(loss.as_f64());
        }
        self.trained_unconditional |= tc.cond_dropout_p > 0.0;
        Ok(history)
    }
}

impl<S: Scalar> VelocityModel<S> for Denoiser<S> {
    type Cond = Condition<S>;

    fn velocity(&self, xt: &[S], t: usize, cond: &Condition<S>) -> Result<Vec<S>> {
        self.arch.velocity(&self.params, xt, t, cond)
    }
}

/// Mean of the first and last `window` entries of a loss history.
pub fn loss_endpoints(history: &[f64], window: usize) -> (f64, f64) {
    let w = window.clamp(1, history.len().max(1));
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    (mean(&history[..w.min(history.len())]), mean(&history[history.len().saturating_sub(w)..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::build_schedule;
    use crate::nn::finite_diff_check;

    fn cross_config() -> DenoiserConfig {
        DenoiserConfig {
            rows: 1,
            features: 6,
            d_model: 8,
            blocks: 2,
            step_dim: 8,
            mode: ConditioningMode::CrossAttention { vocab: 5 },
            content: None,
        }
    }

    fn self_config() -> DenoiserConfig {
        DenoiserConfig {
            rows: 4,
            features: 3,
            d_model: 6,
            blocks: 2,
            step_dim: 8,
            mode: ConditioningMode::SelfAttention { speaker_dim: 5 },
            content: Some(ContentSpec {
                alphabet: 3,
                length: 2,
                dim: 4,
            }),
        }
    }

    fn batch(config: &DenoiserConfig, seed: u64) -> Vec<TrainExample<f64>> {
        let mut rng = rng::seeded(seed);
        (0..3)
            .map(|i| {
                let cond = match config.mode {
                    ConditioningMode::CrossAttention { .. } => Condition::prompt(vec![1 + i % 4, 3, 0]),
                    ConditioningMode::SelfAttention { speaker_dim } => Condition::speaker(rng::normal_vec(&mut rng, speaker_dim)),
                };
                let cond = match config.content {
                    Some(c) => cond.with_content((0..c.length).map(|j| (i + j) % c.alphabet).collect()),
                    None => cond,
                };
                TrainExample {
                    xt: rng::normal_vec(&mut rng, config.input_len()),
                    t: 1 + 37 * i,
                    cond,
                    target: rng::normal_vec(&mut rng, config.input_len()),
                }
            })
            .collect()
    }

    fn check(config: DenoiserConfig) {
        let model = Denoiser::<f64>::new(config, 11).unwrap();
        let data = batch(&config, 5);
        let objective = VelocityLoss {
            arch: &model.arch,
            batch: &data,
        };
        let report = finite_diff_check(&model.params, &objective, 1e-5, 12, 3).unwrap();
        for (name, err) in &report.per_tensor {
            assert!(*err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn cross_attention_model_gradients() {
        check(cross_config());
    }

    #[test]
    fn self_attention_model_gradients() {
        check(self_config());
    }

    #[test]
    fn output_shape_and_condition_checks() {
        let model = Denoiser::<f64>::new(self_config(), 1).unwrap();
        let ok = Condition::speaker(vec![0.0; 5]).with_content(vec![0, 2]);
        assert_eq!(model.velocity(&[0.1; 12], 10, &ok).unwrap().len(), 12);
        assert!(matches!(model.velocity(&[0.1; 12], 10, &Condition::speaker(vec![0.0; 4]).with_content(vec![0, 2])), Err(Error::Shape(_))));
        assert!(matches!(model.velocity(&[0.1; 12], 10, &Condition::speaker(vec![0.0; 5]).with_content(vec![0, 3])), Err(Error::Domain(_))));
        assert!(model.velocity(&[0.1; 11], 10, &ok).is_err());
        let cross = Denoiser::<f64>::new(cross_config(), 1).unwrap();
        assert!(matches!(cross.velocity(&[0.0; 6], 3, &Condition::prompt(vec![5])), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn content_is_duplicated_in_order() {
        let model = Denoiser::<f64>::new(self_config(), 2).unwrap();
        let dup = model.arch.duplicated_content(&model.params, &[2, 0]).unwrap();
        let table = model.params.get(model.arch.content.unwrap());
        assert_eq!(dup.row(0), table.row(2));
        assert_eq!(dup.row(1), table.row(2));
        assert_eq!(dup.row(2), table.row(0));
        assert_eq!(dup.row(3), table.row(0));
    }

    #[test]
    fn unconditional_conditions() {
        let c: Condition<f64> = Condition::speaker(vec![1.0, 2.0]).with_content(vec![1]);
        let neg = c.unconditional(ConditioningMode::SelfAttention { speaker_dim: 2 });
        assert_eq!(neg.speaker, vec![0.0, 0.0]);
        assert_eq!(neg.content, vec![1]);
        let p: Condition<f64> = Condition::prompt(vec![3, 4]);
        assert_eq!(p.unconditional(ConditioningMode::CrossAttention { vocab: 5 }).tokens, vec![UNCONDITIONAL_TOKEN]);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let sched = build_schedule(100, 1e-4, 0.02).unwrap();
        let tc = TrainConfig {
            steps: 400,
            batch_size: 8,
            lr: 3e-3,
            cond_dropout_p: 0.1,
            lr_floor: 0.1,
            seed: 4,
        };
        let run = || {
            let mut model = Denoiser::<f32>::new(cross_config(), 9).unwrap();
            let hist = model
                .train(&sched, &tc, |rng| {
                    let k = rng.random_range(0..2usize);
                    let x0 = vec![if k == 0 { 1.0f32 } else { -1.0 }; 6];
                    Ok((x0, Condition::prompt(vec![1 + k])))
                })
                .unwrap();
            (model, hist)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(ha, hb);
        assert_eq!(crate::nn::checkpoint::encode(&a.params), crate::nn::checkpoint::encode(&b.params));
        let (first, last) = loss_endpoints(&ha, 20);
        assert!(last < 0.5 * first, "{first} -> {last}");
        assert!(a.trained_unconditional);
    }
}
