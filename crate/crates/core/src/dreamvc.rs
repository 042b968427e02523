//! Toy voice conversion over synthetic feature grids.
//!
//! An utterance is a `frames × bins` grid: each content symbol owns a spectral
//! sign template held for `frames / length` frames, and each voice shapes it with
//! a gain, a per-bin envelope and a per-bin bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, ConditioningMode, ContentSpec, Denoiser, DenoiserConfig, TrainConfig};
use crate::diffusion::{sample, NoiseSchedule, SamplerConfig};
use crate::dreamvg::DreamVg;
use crate::error::{Error, Result};
use crate::guidance::GuidanceParams;
use crate::rng::{self, StreamRng};
use crate::scalar::Scalar;
use crate::voicedb::{SpeakerDb, SpeakerEmbedding, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridParams {
    pub n_voices: usize,
    pub frames: usize,
    pub bins: usize,
    pub content_len: usize,
    pub alphabet: usize,
    /// Smallest number of bins in which any two symbol templates differ.
    pub min_hamming: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            n_voices: 4,
            frames: 32,
            bins: 16,
            content_len: 8,
            alphabet: 8,
            min_hamming: 6,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n_voices < 2 {
            bad.push("vc.n_voices must be at least 2".to_string());
        }
        if self.frames == 0 || self.bins < 2 || self.content_len == 0 || self.alphabet < 2 {
            bad.push("vc grid needs frames, content_len > 0, bins and alphabet >= 2".to_string());
        } else if !self.frames.is_multiple_of(self.content_len) {
            bad.push(format!("vc.frames {} must be a multiple of vc.content_len {}", self.frames, self.content_len));
        }
        if self.min_hamming > self.bins {
            bad.push("vc.min_hamming cannot exceed vc.bins".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn grid_len(&self) -> usize {
        self.frames * self.bins
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceRender {
    pub gain: f64,
    pub envelope: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyUtterance {
    pub content: Vec<usize>,
    pub voice: usize,
    pub frames: usize,
    pub bins: usize,
    /// Row-major `frames × bins` values in `[-1, 1]`.
    pub grid: Vec<f64>,
}

impl ToyUtterance {
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.grid.chunks(self.bins).map(<[f64]>::to_vec).collect()
    }
}

/// Symbol templates and voice renderings of the synthetic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDomain {
    pub params: GridParams,
    pub templates: Vec<Vec<f64>>,
    pub voices: Vec<VoiceRender>,
}

const TEMPLATE_ATTEMPTS: usize = 10_000;

impl ToyDomain {
    pub fn new(params: GridParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = rng::stream(seed, "vc/templates");
        let mut templates: Vec<Vec<f64>> = Vec::with_capacity(params.alphabet);
        let mut attempts = 0;
        while templates.len() < params.alphabet {
            attempts += 1;
            if attempts > TEMPLATE_ATTEMPTS {
                return Err(Error::Generation(format!(
                    "could not find {} templates at Hamming distance {}",
                    params.alphabet, params.min_hamming
                )));
            }
            let cand: Vec<f64> = (0..params.bins).map(|_| if rng.random::<bool>() { 0.5 } else { -0.5 }).collect();
            let balanced = cand.iter().filter(|&&v| v > 0.0).count().abs_diff(params.bins / 2) <= params.bins / 4;
            let far = templates
                .iter()
                .all(|t| t.iter().zip(&cand).filter(|(a, b)| a != b).count() >= params.min_hamming);
            if balanced && far {
                templates.push(cand);
            }
        }
        let mut rng = rng::stream(seed, "vc/voices");
        let n = params.n_voices;
        let voices = (0..n)
            .map(|k| {
                let offset = -0.35 + 0.7 * k as f64 / (n - 1) as f64;
                let gain = rng.random_range(0.6..1.0);
                let freq = rng.random_range(0.5..2.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let bias_phase = rng.random_range(0.0..std::f64::consts::TAU);
                let x = |b: usize| std::f64::consts::TAU * b as f64 / params.bins as f64;
                VoiceRender {
                    gain,
                    envelope: (0..params.bins).map(|b| 1.0 + 0.25 * (freq * x(b) + phase).sin()).collect(),
                    bias: (0..params.bins).map(|b| offset + 0.1 * (x(b) + bias_phase).cos()).collect(),
                }
            })
            .collect();
        Ok(Self {
            params,
            templates,
            voices,
        })
    }

    pub fn frames_per_symbol(&self) -> usize {
        self.params.frames / self.params.content_len
    }

    pub fn render(&self, content: &[usize], voice: usize) -> Result<ToyUtterance> {
        let p = &self.params;
        if content.len() != p.content_len {
            return Err(Error::Shape(format!("content has {} symbols, expected {}", content.len(), p.content_len)));
        }
        if let Some(&bad) = content.iter().find(|&&s| s >= p.alphabet) {
            return Err(Error::Domain(format!("symbol {bad} outside alphabet of {}", p.alphabet)));
        }
        let v = self
            .voices
            .get(voice)
            .ok_or_else(|| Error::Domain(format!("voice {voice} outside {} voices", self.voices.len())))?;
        let per = self.frames_per_symbol();
        let mut grid = Vec::with_capacity(p.grid_len());
        for f in 0..p.frames {
            let tmpl = &self.templates[content[f / per]];
            for b in 0..p.bins {
                grid.push((v.gain * v.envelope[b] * tmpl[b] + v.bias[b]).clamp(-1.0, 1.0));
            }
        }
        Ok(ToyUtterance {
            content: content.to_vec(),
            voice,
            frames: p.frames,
            bins: p.bins,
            grid,
        })
    }

    pub fn random_content(&self, rng: &mut impl Rng) -> Vec<usize> {
        (0..self.params.content_len).map(|_| rng.random_range(0..self.params.alphabet)).collect()
    }

    /// Per frame group, the template with the largest correlation to the
    /// group's mean frame after removing its mean and scale.
    pub fn decode_content(&self, grid: &[f64]) -> Result<Vec<usize>> {
        let p = &self.params;
        if grid.len() != p.grid_len() {
            return Err(Error::Shape(format!("grid has {} values, expected {}", grid.len(), p.grid_len())));
        }
        let per = self.frames_per_symbol();
        let mut out = Vec::with_capacity(p.content_len);
        for g in 0..p.content_len {
            let mut mean = vec![0.0; p.bins];
            for f in g * per..(g + 1) * per {
                for (m, v) in mean.iter_mut().zip(&grid[f * p.bins..(f + 1) * p.bins]) {
                    *m += v / per as f64;
                }
            }
            let mu = mean.iter().sum::<f64>() / p.bins as f64;
            let centered: Vec<f64> = mean.iter().map(|v| v - mu).collect();
            let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let mut best = (0, f64::NEG_INFINITY);
            for (s, tmpl) in self.templates.iter().enumerate() {
                let score = centered.iter().zip(tmpl).map(|(a, b)| a * b).sum::<f64>() / norm;
                if score > best.1 {
                    best = (s, score);
                }
            }
            out.push(best.0);
        }
        Ok(out)
    }
}

/// Fraction of positions where two symbol sequences agree.
pub fn symbol_accuracy(decoded: &[usize], truth: &[usize]) -> f64 {
    let hits = decoded.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Nearest-centroid voice oracle over per-bin means and mean absolute deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceClassifier {
    pub bins: usize,
    pub centroids: Vec<Vec<f64>>,
}

fn voice_features(grid: &[f64], bins: usize) -> Vec<f64> {
    let frames = grid.len() / bins;
    let mut mean = vec![0.0; bins];
    for row in grid.chunks(bins) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / frames as f64;
        }
    }
    let mut spread = vec![0.0; bins];
    for row in grid.chunks(bins) {
        for ((s, v), m) in spread.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).abs() / frames as f64;
        }
    }
    mean.extend(spread);
    mean
}

impl VoiceClassifier {
    /// Fits one centroid per voice on clean renders of `contents`.
    pub fn fit(domain: &ToyDomain, contents: &[Vec<usize>]) -> Result<Self> {
        if contents.is_empty() {
            return Err(Error::Domain("voice classifier needs at least one content sequence".into()));
        }
        let bins = domain.params.bins;
        let centroids = (0..domain.voices.len())
            .map(|k| {
                let mut acc = vec![0.0; 2 * bins];
                for c in contents {
                    let f = voice_features(&domain.render(c, k)?.grid, bins);
                    for (a, v) in acc.iter_mut().zip(f) {
                        *a += v / contents.len() as f64;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        Ok(Self { bins, centroids })
    }

    /// Nearest voice; ties go to the lowest index.
    pub fn classify(&self, grid: &[f64]) -> Result<usize> {
        if grid.is_empty() || !grid.len().is_multiple_of(self.bins) {
            return Err(Error::Shape(format!("grid of {} values is not a multiple of {} bins", grid.len(), self.bins)));
        }
        let f = voice_features(grid, self.bins);
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centroids.iter().enumerate() {
            let d: f64 = c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(best.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VcMode {
    /// Cross-attention over text prompt tokens.
    DreamVc,
    /// Self-attention, with a speaker embedding added to the step embedding.
    ReDiffVc,
}

impl std::str::FromStr for VcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dreamvc" => Ok(Self::DreamVc),
            "rediffvc" => Ok(Self::ReDiffVc),
            _ => Err(Error::Config(format!("unknown vc mode {s:?}, expected dreamvc or rediffvc"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VcModelConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub step_dim: usize,
    pub content_dim: usize,
    /// Speaker embeddings are multiplied by this factor before projection.
    pub speaker_scale: f64,
}

impl Default for VcModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            blocks: 2,
            step_dim: 32,
            content_dim: 16,
            speaker_scale: 8.0,
        }
    }
}

/// Per-voice conditioning data for training.
#[derive(Debug, Clone, PartialEq)]
pub enum VcConditioning {
    /// Descriptors of each voice; the first names every keyword.
    Prompts(Vec<Vec<String>>),
    /// Embedding draws of each voice.
    Speakers(Vec<Vec<SpeakerEmbedding>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcDataset {
    pub domain: ToyDomain,
    pub conditioning: VcConditioning,
}

impl VcDataset {
    /// Voice `k` takes profile `k` of `db`: its descriptors and its embedding draws.
    pub fn from_db(domain: ToyDomain, db: &SpeakerDb, mode: VcMode) -> Result<Self> {
        let n = domain.voices.len();
        if db.len() < n {
            return Err(Error::Config(format!("{n} voices need at least {n} db profiles, db has {}", db.len())));
        }
        let conditioning = match mode {
            VcMode::DreamVc => VcConditioning::Prompts(db.profiles[..n].iter().map(|p| p.prompts.clone()).collect()),
            VcMode::ReDiffVc => VcConditioning::Speakers(
                (0..n)
                    .map(|k| db.embeddings.iter().filter(|(id, _)| *id == k).map(|(_, e)| e.clone()).collect())
                    .collect(),
            ),
        };
        Ok(Self { domain, conditioning })
    }
}

#[derive(Debug, Clone)]
pub struct DreamVc<S> {
    pub denoiser: Denoiser<S>,
    pub mode: VcMode,
    pub tokenizer: Option<Tokenizer>,
    pub speaker_scale: f64,
    pub grid: GridParams,
}

impl<S: Scalar> DreamVc<S> {
    pub fn new(
        mode: VcMode,
        grid: GridParams,
        mc: &VcModelConfig,
        tokenizer: Option<Tokenizer>,
        speaker_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        grid.validate()?;
        let conditioning = match (mode, &tokenizer) {
            (VcMode::DreamVc, Some(tok)) => ConditioningMode::CrossAttention { vocab: tok.table_size() },
            (VcMode::DreamVc, None) => return Err(Error::Config("dreamvc mode needs a prompt tokenizer".into())),
            (VcMode::ReDiffVc, _) => ConditioningMode::SelfAttention { speaker_dim },
        };
        let config = DenoiserConfig {
            rows: grid.frames,
            features: grid.bins,
            d_model: mc.d_model,
            blocks: mc.blocks,
            step_dim: mc.step_dim,
            mode: conditioning,
            content: Some(ContentSpec {
                alphabet: grid.alphabet,
                length: grid.content_len,
                dim: mc.content_dim,
            }),
        };
        Ok(Self {
            denoiser: Denoiser::new(config, seed)?,
            mode,
            tokenizer: if mode == VcMode::DreamVc { tokenizer } else { None },
            speaker_scale: mc.speaker_scale,
            grid,
        })
    }

    fn speaker_condition(&self, e: &SpeakerEmbedding) -> Result<Condition<S>> {
        match self.denoiser.config().mode {
            ConditioningMode::SelfAttention { speaker_dim } if speaker_dim == e.dim() => Ok(Condition::speaker(
                e.as_slice().iter().map(|&v| S::c(v * self.speaker_scale)).collect(),
            )),
            ConditioningMode::SelfAttention { speaker_dim } => Err(Error::Shape(format!(
                "speaker embedding has dim {}, model expects {speaker_dim}",
                e.dim()
            ))),
            ConditioningMode::CrossAttention { .. } => Err(Error::Config("dreamvc model takes prompts, not speaker embeddings".into())),
        }
    }

    fn prompt_condition(&self, prompt: &str) -> Result<Condition<S>> {
        match &self.tokenizer {
            Some(tok) => Ok(Condition::prompt(tok.encode(prompt)?)),
            None => Err(Error::Config("rediffvc model takes speaker embeddings, not prompts".into())),
        }
    }

    /// Trains on random content sequences rendered in random voices, paired with
    /// the voice's full descriptor with probability `full_prompt_p` and otherwise a
    /// uniformly drawn descriptor, or with a uniformly drawn embedding of the voice.
    pub fn train(&mut self, data: &VcDataset, sched: &NoiseSchedule, tc: &TrainConfig, full_prompt_p: f64) -> Result<Vec<f64>> {
        if data.domain.params != self.grid {
            return Err(Error::Config("dataset grid does not match the model grid".into()));
        }
        let n = data.domain.voices.len();
        enum Pool<S> {
            Tokens(Vec<Vec<Vec<usize>>>),
            Speakers(Vec<Vec<Condition<S>>>),
        }
        let pool = match (&data.conditioning, self.mode) {
            (VcConditioning::Prompts(p), VcMode::DreamVc) if p.len() == n && p.iter().all(|l| !l.is_empty()) => {
                let tok = self.tokenizer.as_ref().expect("dreamvc model has a tokenizer");
                Pool::Tokens(p.iter().map(|l| l.iter().map(|t| tok.encode(t)).collect()).collect::<Result<_>>()?)
            }
            (VcConditioning::Speakers(s), VcMode::ReDiffVc) if s.len() == n && s.iter().all(|l| !l.is_empty()) => Pool::Speakers(
                s.iter()
                    .map(|l| l.iter().map(|e| self.speaker_condition(e)).collect())
                    .collect::<Result<_>>()?,
            ),
            (VcConditioning::Prompts(_), VcMode::DreamVc) | (VcConditioning::Speakers(_), VcMode::ReDiffVc) => {
                return Err(Error::Config(format!("dataset must carry non-empty conditioning for each of {n} voices")));
            }
            _ => return Err(Error::Config(format!("dataset conditioning does not match {:?} mode", self.mode))),
        };
        let domain = &data.domain;
        self.denoiser.train(sched, tc, |rng| {
            let voice = rng.random_range(0..n);
            let content = domain.random_content(rng);
            let utt = domain.render(&content, voice)?;
            let cond = match &pool {
                Pool::Tokens(lists) => {
                    let list = &lists[voice];
                    let pick = if rng.random::<f64>() < full_prompt_p { 0 } else { rng.random_range(0..list.len()) };
                    Condition::prompt(list[pick].clone())
                }
                Pool::Speakers(lists) => lists[voice][rng.random_range(0..lists[voice].len())].clone(),
            };
            Ok((utt.grid.iter().map(|&v| S::c(v)).collect(), cond.with_content(content)))
        })
    }

    fn convert(&self, source: &ToyUtterance, cond: Condition<S>, guidance: &GuidanceParams, sconf: &SamplerConfig, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        guidance.validate()?;
        if guidance.needs_negative() && !self.denoiser.trained_unconditional {
            return Err(Error::Validation(vec![format!(
                "guidance_scale {} needs a model trained with cond_dropout_p > 0",
                guidance.w
            )]));
        }
        if source.frames != self.grid.frames || source.bins != self.grid.bins {
            return Err(Error::Shape(format!(
                "source grid is {}x{}, model expects {}x{}",
                source.frames, source.bins, self.grid.frames, self.grid.bins
            )));
        }
        let pos = cond.with_content(source.content.clone());
        let neg = self.denoiser.negative(&pos);
        let x: Vec<S> = sample(&self.denoiser, &pos, &neg, guidance, sconf, sched, self.grid.grid_len())?;
        Ok(x.iter().map(|v| v.as_f64()).collect())
    }

    /// Renders the source content in the voice described by `prompt`.
    pub fn convert_text_guided(
        &self,
        source: &ToyUtterance,
        prompt: &str,
        guidance: &GuidanceParams,
        sconf: &SamplerConfig,
        sched: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        let cond = self.prompt_condition(prompt)?;
        self.convert(source, cond, guidance, sconf, sched)
    }

    /// Renders the source content in the voice of `target`; the zero embedding is the negative condition.
    pub fn convert_one_shot(
        &self,
        source: &ToyUtterance,
        target: &SpeakerEmbedding,
        guidance: &GuidanceParams,
        sconf: &SamplerConfig,
        sched: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        let cond = self.speaker_condition(target)?;
        self.convert(source, cond, guidance, sconf, sched)
    }
}

pub struct PluginSettings<'a> {
    pub vg_guidance: &'a GuidanceParams,
    pub vc_guidance: &'a GuidanceParams,
    pub vg_sampler: &'a SamplerConfig,
    pub vc_sampler: &'a SamplerConfig,
    pub sched: &'a NoiseSchedule,
}

/// Text-guided conversion by composition: sample an embedding for `prompt`, then
/// convert one-shot towards it. Returns the embedding and the grid.
pub fn plugin_convert<S: Scalar>(
    vg: &DreamVg<S>,
    vc: &DreamVc<S>,
    source: &ToyUtterance,
    prompt: &str,
    settings: &PluginSettings<'_>,
) -> Result<(SpeakerEmbedding, Vec<f64>)> {
    if vc.mode != VcMode::ReDiffVc {
        return Err(Error::Config("plugin conversion needs a rediffvc model".into()));
    }
    let e = vg.sample(prompt, settings.vg_guidance, settings.vg_sampler, settings.sched)?;
    let grid = vc.convert_one_shot(source, &e, settings.vc_guidance, settings.vc_sampler, settings.sched)?;
    Ok((e, grid))
}

/// A content stream for evaluation, disjoint from the training stream by name.
pub fn evaluation_contents(domain: &ToyDomain, n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng: StreamRng = rng::stream(seed, "vc/eval-contents");
    (0..n).map(|_| domain.random_content(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain() -> ToyDomain {
        ToyDomain::new(GridParams::default(), 7).unwrap()
    }

    #[test]
    fn renders_are_bounded_deterministic_and_distinct() {
        let d = domain();
        let mut rng = rng::seeded(1);
        for _ in 0..20 {
            let c = d.random_content(&mut rng);
            let a = d.render(&c, 0).unwrap();
            assert_eq!(a, d.render(&c, 0).unwrap());
            assert!(a.grid.iter().all(|v| (-1.0..=1.0).contains(v)));
            for k in 1..d.voices.len() {
                let b = d.render(&c, k).unwrap();
                let mad = a.grid.iter().zip(&b.grid).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.grid.len() as f64;
                assert!(mad > 0.05, "voices 0 and {k} differ by {mad}");
            }
            let other: Vec<usize> = c.iter().map(|s| (s + 1) % 8).collect();
            assert_ne!(d.render(&other, 0).unwrap().grid, a.grid);
        }
        assert!(matches!(d.render(&[8; 8], 0), Err(Error::Domain(_))));
    }

    #[test]
    fn decoder_inverts_clean_and_noisy_renders() {
        let d = domain();
        let mut rng = rng::seeded(2);
        let (mut hits, mut total) = (0, 0);
        for i in 0..200 {
            let c = d.random_content(&mut rng);
            let u = d.render(&c, i % 4).unwrap();
            assert_eq!(d.decode_content(&u.grid).unwrap(), c);
            let noisy: Vec<f64> = u.grid.iter().map(|v| v + 0.05 * rng::normal::<f64, _>(&mut rng)).collect();
            let dec = d.decode_content(&noisy).unwrap();
            hits += dec.iter().zip(&c).filter(|(a, b)| a == b).count();
            total += c.len();
        }
        assert!(hits as f64 / total as f64 >= 0.95);
        let zeros = d.decode_content(&vec![0.0; 512]).unwrap();
        assert_eq!(zeros, d.decode_content(&vec![0.0; 512]).unwrap());
    }

    #[test]
    fn every_pair_of_contents_is_distinguished() {
        let d = domain();
        for s in 0..8 {
            for k in 0..4 {
                let u = d.render(&[s; 8], k).unwrap();
                assert_eq!(d.decode_content(&u.grid).unwrap(), vec![s; 8]);
            }
        }
    }

    #[test]
    fn voice_oracle_recognizes_clean_renders_of_new_content() {
        let d = domain();
        let fit = evaluation_contents(&d, 16, 1);
        let clf = VoiceClassifier::fit(&d, &fit).unwrap();
        let mut rng = rng::seeded(3);
        for _ in 0..50 {
            let c = d.random_content(&mut rng);
            for k in 0..4 {
                assert_eq!(clf.classify(&d.render(&c, k).unwrap().grid).unwrap(), k);
            }
        }
    }

    #[test]
    fn mode_and_dataset_must_agree() {
        let d = domain();
        let mut vc = DreamVc::<f32>::new(VcMode::ReDiffVc, d.params, &VcModelConfig::default(), None, 4, 1).unwrap();
        let data = VcDataset {
            domain: d.clone(),
            conditioning: VcConditioning::Prompts(vec![vec!["a male voice".into()]; 4]),
        };
        let sched = crate::diffusion::build_schedule(10, 1e-4, 0.02).unwrap();
        let tc = TrainConfig {
            steps: 1,
            batch_size: 1,
            lr: 1e-3,
            cond_dropout_p: 0.1,
            lr_floor: 1.0,
            seed: 0,
        };
        assert!(matches!(vc.train(&data, &sched, &tc, 0.5), Err(Error::Config(_))));
        assert!(DreamVc::<f32>::new(VcMode::DreamVc, d.params, &VcModelConfig::default(), None, 4, 1).is_err());
        let src = d.render(&[0; 8], 0).unwrap();
        let r = vc.convert_one_shot(&src, &SpeakerEmbedding::zeros(3), &GuidanceParams::unguided(), &SamplerConfig::new(2, 0), &sched);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
