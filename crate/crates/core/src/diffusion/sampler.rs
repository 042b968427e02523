use serde::{Deserialize, Serialize};

use crate::diffusion::process::{mix, x0_from_v};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::guidance::{guided_velocity, GuidanceParams};
use crate::rng::{normal_vec, seeded};
use crate::scalar::{all_finite, Scalar};

/// A network predicting the velocity `v` from `(x_t, t, condition)`.
pub trait VelocityModel<S: Scalar> {
    type Cond: ?Sized;

    fn velocity(&self, xt: &[S], t: usize, cond: &Self::Cond) -> Result<Vec<S>>;
}

/// Noise variance used for transitions that skip steps.
///
/// One-step transitions always use the posterior variance `β̃_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StridedVariance {
    /// `β_{t→s} = 1 − ᾱ_t / ᾱ_s`.
    #[default]
    Forward,
    /// `(1 − ᾱ_s)/(1 − ᾱ_t) · β_{t→s}`, the exact posterior of the skipped span.
    Posterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub inference_steps: usize,
    pub seed: u64,
    pub clip_x0: Option<(f64, f64)>,
    #[serde(default)]
    pub strided_variance: StridedVariance,
}

impl SamplerConfig {
    pub fn new(inference_steps: usize, seed: u64) -> Self {
        Self {
            inference_steps,
            seed,
            clip_x0: None,
            strided_variance: StridedVariance::default(),
        }
    }

    pub fn with_clip(mut self, lo: f64, hi: f64) -> Self {
        self.clip_x0 = Some((lo, hi));
        self
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.inference_steps == 0 || self.inference_steps > sched.steps() {
            return Err(Error::Config(format!(
                "inference_steps must lie in 1..={}, got {}",
                sched.steps(),
                self.inference_steps
            )));
        }
        Ok(())
    }
}

/// Descending, uniformly strided steps from `T` to 1 (just `[T]` for one step).
pub fn timesteps(total: usize, inference_steps: usize) -> Vec<usize> {
    assert!(inference_steps >= 1 && inference_steps <= total);
    if inference_steps == 1 {
        return vec![total];
    }
    let span = (total - 1) as f64;
    let last = (inference_steps - 1) as f64;
    (0..inference_steps)
        .map(|i| total - (i as f64 * span / last).round() as usize)
        .collect()
}

/// Ancestral sampling with classifier-free guidance, starting from `x_T ~ N(0, I)`.
///
/// Returns the `x_0` estimate of the final step.
pub fn sample<S, M>(
    model: &M,
    cond_pos: &M::Cond,
    cond_neg: &M::Cond,
    guidance: &GuidanceParams,
    sconf: &SamplerConfig,
    sched: &NoiseSchedule,
    dim: usize,
) -> Result<Vec<S>>
where
    S: Scalar,
    M: VelocityModel<S> + ?Sized,
{
    guidance.validate()?;
    sconf.validate(sched)?;
    let mut rng = seeded(sconf.seed);
    let mut x: Vec<S> = normal_vec(&mut rng, dim);
    let steps = timesteps(sched.steps(), sconf.inference_steps);
    for (i, &t) in steps.iter().enumerate() {
        let v = guided_velocity(model, &x, t, cond_pos, cond_neg, guidance)?;
        let x0 = x0_from_v(&x, &v, t, sched, sconf.clip_x0)?;
        if !all_finite(&x0) {
            return Err(Error::NonFinite {
                stage: "sampling".into(),
                detail: format!("x0 estimate at step t={t}"),
            });
        }
        let s = steps.get(i + 1).copied().unwrap_or(0);
        if s == 0 {
            return Ok(x0);
        }
        let tr = sched.transition(t, s);
        let var = if s + 1 == t {
            tr.posterior_var
        } else {
            match sconf.strided_variance {
                StridedVariance::Forward => tr.forward_var,
                StridedVariance::Posterior => tr.posterior_var,
            }
        };
        x = mix(&x, &x0, tr.coef_xt, tr.coef_x0, var, &mut rng);
        if !all_finite(&x) {
            return Err(Error::NonFinite {
                stage: "sampling".into(),
                detail: format!("x_{s} after step t={t}"),
            });
        }
    }
    unreachable!("timesteps always end with a final step")
}

/// Posterior-mean velocity for data distributed as `N(mean, std²)` per coordinate.
///
/// `E[x_0 | x_t] = (σ²√ᾱ_t x_t + (1−ᾱ_t) μ) / (ᾱ_t σ² + 1 − ᾱ_t)` and
/// `v̂ = (√ᾱ_t x_t − E[x_0 | x_t]) / √(1−ᾱ_t)`.
#[derive(Debug, Clone)]
pub struct GaussianOracle<'a> {
    pub mean: f64,
    pub std: f64,
    pub sched: &'a NoiseSchedule,
}

impl<S: Scalar> VelocityModel<S> for GaussianOracle<'_> {
    type Cond = ();

    fn velocity(&self, xt: &[S], t: usize, _: &()) -> Result<Vec<S>> {
        let ab = self.sched.alpha_bar(t);
        let var = self.std * self.std;
        Ok(xt
            .iter()
            .map(|&x| {
                let x = x.as_f64();
                let ex0 = (var * ab.sqrt() * x + (1.0 - ab) * self.mean) / (ab * var + 1.0 - ab);
                S::c((ab.sqrt() * x - ex0) / (1.0 - ab).sqrt())
            })
            .collect())
    }
}
