//! Closed-form forward marginal, velocity target and their inverse.

use rand::Rng;

use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{ensure_same_len, Result};
use crate::rng::normal;
use crate::scalar::Scalar;

/// `x_t = √ᾱ_t x_0 + √(1−ᾱ_t) ε`.
pub fn forward_marginal<S: Scalar>(x0: &[S], eps: &[S], t: usize, sched: &NoiseSchedule) -> Result<Vec<S>> {
    ensure_same_len("forward_marginal x0/eps", x0.len(), eps.len())?;
    sched.check_step(t)?;
    let (a, b) = sched.marginal_coefficients::<S>(t);
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// `v_t = √ᾱ_t ε − √(1−ᾱ_t) x_0`.
pub fn v_target<S: Scalar>(x0: &[S], eps: &[S], t: usize, sched: &NoiseSchedule) -> Result<Vec<S>> {
    ensure_same_len("v_target x0/eps", x0.len(), eps.len())?;
    sched.check_step(t)?;
    let (a, b) = sched.marginal_coefficients::<S>(t);
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * e - b * x).collect())
}

/// `x̂_0 = √ᾱ_t x_t − √(1−ᾱ_t) v`, optionally clamped to `clip`.
pub fn x0_from_v<S: Scalar>(
    xt: &[S],
    v: &[S],
    t: usize,
    sched: &NoiseSchedule,
    clip: Option<(f64, f64)>,
) -> Result<Vec<S>> {
    ensure_same_len("x0_from_v xt/v", xt.len(), v.len())?;
    sched.check_step(t)?;
    let (a, b) = sched.marginal_coefficients::<S>(t);
    let mut out: Vec<S> = xt.iter().zip(v).map(|(&x, &v)| a * x - b * v).collect();
    if let Some((lo, hi)) = clip {
        let (lo, hi) = (S::c(lo), S::c(hi));
        out.iter_mut().for_each(|x| *x = x.max(lo).min(hi));
    }
    Ok(out)
}

/// Draws `x_{t−1} ~ N(μ̃_t, β̃_t I)` given `x_t` and an estimate of `x_0`.
pub fn posterior_step<S: Scalar, R: Rng + ?Sized>(
    xt: &[S],
    x0_hat: &[S],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<S>> {
    ensure_same_len("posterior_step xt/x0", xt.len(), x0_hat.len())?;
    sched.check_step(t)?;
    let tr = sched.transition(t, t - 1);
    Ok(mix(xt, x0_hat, tr.coef_xt, tr.coef_x0, tr.posterior_var, rng))
}

pub(crate) fn mix<S: Scalar, R: Rng + ?Sized>(
    xt: &[S],
    x0: &[S],
    coef_xt: f64,
    coef_x0: f64,
    var: f64,
    rng: &mut R,
) -> Vec<S> {
    let (cxt, cx0, sd) = (S::c(coef_xt), S::c(coef_x0), S::c(var.sqrt()));
    xt.iter()
        .zip(x0)
        .map(|(&x, &x0)| {
            let mean = cx0 * x0 + cxt * x;
            if var > 0.0 {
                mean + sd * normal::<S, _>(rng)
            } else {
                mean
            }
        })
        .collect()
}

/// A fully specified training example of the forward process.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample<S> {
    pub x0: Vec<S>,
    pub eps: Vec<S>,
    pub t: usize,
    pub xt: Vec<S>,
    pub v: Vec<S>,
}

impl<S: Scalar> DiffusionSample<S> {
    pub fn new(x0: Vec<S>, eps: Vec<S>, t: usize, sched: &NoiseSchedule) -> Result<Self> {
        let xt = forward_marginal(&x0, &eps, t, sched)?;
        let v = v_target(&x0, &eps, t, sched)?;
        Ok(Self { x0, eps, t, xt, v })
    }

    /// Draws `t` uniformly in `1..=T` and fresh Gaussian noise.
    pub fn draw<R: Rng + ?Sized>(x0: Vec<S>, sched: &NoiseSchedule, rng: &mut R) -> Self {
        let t = rng.random_range(1..=sched.steps());
        let eps = crate::rng::normal_vec(rng, x0.len());
        Self::new(x0, eps, t, sched).expect("consistent shapes")
    }
}
