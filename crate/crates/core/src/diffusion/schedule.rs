use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-step constants of a discrete forward process with `T` steps.
///
/// Arrays are indexed by step `t` in `0..=T`; index 0 holds the boundary
/// `ᾱ_0 = 1` and carries no variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

/// Linear variance schedule from `beta_start` at `t = 1` to `beta_end` at `t = T`.
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let mut beta = vec![0.0; steps + 1];
    for (t, b) in beta.iter_mut().enumerate().skip(1) {
        *b = if steps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64
        };
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
    }
    let mut beta_tilde = vec![0.0; steps + 1];
    for t in 1..=steps {
        beta_tilde[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
    }
    Ok(NoiseSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
        beta_tilde,
    })
}

impl NoiseSchedule {
    /// Total step count `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t]
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::Domain(format!("step {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    /// `(√ᾱ_t, √(1−ᾱ_t))` in the requested precision.
    pub fn marginal_coefficients<S: Scalar>(&self, t: usize) -> (S, S) {
        let ab = self.alpha_bar[t];
        (S::c(ab.sqrt()), S::c((1.0 - ab).sqrt()))
    }

    /// Coefficients of the Gaussian `q(x_s | x_t, x_0)` for `s < t`:
    /// `(coef_x0, coef_xt, posterior variance, forward-process variance)`.
    ///
    /// For `s = t − 1` these are exactly the one-step posterior constants;
    /// `s = 0` collapses to `x_0` with no noise.
    pub fn transition(&self, t: usize, s: usize) -> Transition {
        debug_assert!(s < t && t <= self.steps);
        if s == 0 {
            return Transition {
                coef_x0: 1.0,
                coef_xt: 0.0,
                posterior_var: 0.0,
                forward_var: 1.0 - self.alpha_bar[t],
            };
        }
        let (ab_t, ab_s) = (self.alpha_bar[t], self.alpha_bar[s]);
        let (beta, alpha) = if s + 1 == t {
            (self.beta[t], self.alpha[t])
        } else {
            (1.0 - ab_t / ab_s, ab_t / ab_s)
        };
        let denom = 1.0 - ab_t;
        Transition {
            coef_x0: ab_s.sqrt() * beta / denom,
            coef_xt: alpha.sqrt() * (1.0 - ab_s) / denom,
            posterior_var: (1.0 - ab_s) / denom * beta,
            forward_var: beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub coef_x0: f64,
    pub coef_xt: f64,
    pub posterior_var: f64,
    pub forward_var: f64,
}
