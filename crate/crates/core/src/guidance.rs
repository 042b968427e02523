//! Classifier-free guidance with standard-deviation rescaling.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, Error, Result};
use crate::scalar::Scalar;

/// Below this standard deviation the guided velocity is left unscaled.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceParams {
    /// Guidance scale `w`.
    pub w: f64,
    /// Rescale strength `φ`.
    pub phi: f64,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self { w: 3.0, phi: 0.7 }
    }
}

impl GuidanceParams {
    pub fn new(w: f64, phi: f64) -> Result<Self> {
        let p = Self { w, phi };
        p.validate()?;
        Ok(p)
    }

    /// Plain conditional sampling: the negative branch is never evaluated.
    pub fn unguided() -> Self {
        Self { w: 1.0, phi: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(Error::Config(format!("guidance scale must be finite and >= 0, got {}", self.w)));
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::Config(format!("rescale phi must lie in [0, 1], got {}", self.phi)));
        }
        Ok(())
    }

    pub fn needs_negative(&self) -> bool {
        self.w != 1.0
    }
}

/// Every intermediate of one guided evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedVelocity<S> {
    pub v_pos: Vec<S>,
    pub v_neg: Vec<S>,
    pub v_cfg: Vec<S>,
    pub v_re: Vec<S>,
    pub v_cfg_prime: Vec<S>,
}

/// `v_cfg = v_neg + w (v_pos − v_neg)`.
pub fn cfg_combine<S: Scalar>(v_pos: &[S], v_neg: &[S], w: f64) -> Result<Vec<S>> {
    ensure_same_len("cfg_combine", v_pos.len(), v_neg.len())?;
    if w == 1.0 {
        return Ok(v_pos.to_vec());
    }
    let w = S::c(w);
    Ok(v_pos.iter().zip(v_neg).map(|(&p, &n)| n + w * (p - n)).collect())
}

/// Population standard deviation.
pub fn std_dev<S: Scalar>(xs: &[S]) -> S {
    let n = S::count(xs.len());
    let mean = xs.iter().copied().sum::<S>() / n;
    (xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n).sqrt()
}

fn rescaled<S: Scalar>(v_cfg: &[S], v_pos: &[S]) -> Result<Vec<S>> {
    ensure_same_len("cfg_rescale", v_cfg.len(), v_pos.len())?;
    if v_cfg.len() < 2 {
        return Err(Error::Domain("rescaling needs at least two features".into()));
    }
    let std_cfg = std_dev(v_cfg);
    if std_cfg < S::c(DEGENERATE_STD) {
        return Ok(v_cfg.to_vec());
    }
    let ratio = std_dev(v_pos) / std_cfg;
    Ok(v_cfg.iter().map(|&v| v * ratio).collect())
}

/// `φ · v_cfg · std(v_pos)/std(v_cfg) + (1 − φ) · v_cfg`.
pub fn cfg_rescale<S: Scalar>(v_cfg: &[S], v_pos: &[S], phi: f64) -> Result<Vec<S>> {
    let v_re = rescaled(v_cfg, v_pos)?;
    Ok(blend(&v_re, v_cfg, phi))
}

fn blend<S: Scalar>(v_re: &[S], v_cfg: &[S], phi: f64) -> Vec<S> {
    let (p, q) = (S::c(phi), S::c(1.0 - phi));
    v_re.iter().zip(v_cfg).map(|(&r, &c)| p * r + q * c).collect()
}

/// Combines and rescales already evaluated branches.
pub fn guide<S: Scalar>(v_pos: Vec<S>, v_neg: Vec<S>, params: &GuidanceParams) -> Result<GuidedVelocity<S>> {
    let v_cfg = cfg_combine(&v_pos, &v_neg, params.w)?;
    let v_re = rescaled(&v_cfg, &v_pos)?;
    let v_cfg_prime = blend(&v_re, &v_cfg, params.phi);
    Ok(GuidedVelocity {
        v_pos,
        v_neg,
        v_cfg,
        v_re,
        v_cfg_prime,
    })
}

/// Guided velocity from a model evaluated under a positive and a negative condition.
///
/// With `w = 1` the combination equals `v_pos` and the rescale ratio is one, so
/// the negative branch is skipped.
pub fn guided_velocity<S, M>(
    model: &M,
    xt: &[S],
    t: usize,
    cond_pos: &M::Cond,
    cond_neg: &M::Cond,
    params: &GuidanceParams,
) -> Result<Vec<S>>
where
    S: Scalar,
    M: crate::diffusion::VelocityModel<S> + ?Sized,
{
    let v_pos = model.velocity(xt, t, cond_pos)?;
    if !params.needs_negative() {
        return Ok(v_pos);
    }
    let v_neg = model.velocity(xt, t, cond_neg)?;
    Ok(guide(v_pos, v_neg, params)?.v_cfg_prime)
}
