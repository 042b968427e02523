//! Trainable blocks with hand-written backward passes.
//!
//! Each block exposes `forward` returning the values its `backward` needs, and
//! `backward` accumulates parameter gradients into a [`Grads`] buffer while
//! returning the gradient with respect to its inputs.

use rand::Rng;

use crate::error::{ensure_same_len, Error, Result};
use crate::nn::matrix::{axpy, dot, Matrix};
use crate::nn::params::{Grads, ParamId, ParamStore};
use crate::rng::normal;
use crate::scalar::Scalar;

/// Sinusoidal step features: sines in the first half, cosines in the second,
/// at geometrically spaced frequencies `10000^(-i / (dim/2))`.
pub fn sinusoidal_embed<S: Scalar>(t: usize, dim: usize) -> Result<Vec<S>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!("step embedding dim must be even and positive, got {dim}")));
    }
    let half = dim / 2;
    let mut out = vec![S::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = S::c(arg.sin());
        out[half + i] = S::c(arg.cos());
    }
    Ok(out)
}

/// Feature-wise linear modulation `gamma ⊙ x + delta`.
pub fn film_apply<S: Scalar>(x: &[S], gamma: &[S], delta: &[S]) -> Result<Vec<S>> {
    ensure_same_len("film gamma", gamma.len(), x.len())?;
    ensure_same_len("film delta", delta.len(), x.len())?;
    Ok(x.iter()
        .zip(gamma)
        .zip(delta)
        .map(|((&x, &g), &d)| g * x + d)
        .collect())
}

/// Applies the same modulation to every row of `x`.
pub fn film_rows<S: Scalar>(x: &Matrix<S>, gamma: &[S], delta: &[S]) -> Result<Matrix<S>> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = film_apply(x.row(i), gamma, delta)?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

/// Gradients of [`film_rows`]: `(dx, dgamma, ddelta)`.
pub fn film_rows_backward<S: Scalar>(x: &Matrix<S>, gamma: &[S], dy: &Matrix<S>) -> (Matrix<S>, Vec<S>, Vec<S>) {
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut dgamma = vec![S::zero(); x.cols()];
    let mut ddelta = vec![S::zero(); x.cols()];
    for i in 0..x.rows() {
        let (xr, dyr) = (x.row(i), dy.row(i));
        for j in 0..x.cols() {
            dx.row_mut(i)[j] = dyr[j] * gamma[j];
            dgamma[j] += dyr[j] * xr[j];
            ddelta[j] += dyr[j];
        }
    }
    (dx, dgamma, ddelta)
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub fn silu<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    x.map(|v| v * sigmoid(v))
}

pub fn silu_backward<S: Scalar>(x: &Matrix<S>, dy: &Matrix<S>) -> Matrix<S> {
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        let s = sigmoid(v);
        *d *= s * (S::one() + v * (S::one() - s));
    }
    dx
}

fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Values kept by [`attend`] for the backward pass.
#[derive(Debug, Clone)]
pub struct AttendCache<S> {
    /// Row-stochastic attention weights, `queries × keys`.
    pub weights: Matrix<S>,
}

/// Scaled dot-product attention: per query, `softmax(q·kᵀ/√d)`-weighted sum of values.
pub fn cross_attention<S: Scalar>(queries: &Matrix<S>, keys: &Matrix<S>, values: &Matrix<S>) -> Result<Matrix<S>> {
    attend(queries, keys, values).map(|(out, _)| out)
}

pub fn attend<S: Scalar>(q: &Matrix<S>, k: &Matrix<S>, v: &Matrix<S>) -> Result<(Matrix<S>, AttendCache<S>)> {
    if k.rows() == 0 {
        return Err(Error::Domain("attention over an empty key sequence".into()));
    }
    ensure_same_len("attention keys/values sequence", k.rows(), v.rows())?;
    ensure_same_len("attention query/key dim", q.cols(), k.cols())?;
    let scale = S::one() / S::count(q.cols()).sqrt();
    let mut weights = q.matmul_t(k);
    for i in 0..weights.rows() {
        let row = weights.row_mut(i);
        row.iter_mut().for_each(|s| *s *= scale);
        softmax_in_place(row);
    }
    let out = weights.matmul(v);
    Ok((out, AttendCache { weights }))
}

/// Gradients of [`attend`]: `(dq, dk, dv)`.
pub fn attend_backward<S: Scalar>(
    q: &Matrix<S>,
    k: &Matrix<S>,
    v: &Matrix<S>,
    cache: &AttendCache<S>,
    dout: &Matrix<S>,
) -> (Matrix<S>, Matrix<S>, Matrix<S>) {
    let scale = S::one() / S::count(q.cols()).sqrt();
    let a = &cache.weights;
    let mut dv = Matrix::zeros(v.rows(), v.cols());
    a.t_matmul_acc(dout, &mut dv);
    // dA = dO · Vᵀ, then through the row softmax.
    let da = dout.matmul_t(v);
    let mut ds = Matrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let (ar, dar) = (a.row(i), da.row(i));
        let inner = dot(ar, dar);
        for (j, d) in ds.row_mut(i).iter_mut().enumerate() {
            *d = ar[j] * (dar[j] - inner) * scale;
        }
    }
    let dq = ds.matmul(k);
    let mut dk = Matrix::zeros(k.rows(), k.cols());
    ds.t_matmul_acc(q, &mut dk);
    (dq, dk, dv)
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Weights `N(0, (gain / √fan_in)²)`, zero bias.
    Normal { gain: f64 },
    /// Weights `N(0, (gain / √fan_in)²)`, constant bias.
    NormalBias { gain: f64, bias: f64 },
    /// Weights `N(0, (gain / √fan_in)²)`, no bias.
    NoBias { gain: f64 },
}

/// Affine layer `y = x Wᵀ + b` applied to each row.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let (gain, bias) = match init {
            Init::Normal { gain } => (gain, Some(0.0)),
            Init::NormalBias { gain, bias } => (gain, Some(bias)),
            Init::NoBias { gain } => (gain, None),
        };
        let std = gain / (fan_in as f64).sqrt();
        let w: Vec<S> = (0..fan_in * fan_out).map(|_| S::c(std) * normal::<S, _>(rng)).collect();
        let weight = store.add_matrix(format!("{name}.weight"), Matrix::from_vec(fan_out, fan_in, w).expect("dense shape"));
        let bias = bias.map(|b| store.add_vector(format!("{name}.bias"), vec![S::c(b); fan_out]));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: &Matrix<S>) -> Matrix<S> {
        let mut y = x.matmul_t(store.get(self.weight));
        if let Some(bias) = self.bias {
            let b = store.get(bias).as_slice();
            for i in 0..y.rows() {
                axpy(y.row_mut(i), S::one(), b);
            }
        }
        y
    }

    /// Accumulates `dW`, `db` and returns `dx`.
    pub fn backward<S: Scalar>(&self, store: &ParamStore<S>, grads: &mut Grads<S>, x: &Matrix<S>, dy: &Matrix<S>) -> Matrix<S> {
        dy.t_matmul_acc(x, grads.get_mut(self.weight));
        if let Some(bias) = self.bias {
            axpy(grads.get_mut(bias).as_mut_slice(), S::one(), &dy.col_sums());
        }
        dy.matmul(store.get(self.weight))
    }
}

/// FiLM conditioning: `gamma` and `delta` are dense projections of a conditioning vector.
#[derive(Debug, Clone)]
pub struct Film {
    pub gamma: Dense,
    pub delta: Dense,
}

impl Film {
    /// `gamma` starts near 1 and `delta` near 0.
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        cond_dim: usize,
        features: usize,
        rng: &mut R,
    ) -> Self {
        let gamma = Dense::new(store, &format!("{name}.gamma"), cond_dim, features, Init::NormalBias { gain: 0.1, bias: 1.0 }, rng);
        let delta = Dense::new(store, &format!("{name}.delta"), cond_dim, features, Init::Normal { gain: 0.1 }, rng);
        Self { gamma, delta }
    }

    /// Returns `(gamma, delta)` for a conditioning row vector.
    pub fn params<S: Scalar>(&self, store: &ParamStore<S>, cond: &Matrix<S>) -> (Vec<S>, Vec<S>) {
        (
            self.gamma.forward(store, cond).into_vec(),
            self.delta.forward(store, cond).into_vec(),
        )
    }

    /// Backward through the projections given `dgamma`, `ddelta`; returns `dcond`.
    pub fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        grads: &mut Grads<S>,
        cond: &Matrix<S>,
        dgamma: Vec<S>,
        ddelta: Vec<S>,
    ) -> Matrix<S> {
        let mut dcond = self.gamma.backward(store, grads, cond, &Matrix::row_vector(dgamma));
        dcond.add_assign(&self.delta.backward(store, grads, cond, &Matrix::row_vector(ddelta)));
        dcond
    }
}

/// Single-head attention with query, key, value and output projections; the key
/// projection has no bias.
#[derive(Debug, Clone)]
pub struct Attention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<S> {
    q: Matrix<S>,
    k: Matrix<S>,
    v: Matrix<S>,
    attend: AttendCache<S>,
    mixed: Matrix<S>,
}

impl<S: Scalar> AttentionCache<S> {
    pub fn weights(&self) -> &Matrix<S> {
        &self.attend.weights
    }
}

impl Attention {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        ctx_dim: usize,
        rng: &mut R,
    ) -> Self {
        let init = Init::Normal { gain: 1.0 };
        Self {
            query: Dense::new(store, &format!("{name}.query"), dim, dim, init, rng),
            key: Dense::new(store, &format!("{name}.key"), ctx_dim, dim, Init::NoBias { gain: 1.0 }, rng),
            value: Dense::new(store, &format!("{name}.value"), ctx_dim, dim, init, rng),
            output: Dense::new(store, &format!("{name}.output"), dim, dim, Init::Normal { gain: 0.5 }, rng),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: &Matrix<S>,
        ctx: &Matrix<S>,
    ) -> Result<(Matrix<S>, AttentionCache<S>)> {
        let q = self.query.forward(store, x);
        let k = self.key.forward(store, ctx);
        let v = self.value.forward(store, ctx);
        let (mixed, attend) = attend(&q, &k, &v)?;
        let out = self.output.forward(store, &mixed);
        Ok((out, AttentionCache { q, k, v, attend, mixed }))
    }

    /// Returns `(dx, dctx)`. For self-attention the caller sums both.
    pub fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        grads: &mut Grads<S>,
        x: &Matrix<S>,
        ctx: &Matrix<S>,
        cache: &AttentionCache<S>,
        dout: &Matrix<S>,
    ) -> (Matrix<S>, Matrix<S>) {
        let dmixed = self.output.backward(store, grads, &cache.mixed, dout);
        let (dq, dk, dv) = attend_backward(&cache.q, &cache.k, &cache.v, &cache.attend, &dmixed);
        let dx = self.query.backward(store, grads, x, &dq);
        let mut dctx = self.key.backward(store, grads, ctx, &dk);
        dctx.add_assign(&self.value.backward(store, grads, ctx, &dv));
        (dx, dctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn film_identity_and_arithmetic() {
        let x = [0.3f64, -0.7];
        assert_eq!(film_apply(&x, &[1.0, 1.0], &[0.0, 0.0]).unwrap(), vec![0.3, -0.7]);
        assert_eq!(film_apply(&[0.5f64], &[2.0], &[1.0]).unwrap(), vec![2.0]);
        assert!(matches!(film_apply(&x, &[1.0], &[0.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn film_matches_elementwise_recomputation() {
        let mut rng = seeded(11);
        let x: Vec<f64> = crate::rng::normal_vec(&mut rng, 8);
        let g: Vec<f64> = crate::rng::normal_vec(&mut rng, 8);
        let d: Vec<f64> = crate::rng::normal_vec(&mut rng, 8);
        let out = film_apply(&x, &g, &d).unwrap();
        for i in 0..8 {
            assert_eq!(out[i], g[i] * x[i] + d[i]);
        }
    }

    #[test]
    fn sinusoid_layout_and_range() {
        assert_eq!(sinusoidal_embed::<f64>(0, 4).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(sinusoidal_embed::<f32>(417, 32).unwrap(), sinusoidal_embed::<f32>(417, 32).unwrap());
        for t in [1, 7, 100, 999] {
            assert!(sinusoidal_embed::<f64>(t, 16).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert!(matches!(sinusoidal_embed::<f32>(3, 5), Err(Error::Config(_))));
    }

    #[test]
    fn single_key_attention_returns_its_value() {
        let q = Matrix::from_rows(&[vec![1.0f64, 0.0], vec![-3.0, 2.0], vec![0.1, 0.1]]).unwrap();
        let k = Matrix::from_rows(&[vec![0.4f64, 0.9]]).unwrap();
        let v = Matrix::from_rows(&[vec![1.5f64, -2.0, 0.25]]).unwrap();
        let out = cross_attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), v.row(0));
        }
    }

    #[test]
    fn identical_values_pass_through() {
        let mut rng = seeded(3);
        let q = Matrix::from_vec(3, 4, crate::rng::normal_vec(&mut rng, 12)).unwrap();
        let k = Matrix::from_vec(5, 4, crate::rng::normal_vec(&mut rng, 20)).unwrap();
        let v = Matrix::from_rows(&vec![vec![0.7f64, -0.2]; 5]).unwrap();
        let out = cross_attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            assert!((out.get(i, 0) - 0.7).abs() < 1e-12);
            assert!((out.get(i, 1) + 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_keys_are_rejected() {
        let q = Matrix::<f32>::zeros(2, 3);
        let k = Matrix::<f32>::zeros(0, 3);
        let v = Matrix::<f32>::zeros(0, 3);
        assert!(matches!(cross_attention(&q, &k, &v), Err(Error::Domain(_))));
    }

    #[test]
    fn attention_rows_are_a_simplex() {
        let mut rng = seeded(5);
        let q = Matrix::from_vec(6, 8, crate::rng::normal_vec::<f32, _>(&mut rng, 48)).unwrap();
        let k = Matrix::from_vec(9, 8, crate::rng::normal_vec::<f32, _>(&mut rng, 72)).unwrap();
        let v = Matrix::from_vec(9, 2, crate::rng::normal_vec::<f32, _>(&mut rng, 18)).unwrap();
        let (_, cache) = attend(&q, &k, &v).unwrap();
        for i in 0..6 {
            let row = cache.weights.row(i);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
