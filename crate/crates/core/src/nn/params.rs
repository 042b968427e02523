use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;
use crate::scalar::Scalar;

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    /// Logical shape written to checkpoints (rank 1 for biases and tables of one row).
    pub shape: Vec<usize>,
    pub value: Matrix<S>,
}

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add_matrix(&mut self, name: impl Into<String>, value: Matrix<S>) -> ParamId {
        let shape = vec![value.rows(), value.cols()];
        self.push(name.into(), shape, value)
    }

    pub fn add_vector(&mut self, name: impl Into<String>, value: Vec<S>) -> ParamId {
        let shape = vec![value.len()];
        self.push(name.into(), shape, Matrix::row_vector(value))
    }

    fn push(&mut self, name: String, shape: Vec<usize>, value: Matrix<S>) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param { name, shape, value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix<S> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.params[id.0].value
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Scalar at flat coordinate `index` counted across all tensors in order.
    pub fn coordinate(&self, index: usize) -> (ParamId, usize) {
        let mut rest = index;
        for (i, p) in self.params.iter().enumerate() {
            let n = p.value.as_slice().len();
            if rest < n {
                return (ParamId(i), rest);
            }
            rest -= n;
        }
        panic!("coordinate {index} out of range");
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(Error::Format(format!(
                    "tensor mismatch: expected {} {:?}, found {} {:?}",
                    dst.name, dst.shape, src.name, src.shape
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub(crate) fn from_params(params: Vec<Param<S>>) -> Self {
        Self { params }
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads<S> {
    bufs: Vec<Matrix<S>>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        Self {
            bufs: store
                .params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix<S> {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.bufs[id.0]
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.as_mut_slice().iter_mut().for_each(|x| *x = S::zero());
        }
    }

    pub fn coordinate(&self, id: ParamId, offset: usize) -> S {
        self.bufs[id.0].as_slice()[offset]
    }

    pub fn scale(&mut self, factor: S) {
        for b in &mut self.bufs {
            b.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    config: AdamConfig,
    step: u64,
    m: Vec<Matrix<S>>,
    v: Vec<Matrix<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros = Grads::zeros_like(store).bufs;
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore<S>, grads: &Grads<S>, lr: f64) {
        self.step += 1;
        let b1 = S::c(self.config.beta1);
        let b2 = S::c(self.config.beta2);
        let eps = S::c(self.config.eps);
        let bc1 = S::c(1.0 - self.config.beta1.powi(self.step as i32));
        let bc2 = S::c(1.0 - self.config.beta2.powi(self.step as i32));
        let lr = S::c(lr);
        for (i, p) in store.params.iter_mut().enumerate() {
            let g = grads.bufs[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (((w, &g), m), v) in p.value.as_mut_slice().iter_mut().zip(g).zip(m).zip(v) {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
