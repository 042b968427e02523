use rand::seq::index::sample as sample_indices;

use crate::error::{Error, Result};
use crate::nn::params::{Adam, Grads, ParamStore};
use crate::rng::seeded;
use crate::scalar::Scalar;

/// A differentiable scalar loss over a parameter store.
pub trait Objective<S: Scalar> {
    fn loss(&self, params: &ParamStore<S>) -> Result<S>;

    /// Returns the loss and accumulates its gradient into `grads`.
    fn loss_and_grad(&self, params: &ParamStore<S>, grads: &mut Grads<S>) -> Result<S>;
}

/// One optimizer step on `objective`; returns the loss before the update.
pub fn fit_step<S: Scalar, O: Objective<S> + ?Sized>(
    params: &mut ParamStore<S>,
    adam: &mut Adam<S>,
    objective: &O,
    lr: f64,
) -> Result<S> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    let mut grads = Grads::zeros_like(params);
    let loss = objective.loss_and_grad(params, &mut grads)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            stage: "training".into(),
            detail: format!("loss {loss} at optimizer step {}", adam.steps_taken() + 1),
        });
    }
    adam.update(params, &grads, lr);
    if !params.is_finite() {
        return Err(Error::NonFinite {
            stage: "training".into(),
            detail: format!("parameters after optimizer step {}", adam.steps_taken()),
        });
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per checked tensor, in store order.
    pub per_tensor: Vec<(String, f64)>,
}

/// `|a − b| / (|a| + |b| + 1e−12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares analytic gradients with central differences at up to
/// `samples_per_tensor` seeded coordinates of every tensor.
pub fn finite_diff_check<O: Objective<f64> + ?Sized>(
    params: &ParamStore<f64>,
    objective: &O,
    eps: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference eps must lie in [1e-6, 1e-3], got {eps}")));
    }
    let mut grads = Grads::zeros_like(params);
    objective.loss_and_grad(params, &mut grads)?;

    let mut rng = seeded(seed);
    let mut probe = params.clone();
    let mut per_tensor = Vec::new();
    let mut offset = 0;
    for p in params.params() {
        let n = p.value.as_slice().len();
        let picks: Vec<usize> = if n <= samples_per_tensor {
            (0..n).collect()
        } else {
            sample_indices(&mut rng, n, samples_per_tensor).into_vec()
        };
        let mut worst: f64 = 0.0;
        for local in picks {
            let (id, idx) = params.coordinate(offset + local);
            let orig = params.get(id).as_slice()[idx];
            probe.get_mut(id).as_mut_slice()[idx] = orig + eps;
            let up = objective.loss(&probe)?;
            probe.get_mut(id).as_mut_slice()[idx] = orig - eps;
            let down = objective.loss(&probe)?;
            probe.get_mut(id).as_mut_slice()[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(grads.coordinate(id, idx), numeric));
        }
        per_tensor.push((p.name.clone(), worst));
        offset += n;
    }
    let max_rel_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_tensor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::matrix::Matrix;
    use crate::nn::params::{AdamConfig, ParamId};

    /// Least squares for `y = w·x + b`.
    struct LinearFit {
        w: ParamId,
        b: ParamId,
        xs: Vec<[f64; 2]>,
        ys: Vec<f64>,
    }

    impl<S: Scalar> Objective<S> for LinearFit {
        fn loss(&self, p: &ParamStore<S>) -> Result<S> {
            let mut g = Grads::zeros_like(p);
            self.loss_and_grad(p, &mut g)
        }

        fn loss_and_grad(&self, p: &ParamStore<S>, g: &mut Grads<S>) -> Result<S> {
            let w = p.get(self.w).as_slice();
            let b = p.get(self.b).as_slice()[0];
            let n = S::count(self.xs.len());
            let mut loss = S::zero();
            for (x, &y) in self.xs.iter().zip(&self.ys) {
                let x = [S::c(x[0]), S::c(x[1])];
                let r = w[0] * x[0] + w[1] * x[1] + b - S::c(y);
                loss += r * r / n;
                let d = S::c(2.0) * r / n;
                g.get_mut(self.w).as_mut_slice()[0] += d * x[0];
                g.get_mut(self.w).as_mut_slice()[1] += d * x[1];
                g.get_mut(self.b).as_mut_slice()[0] += d;
            }
            Ok(loss)
        }
    }

    fn linear_problem() -> (ParamStore<f64>, LinearFit) {
        let mut store = ParamStore::new();
        let w = store.add_matrix("w", Matrix::from_vec(1, 2, vec![0.3, -0.8]).unwrap());
        let b = store.add_vector("b", vec![0.1]);
        let xs = vec![[1.0, 2.0], [-0.5, 0.25], [2.0, -1.0], [0.0, 3.0]];
        let ys = xs.iter().map(|x| 1.5 * x[0] - 2.0 * x[1] + 0.5).collect();
        (store, LinearFit { w, b, xs, ys })
    }

    #[test]
    fn linear_quadratic_gradients_are_exact() {
        let (store, obj) = linear_problem();
        let report = finite_diff_check(&store, &obj, 1e-4, 10, 0).unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn minimum_has_well_defined_relative_error() {
        let (mut store, obj) = linear_problem();
        store.get_mut(obj.w).as_mut_slice().copy_from_slice(&[1.5, -2.0]);
        store.get_mut(obj.b).as_mut_slice()[0] = 0.5;
        let report = finite_diff_check(&store, &obj, 1e-5, 10, 0).unwrap();
        assert!(report.max_rel_error.is_finite());
        assert!(report.max_rel_error <= 1.0);
        assert_eq!(obj.loss(&store).unwrap(), 0.0);
    }

    #[test]
    fn eps_outside_range_is_rejected() {
        let (store, obj) = linear_problem();
        assert!(finite_diff_check(&store, &obj, 1e-2, 1, 0).is_err());
        assert!(finite_diff_check(&store, &obj, 1e-8, 1, 0).is_err());
    }

    struct Quadratic {
        p: ParamId,
    }

    impl Objective<f32> for Quadratic {
        fn loss(&self, p: &ParamStore<f32>) -> Result<f32> {
            let x = p.get(self.p).as_slice()[0];
            Ok((x - 3.0) * (x - 3.0))
        }

        fn loss_and_grad(&self, p: &ParamStore<f32>, g: &mut Grads<f32>) -> Result<f32> {
            let x = p.get(self.p).as_slice()[0];
            g.get_mut(self.p).as_mut_slice()[0] += 2.0 * (x - 3.0);
            self.loss(p)
        }
    }

    #[test]
    fn scalar_quadratic_loss_strictly_decreases() {
        let mut store = ParamStore::<f32>::new();
        let p = store.add_vector("p", vec![-1.0]);
        let obj = Quadratic { p };
        let mut adam = Adam::new(&store, AdamConfig::default());
        let mut prev = f32::INFINITY;
        for _ in 0..100 {
            let loss = fit_step(&mut store, &mut adam, &obj, 1e-2).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn zero_residual_batch_keeps_parameters() {
        let mut store = ParamStore::<f32>::new();
        let p = store.add_vector("p", vec![3.0]);
        let obj = Quadratic { p };
        let mut adam = Adam::new(&store, AdamConfig::default());
        for _ in 0..5 {
            assert_eq!(fit_step(&mut store, &mut adam, &obj, 1e-3).unwrap(), 0.0);
        }
        assert_eq!(store.get(p).as_slice()[0], 3.0);
    }

    #[test]
    fn non_positive_learning_rate_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        let p = store.add_vector("p", vec![0.0]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        assert!(fit_step(&mut store, &mut adam, &Quadratic { p }, 0.0).is_err());
    }

    struct Exploding;

    impl Objective<f32> for Exploding {
        fn loss(&self, _: &ParamStore<f32>) -> Result<f32> {
            Ok(f32::NAN)
        }

        fn loss_and_grad(&self, p: &ParamStore<f32>, _: &mut Grads<f32>) -> Result<f32> {
            self.loss(p)
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut store = ParamStore::<f32>::new();
        store.add_vector("p", vec![0.0]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        let err = fit_step(&mut store, &mut adam, &Exploding, 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
