//! Adam with bias correction and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::config("eps", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Moment estimates and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    /// Current learning rate; the scheduler lowers it.
    pub lr: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            lr: config.lr,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam update of `params` from `grad`.
///
/// A non-finite gradient entry leaves `state` and `params` untouched.
pub fn adam_step<T: Real>(state: &mut AdamState<T>, params: &mut [T], grad: &[T]) -> Result<()> {
    if params.len() != state.len() || grad.len() != state.len() {
        return Err(Error::LayoutMismatch {
            expected: state.len(),
            got: if params.len() != state.len() { params.len() } else { grad.len() },
        });
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let AdamConfig { beta1, beta2, eps, .. } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
    let step = T::of(state.lr / c1);
    let inv_c2 = T::of(1.0 / c2);
    let eps = T::of(eps);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + one_b1 * g;
        state.v[i] = b2 * state.v[i] + one_b2 * g * g;
        params[i] -= step * state.m[i] / ((state.v[i] * inv_c2).sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Relative improvement a loss needs over the best so far to count.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 50,
            min_lr: 1e-6,
            threshold: 1e-4,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::config("plateau_factor", "must lie in (0, 1)"));
        }
        if self.patience == 0 {
            return Err(Error::config("plateau_patience", "must be at least 1"));
        }
        if !(self.min_lr.is_finite() && self.min_lr >= 0.0) {
            return Err(Error::config("min_lr", "must be nonnegative"));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::config("plateau_threshold", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig) -> Self {
        Self {
            config,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }
}

/// Feeds one epoch loss; returns the (possibly reduced) learning rate.
///
/// After `patience` consecutive epochs without relative improvement the rate
/// is multiplied by `factor` (floored at `min_lr`) and the count restarts.
pub fn scheduler_step(sched: &mut PlateauScheduler, lr: f64, epoch_loss: f64) -> f64 {
    let c = sched.config;
    if epoch_loss < sched.best * (1.0 - c.threshold) {
        sched.best = epoch_loss;
        sched.bad_epochs = 0;
        return lr;
    }
    sched.bad_epochs += 1;
    if sched.bad_epochs >= c.patience {
        sched.bad_epochs = 0;
        return (lr * c.factor).max(c.min_lr);
    }
    lr
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = AdamState::<f64>::new(3, AdamConfig::default());
        let mut p = vec![0.5, -1.0, 2.0];
        adam_step(&mut s, &mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = g, v̂ = g², so Δ = −η·g/(|g| + ε).
        let mut s = AdamState::<f64>::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        adam_step(&mut s, &mut p, &[1.0]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
        assert!((p[0] + 1e-3).abs() < 1e-10);
    }

    fn scalar_adam(lr: f64, steps: i32) -> f64 {
        let (mut th, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = th;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            th -= lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        th
    }

    #[test]
    fn quadratic_matches_scalar_simulation() {
        for lr in [1e-3, 1e-2] {
            let mut s = AdamState::<f64>::new(1, AdamConfig { lr, ..AdamConfig::default() });
            let mut theta = vec![1.0];
            for _ in 0..1000 {
                let g = [theta[0]];
                adam_step(&mut s, &mut theta, &g).unwrap();
            }
            let oracle = scalar_adam(lr, 1000);
            assert!((theta[0] - oracle).abs() < 1e-12, "{} vs {oracle}", theta[0]);
        }
        // at the default rate the iterate has only covered a quarter of the way
        assert!((scalar_adam(1e-3, 1000) - 0.25767).abs() < 1e-4);
        assert!(scalar_adam(1e-2, 1000).abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_aborts_the_step() {
        let mut s = AdamState::<f64>::new(2, AdamConfig::default());
        let mut p = vec![1.0, 1.0];
        let err = adam_step(&mut s, &mut p, &[0.1, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1 }));
        assert_eq!(s.t, 0);
        assert_eq!(p, vec![1.0, 1.0]);
        assert!(adam_step(&mut s, &mut p, &[0.1]).is_err());
    }

    #[test]
    fn moments_stay_nonnegative_and_steps_count() {
        let mut s = AdamState::<f32>::new(2, AdamConfig::default());
        let mut p = vec![1.0f32, -1.0];
        for k in 0..10 {
            adam_step(&mut s, &mut p, &[(k as f32).sin(), -3.0]).unwrap();
            assert!(s.v.iter().all(|&v| v >= 0.0));
            assert_eq!(s.t, k + 1);
        }
    }

    #[test]
    fn decreasing_losses_keep_the_rate() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        let mut lr = 1e-3;
        for k in 0..500 {
            lr = scheduler_step(&mut s, lr, 1.0 / (k + 1) as f64);
        }
        assert_eq!(lr, 1e-3);
    }

    #[test]
    fn flat_losses_halve_once_after_patience() {
        let cfg = PlateauConfig::default();
        let mut s = PlateauScheduler::new(cfg);
        let mut lr = 1e-3;
        let mut trace = Vec::new();
        for _ in 0..cfg.patience + 1 {
            lr = scheduler_step(&mut s, lr, 0.7);
            trace.push(lr);
        }
        assert_eq!(lr, 5e-4);
        assert_eq!(trace.iter().filter(|&&v| v == 5e-4).count(), 1);
    }

    #[test]
    fn alternating_improvement_never_triggers() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        let mut lr = 1e-3;
        let mut loss = 1.0;
        for k in 0..100 {
            if k % 2 == 0 {
                loss *= 0.9;
            }
            lr = scheduler_step(&mut s, lr, loss);
        }
        assert_eq!(lr, 1e-3);
    }

    #[test]
    fn rate_is_floored() {
        let cfg = PlateauConfig {
            patience: 1,
            ..PlateauConfig::default()
        };
        let mut s = PlateauScheduler::new(cfg);
        let mut lr = 1e-5;
        for _ in 0..20 {
            lr = scheduler_step(&mut s, lr, 1.0);
        }
        assert_eq!(lr, cfg.min_lr);
    }

    proptest! {
        #[test]
        fn rate_never_increases(losses in prop::collection::vec(0.0f64..10.0, 1..300)) {
            let mut s = PlateauScheduler::new(PlateauConfig { patience: 3, ..PlateauConfig::default() });
            let mut lr = 1e-3;
            for l in losses {
                let next = scheduler_step(&mut s, lr, l);
                prop_assert!(next <= lr);
                prop_assert!(next >= 1e-6);
                lr = next;
            }
        }

        #[test]
        fn update_is_scale_invariant_without_eps(
            grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..6),
            c in 0.01f64..100.0,
        ) {
            let cfg = AdamConfig { eps: 0.0, ..AdamConfig::default() };
            let mut a = AdamState::<f64>::new(4, cfg);
            let mut b = AdamState::<f64>::new(4, cfg);
            let mut pa = vec![0.3; 4];
            let mut pb = vec![0.3; 4];
            for g in &grads {
                let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
                adam_step(&mut a, &mut pa, g).unwrap();
                adam_step(&mut b, &mut pb, &scaled).unwrap();
            }
            for (x, y) in pa.iter().zip(&pb) {
                if x.is_finite() {
                    prop_assert!((x - y).abs() < 1e-10);
                }
            }
        }
    }
}
