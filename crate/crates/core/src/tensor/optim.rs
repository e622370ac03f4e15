//! First-order optimizers with decoupled weight decay.

use std::collections::BTreeMap;

use super::{Tensor, TensorError};

/// AdamW hyperparameters. `weight_decay = 0` makes this plain Adam.
#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_global_norm: Option<f64>,
}

impl AdamConfig {
    pub fn adamw(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
            clip_global_norm: Some(10.0),
        }
    }

    pub fn adam(lr: f64) -> Self {
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::adamw(lr)
        }
    }

    pub fn without_clipping(mut self) -> Self {
        self.clip_global_norm = None;
        self
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Tensor,
    v: Tensor,
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One AdamW update over `(name, parameter, gradient)` triples.
    ///
    /// Weight decay multiplies the parameter by `(1 − lr·λ)` independently of
    /// the gradient moments. Gradients are optionally clipped by their joint
    /// global norm first.
    pub fn step<S: AsRef<str>>(
        &mut self,
        params: &mut [(S, &mut Tensor, Tensor)],
    ) -> Result<(), TensorError> {
        let mut clip_scale = 1.0;
        if let Some(max_norm) = self.config.clip_global_norm {
            let total: f64 = params
                .iter()
                .map(|(_, _, g)| g.data().iter().map(|v| v * v).sum::<f64>())
                .sum();
            let norm = total.sqrt();
            if norm > max_norm {
                clip_scale = max_norm / norm;
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, param, grad) in params.iter_mut() {
            if grad.shape() != param.shape() {
                return Err(TensorError::ShapeMismatch {
                    expected: param.shape().to_vec(),
                    found: grad.shape().to_vec(),
                });
            }
            let entry = self.moments.entry(name.as_ref().to_string()).or_insert_with(|| Moments {
                m: Tensor::zeros(param.shape()),
                v: Tensor::zeros(param.shape()),
            });
            let pd = param.data_mut();
            let md = entry.m.data_mut();
            let vd = entry.v.data_mut();
            for i in 0..pd.len() {
                let g = grad.data()[i] * clip_scale;
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * g;
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * g * g;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * pd[i]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_reduces_to_decoupled_decay() {
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..AdamConfig::adamw(0.01)
        };
        let mut state = OptimizerState::new(cfg);
        let mut p = Tensor::from_vec(vec![2.0, -3.0]);
        let g = Tensor::zeros(&[2]);
        state.step(&mut [("p", &mut p, g)]).unwrap();
        // p <- p (1 - lr * wd); the adaptive term is exactly zero
        assert!((p.data()[0] - 2.0 * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
        assert!((p.data()[1] - (-3.0) * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn single_step_closed_form() {
        // fresh state, g = 1, lr = 1e-3, defaults: update ≈ -1e-3
        let mut state = OptimizerState::new(AdamConfig::adam(1e-3));
        let mut p = Tensor::from_vec(vec![0.0]);
        let g = Tensor::from_vec(vec![1.0]);
        state.step(&mut [("p", &mut p, g)]).unwrap();
        assert!(
            (p.data()[0] + 1e-3).abs() < 1e-8,
            "update {} should be ≈ -1e-3",
            p.data()[0]
        );
    }

    #[test]
    fn constant_gradient_update_magnitude_approaches_lr() {
        // Independent hand-iteration of the Adam recurrences as the oracle.
        let lr = 1e-3;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let g = 0.37;
        let mut m = 0.0;
        let mut v = 0.0;
        let mut expected_updates = Vec::new();
        for t in 1..=300 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1_pow(b1, t));
            let vh = v / (1.0 - b1_pow(b2, t));
            expected_updates.push(lr * mh / (vh.sqrt() + eps));
        }

        let mut state = OptimizerState::new(AdamConfig::adam(lr).without_clipping());
        let mut p = Tensor::from_vec(vec![5.0]);
        let mut prev = 5.0;
        let mut last_update = 0.0;
        for exp_u in &expected_updates {
            state
                .step(&mut [("p", &mut p, Tensor::from_vec(vec![g]))])
                .unwrap();
            last_update = prev - p.data()[0];
            prev = p.data()[0];
            assert!((last_update - exp_u).abs() < 1e-12, "hand iteration mismatch");
        }
        // Adam normalizes a constant gradient to a unit step of size lr.
        assert!(
            (last_update - lr).abs() < 0.05 * lr,
            "update {last_update} should approach lr {lr}"
        );

        fn b1_pow(b: f64, t: usize) -> f64 {
            b.powi(t as i32)
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut state = OptimizerState::new(AdamConfig::adamw(1e-3));
        let mut p = Tensor::zeros(&[2, 2]);
        let g = Tensor::zeros(&[4]);
        assert!(state.step(&mut [("p", &mut p, g)]).is_err());
    }

    #[test]
    fn clipping_rescales_to_global_norm() {
        // Adam's first step is scale-invariant when epsilon is negligible, so
        // make epsilon large enough for the clipped magnitude to show through.
        let cfg = AdamConfig {
            lr: 1.0,
            epsilon: 1.0,
            weight_decay: 0.0,
            clip_global_norm: Some(1.0),
            ..AdamConfig::adamw(1.0)
        };
        let mut state = OptimizerState::new(cfg);
        let mut a = Tensor::from_vec(vec![0.0]);
        let mut b = Tensor::from_vec(vec![0.0]);
        // joint norm 5, clipped to 1 -> effective grads (0.6, 0.8)
        let ga = Tensor::from_vec(vec![3.0]);
        let gb = Tensor::from_vec(vec![4.0]);
        state
            .step(&mut [("a", &mut a, ga), ("b", &mut b, gb)])
            .unwrap();
        // update = lr * g_eff / (g_eff + eps) after bias correction
        assert!((-a.data()[0] - 0.6 / 1.6).abs() < 1e-12, "a update {}", a.data()[0]);
        assert!((-b.data()[0] - 0.8 / 1.8).abs() < 1e-12, "b update {}", b.data()[0]);
    }
}
