use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect()
        };
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam step. Rejects non-finite gradients before
/// touching anything.
pub fn adam_update(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
) -> Result<()> {
    if !params.same_layout(grads) || state.m.len() != params.len() {
        return Err(Error::Shape(
            "gradients or optimizer state do not match the parameters".into(),
        ));
    }
    if !grads.all_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, (p, g)) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .enumerate()
    {
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "x",
            Tensor {
                shape: vec![values.len()],
                data: values,
            },
        );
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = store(vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p, AdamConfig::default());
        for _ in 0..10 {
            adam_update(&mut p, &g, &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 10);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let lr = 0.01;
        let mut p = store(vec![0.0, 0.0]);
        let g = store(vec![0.3, -5.0]);
        let mut st = AdamState::new(&p, AdamConfig::with_lr(lr));
        let mut last = p.clone();
        for _ in 0..1000 {
            last = p.clone();
            adam_update(&mut p, &g, &mut st).unwrap();
        }
        for i in 0..2 {
            let step = (p.flat_get(i) - last.flat_get(i)).abs();
            assert!((step - lr).abs() <= 0.05 * lr, "coordinate {i}: {step}");
        }
        assert!(p.flat_get(0) < 0.0 && p.flat_get(1) > 0.0);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut p = store(vec![0.5, 0.25]);
            let mut st = AdamState::new(&p, AdamConfig::default());
            for k in 0..20 {
                let g = store(vec![(k as f64).sin(), (k as f64).cos()]);
                adam_update(&mut p, &g, &mut st).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = store(vec![1.0]);
        let g = store(vec![f64::NAN]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(
            adam_update(&mut p, &g, &mut st),
            Err(Error::Numeric(_))
        ));
        assert_eq!(p.flat_get(0), 1.0);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = store(vec![3.0, 4.0]);
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
