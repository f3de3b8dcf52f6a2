use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::Result;

/// Hyper-parameters shared by every Adam instance in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr0: f64,
    /// Fractional learning-rate reduction per schedule tick.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments plus a step-decay learning-rate schedule. The owner of the
/// state decides what a schedule tick means (a round, an epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub ticks: u32,
    m: ModelParams,
    v: ModelParams,
}

impl AdamState {
    pub fn new(like: &ModelParams, config: AdamConfig) -> Self {
        let dims = like.dims();
        Self {
            config,
            step: 0,
            ticks: 0,
            m: ModelParams::zeros(dims),
            v: ModelParams::zeros(dims),
        }
    }

    /// `lr0 · (1 − decay)^ticks`.
    pub fn effective_lr(&self) -> f64 {
        self.config.lr0 * (1.0 - self.config.decay).powi(self.ticks as i32)
    }

    pub fn tick(&mut self) {
        self.ticks += 1;
    }

    pub fn set_ticks(&mut self, ticks: u32) {
        self.ticks = ticks;
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState) -> Result<()> {
    params.ensure_same_shape(grads, "adam step")?;
    params.ensure_same_shape(&state.m, "adam state")?;
    state.step += 1;
    let AdamConfig {
        beta1, beta2, eps, ..
    } = state.config;
    let lr = state.effective_lr();
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, &g), m), v) in params
        .values_mut()
        .zip(grads.values())
        .zip(state.m.values_mut())
        .zip(state.v.values_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Dense};
    use ndarray::array;

    fn scalar(v: f64) -> ModelParams {
        let one = |w: f64| Dense {
            weight: array![[w]],
            bias: array![0.0],
        };
        ModelParams::from_layers([one(v), one(1.0), one(1.0)]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = init_params(4, 3, 2, 5).unwrap();
        let before = p.clone();
        let g = ModelParams::zeros(p.dims());
        let mut s = AdamState::new(&p, AdamConfig::default());
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut s).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(0.5);
        let mut g = ModelParams::zeros(p.dims());
        g.layers[0].weight[[0, 0]] = 1.0;
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut s).unwrap();
        // m = 0.1, v = 0.001; bias-corrected both 1, so Δ = lr / (1 + eps).
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((p.layers[0].weight[[0, 0]] - expected).abs() < 1e-15);
        // Untouched coordinates stay put.
        assert_eq!(p.layers[1].weight[[0, 0]], 1.0);

        // Constant gradient keeps m̂/√v̂ at 1 on later steps too.
        adam_step(&mut p, &g, &mut s).unwrap();
        assert!((p.layers[0].weight[[0, 0]] - (0.5 - 2e-3)).abs() < 1e-10);
    }

    #[test]
    fn decay_ticks_compound() {
        let p = scalar(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        s.tick();
        s.tick();
        assert!((s.effective_lr() - 0.9025e-3).abs() < 1e-18);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = init_params(4, 3, 2, 5).unwrap();
        let g = init_params(5, 3, 2, 5).unwrap();
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &g, &mut s).is_err());
    }
}
