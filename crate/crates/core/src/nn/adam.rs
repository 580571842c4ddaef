use super::{Gradients, LayerParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

fn update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// One bias-corrected Adam update of weights and biases.
pub fn adam_step(params: &mut LayerParams, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    if grads.weights.shape() != params.weights.shape() || grads.biases.shape() != params.biases.shape() {
        return Err(Error::ShapeMismatch("gradient shape differs from parameter shape".into()));
    }
    if !grads.weights.is_finite() || !grads.biases.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    params.step_count += 1;
    let t = params.step_count;
    let LayerParams { weights, biases, weight_moments, bias_moments, .. } = params;
    update(weights.data_mut(), grads.weights.data(), weight_moments.m.data_mut(), weight_moments.v.data_mut(), t, cfg);
    update(biases.data_mut(), grads.biases.data(), bias_moments.m.data_mut(), bias_moments.v.data_mut(), t, cfg);
    Ok(())
}
