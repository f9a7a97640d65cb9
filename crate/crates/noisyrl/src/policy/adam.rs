//! Bias-corrected Adam ascent with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::{PolicyError, PolicyParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-2,
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-8,
            grad_clip_norm: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        OptimizerState {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step: 0,
            config,
        }
    }
}

/// One ascent step on the surrogate objective. The gradient is clipped to the
/// configured global norm before entering the moment estimates; non-finite
/// gradient entries abort the update.
pub fn adam_update(
    state: &OptimizerState,
    params: &PolicyParams,
    gradient: &[f64],
) -> Result<(OptimizerState, PolicyParams), PolicyError> {
    if gradient.len() != params.dim() {
        return Err(PolicyError::DimensionMismatch {
            params: params.dim(),
            input: gradient.len(),
        });
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(PolicyError::NonFiniteGradient(i));
    }

    let norm: f64 = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = if norm > state.config.grad_clip_norm && norm > 0.0 {
        state.config.grad_clip_norm / norm
    } else {
        1.0
    };

    let mut next = state.clone();
    next.step += 1;
    let t = next.step as i32;
    let c = &state.config;
    let mut weights = params.weights.clone();
    for i in 0..weights.len() {
        let g = gradient[i] * scale;
        next.first_moment[i] = c.beta1 * next.first_moment[i] + (1.0 - c.beta1) * g;
        next.second_moment[i] = c.beta2 * next.second_moment[i] + (1.0 - c.beta2) * g * g;
        let m_hat = next.first_moment[i] / (1.0 - c.beta1.powi(t));
        let v_hat = next.second_moment[i] / (1.0 - c.beta2.powi(t));
        weights[i] += c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }

    Ok((
        next,
        PolicyParams {
            weights,
            version: params.version + 1,
        },
    ))
}
