use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::{GradSet, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows, p.value.cols))
                .collect::<Vec<_>>()
        };
        OptimizerState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &GradSet, state: &mut OptimizerState) -> Result<()> {
    if !grads.congruent_with(params) || state.first.len() != params.len() {
        return Err(Error::arg("gradient/optimizer shapes do not match the parameters"));
    }
    if let Some(i) = grads.grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient for `{}`",
            params.params[i].name
        )));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .params
        .iter_mut()
        .zip(&grads.grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((w, &gi), mi), vi) in p
            .value
            .data
            .iter_mut()
            .zip(&g.data)
            .zip(&mut m.data)
            .zip(&mut v.data)
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
