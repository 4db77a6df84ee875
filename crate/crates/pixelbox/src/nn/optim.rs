//! Mini-batch SGD with momentum and weight decay.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {param} at iteration {iteration}")]
    NonFiniteGradient { param: usize, iteration: u64 },
    #[error("parameter/gradient count mismatch: {params} vs {grads}")]
    CountMismatch { params: usize, grads: usize },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    0.0002
}
fn default_lr() -> f64 {
    0.03
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OptimError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(OptimError::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(OptimError::InvalidConfig("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Velocity buffers plus an iteration counter. Velocity shapes mirror
/// the parameter shapes they were created from.
pub struct OptimizerState {
    velocities: Vec<Tensor>,
    pub iteration: u64,
}

impl OptimizerState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            velocities: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            iteration: 0,
        }
    }

    /// One update: `v <- mu v - eta (g + lambda p); p <- p + v`.
    pub fn step(
        &mut self,
        cfg: &SgdConfig,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
    ) -> Result<(), OptimError> {
        if params.len() != grads.len() || params.len() != self.velocities.len() {
            return Err(OptimError::CountMismatch { params: params.len(), grads: grads.len() });
        }
        for (idx, ((p, g), v)) in
            params.iter_mut().zip(grads).zip(self.velocities.iter_mut()).enumerate()
        {
            if !g.all_finite() {
                return Err(OptimError::NonFiniteGradient { param: idx, iteration: self.iteration });
            }
            for ((pv, &gv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut())
            {
                *vv = cfg.momentum * *vv
                    - cfg.learning_rate * (gv + cfg.weight_decay * *pv);
                *pv += *vv;
            }
        }
        self.iteration += 1;
        Ok(())
    }
}
