//! Parameter update rules.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array, Dimension, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GradientSet, SemiAeParams};

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient entry in {0}")]
    NonFiniteGradient(&'static str),
    #[error("gradient shapes do not match the parameters")]
    ShapeMismatch,
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent on each minibatch.
    Sgd,
    RmsProp,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" | "gd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?}; valid: sgd, rmsprop, adam")),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
enum Accumulators {
    None,
    RmsProp { mean_sq: GradientSet },
    Adam { m: GradientSet, v: GradientSet },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    acc: Accumulators,
}

impl OptimizerState {
    pub fn new(
        kind: OptimizerKind,
        learning_rate: f64,
        params: &SemiAeParams,
    ) -> Result<Self, OptimError> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(OptimError::InvalidLearningRate(learning_rate));
        }
        let zeros = || GradientSet::zeros_like(params);
        let acc = match kind {
            OptimizerKind::Sgd => Accumulators::None,
            OptimizerKind::RmsProp => Accumulators::RmsProp { mean_sq: zeros() },
            OptimizerKind::Adam => Accumulators::Adam {
                m: zeros(),
                v: zeros(),
            },
        };
        Ok(OptimizerState {
            kind,
            learning_rate,
            step: 0,
            acc,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. On error neither the state nor the
    /// parameters are touched.
    pub fn update(
        &mut self,
        params: &mut SemiAeParams,
        grads: &GradientSet,
    ) -> Result<(), OptimError> {
        if !grads.matches(params) {
            return Err(OptimError::ShapeMismatch);
        }
        if let Some(name) = grads.first_non_finite() {
            return Err(OptimError::NonFiniteGradient(name));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match &mut self.acc {
            Accumulators::None => {
                params.q.scaled_add(-lr, &grads.q);
                params.q1.scaled_add(-lr, &grads.q1);
                params.p.scaled_add(-lr, &grads.p);
                params.p1.scaled_add(-lr, &grads.p1);
            }
            Accumulators::RmsProp { mean_sq } => {
                rmsprop(&mut params.q, &mut mean_sq.q, &grads.q, lr);
                rmsprop(&mut params.q1, &mut mean_sq.q1, &grads.q1, lr);
                rmsprop(&mut params.p, &mut mean_sq.p, &grads.p, lr);
                rmsprop(&mut params.p1, &mut mean_sq.p1, &grads.p1, lr);
            }
            Accumulators::Adam { m, v } => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                adam(&mut params.q, &mut m.q, &mut v.q, &grads.q, lr, c1, c2);
                adam(&mut params.q1, &mut m.q1, &mut v.q1, &grads.q1, lr, c1, c2);
                adam(&mut params.p, &mut m.p, &mut v.p, &grads.p, lr, c1, c2);
                adam(&mut params.p1, &mut m.p1, &mut v.p1, &grads.p1, lr, c1, c2);
            }
        }
        Ok(())
    }
}

fn rmsprop<D: Dimension>(
    theta: &mut Array<f64, D>,
    mean_sq: &mut Array<f64, D>,
    grad: &Array<f64, D>,
    lr: f64,
) {
    Zip::from(theta)
        .and(mean_sq)
        .and(grad)
        .for_each(|th, acc, &g| {
            *acc = RMSPROP_DECAY * *acc + (1.0 - RMSPROP_DECAY) * g * g;
            *th -= lr * g / (*acc + RMSPROP_EPS).sqrt();
        });
}

fn adam<D: Dimension>(
    theta: &mut Array<f64, D>,
    m: &mut Array<f64, D>,
    v: &mut Array<f64, D>,
    grad: &Array<f64, D>,
    lr: f64,
    bias1: f64,
    bias2: f64,
) {
    Zip::from(theta)
        .and(m)
        .and(v)
        .and(grad)
        .for_each(|th, m, v, &g| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *th -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        });
}
