use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{DflError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adagrad,
    Adadelta,
    RmsProp,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Adam,
        OptimizerKind::Adadelta,
        OptimizerKind::Adagrad,
        OptimizerKind::RmsProp,
        OptimizerKind::Sgd,
    ];

    /// Empirically tuned learning rates for the digit task.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Adam => 0.001,
            OptimizerKind::Adadelta => 1.0,
            OptimizerKind::Adagrad => 0.001,
            OptimizerKind::RmsProp => 0.0005,
            OptimizerKind::Sgd => 0.01,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = DflError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "adadelta" => Ok(OptimizerKind::Adadelta),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            other => Err(DflError::config(format!("unknown optimizer '{other}'"))),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const RMSPROP_ALPHA: f64 = 0.99;
const RMSPROP_EPS: f64 = 1e-8;
const ADAGRAD_EPS: f64 = 1e-10;
const ADADELTA_RHO: f64 = 0.9;
const ADADELTA_EPS: f64 = 1e-6;

/// Optimizer hyperparameters plus per-parameter accumulators, flattened in
/// [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    /// Adam first moment; Adadelta squared-update average.
    first: Vec<f64>,
    /// Adam second moment; Adagrad sum of squares; RMSprop / Adadelta
    /// squared-gradient average.
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, num_params: usize) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(DflError::config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let (first, second) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adagrad | OptimizerKind::RmsProp => (Vec::new(), vec![0.0; num_params]),
            OptimizerKind::Adam | OptimizerKind::Adadelta => {
                (vec![0.0; num_params], vec![0.0; num_params])
            }
        };
        Ok(OptimizerState {
            kind,
            learning_rate,
            step: 0,
            first,
            second,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        params.check_same_arch(grads)?;
        let n = params.num_params();
        let expected = match self.kind {
            OptimizerKind::Sgd => 0,
            _ => n,
        };
        if self.second.len() != expected {
            return Err(DflError::shape(format!(
                "optimizer state sized for {} parameters, model has {n}",
                self.second.len()
            )));
        }
        self.step += 1;
        let lr = self.learning_rate;
        let t = self.step as i32;
        let mut offset = 0;
        for (w, g) in params.tensors_mut().zip(grads.tensors()) {
            let len = w.len();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (wi, gi) in w.iter_mut().zip(g) {
                        *wi -= lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - ADAM_BETA1.powi(t);
                    let bc2 = 1.0 - ADAM_BETA2.powi(t);
                    let m = &mut self.first[offset..offset + len];
                    let v = &mut self.second[offset..offset + len];
                    for i in 0..len {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        w[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
                OptimizerKind::Adagrad => {
                    let s = &mut self.second[offset..offset + len];
                    for i in 0..len {
                        s[i] += g[i] * g[i];
                        w[i] -= lr * g[i] / (s[i].sqrt() + ADAGRAD_EPS);
                    }
                }
                OptimizerKind::RmsProp => {
                    let v = &mut self.second[offset..offset + len];
                    for i in 0..len {
                        v[i] = RMSPROP_ALPHA * v[i] + (1.0 - RMSPROP_ALPHA) * g[i] * g[i];
                        w[i] -= lr * g[i] / (v[i].sqrt() + RMSPROP_EPS);
                    }
                }
                OptimizerKind::Adadelta => {
                    let u = &mut self.first[offset..offset + len];
                    let v = &mut self.second[offset..offset + len];
                    for i in 0..len {
                        v[i] = ADADELTA_RHO * v[i] + (1.0 - ADADELTA_RHO) * g[i] * g[i];
                        let delta =
                            (u[i] + ADADELTA_EPS).sqrt() / (v[i] + ADADELTA_EPS).sqrt() * g[i];
                        u[i] = ADADELTA_RHO * u[i] + (1.0 - ADADELTA_RHO) * delta * delta;
                        w[i] -= lr * delta;
                    }
                }
            }
            offset += len;
        }
        Ok(())
    }
}
