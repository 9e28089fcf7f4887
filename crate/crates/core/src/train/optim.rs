use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Adam,
    NesterovSgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::NesterovSgd => "nesterov_sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "nesterov" | "nesterov_sgd" => Ok(OptimizerKind::NesterovSgd),
            _ => Err(Error::config(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            momentum: 0.99,
            clip_norm: None,
        }
    }

    pub fn nesterov() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::NesterovSgd,
            ..OptimizerConfig::adam()
        }
    }
}

/// Global L2 norm of a gradient set.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    /// First moments (Adam) or velocities (Nesterov).
    first: Vec<Tensor>,
    /// Second moments (Adam only).
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros = || (0..params.len()).map(|i| Tensor::zeros(params.get(i).shape())).collect();
        OptimizerState {
            config,
            step: 0,
            first: zeros(),
            second: match config.kind {
                OptimizerKind::Adam => zeros(),
                OptimizerKind::NesterovSgd => Vec::new(),
            },
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    /// Clip, then apply one update with learning rate `lr`.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &mut [Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.get(i).shape() {
                return Err(Error::shape("optimizer", g.shape(), params.get(i).shape()));
            }
            if let Some(j) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", params.name(i)),
                    index: j,
                });
            }
        }
        if let Some(max) = self.config.clip_norm {
            clip_gradients(grads, max);
        }
        self.step += 1;
        let c = self.config;
        match c.kind {
            OptimizerKind::Adam => {
                let bc1 = 1.0 - c.beta1.powi(self.step as i32);
                let bc2 = 1.0 - c.beta2.powi(self.step as i32);
                for (i, g) in grads.iter().enumerate() {
                    let p = params.get_mut(i).data_mut();
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *p -= lr * mhat / (vhat.sqrt() + c.epsilon);
                    }
                }
            }
            OptimizerKind::NesterovSgd => {
                for (i, g) in grads.iter().enumerate() {
                    let p = params.get_mut(i).data_mut();
                    let vel = self.first[i].data_mut();
                    for ((p, vel), &g) in p.iter_mut().zip(vel).zip(g.data()) {
                        *vel = c.momentum * *vel + g;
                        *p -= lr * (g + c.momentum * *vel);
                    }
                }
            }
        }
        Ok(())
    }
}
