use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Float, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::InvalidArgument("adam betas must lie in [0,1) and eps > 0".into()));
        }
        Ok(())
    }
}

struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// SGD or Adam over one or more named parameter groups.
pub struct Optimizer<T: Float> {
    config: OptimizerConfig,
    step: u64,
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Float> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of a single parameter set.
    pub fn step(&mut self, params: &mut ParameterSet<T>) -> Result<()> {
        self.step_groups(&mut [("", params)])
    }

    /// One update over several groups; moment state is keyed by `group/name`.
    ///
    /// Gradients are left in place for the caller to reset.
    pub fn step_groups(&mut self, groups: &mut [(&str, &mut ParameterSet<T>)]) -> Result<()> {
        for (_, params) in groups.iter() {
            for (name, t) in params.iter() {
                if t.requires_grad && t.grad().is_none() {
                    return Err(Error::MissingGradient(name.clone()));
                }
            }
        }
        self.step += 1;
        let cfg = self.config;
        let lr = cfg.learning_rate;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (group, params) in groups.iter_mut() {
            for (name, tensor) in params.iter_mut() {
                if !tensor.requires_grad {
                    continue;
                }
                let grad: Vec<T> = tensor.grad().expect("checked above").to_vec();
                match cfg.kind {
                    OptimizerKind::Sgd => {
                        let lr = T::of(lr);
                        for (p, g) in tensor.data_mut().iter_mut().zip(&grad) {
                            *p = *p - lr * *g;
                        }
                    }
                    OptimizerKind::Adam => {
                        let key = format!("{group}/{name}");
                        let n = grad.len();
                        let m = self.moments.entry(key).or_insert_with(|| Moments {
                            first: vec![T::zero(); n],
                            second: vec![T::zero(); n],
                        });
                        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
                        let (one, eps) = (T::one(), T::of(cfg.eps));
                        let (bc1, bc2, lr) = (T::of(bc1), T::of(bc2), T::of(lr));
                        for (((p, &g), m1), m2) in tensor
                            .data_mut()
                            .iter_mut()
                            .zip(&grad)
                            .zip(m.first.iter_mut())
                            .zip(m.second.iter_mut())
                        {
                            *m1 = b1 * *m1 + (one - b1) * g;
                            *m2 = b2 * *m2 + (one - b2) * g * g;
                            let mhat = *m1 / bc1;
                            let vhat = *m2 / bc2;
                            *p = *p - lr * mhat / (vhat.sqrt() + eps);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
