use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    /// Inverse-time decay: `lr_k = lr_0 / (1 + decay * k)`.
    pub decay: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            learning_rate: 1e-5,
            decay: 5e-8,
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || !(self.decay >= 0.0)
            || !(0.0..1.0).contains(&self.rho)
            || !(self.epsilon > 0.0)
        {
            return Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// Squared-gradient accumulators and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    pub config: RmsPropConfig,
    steps: u64,
    accum: Vec<Vec<T>>,
}

impl<T: Real> RmsProp<T> {
    pub fn new(config: RmsPropConfig, params: &[Parameter<T>]) -> Self {
        RmsProp {
            config,
            steps: 0,
            accum: params
                .iter()
                .map(|p| vec![T::zero(); p.tensor.len()])
                .collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn accumulators(&self) -> &[Vec<T>] {
        &self.accum
    }

    /// Learning rate applied on step `k` (0-based).
    pub fn lr_at(&self, k: u64) -> f64 {
        self.config.learning_rate / (1.0 + self.config.decay * k as f64)
    }

    /// `v <- rho v + (1 - rho) g^2; p <- p - lr_k g / (sqrt(v) + eps)` using
    /// each parameter's stored gradient.
    pub fn step(&mut self, params: &mut [Parameter<T>]) -> Result<()> {
        if params.len() != self.accum.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.accum.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter().zip(&self.accum) {
            if p.grad.shape() != p.tensor.shape() || v.len() != p.tensor.len() {
                return Err(Error::shape(format!(
                    "gradient of {} does not match its shape",
                    p.name
                )));
            }
        }
        let lr = T::lit(self.lr_at(self.steps));
        let rho = T::lit(self.config.rho);
        let one_rho = T::one() - rho;
        let eps = T::lit(self.config.epsilon);
        for (p, v) in params.iter_mut().zip(&mut self.accum) {
            let grads = p.grad.data().to_vec();
            for ((w, acc), g) in p.tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(grads) {
                *acc = rho * *acc + one_rho * g * g;
                *w = *w - lr * g / (acc.sqrt() + eps);
            }
        }
        self.steps += 1;
        Ok(())
    }
}
