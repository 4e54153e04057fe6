//! Adam with a piecewise-constant (step decay) learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::NetError;

/// Step-decay schedule: `base_lr · drop_factor^floor(epoch / drop_period)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub drop_factor: f64,
    pub drop_period: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base_lr: 1e-3, drop_factor: 0.5, drop_period: 10 }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let drops = epoch.checked_div(self.drop_period).unwrap_or(0);
        self.base_lr * self.drop_factor.powi(drops as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConstants {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter moment accumulators plus the shared step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub schedule: LrSchedule,
    pub constants: AdamConstants,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<T: Scalar>(params: &[&Tensor<T>], schedule: LrSchedule) -> Self {
        Self {
            schedule,
            constants: AdamConstants::default(),
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// One Adam update at the learning rate scheduled for `epoch`.
    pub fn adam_step<T: Scalar>(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Tensor<T>],
        epoch: usize,
    ) -> Result<(), NetError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(NetError::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.len() != m.len() {
                return Err(NetError::Shape(format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let AdamConstants { beta1, beta2, eps } = self.constants;
        let lr = self.schedule.lr(epoch);
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = gi.as_f64();
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let update = lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                *pi = T::of_f64(pi.as_f64() - update);
            }
        }
        Ok(())
    }
}
