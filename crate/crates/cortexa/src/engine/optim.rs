//! Adam updates and the linear learning-rate ramp.

use super::tensor::Real;
use super::EngineError;
use serde::{Deserialize, Serialize};

/// Per-parameter Adam moment accumulators.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> AdamState<T> {
    /// Published defaults: β₁=0.9, β₂=0.999, ε=1e-8.
    pub fn new(len: usize) -> Self {
        Self::with_hyper(len, T::from_f64(0.9), T::from_f64(0.999), T::from_f64(1e-8))
    }

    pub fn with_hyper(len: usize, beta1: T, beta2: T, epsilon: T) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// Rebuild from serialized moments (checkpoint restore).
    pub fn from_parts(m: Vec<T>, v: Vec<T>, t: u64, beta1: T, beta2: T, epsilon: T) -> Result<Self, EngineError> {
        if m.len() != v.len() {
            return Err(EngineError::ShapeMismatch(format!(
                "adam moments disagree: m {} vs v {}",
                m.len(),
                v.len()
            )));
        }
        Ok(Self { m, v, t, beta1, beta2, epsilon })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.m, &self.v)
    }

    /// One Adam update:
    /// `t += 1; m ← β₁m + (1−β₁)g; v ← β₂v + (1−β₂)g²;`
    /// `param ← param − lr · m̂ / (√v̂ + ε)` with bias-corrected `m̂`, `v̂`.
    pub fn step(&mut self, param: &mut [T], grad: &[T], lr: T) -> Result<(), EngineError> {
        if grad.len() != param.len() || self.m.len() != param.len() {
            return Err(EngineError::MissingGradient);
        }
        self.t += 1;
        let one = T::one();
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = one - b1.powi(self.t as i32);
        let bc2 = one - b2.powi(self.t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Linear decay from `initial_lr` at epoch 0 to `floor` at `total_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub total_epochs: usize,
    #[serde(default)]
    pub floor: f64,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, total_epochs: usize) -> Result<Self, EngineError> {
        Self::with_floor(initial_lr, total_epochs, 0.0)
    }

    pub fn with_floor(initial_lr: f64, total_epochs: usize, floor: f64) -> Result<Self, EngineError> {
        let s = Self { initial_lr, total_epochs, floor };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.initial_lr > 0.0) || self.total_epochs < 1 || self.floor < 0.0 {
            return Err(EngineError::BadSchedule(format!(
                "initial_lr {} / total_epochs {} / floor {}",
                self.initial_lr, self.total_epochs, self.floor
            )));
        }
        Ok(())
    }

    /// `max(floor, lr₀ · (1 − epoch/total))`; constant within an epoch.
    pub fn lr_at(&self, epoch: usize) -> Result<f64, EngineError> {
        if epoch > self.total_epochs {
            return Err(EngineError::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        let ramp = self.initial_lr * (1.0 - epoch as f64 / self.total_epochs as f64);
        Ok(ramp.max(self.floor))
    }
}
