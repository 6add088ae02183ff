use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn n_params(&self) -> usize {
        self.m.len()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at parameter {i}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    total_steps: u64,
    pub floor_fraction: f64,
}

impl CosineSchedule {
    pub fn new(total_steps: u64, floor_fraction: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::invalid("cosine schedule needs a positive step count"));
        }
        if !(0.0..=1.0).contains(&floor_fraction) {
            return Err(Error::invalid(format!("floor fraction {floor_fraction} outside [0, 1]")));
        }
        Ok(Self {
            total_steps,
            floor_fraction,
        })
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Learning rate at `step`, clamped to `[0, total_steps]`.
    pub fn lr(&self, base_lr: f64, step: u64) -> f64 {
        let frac = step.min(self.total_steps) as f64 / self.total_steps as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        base_lr * (self.floor_fraction + (1.0 - self.floor_fraction) * cos)
    }
}
