use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::network::Param;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to 0 over all training steps.
    #[default]
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 200,
            batch_size: 32,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("optim.lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "optim.momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "optim.weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("optim.batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for zero-based `step` out of `total` steps.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                if total == 0 {
                    return self.lr;
                }
                let frac = step as f64 / total as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// `g' = g + wd·w; v ← momentum·v + g'; w ← w − lr·v` for one tensor.
pub fn sgd_update(
    w: &mut Tensor,
    g: &Tensor,
    v: &mut Tensor,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if w.shape() != g.shape() || w.shape() != v.shape() {
        return Err(Error::shape("sgd", &[w.shape(), g.shape(), v.shape()]));
    }
    for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
        let gd = gi + weight_decay * *wi;
        *vi = momentum * *vi + gd;
        *wi -= lr * *vi;
    }
    Ok(())
}

/// One step over every parameter; decay applies only where `Param::decay`.
/// Non-finite gradients are rejected before anything is modified.
pub fn sgd_step(
    params: &mut [Param],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Invalid(format!(
            "sgd: {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if !g.all_finite() {
            return Err(Error::Numerical(format!("non-finite gradient for {}", p.name)));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let wd = if p.decay { cfg.weight_decay } else { 0.0 };
        sgd_update(&mut p.value, g, v, lr, cfg.momentum, wd)?;
    }
    Ok(())
}
