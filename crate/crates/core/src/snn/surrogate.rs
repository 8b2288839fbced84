//! Surrogate derivatives for the spike step function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Rectangular,
    Triangular,
}

/// Shape of the pseudo-derivative used in place of the Heaviside step during
/// backpropagation. Both kinds integrate to one over the real line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surrogate {
    pub kind: SurrogateKind,
    pub width: f64,
}

impl Default for Surrogate {
    fn default() -> Self {
        Self {
            kind: SurrogateKind::Rectangular,
            width: 1.0,
        }
    }
}

impl Surrogate {
    pub fn validate(&self) -> Result<()> {
        if self.width > 0.0 && self.width.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "surrogate width must be positive, got {}",
                self.width
            )))
        }
    }

    /// Derivative at signed distance `d = u_pre - v_th`.
    ///
    /// Rectangular windows use a strict inequality, so `|d| == width / 2`
    /// yields zero.
    #[inline]
    pub fn derivative_at(&self, d: f64) -> f64 {
        match self.kind {
            SurrogateKind::Rectangular => {
                if d.abs() < 0.5 * self.width {
                    1.0 / self.width
                } else {
                    0.0
                }
            }
            SurrogateKind::Triangular => (1.0 - d.abs() / self.width).max(0.0) / self.width,
        }
    }
}

/// Elementwise surrogate derivative of `Θ(u_pre - v_th)`.
pub fn surrogate_derivative(u_pre: &Tensor, v_th: f64, surrogate: &Surrogate) -> Tensor {
    u_pre.map(|u| surrogate.derivative_at(u - v_th))
}
