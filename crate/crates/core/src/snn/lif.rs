//! Leaky integrate-and-fire dynamics with hard reset.
//!
//! ```text
//! u_pre[t] = alpha * u[t-1] + x[t]
//! y[t]     = Θ(u_pre[t] - v_th)        (Θ(0) = 1)
//! u[t]     = u_pre[t] * (1 - y[t])
//! ```

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::snn::surrogate::Surrogate;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifParams {
    /// Membrane decay factor.
    pub alpha: f64,
    pub v_th: f64,
    pub surrogate: Surrogate,
    /// Treat the reset factor `(1 - y)` as a constant in the backward pass.
    pub reset_detach: bool,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            v_th: 1.0,
            surrogate: Surrogate::default(),
            reset_detach: true,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("lif.alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.v_th > 0.0 && self.v_th.is_finite()) {
            return Err(Error::Config(format!("lif.v_th must be positive, got {}", self.v_th)));
        }
        self.surrogate.validate()
    }
}

/// Membrane potentials of every spiking layer, `None` until first use
/// (equivalent to a zero potential).
#[derive(Clone, Debug, Default)]
pub struct LifState {
    pub u: Vec<Option<Var>>,
}

impl LifState {
    pub fn new(layers: usize) -> Self {
        Self { u: vec![None; layers] }
    }

    /// Advances layer `layer` by one step and returns its spikes.
    pub fn step(&mut self, g: &mut Graph, layer: usize, x: Var, params: &LifParams) -> Result<Var> {
        let u_prev = match self.u[layer] {
            Some(u) => {
                if g.shape(u) != g.shape(x) {
                    return Err(Error::shape("lif", &[g.shape(u), g.shape(x)]));
                }
                u
            }
            None => g.constant(Tensor::zeros(g.shape(x))),
        };
        let (y, u_next) = lif_step(g, u_prev, x, params)?;
        self.u[layer] = Some(u_next);
        Ok(y)
    }
}

/// One recorded LIF update. Returns `(spikes, next membrane potential)`.
pub fn lif_step(g: &mut Graph, u_prev: Var, x: Var, params: &LifParams) -> Result<(Var, Var)> {
    let (_, y, u_next) = lif_step_parts(g, u_prev, x, params)?;
    Ok((y, u_next))
}

/// Like [`lif_step`] but also returns the pre-reset potential.
pub fn lif_step_parts(
    g: &mut Graph,
    u_prev: Var,
    x: Var,
    params: &LifParams,
) -> Result<(Var, Var, Var)> {
    if g.shape(u_prev) != g.shape(x) {
        return Err(Error::shape("lif", &[g.shape(u_prev), g.shape(x)]));
    }
    let leak = g.scale(u_prev, params.alpha)?;
    let u_pre = g.add(leak, x)?;
    let y = g.heaviside(u_pre, params.v_th, params.surrogate)?;
    let keep = if params.reset_detach {
        let k = g.value(y).map(|s| 1.0 - s);
        g.constant(k)
    } else {
        let neg = g.scale(y, -1.0)?;
        g.add_scalar(neg, 1.0)?
    };
    let u_next = g.mul(u_pre, keep)?;
    Ok((u_pre, y, u_next))
}

/// Per-step traces of a single LIF population driven by `inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct LifTrace {
    pub u_pre: Vec<Tensor>,
    pub spikes: Vec<Tensor>,
    pub u: Vec<Tensor>,
}

/// Runs the recurrence from rest over equally shaped per-step inputs.
pub fn lif_trace(inputs: &[Tensor], params: &LifParams) -> Result<LifTrace> {
    let mut g = Graph::new();
    let mut trace = LifTrace {
        u_pre: Vec::new(),
        spikes: Vec::new(),
        u: Vec::new(),
    };
    let Some(first) = inputs.first() else {
        return Ok(trace);
    };
    let mut u = g.constant(Tensor::zeros(first.shape()));
    for x in inputs {
        let xv = g.constant(x.clone());
        let (u_pre, y, u_next) = lif_step_parts(&mut g, u, xv, params)?;
        trace.u_pre.push(g.value(u_pre).clone());
        trace.spikes.push(g.value(y).clone());
        trace.u.push(g.value(u_next).clone());
        u = u_next;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(xs: &[f64]) -> Vec<Tensor> {
        xs.iter().map(|&v| Tensor::from_vec(vec![v])).collect()
    }

    fn flat(ts: &[Tensor]) -> Vec<f64> {
        ts.iter().map(|t| t.data()[0]).collect()
    }

    #[test]
    fn three_step_charge_then_fire() {
        let tr = lif_trace(&scalars(&[0.6, 0.6, 0.6]), &LifParams::default()).unwrap();
        let pre = flat(&tr.u_pre);
        assert!((pre[0] - 0.6).abs() < 1e-15);
        assert!((pre[1] - 0.9).abs() < 1e-15);
        assert!((pre[2] - 1.05).abs() < 1e-15);
        assert_eq!(flat(&tr.spikes), vec![0.0, 0.0, 1.0]);
        assert_eq!(flat(&tr.u)[2], 0.0);
    }

    #[test]
    fn no_drive_no_spike() {
        let tr = lif_trace(&scalars(&[0.0; 7]), &LifParams::default()).unwrap();
        assert!(flat(&tr.spikes).iter().all(|&s| s == 0.0));
        assert!(flat(&tr.u).iter().all(|&u| u == 0.0));
    }

    #[test]
    fn threshold_boundary_fires() {
        let p = LifParams::default();
        let tr = lif_trace(&scalars(&[p.v_th]), &p).unwrap();
        assert_eq!(flat(&tr.spikes), vec![1.0]);
        assert_eq!(flat(&tr.u), vec![0.0]);
    }

    #[test]
    fn reset_detach_controls_reset_gradient() {
        for detach in [true, false] {
            let p = LifParams {
                reset_detach: detach,
                ..LifParams::default()
            };
            let mut g = Graph::new();
            let u0 = g.constant(Tensor::from_vec(vec![0.0]));
            let x = g.leaf(Tensor::from_vec(vec![1.2]));
            let (_, u1) = lif_step(&mut g, u0, x, &p).unwrap();
            let l = g.sum(u1).unwrap();
            let grads = g.backward(l).unwrap();
            // u1 = u_pre (1 - y); spike fired so u1 = 0.
            // detached: d/dx = (1 - y) = 0; attached: (1 - y) - u_pre * sg = -1.2
            let want = if detach { 0.0 } else { -1.2 };
            assert!((grads.get(x).unwrap().data()[0] - want).abs() < 1e-12, "detach={detach}");
        }
    }

    #[test]
    fn validation() {
        assert!(LifParams::default().validate().is_ok());
        let bad = LifParams {
            v_th: 0.0,
            ..LifParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = LifParams {
            alpha: 1.5,
            ..LifParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut g = Graph::new();
        let u = g.constant(Tensor::zeros(&[2]));
        let x = g.constant(Tensor::zeros(&[3]));
        assert!(lif_step(&mut g, u, x, &LifParams::default()).is_err());
    }
}
