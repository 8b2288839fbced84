//! Training objectives over per-time-step outputs.
//!
//! * `BL`: cross-entropy of the time-averaged logits.
//! * `TET`: mean of the per-step cross-entropies.
//! * `TCL`: `BL + λ · contrastive` on one view.
//! * `STCL`: `BL(view 1) + BL(view 2) + λ · contrastive` over both views.
//!
//! The contrastive term treats every `(view, step, sample)` embedding as an
//! anchor. Positives of an anchor are the other rows of the same sample
//! (unsupervised) or of any sample with the same label (supervised); the
//! softmax denominator runs over every row except the anchor itself.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row norms of an embedding bank must be within this distance of one.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LossFamily {
    Bl,
    Tet,
    Tcl,
    Stcl,
}

impl LossFamily {
    pub fn is_contrastive(self) -> bool {
        matches!(self, LossFamily::Tcl | LossFamily::Stcl)
    }

    pub fn views(self) -> usize {
        if self == LossFamily::Stcl {
            2
        } else {
            1
        }
    }
}

fn default_tau() -> f64 {
    0.07
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub family: LossFamily,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Contrastive weight; 0.5 for TCL and 5.0 for STCL when omitted.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "yes")]
    pub supervised: bool,
    /// Per-tap weights; uniform when omitted.
    #[serde(default)]
    pub tap_weights: Option<Vec<f64>>,
}

impl LossConfig {
    pub fn new(family: LossFamily) -> Self {
        Self {
            family,
            tau: default_tau(),
            lambda: None,
            supervised: true,
            tap_weights: None,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(match self.family {
            LossFamily::Stcl => 5.0,
            LossFamily::Tcl => 0.5,
            _ => 0.0,
        })
    }

    pub fn tap_weights(&self, taps: usize) -> Vec<f64> {
        match &self.tap_weights {
            Some(w) => w.clone(),
            None => vec![1.0 / taps as f64; taps],
        }
    }

    pub fn validate(&self, taps: Option<usize>) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("loss.tau must be positive, got {}", self.tau)));
        }
        let lambda = self.lambda();
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("loss.lambda must be >= 0, got {lambda}")));
        }
        if let Some(w) = &self.tap_weights {
            if w.iter().any(|&v| !(v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(
                    "loss.tap_weights must be nonnegative and sum to 1".into(),
                ));
            }
            if let Some(n) = taps {
                if w.len() != n {
                    return Err(Error::Config(format!(
                        "loss.tap_weights has {} entries but the encoder has {n} taps",
                        w.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Unit-norm embeddings `[V, T, B, D]` and one label per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBank {
    pub z: Tensor,
    pub labels: Vec<usize>,
}

impl EmbeddingBank {
    pub fn new(z: Tensor, labels: Vec<usize>) -> Result<Self> {
        let bank = Self { z, labels };
        bank.validate()?;
        Ok(bank)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.z.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.z.shape();
        if s.len() != 4 || s.contains(&0) {
            return Err(Error::Invalid(format!(
                "embedding bank must be a non-empty [V, T, B, D] tensor, got {s:?}"
            )));
        }
        if self.labels.len() != s[2] {
            return Err(Error::Invalid(format!(
                "embedding bank has {} samples but {} labels",
                s[2],
                self.labels.len()
            )));
        }
        check_unit_rows(self.z.data(), s[3])
    }

    /// Per view, per step `[B, D]` slices.
    pub fn slices(&self) -> Vec<Vec<Tensor>> {
        let (v, t, b, d) = self.dims();
        (0..v)
            .map(|vi| {
                (0..t)
                    .map(|ti| {
                        let start = (vi * t + ti) * b * d;
                        Tensor::new(vec![b, d], self.z.data()[start..start + b * d].to_vec()).unwrap()
                    })
                    .collect()
            })
            .collect()
    }
}

fn check_unit_rows(data: &[f64], d: usize) -> Result<()> {
    for (r, row) in data.chunks(d).enumerate() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((n - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::Invalid(format!(
                "embedding row {r} has norm {n}, expected unit norm"
            )));
        }
    }
    Ok(())
}

fn check_labels(labels: &[usize], batch: usize, classes: Option<usize>) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Invalid(format!(
            "expected {batch} labels, got {}",
            labels.len()
        )));
    }
    if let Some(c) = classes {
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Invalid(format!("label {bad} out of range for {c} classes")));
        }
    }
    Ok(())
}

/// Batch-mean cross-entropy of `[B, C]` logits.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("cross-entropy", &[&shape]));
    }
    let (b, c) = (shape[0], shape[1]);
    check_labels(labels, b, Some(c))?;
    let mut onehot = Tensor::zeros(&[b, c]);
    for (i, &l) in labels.iter().enumerate() {
        onehot.data_mut()[i * c + l] = 1.0;
    }
    let logp = g.log_softmax_rows(logits)?;
    let onehot = g.constant(onehot);
    let picked = g.mul(logp, onehot)?;
    let s = g.sum(picked)?;
    g.scale(s, -1.0 / b as f64)
}

fn mean_of(g: &mut Graph, xs: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = xs.split_first() else {
        return Err(Error::Invalid("at least one time step is required".into()));
    };
    let mut acc = first;
    for &x in rest {
        acc = g.add(acc, x)?;
    }
    if xs.len() == 1 {
        Ok(acc)
    } else {
        g.scale(acc, 1.0 / xs.len() as f64)
    }
}

/// Cross-entropy of the step-averaged logits.
pub fn loss_bl(g: &mut Graph, logits: &[Var], labels: &[usize]) -> Result<Var> {
    let avg = mean_of(g, logits)?;
    cross_entropy(g, avg, labels)
}

/// Mean over steps of the per-step cross-entropy.
pub fn loss_tet(g: &mut Graph, logits: &[Var], labels: &[usize]) -> Result<Var> {
    let ces = logits
        .iter()
        .map(|&l| cross_entropy(g, l, labels))
        .collect::<Result<Vec<_>>>()?;
    mean_of(g, &ces)
}

/// Anchor weights `[R, R]` for rows ordered `r = (v·T + t)·B + b`.
fn positive_weights(views: usize, steps: usize, labels: &[usize], supervised: bool) -> Tensor {
    let b = labels.len();
    let r = views * steps * b;
    let sample = |row: usize| row % b;
    let group = |row: usize| {
        if supervised {
            labels[sample(row)]
        } else {
            sample(row)
        }
    };
    let group_size = |row: usize| {
        let gid = group(row);
        views * (0..b).filter(|&s| group(s) == gid).count()
    };
    let mut w = Tensor::zeros(&[r, r]);
    for i in 0..r {
        let scale = 1.0 / (steps * group_size(i)) as f64;
        let gi = group(i);
        for p in 0..r {
            if p != i && group(p) == gi {
                w.data_mut()[i * r + p] = scale;
            }
        }
    }
    w
}

/// Temporal contrastive loss over `views[v][t]` embeddings of shape `[B, D]`.
///
/// Supervised positives share a label; `|P(i)|` counts every view of every
/// sample with that label. Unsupervised positives are the other rows of the
/// same sample, normalised by the number of views.
pub fn temporal_contrastive(
    g: &mut Graph,
    views: &[Vec<Var>],
    labels: &[usize],
    tau: f64,
    supervised: bool,
) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Invalid(format!("temperature must be positive, got {tau}")));
    }
    let v = views.len();
    let t = views.first().map_or(0, Vec::len);
    if v == 0 || t == 0 || views.iter().any(|s| s.len() != t) {
        return Err(Error::Invalid(
            "contrastive loss needs the same non-zero number of steps per view".into(),
        ));
    }
    let shape = g.shape(views[0][0]).to_vec();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::shape("temporal-contrastive", &[&shape]));
    }
    let (b, d) = (shape[0], shape[1]);
    check_labels(labels, b, None)?;
    let rows: Vec<Var> = views.iter().flatten().copied().collect();
    for &z in &rows {
        if g.shape(z) != shape.as_slice() {
            return Err(Error::shape("temporal-contrastive", &[&shape, g.shape(z)]));
        }
        check_unit_rows(g.value(z).data(), d)?;
    }
    let r = v * t * b;
    if r < 2 {
        return Err(Error::Invalid("contrastive loss needs at least two embeddings".into()));
    }
    if !supervised && v * t < 2 {
        return Err(Error::Invalid(
            "unsupervised contrastive loss needs more than one step or view (no positives exist)"
                .into(),
        ));
    }
    let z = if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0)? };
    let zt = g.transpose(z)?;
    let sim = g.matmul(z, zt)?;
    let logits = g.scale(sim, 1.0 / tau)?;
    let mut mask = Tensor::ones(&[r, r]);
    for i in 0..r {
        mask.data_mut()[i * r + i] = 0.0;
    }
    let mask = g.constant(mask);
    let logp = g.masked_log_softmax_rows(logits, mask)?;
    let w = g.constant(positive_weights(v, t, labels, supervised));
    let weighted = g.mul(logp, w)?;
    let s = g.sum(weighted)?;
    g.scale(s, -1.0)
}

/// Weighted sum over taps of the contrastive loss on each tap's embeddings.
/// `taps[j][v][t]` is a `[B, D_j]` embedding.
pub fn tapped_contrastive(
    g: &mut Graph,
    taps: &[Vec<Vec<Var>>],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<Var> {
    if taps.is_empty() {
        return Err(Error::Invalid("contrastive loss needs at least one tap".into()));
    }
    let weights = cfg.tap_weights(taps.len());
    if weights.len() != taps.len() {
        return Err(Error::Invalid(format!(
            "{} tap weights for {} taps",
            weights.len(),
            taps.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (tap, &w) in taps.iter().zip(&weights) {
        let l = temporal_contrastive(g, tap, labels, cfg.tau, cfg.supervised)?;
        let l = g.scale(l, w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, l)?,
            None => l,
        });
    }
    Ok(acc.unwrap())
}

/// Loss components as graph nodes. `contrastive` is `None` for BL and TET.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub ce: Var,
    pub contrastive: Option<Var>,
}

fn combine(g: &mut Graph, ce: Var, cl: Var, lambda: f64) -> Result<LossParts> {
    // with λ = 0 the contrastive branch is logged but kept out of the total
    let total = if lambda == 0.0 {
        ce
    } else {
        let scaled = g.scale(cl, lambda)?;
        g.add(ce, scaled)?
    };
    Ok(LossParts {
        total,
        ce,
        contrastive: Some(cl),
    })
}

/// `BL + λ · Σ_tap w_tap · contrastive(tap)` with `taps[j][t]` the projected
/// embeddings of tap `j` at step `t`.
pub fn loss_tcl(
    g: &mut Graph,
    logits: &[Var],
    taps: &[Vec<Var>],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossParts> {
    let ce = loss_bl(g, logits, labels)?;
    let taps: Vec<Vec<Vec<Var>>> = taps.iter().map(|t| vec![t.clone()]).collect();
    let cl = tapped_contrastive(g, &taps, labels, cfg)?;
    combine(g, ce, cl, cfg.lambda())
}

/// `BL(view 1) + BL(view 2) + λ · contrastive` over the merged two-view bank.
/// `taps[j]` holds `[view1 steps, view2 steps]`.
pub fn loss_stcl(
    g: &mut Graph,
    logits_v1: &[Var],
    logits_v2: &[Var],
    taps: &[Vec<Vec<Var>>],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossParts> {
    if taps.iter().any(|t| t.len() != 2) {
        return Err(Error::Invalid("siamese taps need exactly two views".into()));
    }
    let a = loss_bl(g, logits_v1, labels)?;
    let b = loss_bl(g, logits_v2, labels)?;
    let ce = g.add(a, b)?;
    let cl = tapped_contrastive(g, taps, labels, cfg)?;
    combine(g, ce, cl, cfg.lambda())
}

fn step_vars(g: &mut Graph, logits: &Tensor) -> Result<Vec<Var>> {
    if logits.rank() != 3 || logits.shape()[0] == 0 {
        return Err(Error::shape("logits", &[logits.shape()]));
    }
    (0..logits.shape()[0])
        .map(|t| Ok(g.constant(logits.index0(t)?)))
        .collect()
}

/// BL on a `[T, B, C]` logit tensor.
pub fn bl_value(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let steps = step_vars(&mut g, logits)?;
    let l = loss_bl(&mut g, &steps, labels)?;
    g.value(l).item()
}

/// TET on a `[T, B, C]` logit tensor.
pub fn tet_value(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let steps = step_vars(&mut g, logits)?;
    let l = loss_tet(&mut g, &steps, labels)?;
    g.value(l).item()
}

/// Contrastive loss of a bank, folding its views into the anchor set.
pub fn loss_temporal_contrastive(bank: &EmbeddingBank, tau: f64, supervised: bool) -> Result<f64> {
    bank.validate()?;
    let mut g = Graph::new();
    let views: Vec<Vec<Var>> = bank
        .slices()
        .into_iter()
        .map(|steps| steps.into_iter().map(|s| g.constant(s)).collect())
        .collect();
    let l = temporal_contrastive(&mut g, &views, &bank.labels, tau, supervised)?;
    g.value(l).item()
}
