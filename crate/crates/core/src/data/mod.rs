//! Datasets, temporal input construction and augmentation.

pub mod augment;
pub mod io;
pub mod synthetic;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, cutout_at, make_views, AugmentOp, AugmentPolicy};
pub use io::{load_dataset, save_dataset};
pub use synthetic::{generate_synthetic, temporal_signal_check, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// `[N, C, H, W]` images, replicated over time.
    Static,
    /// `[N, T_ev, 2, H, W]` binary event frames.
    Event,
}

impl DataKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DataKind::Static => "static",
            DataKind::Event => "event",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DataKind,
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Per-channel normalisation statistics (static data).
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let want_rank = match self.kind {
            DataKind::Static => 4,
            DataKind::Event => 5,
        };
        let s = self.images.shape();
        if s.len() != want_rank {
            return Err(Error::Invalid(format!(
                "images: {} data needs rank {want_rank}, got shape {s:?}",
                self.kind.as_str()
            )));
        }
        if s[0] != self.labels.len() {
            return Err(Error::Invalid(format!(
                "labels: {} labels for {} samples",
                self.labels.len(),
                s[0]
            )));
        }
        if self.class_count == 0 {
            return Err(Error::Invalid("class_count: must be positive".into()));
        }
        if let Some(&max) = self.labels.iter().max() {
            if max >= self.class_count {
                return Err(Error::Invalid(format!(
                    "class_count: {} is not above the largest label {max}",
                    self.class_count
                )));
            }
        }
        let channels = self.channels();
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Invalid(format!(
                "mean/std: expected {channels} entries, got {}/{}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Invalid("std: entries must be positive".into()));
        }
        if self.kind == DataKind::Event && self.images.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Invalid("images: event frames must be binary".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        match self.kind {
            DataKind::Static => self.images.shape()[1],
            DataKind::Event => self.images.shape()[2],
        }
    }

    /// Shape of one network input step, `[C, H, W]`.
    pub fn step_shape(&self) -> Vec<usize> {
        let s = self.images.shape();
        s[s.len() - 3..].to_vec()
    }

    /// Recorded event steps (1 for static data).
    pub fn event_steps(&self) -> usize {
        match self.kind {
            DataKind::Static => 1,
            DataKind::Event => self.images.shape()[1],
        }
    }

    pub fn sample(&self, i: usize) -> Result<Tensor> {
        self.images.index0(i)
    }

    /// Samples selected by `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let per: usize = self.images.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Invalid(format!("sample index {i} out of range")));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = idx.len();
        Ok(Dataset {
            images: Tensor::new(shape, data)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone()
        })
    }

    /// Fraction of samples in the most common class, in percent.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        100.0 * *counts.iter().max().unwrap_or(&0) as f64 / self.len().max(1) as f64
    }
}

/// `T` copies of a `[C, H, W]` image stacked to `[T, C, H, W]`.
pub fn replicate_static(image: &Tensor, steps: usize) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Invalid("replication needs T >= 1".into()));
    }
    Tensor::stack(&vec![image.clone(); steps])
}

/// Groups `[T_ev, ...]` frames into `steps` uniform bins with logical OR.
pub fn bin_events(frames: &Tensor, steps: usize) -> Result<Tensor> {
    let t_ev = frames.shape().first().copied().unwrap_or(0);
    if steps == 0 || steps > t_ev {
        return Err(Error::Invalid(format!(
            "cannot bin {t_ev} event frames into {steps} steps"
        )));
    }
    if steps == t_ev {
        return Ok(frames.clone());
    }
    let per = frames.len() / t_ev;
    let mut out = vec![0.0; steps * per];
    for f in 0..t_ev {
        let bin = f * steps / t_ev;
        let src = &frames.data()[f * per..(f + 1) * per];
        for (o, &v) in out[bin * per..(bin + 1) * per].iter_mut().zip(src) {
            if v != 0.0 {
                *o = 1.0;
            }
        }
    }
    let mut shape = frames.shape().to_vec();
    shape[0] = steps;
    Tensor::new(shape, out)
}

/// Per-sample `[T, C, H, W]` input, optionally augmented. Event samples are
/// augmented with every frame treated as extra channels so that geometric
/// ops stay consistent across time.
pub fn sample_steps(
    ds: &Dataset,
    i: usize,
    steps: usize,
    policy: Option<&AugmentPolicy>,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let x = ds.sample(i)?;
    match ds.kind {
        DataKind::Static => {
            let x = match policy {
                Some(p) => augment(&x, p, rng)?,
                None => x,
            };
            replicate_static(&x, steps)
        }
        DataKind::Event => {
            let binned = bin_events(&x, steps)?;
            match policy {
                Some(p) => {
                    let shape = binned.shape().to_vec();
                    let flat = binned.reshape(&[shape[0] * shape[1], shape[2], shape[3]])?;
                    augment(&flat, p, rng)?.reshape(&shape)
                }
                None => Ok(binned),
            }
        }
    }
}

/// Stacks per-sample `[T, ...]` inputs into per-step `[B, ...]` batches.
pub fn to_step_batches(samples: &[Tensor]) -> Result<Vec<Tensor>> {
    let Some(first) = samples.first() else {
        return Err(Error::Invalid("empty batch".into()));
    };
    let steps = first.shape()[0];
    let per = first.len() / steps;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut data = Vec::with_capacity(samples.len() * per);
        for s in samples {
            if s.shape() != first.shape() {
                return Err(Error::shape("batch", &[first.shape(), s.shape()]));
            }
            data.extend_from_slice(&s.data()[t * per..(t + 1) * per]);
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(&first.shape()[1..]);
        out.push(Tensor::new(shape, data)?);
    }
    Ok(out)
}

/// Unaugmented per-step batches for `idx`, normalised for static data.
pub fn eval_batch(ds: &Dataset, idx: &[usize], steps: usize) -> Result<Vec<Tensor>> {
    let policy = match ds.kind {
        DataKind::Static => Some(AugmentPolicy::normalize_only(&ds.mean, &ds.std)),
        DataKind::Event => None,
    };
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let samples = idx
        .iter()
        .map(|&i| sample_steps(ds, i, steps, policy.as_ref(), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    to_step_batches(&samples)
}
