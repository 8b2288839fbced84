use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Percentage of ones in each spike tensor.
pub fn firing_rate(spikes: &[Tensor]) -> Result<Vec<f64>> {
    spikes
        .iter()
        .enumerate()
        .map(|(b, s)| {
            if s.is_empty() {
                return Err(Error::Invalid(format!("block {b}: empty spike tensor")));
            }
            let mut ones = 0usize;
            for &v in s.data() {
                if v == 1.0 {
                    ones += 1;
                } else if v != 0.0 {
                    return Err(Error::Invalid(format!("block {b}: non-binary spike value {v}")));
                }
            }
            Ok(100.0 * ones as f64 / s.len() as f64)
        })
        .collect()
}

/// Accumulates spike counts over several batches.
#[derive(Clone, Debug, Default)]
pub struct FiringCounter {
    pub ones: Vec<u64>,
    pub total: Vec<u64>,
}

impl FiringCounter {
    pub fn add(&mut self, spikes: &[Tensor]) -> Result<()> {
        if self.ones.is_empty() {
            self.ones = vec![0; spikes.len()];
            self.total = vec![0; spikes.len()];
        }
        if spikes.len() != self.ones.len() {
            return Err(Error::Invalid("block count changed between batches".into()));
        }
        for (b, s) in spikes.iter().enumerate() {
            for &v in s.data() {
                if v == 1.0 {
                    self.ones[b] += 1;
                } else if v != 0.0 {
                    return Err(Error::Invalid(format!("block {b}: non-binary spike value {v}")));
                }
            }
            self.total[b] += s.len() as u64;
        }
        Ok(())
    }

    pub fn rates(&self) -> Vec<f64> {
        self.ones
            .iter()
            .zip(&self.total)
            .map(|(&o, &t)| if t == 0 { 0.0 } else { 100.0 * o as f64 / t as f64 })
            .collect()
    }
}
