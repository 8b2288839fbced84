//! Inference-time analyses: accuracy, time-step sweeps and firing rates.
//!
//! Evaluation always uses batchnorm running statistics. Inference with `T'`
//! steps runs the first `T'` input steps from a zero membrane state and
//! classifies by the argmax of the step-averaged logits.

use std::fmt::Write as _;

use crate::autograd::Graph;
use crate::data::{eval_batch, Dataset};
use crate::error::{Error, Result};
use crate::losses::loss_bl;
use crate::snn::firing::FiringCounter;
use crate::snn::network::{Mode, Network};
use crate::tensor::Tensor;

pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Percent correct.
    pub accuracy: f64,
    pub mean_ce: f64,
    pub predictions: Vec<usize>,
}

fn check_compat(net: &Network, ds: &Dataset) -> Result<()> {
    let arch = net.architecture();
    if ds.step_shape() != arch.input_shape {
        return Err(Error::Invalid(format!(
            "dataset step shape {:?} does not match the network input {:?}",
            ds.step_shape(),
            arch.input_shape
        )));
    }
    if ds.class_count != arch.num_classes {
        return Err(Error::Invalid(format!(
            "dataset has {} classes, network has {}",
            ds.class_count, arch.num_classes
        )));
    }
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

struct PrefixAccumulator {
    correct: Vec<usize>,
    ce_sum: Vec<f64>,
    predictions: Vec<Vec<usize>>,
}

/// Prepares `input_steps` steps per sample, runs the network over the first
/// `run_steps` of them and scores each prefix length in `prefixes`.
/// `record` receives each batch's spike tensors.
fn run_prefixes(
    net: &Network,
    ds: &Dataset,
    input_steps: usize,
    run_steps: usize,
    prefixes: &[usize],
    mut record: Option<&mut dyn FnMut(&[Tensor]) -> Result<()>>,
) -> Result<PrefixAccumulator> {
    check_compat(net, ds)?;
    if ds.is_empty() {
        return Err(Error::Invalid("evaluation dataset is empty".into()));
    }
    let mut acc = PrefixAccumulator {
        correct: vec![0; prefixes.len()],
        ce_sum: vec![0.0; prefixes.len()],
        predictions: vec![Vec::with_capacity(ds.len()); prefixes.len()],
    };
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let inputs = eval_batch(ds, chunk, input_steps)?;
        let inputs = &inputs[..run_steps];
        let mut g = Graph::new();
        let pv = net.bind(&mut g, false);
        let out = net.forward_timesteps(&mut g, &pv, inputs, Mode::Eval, record.is_some())?;
        if let Some(rec) = record.as_mut() {
            rec(&out.stacked_spikes()?)?;
        }
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels[i]).collect();
        for (k, &p) in prefixes.iter().enumerate() {
            let ce = loss_bl(&mut g, &out.logits[..p], &labels)?;
            acc.ce_sum[k] += g.value(ce).item()? * chunk.len() as f64;
            let classes = net.architecture().num_classes;
            let mut mean = vec![0.0; chunk.len() * classes];
            for &l in &out.logits[..p] {
                for (m, v) in mean.iter_mut().zip(g.value(l).data()) {
                    *m += v;
                }
            }
            for (row, &label) in mean.chunks(classes).zip(&labels) {
                let pred = argmax(row);
                if pred == label {
                    acc.correct[k] += 1;
                }
                acc.predictions[k].push(pred);
            }
        }
    }
    Ok(acc)
}

/// Accuracy and mean BL loss with `steps` inference steps.
pub fn evaluate(net: &Network, ds: &Dataset, steps: usize) -> Result<EvalResult> {
    evaluate_prefix(net, ds, steps, steps)
}

/// Inference with the first `prefix` of `input_steps` prepared steps.
pub fn evaluate_prefix(
    net: &Network,
    ds: &Dataset,
    input_steps: usize,
    prefix: usize,
) -> Result<EvalResult> {
    if prefix == 0 || prefix > input_steps {
        return Err(Error::Invalid(format!(
            "inference steps {prefix} outside 1..={input_steps}"
        )));
    }
    let mut acc = run_prefixes(net, ds, input_steps, prefix, &[prefix], None)?;
    Ok(EvalResult {
        accuracy: 100.0 * acc.correct[0] as f64 / ds.len() as f64,
        mean_ce: acc.ce_sum[0] / ds.len() as f64,
        predictions: acc.predictions.remove(0),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub inference_t: usize,
    pub accuracy: f64,
    pub mean_ce: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub train_t: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("inference_t,accuracy,mean_ce,train_t\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.inference_t, r.accuracy, r.mean_ce, self.train_t).unwrap();
        }
        s
    }

    pub fn accuracy_at(&self, t: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.inference_t == t).map(|r| r.accuracy)
    }
}

/// Scores every `T' = 1..=train_t` in one pass (the forward pass is causal,
/// so the first `T'` steps are exactly a `T'`-step run).
pub fn sweep_inference(net: &Network, ds: &Dataset, train_t: usize) -> Result<SweepReport> {
    sweep_prefixes(net, ds, train_t, train_t)
}

/// Scores `T' = 1..=max_t` using the first `T'` of
/// `max(train_t, max_t)` prepared steps.
pub fn sweep_prefixes(net: &Network, ds: &Dataset, train_t: usize, max_t: usize) -> Result<SweepReport> {
    if train_t == 0 || max_t == 0 {
        return Err(Error::Invalid("time steps must be positive".into()));
    }
    let input_steps = train_t.max(max_t);
    let prefixes: Vec<usize> = (1..=max_t).collect();
    let acc = run_prefixes(net, ds, input_steps, max_t, &prefixes, None)?;
    let n = ds.len() as f64;
    Ok(SweepReport {
        train_t,
        rows: prefixes
            .iter()
            .enumerate()
            .map(|(k, &t)| SweepRow {
                inference_t: t,
                accuracy: 100.0 * acc.correct[k] as f64 / n,
                mean_ce: acc.ce_sum[k] / n,
            })
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiringReport {
    /// Percent of spike entries equal to one, per block.
    pub rates: Vec<f64>,
    pub accuracy: f64,
}

impl FiringReport {
    /// One column per block plus accuracy.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = (0..self.rates.len()).map(|b| format!("block{b}")).collect();
        header.push("accuracy".into());
        let mut row: Vec<String> = self.rates.iter().map(|r| r.to_string()).collect();
        row.push(self.accuracy.to_string());
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

/// Firing rates aggregated over the whole dataset at `steps` steps.
/// `sink`, when given, receives each batch's per-block spike tensors.
pub fn profile_firing(
    net: &Network,
    ds: &Dataset,
    steps: usize,
    sink: Option<&mut dyn FnMut(&[Tensor])>,
) -> Result<FiringReport> {
    if steps == 0 {
        return Err(Error::Invalid("steps must be positive".into()));
    }
    let mut counter = FiringCounter::default();
    let mut sink = sink;
    let mut rec = |spikes: &[Tensor]| -> Result<()> {
        counter.add(spikes)?;
        if let Some(s) = sink.as_mut() {
            s(spikes);
        }
        Ok(())
    };
    let acc = run_prefixes(net, ds, steps, steps, &[steps], Some(&mut rec))?;
    Ok(FiringReport {
        rates: counter.rates(),
        accuracy: 100.0 * acc.correct[0] as f64 / ds.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::snn::network::{architecture, EncoderConfig, NamedTensor};
    use crate::snn::LifParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn event_data() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            classes: 4,
            samples_per_class: 6,
            image_side: 8,
            temporal: true,
            seed: 1,
            event_steps: 4,
            channels: 3,
            noise: 0.05,
        })
        .unwrap()
    }

    fn zero_net(ds: &Dataset) -> Network {
        let arch = architecture(EncoderConfig::tiny_sew(), LifParams::default(), &ds.step_shape(), ds.class_count);
        let template = Network::new(arch.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let params: Vec<NamedTensor> = template
            .params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                value: Tensor::zeros(p.value.shape()),
            })
            .collect();
        Network::from_named(arch, &params, &template.buffers).unwrap()
    }

    #[test]
    fn zero_network_is_silent_and_predicts_one_class() {
        let ds = event_data();
        let net = zero_net(&ds);
        let sweep = sweep_inference(&net, &ds, 4).unwrap();
        assert_eq!(sweep.rows.len(), 4);
        let expected = 100.0 * ds.labels.iter().filter(|&&l| l == 0).count() as f64 / ds.len() as f64;
        for r in &sweep.rows {
            assert_eq!(r.accuracy, expected);
            assert!((r.mean_ce - 4f64.ln()).abs() < 1e-12);
        }
        let prof = profile_firing(&net, &ds, 4, None).unwrap();
        assert!(prof.rates.iter().all(|&r| r == 0.0));
        assert_eq!(prof.to_csv().lines().next().unwrap(), "block0,block1,block2,accuracy");
    }

    #[test]
    fn sweep_rows_match_single_runs() {
        let ds = event_data();
        let arch = architecture(EncoderConfig::tiny_sew(), LifParams::default(), &ds.step_shape(), 4);
        let net = Network::new(arch, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let sweep = sweep_inference(&net, &ds, 4).unwrap();
        for r in &sweep.rows {
            let single = evaluate_prefix(&net, &ds, 4, r.inference_t).unwrap();
            assert_eq!(single.accuracy, r.accuracy);
            assert_eq!(single.mean_ce, r.mean_ce);
        }
        assert_eq!(evaluate(&net, &ds, 4).unwrap().accuracy, sweep.accuracy_at(4).unwrap());
        assert!(evaluate_prefix(&net, &ds, 4, 5).is_err());
        assert_eq!(sweep, sweep_inference(&net, &ds, 4).unwrap());
        let short = sweep_prefixes(&net, &ds, 4, 2).unwrap();
        assert_eq!(short.rows[..], sweep.rows[..2]);
    }
}
