//! Run configuration, the batch trainer and the epoch loop.

pub mod checkpoint;
pub mod metrics;
pub mod optim;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::{
    generate_synthetic, load_dataset, sample_steps, to_step_batches, AugmentOp, AugmentPolicy,
    DataKind, Dataset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::losses::{loss_bl, loss_stcl, loss_tcl, loss_tet, LossConfig, LossFamily, LossParts};
use crate::rng::{stream, Stream};
use crate::snn::network::{architecture, project, EncoderConfig, Mode, Network, TemporalOutputs};
use crate::snn::LifParams;
use crate::tensor::Tensor;

pub use checkpoint::Checkpoint;
pub use metrics::{EpochRecord, MetricsWriter};
pub use optim::{sgd_step, sgd_update, LrSchedule, OptimConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Path { path: PathBuf },
    Synthetic { synthetic: SyntheticSpec },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Path { path } => load_dataset(path),
            DataSource::Synthetic { synthetic } => generate_synthetic(synthetic),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: DataSource,
    pub eval: DataSource,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentPreset {
    /// Normalisation only.
    None,
    /// Crop, flip, normalise.
    #[default]
    Standard,
    /// Standard plus colour jitter, random grayscale and cutout.
    Full,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default)]
    pub preset: AugmentPreset,
    #[serde(default = "one")]
    pub crop_pad: usize,
    #[serde(default = "two")]
    pub cutout: usize,
    /// Replaces the preset entirely when given.
    #[serde(default)]
    pub custom: Option<AugmentPolicy>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            preset: AugmentPreset::Standard,
            crop_pad: 1,
            cutout: 2,
            custom: None,
        }
    }
}

impl AugmentConfig {
    /// Training policy for `ds`. Event data only receives the geometric ops
    /// of the preset and is never normalised.
    pub fn policy(&self, ds: &Dataset) -> Result<Option<AugmentPolicy>> {
        if let Some(p) = &self.custom {
            p.validate()?;
            return Ok(Some(p.clone()));
        }
        let p = match (ds.kind, self.preset) {
            (DataKind::Static, AugmentPreset::None) => AugmentPolicy::normalize_only(&ds.mean, &ds.std),
            (DataKind::Static, AugmentPreset::Standard) => {
                AugmentPolicy::standard(self.crop_pad, &ds.mean, &ds.std)
            }
            (DataKind::Static, AugmentPreset::Full) => {
                AugmentPolicy::full(self.crop_pad, self.cutout, &ds.mean, &ds.std)
            }
            (DataKind::Event, AugmentPreset::None) => return Ok(None),
            (DataKind::Event, preset) => {
                let mut ops = vec![
                    AugmentOp::RandomCrop { pad: self.crop_pad },
                    AugmentOp::HorizontalFlip { p: 0.5 },
                ];
                if preset == AugmentPreset::Full {
                    ops.push(AugmentOp::Cutout { size: self.cutout });
                }
                AugmentPolicy { ops }
            }
        };
        p.validate()?;
        Ok(Some(p))
    }
}

fn default_time_steps() -> usize {
    4
}

fn default_encoder() -> EncoderConfig {
    EncoderConfig::tiny_sew()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_encoder")]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub lif: LifParams,
    pub loss: LossConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    pub data: DataConfig,
    #[serde(default = "default_time_steps")]
    pub time_steps: usize,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.lif.validate()?;
        self.loss.validate(Some(self.encoder.resolved_taps().len()))?;
        self.optim.validate()?;
        if self.time_steps == 0 {
            return Err(Error::Config("time_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss values of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchStats {
    pub ce: f64,
    pub cl: f64,
    pub total: f64,
    pub correct: usize,
    pub size: usize,
}

/// Builds the configured objective from forward outputs (one per view).
pub fn compute_loss(
    net: &Network,
    g: &mut Graph,
    pv: &[Var],
    outs: &[TemporalOutputs],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossParts> {
    let want = cfg.family.views();
    if outs.len() != want {
        return Err(Error::Invalid(format!(
            "{:?} needs {want} view(s), got {}",
            cfg.family,
            outs.len()
        )));
    }
    let plain = |ce| LossParts {
        total: ce,
        ce,
        contrastive: None,
    };
    match cfg.family {
        LossFamily::Bl => Ok(plain(loss_bl(g, &outs[0].logits, labels)?)),
        LossFamily::Tet => Ok(plain(loss_tet(g, &outs[0].logits, labels)?)),
        LossFamily::Tcl | LossFamily::Stcl => {
            if !net.has_heads() {
                return Err(Error::Invalid("contrastive objectives need projection heads".into()));
            }
            let mut taps: Vec<Vec<Vec<Var>>> = Vec::new();
            for j in 0..net.tap_blocks().len() {
                let head = net.head_vars(pv, j).expect("one head per tap");
                let mut views = Vec::with_capacity(outs.len());
                for out in outs {
                    let steps = out.taps[j]
                        .iter()
                        .map(|&h| project(g, &head, h))
                        .collect::<Result<Vec<_>>>()?;
                    views.push(steps);
                }
                taps.push(views);
            }
            if cfg.family == LossFamily::Tcl {
                let taps: Vec<Vec<Var>> = taps.into_iter().map(|mut v| v.remove(0)).collect();
                loss_tcl(g, &outs[0].logits, &taps, labels, cfg)
            } else {
                loss_stcl(g, &outs[0].logits, &outs[1].logits, &taps, labels, cfg)
            }
        }
    }
}

/// Network plus optimiser state.
pub struct Trainer {
    pub net: Network,
    pub velocity: Vec<Tensor>,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub time_steps: usize,
    pub step: u64,
    pub epoch: u64,
}

impl Trainer {
    pub fn new(net: Network, loss: LossConfig, optim: OptimConfig, time_steps: usize) -> Self {
        let velocity = net.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            net,
            velocity,
            loss,
            optim,
            time_steps,
            step: 0,
            epoch: 0,
        }
    }

    /// Fresh network for `arch`: encoder from the init stream, heads (for
    /// contrastive objectives) from their own stream.
    pub fn initialise(
        encoder: &EncoderConfig,
        lif: &LifParams,
        input_shape: &[usize],
        classes: usize,
        loss: LossConfig,
        optim: OptimConfig,
        time_steps: usize,
    ) -> Result<Self> {
        let arch = architecture(encoder.clone(), *lif, input_shape, classes);
        let mut net = Network::new(arch, &mut stream(optim.seed, Stream::Init))?;
        if loss.family.is_contrastive() {
            net.attach_heads(&mut stream(optim.seed, Stream::Heads));
        }
        Ok(Self::new(net, loss, optim, time_steps))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_network(&self.net, &self.velocity, self.time_steps, self.step, self.epoch)
    }

    pub fn from_checkpoint(ck: &Checkpoint, loss: LossConfig, optim: OptimConfig) -> Result<Self> {
        let net = ck.network()?;
        let velocity = ck.velocity_for(&net)?;
        Ok(Self {
            net,
            velocity,
            loss,
            optim,
            time_steps: ck.meta.time_steps,
            step: ck.meta.step,
            epoch: ck.meta.epoch,
        })
    }

    /// One optimiser step. `views[v]` holds per-step `[B, ...]` inputs.
    pub fn train_batch(&mut self, views: &[Vec<Tensor>], labels: &[usize], lr: f64) -> Result<BatchStats> {
        let mut g = Graph::new();
        let pv = self.net.bind(&mut g, true);
        let outs = views
            .iter()
            .map(|v| self.net.forward_timesteps(&mut g, &pv, v, Mode::Train, false))
            .collect::<Result<Vec<_>>>()?;
        let parts = compute_loss(&self.net, &mut g, &pv, &outs, labels, &self.loss)?;
        let total = g.value(parts.total).item()?;
        let ce = g.value(parts.ce).item()?;
        let cl = match parts.contrastive {
            Some(c) => g.value(c).item()?,
            None => 0.0,
        };
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "loss is {total} (ce {ce}, contrastive {cl})"
            )));
        }
        let classes = self.net.architecture().num_classes;
        let mut mean = vec![0.0; labels.len() * classes];
        for &l in &outs[0].logits {
            for (m, v) in mean.iter_mut().zip(g.value(l).data()) {
                *m += v;
            }
        }
        let correct = mean
            .chunks(classes)
            .zip(labels)
            .filter(|(row, &label)| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
                best == label
            })
            .count();
        let mut grads = g.backward(parts.total)?;
        let grads: Vec<Tensor> = pv
            .iter()
            .map(|&v| grads.take(v).expect("every parameter is a tracked leaf"))
            .collect();
        sgd_step(&mut self.net.params, &grads, &mut self.velocity, lr, &self.optim)?;
        for out in &outs {
            self.net.apply_bn_updates(&out.bn_updates);
        }
        self.step += 1;
        Ok(BatchStats {
            ce,
            cl,
            total,
            correct,
            size: labels.len(),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Overwrite an existing, non-empty output directory.
    pub force: bool,
    /// Write 0 in the wall-clock column so repeated runs are byte-identical.
    pub deterministic: bool,
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub history: Vec<EpochRecord>,
    pub best_eval_acc: Option<f64>,
    pub last: PathBuf,
    pub best: Option<PathBuf>,
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Invalid(format!(
                "{} exists and is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Full training run: writes `config.json`, `metrics.csv`,
/// `metrics.jsonl`, `best.ck` (at the best eval accuracy) and `last.ck`.
pub fn fit(run: &RunConfig, out_dir: &Path, opts: &FitOptions) -> Result<FitSummary> {
    run.validate()?;
    let train = run.data.train.load()?;
    let eval_ds = run.data.eval.load()?;
    fit_with_data(run, &train, &eval_ds, out_dir, opts)
}

pub fn fit_with_data(
    run: &RunConfig,
    train: &Dataset,
    eval_ds: &Dataset,
    out_dir: &Path,
    opts: &FitOptions,
) -> Result<FitSummary> {
    run.validate()?;
    if train.step_shape() != eval_ds.step_shape() || train.class_count != eval_ds.class_count {
        return Err(Error::Invalid(
            "train and eval datasets have different shapes or class counts".into(),
        ));
    }
    if train.len() < 2 {
        return Err(Error::Invalid("training needs at least two samples".into()));
    }
    prepare_out_dir(out_dir, opts.force)?;
    let cfg_path = out_dir.join("config.json");
    let cfg_text = serde_json::to_string_pretty(run).expect("config serialises");
    fs::write(&cfg_path, cfg_text + "\n").map_err(|e| Error::io(&cfg_path, e))?;

    let started = Instant::now();
    let mut trainer = Trainer::initialise(
        &run.encoder,
        &run.lif,
        &train.step_shape(),
        train.class_count,
        run.loss.clone(),
        run.optim.clone(),
        run.time_steps,
    )?;
    let policy = run.augment.policy(train)?;
    let mut shuffle_rng = stream(run.optim.seed, Stream::Shuffle);
    let mut aug_rng = stream(run.optim.seed, Stream::Augment);
    let bs = run.optim.batch_size;
    let n = train.len();
    let batches_per_epoch = n / bs + usize::from(n % bs >= 2);
    let total_steps = (batches_per_epoch * run.optim.epochs) as u64;
    let views = run.loss.family.views();

    let mut metrics = MetricsWriter::create(out_dir)?;
    let mut history = Vec::new();
    let mut best: Option<f64> = None;
    let best_path = out_dir.join("best.ck");
    let last_path = out_dir.join("last.ck");
    for epoch in 1..=run.optim.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
        let (mut ce, mut cl, mut total, mut correct, mut seen) = (0.0, 0.0, 0.0, 0usize, 0usize);
        let mut lr = run.optim.lr;
        for (b, chunk) in order.chunks(bs).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let mut per_view: Vec<Vec<Tensor>> = vec![Vec::with_capacity(chunk.len()); views];
            for &i in chunk {
                for v in per_view.iter_mut() {
                    v.push(sample_steps(train, i, run.time_steps, policy.as_ref(), &mut aug_rng)?);
                }
            }
            let inputs = per_view
                .iter()
                .map(|v| to_step_batches(v))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            lr = run.optim.lr_at(trainer.step, total_steps);
            let stats = trainer.train_batch(&inputs, &labels, lr).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {b}: {m}")),
                e => e,
            })?;
            let w = stats.size as f64;
            ce += stats.ce * w;
            cl += stats.cl * w;
            total += stats.total * w;
            correct += stats.correct;
            seen += stats.size;
        }
        trainer.epoch = epoch as u64;
        let eval_acc = evaluate(&trainer.net, eval_ds, run.time_steps)?.accuracy;
        let seen_f = seen.max(1) as f64;
        let record = EpochRecord {
            epoch,
            ce_loss: ce / seen_f,
            cl_loss: cl / seen_f,
            total_loss: total / seen_f,
            train_acc: 100.0 * correct as f64 / seen_f,
            eval_acc,
            lr,
            wall_seconds: if opts.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (ce {:.4}, cl {:.4}) train {:.1}% eval {:.1}%",
            record.total_loss,
            record.ce_loss,
            record.cl_loss,
            record.train_acc,
            record.eval_acc
        );
        metrics.record(&record)?;
        history.push(record);
        if best.is_none_or(|b| eval_acc > b) {
            best = Some(eval_acc);
            trainer.checkpoint().save(&best_path)?;
        }
    }
    trainer.checkpoint().save(&last_path)?;
    Ok(FitSummary {
        history,
        best_eval_acc: best,
        last: last_path,
        best: best.map(|_| best_path),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(family: &str) -> String {
        format!(
            r#"{{
                "loss": {{"family": "{family}"}},
                "optim": {{"epochs": 1, "batch_size": 8, "seed": 3}},
                "data": {{
                    "train": {{"synthetic": {{"classes": 2, "samples_per_class": 8, "image_side": 8, "temporal": false, "seed": 1}}}},
                    "eval": {{"synthetic": {{"classes": 2, "samples_per_class": 4, "image_side": 8, "temporal": false, "seed": 2}}}}
                }},
                "time_steps": 2
            }}"#
        )
    }

    #[test]
    fn config_parsing_and_typos() {
        let cfg = RunConfig::from_json(&config("TCL")).unwrap();
        assert_eq!(cfg.encoder, EncoderConfig::tiny_sew());
        assert_eq!(cfg.loss.lambda(), 0.5);
        let typo = config("TCL").replace("\"time_steps\"", "\"timesteps\"");
        assert!(RunConfig::from_json(&typo).is_err());
        let bad = config("TCL").replace("\"seed\": 3", "\"seed\": 3, \"lr\": -1");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn zero_epochs_writes_initial_checkpoint_only() {
        let mut cfg = RunConfig::from_json(&config("BL")).unwrap();
        cfg.optim.epochs = 0;
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let s = fit(&cfg, &out, &FitOptions::default()).unwrap();
        assert!(s.history.is_empty());
        assert!(s.best.is_none());
        let ck = Checkpoint::load(&out.join("last.ck")).unwrap();
        assert_eq!(ck.meta.step, 0);
        assert!(!out.join("best.ck").exists());
        let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn refuses_non_empty_output() {
        let cfg = RunConfig::from_json(&config("BL")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "1").unwrap();
        assert!(fit(&cfg, dir.path(), &FitOptions::default()).is_err());
    }

    #[test]
    fn every_family_trains_one_epoch() {
        for fam in ["BL", "TET", "TCL", "STCL"] {
            let cfg = RunConfig::from_json(&config(fam)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let s = fit(&cfg, &dir.path().join("r"), &FitOptions::default()).unwrap();
            let r = &s.history[0];
            assert!(r.total_loss.is_finite(), "{fam}");
            if fam == "TCL" || fam == "STCL" {
                assert!(r.cl_loss > 0.0);
            }
        }
    }
}
