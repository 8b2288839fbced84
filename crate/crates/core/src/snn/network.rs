//! Block-structured spiking encoder with a non-spiking readout and analog
//! projection heads.
//!
//! Each block is `conv | linear`, optionally followed by batchnorm, then a
//! LIF population. A residual block adds (spike-ADD) its shortcut spikes to its
//! own spikes; when shapes differ, the shortcut is a 1x1 conv (or linear)
//! with its own batchnorm and LIF. After every time step the final block's
//! output is globally average-pooled and fed to a linear readout.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::snn::lif::{LifParams, LifState};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Linear {
        out_features: usize,
    },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub layer: LayerKind,
    #[serde(default = "yes")]
    pub batchnorm: bool,
    #[serde(default)]
    pub residual: bool,
}

impl BlockConfig {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            layer: LayerKind::Conv {
                out_channels,
                kernel,
                stride,
            },
            batchnorm: true,
            residual: false,
        }
    }

    pub fn linear(out_features: usize) -> Self {
        Self {
            layer: LayerKind::Linear { out_features },
            batchnorm: true,
            residual: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    GlobalAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    /// Hidden width; defaults to the tap's feature width.
    pub hidden: Option<usize>,
    pub out_dim: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            out_dim: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub blocks: Vec<BlockConfig>,
    /// Blocks whose pooled output feeds a contrastive head. `None` selects the
    /// midpoint block. The final block is always a tap.
    #[serde(default)]
    pub tap_blocks: Option<Vec<usize>>,
    #[serde(default)]
    pub pool: Pooling,
    #[serde(default)]
    pub projection: ProjectionConfig,
}

impl EncoderConfig {
    /// Three conv blocks (8, 16, 32 channels, 3x3; stride 2 on the last two)
    /// with a spike-ADD residual on the third.
    pub fn tiny_sew() -> Self {
        let mut third = BlockConfig::conv(32, 3, 2);
        third.residual = true;
        Self {
            blocks: vec![BlockConfig::conv(8, 3, 1), BlockConfig::conv(16, 3, 2), third],
            tap_blocks: None,
            pool: Pooling::GlobalAverage,
            projection: ProjectionConfig::default(),
        }
    }

    pub fn resolved_taps(&self) -> Vec<usize> {
        let n = self.blocks.len();
        if n == 0 {
            return Vec::new();
        }
        let mut taps = match &self.tap_blocks {
            Some(t) => t.clone(),
            None => vec![(n - 1) / 2],
        };
        taps.push(n - 1);
        taps.sort_unstable();
        taps.dedup();
        taps
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("encoder.blocks must not be empty".into()));
        }
        if let Some(taps) = &self.tap_blocks {
            if let Some(bad) = taps.iter().find(|&&t| t >= self.blocks.len()) {
                return Err(Error::Config(format!(
                    "encoder.tap_blocks: index {bad} out of range for {} blocks",
                    self.blocks.len()
                )));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            match b.layer {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if out_channels == 0 || kernel == 0 || !(1..=2).contains(&stride) {
                        return Err(Error::Config(format!(
                            "encoder.blocks[{i}]: conv needs out_channels > 0, kernel > 0, stride in {{1, 2}}"
                        )));
                    }
                }
                LayerKind::Linear { out_features } => {
                    if out_features == 0 {
                        return Err(Error::Config(format!(
                            "encoder.blocks[{i}]: linear needs out_features > 0"
                        )));
                    }
                }
            }
        }
        if self.projection.out_dim == 0 || self.projection.hidden == Some(0) {
            return Err(Error::Config("encoder.projection widths must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a network's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub encoder: EncoderConfig,
    pub lif: LifParams,
    /// Per-sample, per-step input shape, e.g. `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

impl Architecture {
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("architecture serialises");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Whether weight decay applies.
    pub decay: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Copy, Debug)]
enum LayerOp {
    Conv { stride: usize, padding: usize },
    Linear,
}

#[derive(Clone, Copy, Debug)]
struct BnSlots {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    op: LayerOp,
    weight: usize,
    bias: Option<usize>,
    bn: Option<BnSlots>,
    lif: usize,
}

#[derive(Clone, Copy, Debug)]
enum Shortcut {
    Identity,
    Project(Layer),
}

#[derive(Clone, Debug)]
struct BlockLayout {
    main: Layer,
    shortcut: Option<Shortcut>,
    out_shape: Vec<usize>,
}

/// Parameter slots of one projection head.
#[derive(Clone, Copy, Debug)]
pub struct HeadSlots {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Projection head parameters bound into a graph.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm; running statistics are collected.
    Train,
    /// Running statistics in batchnorm.
    Eval,
}

/// A batchnorm's batch statistics from one time step.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    mean_slot: usize,
    var_slot: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Per-time-step outputs of [`Network::forward_timesteps`].
pub struct TemporalOutputs {
    /// `[B, classes]` per step.
    pub logits: Vec<Var>,
    /// Tap block indices, aligned with `taps`.
    pub tap_blocks: Vec<usize>,
    /// Per tap, per step pooled features `[B, D_tap]`.
    pub taps: Vec<Vec<Var>>,
    /// Per block, per step binary spikes of the block's main LIF population.
    /// Empty unless spike recording was requested.
    pub spikes: Vec<Vec<Tensor>>,
    pub bn_updates: Vec<BnUpdate>,
}

impl TemporalOutputs {
    /// Spike tensors stacked to `[T, B, ...]`, one per block.
    pub fn stacked_spikes(&self) -> Result<Vec<Tensor>> {
        self.spikes.iter().map(|s| Tensor::stack(s)).collect()
    }

    pub fn logit_values(&self, g: &Graph) -> Result<Tensor> {
        Tensor::stack(&self.logits.iter().map(|&v| g.value(v).clone()).collect::<Vec<_>>())
    }
}

pub struct Network {
    arch: Architecture,
    pub params: Vec<Param>,
    pub buffers: Vec<NamedTensor>,
    blocks: Vec<BlockLayout>,
    readout_w: usize,
    readout_b: usize,
    heads: Vec<HeadSlots>,
    tap_blocks: Vec<usize>,
    lif_layers: usize,
}

enum Init<'a> {
    Random(&'a mut dyn RngCore),
    Zeros,
}

impl Init<'_> {
    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        match self {
            Init::Random(rng) => {
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::new(shape.to_vec(), data).unwrap()
            }
            Init::Zeros => Tensor::zeros(shape),
        }
    }
}

struct Builder<'a> {
    params: Vec<Param>,
    buffers: Vec<NamedTensor>,
    init: Init<'a>,
    lif_layers: usize,
}

impl Builder<'_> {
    fn param(&mut self, name: String, value: Tensor, decay: bool) -> usize {
        self.params.push(Param { name, value, decay });
        self.params.len() - 1
    }

    fn buffer(&mut self, name: String, value: Tensor) -> usize {
        self.buffers.push(NamedTensor { name, value });
        self.buffers.len() - 1
    }

    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let v = self.init.uniform(shape, 1.0 / (fan_in as f64).sqrt());
        self.param(name, v, true)
    }

    fn bias(&mut self, name: String, n: usize, fan_in: usize) -> usize {
        let v = self.init.uniform(&[n], 1.0 / (fan_in as f64).sqrt());
        self.param(name, v, false)
    }

    fn bn(&mut self, prefix: &str, c: usize) -> BnSlots {
        BnSlots {
            gamma: self.param(format!("{prefix}.bn.gamma"), Tensor::ones(&[c]), false),
            beta: self.param(format!("{prefix}.bn.beta"), Tensor::zeros(&[c]), false),
            mean: self.buffer(format!("{prefix}.bn.running_mean"), Tensor::zeros(&[c])),
            var: self.buffer(format!("{prefix}.bn.running_var"), Tensor::ones(&[c])),
        }
    }

    fn layer(
        &mut self,
        prefix: &str,
        kind: &LayerKind,
        in_shape: &[usize],
        batchnorm: bool,
    ) -> Result<(Layer, Vec<usize>)> {
        let (op, weight, out_shape, fan_in, width) = match *kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
            } => {
                let &[c, h, w] = in_shape else {
                    return Err(Error::Config(format!(
                        "{prefix}: conv layer needs a [C, H, W] input, got {in_shape:?}"
                    )));
                };
                let padding = kernel / 2;
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::Config(format!("{prefix}: kernel larger than input")));
                }
                let ho = (h + 2 * padding - kernel) / stride + 1;
                let wo = (w + 2 * padding - kernel) / stride + 1;
                let fan_in = c * kernel * kernel;
                let weight =
                    self.weight(format!("{prefix}.weight"), &[out_channels, c, kernel, kernel], fan_in);
                (
                    LayerOp::Conv { stride, padding },
                    weight,
                    vec![out_channels, ho, wo],
                    fan_in,
                    out_channels,
                )
            }
            LayerKind::Linear { out_features } => {
                let fan_in: usize = in_shape.iter().product();
                let weight = self.weight(format!("{prefix}.weight"), &[fan_in, out_features], fan_in);
                (LayerOp::Linear, weight, vec![out_features], fan_in, out_features)
            }
        };
        let (bias, bn) = if batchnorm {
            (None, Some(self.bn(prefix, width)))
        } else {
            (Some(self.bias(format!("{prefix}.bias"), width, fan_in)), None)
        };
        let lif = self.lif_layers;
        self.lif_layers += 1;
        Ok((
            Layer {
                op,
                weight,
                bias,
                bn,
                lif,
            },
            out_shape,
        ))
    }
}

fn feature_width(shape: &[usize]) -> usize {
    // pooled width: channels for [C, H, W], features for [F]
    shape[0]
}

impl Network {
    /// Randomly initialised encoder and readout (no projection heads).
    pub fn new(arch: Architecture, rng: &mut dyn RngCore) -> Result<Self> {
        Self::build(arch, Init::Random(rng))
    }

    fn build(arch: Architecture, init: Init<'_>) -> Result<Self> {
        arch.encoder.validate()?;
        arch.lif.validate()?;
        if arch.num_classes == 0 || arch.input_shape.is_empty() || arch.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "invalid input shape {:?} / class count {}",
                arch.input_shape, arch.num_classes
            )));
        }
        let mut b = Builder {
            params: Vec::new(),
            buffers: Vec::new(),
            init,
            lif_layers: 0,
        };
        let mut shape = arch.input_shape.clone();
        let mut blocks = Vec::new();
        for (i, cfg) in arch.encoder.blocks.iter().enumerate() {
            let prefix = format!("block{i}");
            let (main, out_shape) = b.layer(&prefix, &cfg.layer, &shape, cfg.batchnorm)?;
            let shortcut = if cfg.residual {
                if out_shape == shape {
                    Some(Shortcut::Identity)
                } else {
                    let kind = match cfg.layer {
                        LayerKind::Conv {
                            out_channels,
                            stride,
                            ..
                        } => LayerKind::Conv {
                            out_channels,
                            kernel: 1,
                            stride,
                        },
                        LayerKind::Linear { out_features } => LayerKind::Linear { out_features },
                    };
                    let (layer, sc_shape) =
                        b.layer(&format!("{prefix}.shortcut"), &kind, &shape, cfg.batchnorm)?;
                    if sc_shape != out_shape {
                        return Err(Error::Config(format!(
                            "{prefix}: shortcut shape {sc_shape:?} does not match {out_shape:?}"
                        )));
                    }
                    Some(Shortcut::Project(layer))
                }
            } else {
                None
            };
            blocks.push(BlockLayout {
                main,
                shortcut,
                out_shape: out_shape.clone(),
            });
            shape = out_shape;
        }
        let final_width = feature_width(&shape);
        let readout_w = b.weight("readout.weight".into(), &[final_width, arch.num_classes], final_width);
        let readout_b = b.bias("readout.bias".into(), arch.num_classes, final_width);
        let tap_blocks = arch.encoder.resolved_taps();
        Ok(Self {
            arch,
            params: b.params,
            buffers: b.buffers,
            blocks,
            readout_w,
            readout_b,
            heads: Vec::new(),
            tap_blocks,
            lif_layers: b.lif_layers,
        })
    }

    /// Adds one projection head per tap.
    pub fn attach_heads(&mut self, rng: &mut dyn RngCore) {
        self.attach_heads_with(Init::Random(rng));
    }

    fn attach_heads_with(&mut self, init: Init<'_>) {
        if !self.heads.is_empty() {
            return;
        }
        let mut b = Builder {
            params: std::mem::take(&mut self.params),
            buffers: Vec::new(),
            init,
            lif_layers: 0,
        };
        let proj = &self.arch.encoder.projection;
        for (j, &blk) in self.tap_blocks.iter().enumerate() {
            let d = feature_width(&self.blocks[blk].out_shape);
            let h = proj.hidden.unwrap_or(d);
            let out = proj.out_dim;
            let slots = HeadSlots {
                w1: b.weight(format!("head{j}.fc1.weight"), &[d, h], d),
                b1: b.bias(format!("head{j}.fc1.bias"), h, d),
                w2: b.weight(format!("head{j}.fc2.weight"), &[h, out], h),
                b2: b.bias(format!("head{j}.fc2.bias"), out, h),
            };
            self.heads.push(slots);
        }
        self.params = b.params;
    }

    /// Rebuilds a network from stored tensors. Every parameter and buffer of
    /// the layout must be present with a matching shape; heads are restored
    /// when their parameters are present.
    pub fn from_named(
        arch: Architecture,
        params: &[NamedTensor],
        buffers: &[NamedTensor],
    ) -> Result<Self> {
        let mut net = Self::build(arch, Init::Zeros)?;
        if params.iter().any(|p| p.name.starts_with("head")) {
            net.attach_heads_with(Init::Zeros);
        }
        let fill = |slots: &mut [(String, &mut Tensor)], stored: &[NamedTensor], what: &str| -> Result<()> {
            if slots.len() != stored.len() {
                return Err(Error::Invalid(format!(
                    "{what}: expected {} tensors, found {}",
                    slots.len(),
                    stored.len()
                )));
            }
            for (name, dst) in slots.iter_mut() {
                let src = stored
                    .iter()
                    .find(|s| &s.name == name)
                    .ok_or_else(|| Error::Invalid(format!("{what}: missing tensor {name}")))?;
                if src.value.shape() != dst.shape() {
                    return Err(Error::Invalid(format!(
                        "{what}: tensor {name} has shape {:?}, expected {:?}",
                        src.value.shape(),
                        dst.shape()
                    )));
                }
                **dst = src.value.clone();
            }
            Ok(())
        };
        let mut pslots: Vec<(String, &mut Tensor)> =
            net.params.iter_mut().map(|p| (p.name.clone(), &mut p.value)).collect();
        fill(&mut pslots, params, "parameters")?;
        let mut bslots: Vec<(String, &mut Tensor)> =
            net.buffers.iter_mut().map(|p| (p.name.clone(), &mut p.value)).collect();
        fill(&mut bslots, buffers, "buffers")?;
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn lif(&self) -> &LifParams {
        &self.arch.lif
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn tap_blocks(&self) -> &[usize] {
        &self.tap_blocks
    }

    pub fn has_heads(&self) -> bool {
        !self.heads.is_empty()
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Puts every parameter into `g`, tracked when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.leaf(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    pub fn head_vars(&self, pv: &[Var], tap: usize) -> Option<HeadVars> {
        self.heads.get(tap).map(|h| HeadVars {
            w1: pv[h.w1],
            b1: pv[h.b1],
            w2: pv[h.w2],
            b2: pv[h.b2],
        })
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            for (slot, batch) in [(u.mean_slot, &u.mean), (u.var_slot, &u.var)] {
                for (r, b) in self.buffers[slot].value.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }

    fn layer_forward(
        &self,
        g: &mut Graph,
        pv: &[Var],
        layer: &Layer,
        x: Var,
        mode: Mode,
        bn_consts: &mut [Option<(Var, Var)>],
        updates: &mut Vec<BnUpdate>,
    ) -> Result<Var> {
        let h = match layer.op {
            LayerOp::Conv { stride, padding } => g.conv2d(x, pv[layer.weight], stride, padding)?,
            LayerOp::Linear => {
                let shape = g.shape(x).to_vec();
                let flat = if shape.len() > 2 {
                    g.reshape(x, &[shape[0], shape[1..].iter().product()])?
                } else {
                    x
                };
                g.matmul(flat, pv[layer.weight])?
            }
        };
        if let Some(bn) = layer.bn {
            match mode {
                Mode::Train => {
                    let y = g.batchnorm_train(h, pv[bn.gamma], pv[bn.beta], BN_EPS)?;
                    let (mean, var) = g.batch_stats(y).expect("training batchnorm keeps stats");
                    updates.push(BnUpdate {
                        mean_slot: bn.mean,
                        var_slot: bn.var,
                        mean: mean.to_vec(),
                        var: var.to_vec(),
                    });
                    Ok(y)
                }
                Mode::Eval => {
                    let (mean, var) = match bn_consts[bn.mean] {
                        Some(c) => c,
                        None => {
                            let c = (
                                g.constant(self.buffers[bn.mean].value.clone()),
                                g.constant(self.buffers[bn.var].value.clone()),
                            );
                            bn_consts[bn.mean] = Some(c);
                            c
                        }
                    };
                    g.batchnorm_eval(h, pv[bn.gamma], pv[bn.beta], mean, var, BN_EPS)
                }
            }
        } else {
            g.add_bias(h, pv[layer.bias.expect("bias present without batchnorm")])
        }
    }

    fn pool(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() <= 2 {
            return Ok(x);
        }
        let spatial: usize = shape[2..].iter().product();
        let r = g.reshape(x, &[shape[0], shape[1], spatial])?;
        g.mean_axis(r, 2)
    }

    /// Runs every block for each step in `inputs` (each `[B, ...input_shape]`)
    /// with membrane state persisting across steps from a zero start.
    pub fn forward_timesteps(
        &self,
        g: &mut Graph,
        pv: &[Var],
        inputs: &[Tensor],
        mode: Mode,
        record_spikes: bool,
    ) -> Result<TemporalOutputs> {
        if pv.len() != self.params.len() {
            return Err(Error::Invalid(format!(
                "expected {} bound parameters, got {}",
                self.params.len(),
                pv.len()
            )));
        }
        let Some(first) = inputs.first() else {
            return Err(Error::Invalid("forward needs at least one time step".into()));
        };
        if first.rank() != self.arch.input_shape.len() + 1
            || first.shape()[1..] != self.arch.input_shape[..]
        {
            return Err(Error::shape("forward", &[first.shape(), &self.arch.input_shape]));
        }
        let mut state = LifState::new(self.lif_layers);
        let mut bn_consts = vec![None; self.buffers.len()];
        let mut out = TemporalOutputs {
            logits: Vec::with_capacity(inputs.len()),
            tap_blocks: self.tap_blocks.clone(),
            taps: vec![Vec::with_capacity(inputs.len()); self.tap_blocks.len()],
            spikes: if record_spikes {
                vec![Vec::with_capacity(inputs.len()); self.blocks.len()]
            } else {
                Vec::new()
            },
            bn_updates: Vec::new(),
        };
        let lif = self.arch.lif;
        let last = self.blocks.len() - 1;
        for (t, input) in inputs.iter().enumerate() {
            if input.shape() != first.shape() {
                return Err(Error::Invalid(format!(
                    "state shape drift: step {t} has shape {:?}, step 0 had {:?}",
                    input.shape(),
                    first.shape()
                )));
            }
            let mut x = g.constant(input.clone());
            for (i, blk) in self.blocks.iter().enumerate() {
                let h = self.layer_forward(g, pv, &blk.main, x, mode, &mut bn_consts, &mut out.bn_updates)?;
                let s = state.step(g, blk.main.lif, h, &lif)?;
                if record_spikes {
                    out.spikes[i].push(g.value(s).clone());
                }
                let y = match blk.shortcut {
                    None => s,
                    Some(Shortcut::Identity) => g.add(s, x)?,
                    Some(Shortcut::Project(layer)) => {
                        let hs =
                            self.layer_forward(g, pv, &layer, x, mode, &mut bn_consts, &mut out.bn_updates)?;
                        let ss = state.step(g, layer.lif, hs, &lif)?;
                        g.add(s, ss)?
                    }
                };
                let tap = self.tap_blocks.iter().position(|&b| b == i);
                if tap.is_some() || i == last {
                    let pooled = self.pool(g, y)?;
                    if let Some(j) = tap {
                        out.taps[j].push(pooled);
                    }
                    if i == last {
                        let z = g.matmul(pooled, pv[self.readout_w])?;
                        let logits = g.add_bias(z, pv[self.readout_b])?;
                        out.logits.push(logits);
                    }
                }
                x = y;
            }
        }
        Ok(out)
    }
}

/// Two-layer projection `linear -> relu -> linear` followed by row L2
/// normalisation. Rows that are exactly zero before normalisation stay zero
/// (and are rejected by a strict graph).
pub fn project(g: &mut Graph, head: &HeadVars, h: Var) -> Result<Var> {
    let a = g.matmul(h, head.w1)?;
    let a = g.add_bias(a, head.b1)?;
    let a = g.relu(a)?;
    let z = g.matmul(a, head.w2)?;
    let z = g.add_bias(z, head.b2)?;
    g.l2_normalize_rows(z)
}

/// Convenience: builds an architecture with `input_shape` and classes.
pub fn architecture(
    encoder: EncoderConfig,
    lif: LifParams,
    input_shape: &[usize],
    num_classes: usize,
) -> Architecture {
    Architecture {
        encoder,
        lif,
        input_shape: input_shape.to_vec(),
        num_classes,
    }
}
