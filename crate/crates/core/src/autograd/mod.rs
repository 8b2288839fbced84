//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every primitive applied to its variables in creation
//! order. [`Graph::backward`] walks that record in exact reverse order,
//! accumulating gradients additively over fan-out. Tensors that never enter a
//! graph carry no differentiation record; inside a graph, values created with
//! [`Graph::constant`] are untracked and never receive a gradient.
//!
//! ```
//! use spikecl::autograd::Graph;
//! use spikecl::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::from_vec(vec![3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

mod gradcheck;
pub(crate) mod kernels;

use std::sync::atomic::{AtomicU64, Ordering};

pub use gradcheck::{finite_diff_gradient, relative_error};

use crate::error::{Error, Result};
use crate::snn::surrogate::Surrogate;
use crate::tensor::Tensor;
use kernels::{col2im, gemm, im2col, swap_leading, ConvGeom};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded in a specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BatchNormMode {
    /// Normalise with batch statistics. Inputs: `x, gamma, beta`.
    Train { eps: f64 },
    /// Normalise with supplied statistics. Inputs: `x, gamma, beta, mean, var`.
    Eval { eps: f64 },
}

/// Differentiable primitives. Channel-wise primitives treat axis 1 as the
/// channel axis.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    MatMul,
    Transpose,
    AddBias,
    Conv2d { stride: usize, padding: usize },
    AvgPool2d { kernel: usize },
    Reshape(Vec<usize>),
    Index0(usize),
    Relu,
    Exp,
    Log,
    Sum,
    MeanAxis(usize),
    Concat(usize),
    L2NormalizeRows,
    BatchNorm(BatchNormMode),
    Heaviside { threshold: f64, surrogate: Surrogate },
    LogSoftmaxRows,
    MaskedLogSoftmaxRows,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scalar-mul",
            Primitive::AddScalar(_) => "add-scalar",
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::AddBias => "add-bias",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::AvgPool2d { .. } => "avgpool2d",
            Primitive::Reshape(_) => "flatten",
            Primitive::Index0(_) => "index",
            Primitive::Relu => "relu",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Sum => "sum",
            Primitive::MeanAxis(_) => "mean-over-axis",
            Primitive::Concat(_) => "concat",
            Primitive::L2NormalizeRows => "l2-normalize-rows",
            Primitive::BatchNorm(_) => "batchnorm",
            Primitive::Heaviside { .. } => "heaviside-surrogate",
            Primitive::LogSoftmaxRows => "log-softmax-rows",
            Primitive::MaskedLogSoftmaxRows => "masked-log-softmax-rows",
        }
    }
}

#[derive(Debug, Default)]
enum Saved {
    #[default]
    None,
    Conv {
        cols: Vec<f64>,
        geom: ConvGeom,
    },
    Norms(Vec<f64>),
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var_unbiased: Vec<f64>,
    },
}

/// Evaluates a primitive outside any graph.
pub fn apply_primitive(prim: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    forward(prim, inputs).map(|(t, _)| t)
}

struct Node {
    value: Tensor,
    prim: Option<Primitive>,
    inputs: Vec<Var>,
    saved: Saved,
    tracked: bool,
}

/// Ordered record of primitive applications. Single-threaded by design.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    strict: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            strict: false,
        }
    }

    /// A graph that rejects non-finite primitive inputs and zero-norm rows.
    pub fn strict() -> Self {
        Self {
            strict: true,
            ..Self::new()
        }
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Tracked leaf: receives a gradient on [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Node {
            value,
            prim: None,
            inputs: Vec::new(),
            saved: Saved::None,
            tracked: true,
        })
    }

    /// Untracked value; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Node {
            value,
            prim: None,
            inputs: Vec::new(),
            saved: Saved::None,
            tracked: false,
        })
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.graph != self.id {
            return Err(Error::Invalid("variable belongs to a different graph".into()));
        }
        self.nodes
            .get(v.index)
            .ok_or_else(|| Error::Invalid("dangling variable".into()))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).expect("variable from another graph").value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.node(v).map(|n| n.tracked).unwrap_or(false)
    }

    /// Batch mean and unbiased variance computed by a training-mode
    /// batchnorm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.node(v).ok()?.saved {
            Saved::BatchNorm {
                mean, var_unbiased, ..
            } => Some((mean, var_unbiased)),
            _ => None,
        }
    }

    /// Number of rows an l2-normalize node left at zero.
    pub fn zero_rows(&self, v: Var) -> usize {
        match self.node(v).map(|n| &n.saved) {
            Ok(Saved::Norms(norms)) => norms.iter().filter(|&&n| n == 0.0).count(),
            _ => 0,
        }
    }

    /// Records `prim` applied to `inputs`.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let mut tracked = false;
        for &v in inputs {
            tracked |= self.node(v)?.tracked;
        }
        let values: Vec<&Tensor> = inputs.iter().map(|&v| &self.nodes[v.index].value).collect();
        if self.strict
            && values.iter().any(|t| !t.all_finite()) {
                return Err(Error::NonFinite { op: prim.name() });
            }
        let (value, saved) = forward(&prim, &values)?;
        if self.strict {
            if let Saved::Norms(norms) = &saved {
                if norms.contains(&0.0) {
                    return Err(Error::Numerical("zero-norm row in l2-normalize-rows".into()));
                }
            }
        }
        Ok(self.push(Node {
            value,
            prim: Some(prim),
            inputs: inputs.to_vec(),
            saved,
            tracked,
        }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::AddScalar(s), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.apply(Primitive::AddBias, &[x, bias])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        self.apply(Primitive::Conv2d { stride, padding }, &[x, w])
    }

    pub fn avgpool2d(&mut self, x: Var, kernel: usize) -> Result<Var> {
        self.apply(Primitive::AvgPool2d { kernel }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[x])
    }

    pub fn index0(&mut self, x: Var, i: usize) -> Result<Var> {
        self.apply(Primitive::Index0(i), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::MeanAxis(axis), &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat(axis), xs)
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::L2NormalizeRows, &[x])
    }

    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.apply(Primitive::BatchNorm(BatchNormMode::Train { eps }), &[x, gamma, beta])
    }

    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Var,
        var: Var,
        eps: f64,
    ) -> Result<Var> {
        self.apply(
            Primitive::BatchNorm(BatchNormMode::Eval { eps }),
            &[x, gamma, beta, mean, var],
        )
    }

    pub fn heaviside(&mut self, u: Var, threshold: f64, surrogate: Surrogate) -> Result<Var> {
        self.apply(Primitive::Heaviside { threshold, surrogate }, &[u])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::LogSoftmaxRows, &[x])
    }

    pub fn masked_log_softmax_rows(&mut self, x: Var, mask: Var) -> Result<Var> {
        self.apply(Primitive::MaskedLogSoftmaxRows, &[x, mask])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .node(loss)
            .map_err(|_| Error::Invalid("loss is not part of this graph".into()))?;
        if node.value.len() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if node.tracked {
            grads[loss.index] = Some(Tensor::ones(node.value.shape()));
        }
        for i in (0..=loss.index).rev() {
            let n = &self.nodes[i];
            let Some(prim) = &n.prim else { continue };
            if !n.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = n.inputs.iter().map(|v| self.nodes[v.index].tracked).collect();
            let inputs: Vec<&Tensor> = n.inputs.iter().map(|v| &self.nodes[v.index].value).collect();
            let input_grads = backward_rule(prim, &inputs, &n.value, &n.saved, &g, &needs)?;
            for (v, ig) in n.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[v.index] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.prim.is_none() && n.tracked && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(n.value.shape()));
            }
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }
}

/// Result of [`Graph::backward`]. Only leaves keep their gradients.
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}

fn check_arity(prim: &Primitive, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() == n {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "{} takes {n} inputs, got {}",
            prim.name(),
            inputs.len()
        )))
    }
}

fn elementwise2(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    } else if b.rank() == 0 {
        let y = b.data()[0];
        Ok(a.map(|x| f(x, y)))
    } else if a.rank() == 0 {
        let x = a.data()[0];
        Ok(b.map(|y| f(x, y)))
    } else {
        Err(Error::shape(op, &[a.shape(), b.shape()]))
    }
}

/// Sums a gradient down to a rank-0 operand when it was broadcast.
fn reduce_like(g: Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::scalar(g.sum())
    }
}

fn channel_layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    let outer = shape[0];
    let c = shape[1];
    let inner = shape[2..].iter().product();
    Some((outer, c, inner))
}

fn forward(prim: &Primitive, inputs: &[&Tensor]) -> Result<(Tensor, Saved)> {
    use Primitive as P;
    let plain = |t: Tensor| Ok((t, Saved::None));
    match prim {
        P::Add | P::Sub | P::Mul => {
            check_arity(prim, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            let out = match prim {
                P::Add => elementwise2("add", a, b, |x, y| x + y)?,
                P::Sub => elementwise2("sub", a, b, |x, y| x - y)?,
                _ => elementwise2("mul", a, b, |x, y| x * y)?,
            };
            plain(out)
        }
        P::Scale(s) => {
            check_arity(prim, inputs, 1)?;
            let s = *s;
            plain(inputs[0].map(|x| s * x))
        }
        P::AddScalar(s) => {
            check_arity(prim, inputs, 1)?;
            let s = *s;
            plain(inputs[0].map(|x| x + s))
        }
        P::MatMul => {
            check_arity(prim, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::shape("matmul", &[a.shape(), b.shape()]));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut c, false);
            plain(Tensor::new(vec![m, n], c)?)
        }
        P::Transpose => {
            check_arity(prim, inputs, 1)?;
            let a = inputs[0];
            if a.rank() != 2 {
                return Err(Error::shape("transpose", &[a.shape()]));
            }
            plain(transpose2(a))
        }
        P::AddBias => {
            check_arity(prim, inputs, 2)?;
            let (x, b) = (inputs[0], inputs[1]);
            let Some((outer, c, inner)) = channel_layout(x.shape()) else {
                return Err(Error::shape("add-bias", &[x.shape(), b.shape()]));
            };
            if b.shape() != [c] {
                return Err(Error::shape("add-bias", &[x.shape(), b.shape()]));
            }
            let mut out = x.clone();
            let bd = b.data();
            for (i, chunk) in out.data_mut().chunks_mut(inner.max(1)).enumerate() {
                let bias = bd[i % c];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
            let _ = outer;
            plain(out)
        }
        P::Conv2d { stride, padding } => {
            check_arity(prim, inputs, 2)?;
            let (x, w) = (inputs[0], inputs[1]);
            let (xs, ws) = (x.shape(), w.shape());
            if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || *stride == 0 {
                return Err(Error::shape("conv2d", &[xs, ws]));
            }
            let (kh, kw) = (ws[2], ws[3]);
            let (hp, wp) = (xs[2] + 2 * padding, xs[3] + 2 * padding);
            if hp < kh || wp < kw {
                return Err(Error::shape("conv2d", &[xs, ws]));
            }
            let geom = ConvGeom {
                batch: xs[0],
                c_in: xs[1],
                h: xs[2],
                w: xs[3],
                kh,
                kw,
                stride: *stride,
                pad: *padding,
                ho: (hp - kh) / stride + 1,
                wo: (wp - kw) / stride + 1,
            };
            let c_out = ws[0];
            let cols = im2col(x.data(), &geom);
            let mut out = vec![0.0; c_out * geom.columns()];
            gemm(
                c_out,
                geom.patch(),
                geom.columns(),
                w.data(),
                false,
                &cols,
                false,
                &mut out,
                false,
            );
            let out = swap_leading(&out, c_out, geom.batch, geom.ho * geom.wo);
            let t = Tensor::new(vec![geom.batch, c_out, geom.ho, geom.wo], out)?;
            Ok((t, Saved::Conv { cols, geom }))
        }
        P::AvgPool2d { kernel } => {
            check_arity(prim, inputs, 1)?;
            let x = inputs[0];
            let s = x.shape();
            let k = *kernel;
            if s.len() != 4 || k == 0 || !s[2].is_multiple_of(k) || !s[3].is_multiple_of(k) {
                return Err(Error::shape("avgpool2d", &[s]));
            }
            let (ho, wo) = (s[2] / k, s[3] / k);
            let planes = s[0] * s[1];
            let mut out = vec![0.0; planes * ho * wo];
            let norm = 1.0 / (k * k) as f64;
            for p in 0..planes {
                let src = &x.data()[p * s[2] * s[3]..(p + 1) * s[2] * s[3]];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for dy in 0..k {
                            for dx in 0..k {
                                acc += src[(oy * k + dy) * s[3] + ox * k + dx];
                            }
                        }
                        out[(p * ho + oy) * wo + ox] = acc * norm;
                    }
                }
            }
            plain(Tensor::new(vec![s[0], s[1], ho, wo], out)?)
        }
        P::Reshape(shape) => {
            check_arity(prim, inputs, 1)?;
            plain(inputs[0].clone().reshape(shape)?)
        }
        P::Index0(i) => {
            check_arity(prim, inputs, 1)?;
            plain(inputs[0].index0(*i)?)
        }
        P::Relu => {
            check_arity(prim, inputs, 1)?;
            plain(inputs[0].map(|x| if x > 0.0 { x } else { 0.0 }))
        }
        P::Exp => {
            check_arity(prim, inputs, 1)?;
            plain(inputs[0].map(f64::exp))
        }
        P::Log => {
            check_arity(prim, inputs, 1)?;
            plain(inputs[0].map(f64::ln))
        }
        P::Sum => {
            check_arity(prim, inputs, 1)?;
            plain(Tensor::scalar(inputs[0].sum()))
        }
        P::MeanAxis(axis) => {
            check_arity(prim, inputs, 1)?;
            let x = inputs[0];
            let s = x.shape();
            if *axis >= s.len() || s[*axis] == 0 {
                return Err(Error::shape("mean-over-axis", &[s]));
            }
            let outer: usize = s[..*axis].iter().product();
            let n = s[*axis];
            let inner: usize = s[axis + 1..].iter().product();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..n {
                    let src = &x.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (d, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
            let inv = 1.0 / n as f64;
            out.iter_mut().for_each(|v| *v *= inv);
            let mut shape = s.to_vec();
            shape.remove(*axis);
            plain(Tensor::new(shape, out)?)
        }
        P::Concat(axis) => {
            let Some(first) = inputs.first() else {
                return Err(Error::Invalid("concat of zero tensors".into()));
            };
            let s0 = first.shape();
            if *axis >= s0.len() {
                return Err(Error::shape("concat", &[s0]));
            }
            for t in inputs {
                let s = t.shape();
                let ok = s.len() == s0.len()
                    && s.iter()
                        .zip(s0)
                        .enumerate()
                        .all(|(d, (a, b))| d == *axis || a == b);
                if !ok {
                    return Err(Error::shape("concat", &[s0, s]));
                }
            }
            let outer: usize = s0[..*axis].iter().product();
            let inner: usize = s0[axis + 1..].iter().product();
            let total: usize = inputs.iter().map(|t| t.shape()[*axis]).sum();
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in inputs {
                    let chunk = t.shape()[*axis] * inner;
                    out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = s0.to_vec();
            shape[*axis] = total;
            plain(Tensor::new(shape, out)?)
        }
        P::L2NormalizeRows => {
            check_arity(prim, inputs, 1)?;
            let x = inputs[0];
            if x.rank() != 2 {
                return Err(Error::shape("l2-normalize-rows", &[x.shape()]));
            }
            let d = x.shape()[1];
            let mut out = x.clone();
            let mut norms = Vec::with_capacity(x.shape()[0]);
            for row in out.data_mut().chunks_mut(d.max(1)) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
                norms.push(norm);
            }
            Ok((out, Saved::Norms(norms)))
        }
        P::BatchNorm(mode) => {
            let x = inputs.first().copied();
            let arity = match mode {
                BatchNormMode::Train { .. } => 3,
                BatchNormMode::Eval { .. } => 5,
            };
            check_arity(prim, inputs, arity)?;
            let x = x.unwrap();
            let Some((outer, c, inner)) = channel_layout(x.shape()) else {
                return Err(Error::shape("batchnorm", &[x.shape()]));
            };
            for p in &inputs[1..] {
                if p.shape() != [c] {
                    return Err(Error::shape("batchnorm", &[x.shape(), p.shape()]));
                }
            }
            let (gamma, beta) = (inputs[1].data(), inputs[2].data());
            let m = outer * inner;
            let (mean, var, eps) = match mode {
                BatchNormMode::Train { eps } => {
                    let mut mean = vec![0.0; c];
                    let mut var = vec![0.0; c];
                    for o in 0..outer {
                        for ch in 0..c {
                            let s = &x.data()[(o * c + ch) * inner..(o * c + ch + 1) * inner];
                            mean[ch] += s.iter().sum::<f64>();
                        }
                    }
                    mean.iter_mut().for_each(|v| *v /= m as f64);
                    for o in 0..outer {
                        for ch in 0..c {
                            let s = &x.data()[(o * c + ch) * inner..(o * c + ch + 1) * inner];
                            var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= m as f64);
                    (mean, var, *eps)
                }
                BatchNormMode::Eval { eps } => {
                    (inputs[3].data().to_vec(), inputs[4].data().to_vec(), *eps)
                }
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = x.data().to_vec();
            let mut out = vec![0.0; x.len()];
            for o in 0..outer {
                for ch in 0..c {
                    let r = (o * c + ch) * inner..(o * c + ch + 1) * inner;
                    for (xh, y) in xhat[r.clone()].iter_mut().zip(&mut out[r]) {
                        *xh = (*xh - mean[ch]) * inv_std[ch];
                        *y = gamma[ch] * *xh + beta[ch];
                    }
                }
            }
            let var_unbiased = if m > 1 {
                var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect()
            } else {
                var
            };
            Ok((
                Tensor::new(x.shape().to_vec(), out)?,
                Saved::BatchNorm {
                    xhat,
                    inv_std,
                    mean,
                    var_unbiased,
                },
            ))
        }
        P::Heaviside { threshold, .. } => {
            check_arity(prim, inputs, 1)?;
            let th = *threshold;
            plain(inputs[0].map(|u| if u - th >= 0.0 { 1.0 } else { 0.0 }))
        }
        P::LogSoftmaxRows => {
            check_arity(prim, inputs, 1)?;
            let x = inputs[0];
            if x.rank() != 2 || x.shape()[1] == 0 {
                return Err(Error::shape("log-softmax-rows", &[x.shape()]));
            }
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(x.shape()[1]) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            plain(out)
        }
        P::MaskedLogSoftmaxRows => {
            check_arity(prim, inputs, 2)?;
            let (x, mask) = (inputs[0], inputs[1]);
            if x.rank() != 2 || x.shape() != mask.shape() {
                return Err(Error::shape("masked-log-softmax-rows", &[x.shape(), mask.shape()]));
            }
            let cols = x.shape()[1];
            let mut out = vec![0.0; x.len()];
            for (r, (row, mrow)) in x
                .data()
                .chunks(cols.max(1))
                .zip(mask.data().chunks(cols.max(1)))
                .enumerate()
            {
                let max = row
                    .iter()
                    .zip(mrow)
                    .filter(|(_, &m)| m != 0.0)
                    .map(|(&v, _)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(Error::Invalid(format!(
                        "masked-log-softmax-rows: row {r} has no unmasked entries"
                    )));
                }
                let lse = max
                    + row
                        .iter()
                        .zip(mrow)
                        .filter(|(_, &m)| m != 0.0)
                        .map(|(&v, _)| (v - max).exp())
                        .sum::<f64>()
                        .ln();
                for (j, (&v, &m)) in row.iter().zip(mrow).enumerate() {
                    if m != 0.0 {
                        out[r * cols + j] = v - lse;
                    }
                }
            }
            plain(Tensor::new(x.shape().to_vec(), out)?)
        }
    }
}

fn transpose2(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out).expect("transpose preserves size")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map on equal shapes")
}

fn backward_rule(
    prim: &Primitive,
    inputs: &[&Tensor],
    out: &Tensor,
    saved: &Saved,
    g: &Tensor,
    needs: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    use Primitive as P;
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    let grads = match prim {
        P::Add => vec![
            want(0).then(|| reduce_like(g.clone(), inputs[0])),
            want(1).then(|| reduce_like(g.clone(), inputs[1])),
        ],
        P::Sub => vec![
            want(0).then(|| reduce_like(g.clone(), inputs[0])),
            want(1).then(|| reduce_like(g.map(|v| -v), inputs[1])),
        ],
        P::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let ga = want(0).then(|| {
                let t = elementwise2("mul", g, b, |x, y| x * y).expect("shapes checked forward");
                reduce_like(t, a)
            });
            let gb = want(1).then(|| {
                let t = elementwise2("mul", g, a, |x, y| x * y).expect("shapes checked forward");
                reduce_like(t, b)
            });
            vec![ga, gb]
        }
        P::Scale(s) => {
            let s = *s;
            vec![Some(g.map(|v| s * v))]
        }
        P::AddScalar(_) => vec![Some(g.clone())],
        P::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let ga = want(0).then(|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, b.data(), true, &mut d, false);
                Tensor::new(vec![m, k], d).unwrap()
            });
            let gb = want(1).then(|| {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, a.data(), true, g.data(), false, &mut d, false);
                Tensor::new(vec![k, n], d).unwrap()
            });
            vec![ga, gb]
        }
        P::Transpose => vec![Some(transpose2(g))],
        P::AddBias => {
            let (x, b) = (inputs[0], inputs[1]);
            let (_, c, inner) = channel_layout(x.shape()).unwrap();
            let gb = want(1).then(|| {
                let mut acc = vec![0.0; c];
                for (i, chunk) in g.data().chunks(inner.max(1)).enumerate() {
                    acc[i % c] += chunk.iter().sum::<f64>();
                }
                Tensor::new(b.shape().to_vec(), acc).unwrap()
            });
            vec![want(0).then(|| g.clone()), gb]
        }
        P::Conv2d { .. } => {
            let Saved::Conv { cols, geom } = saved else {
                return Err(Error::Invalid("conv2d node lost its saved columns".into()));
            };
            let w = inputs[1];
            let c_out = w.shape()[0];
            let gm = swap_leading(g.data(), geom.batch, c_out, geom.ho * geom.wo);
            let gx = want(0).then(|| {
                let mut dcols = vec![0.0; geom.patch() * geom.columns()];
                gemm(
                    geom.patch(),
                    c_out,
                    geom.columns(),
                    w.data(),
                    true,
                    &gm,
                    false,
                    &mut dcols,
                    false,
                );
                Tensor::new(inputs[0].shape().to_vec(), col2im(&dcols, geom)).unwrap()
            });
            let gw = want(1).then(|| {
                let mut dw = vec![0.0; c_out * geom.patch()];
                gemm(
                    c_out,
                    geom.columns(),
                    geom.patch(),
                    &gm,
                    false,
                    cols,
                    true,
                    &mut dw,
                    false,
                );
                Tensor::new(w.shape().to_vec(), dw).unwrap()
            });
            vec![gx, gw]
        }
        P::AvgPool2d { kernel } => {
            let s = inputs[0].shape();
            let k = *kernel;
            let (ho, wo) = (s[2] / k, s[3] / k);
            let norm = 1.0 / (k * k) as f64;
            let mut dx = vec![0.0; inputs[0].len()];
            for p in 0..s[0] * s[1] {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let gv = g.data()[(p * ho + oy) * wo + ox] * norm;
                        for dy in 0..k {
                            for dxx in 0..k {
                                dx[p * s[2] * s[3] + (oy * k + dy) * s[3] + ox * k + dxx] = gv;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::new(s.to_vec(), dx).unwrap())]
        }
        P::Reshape(_) => vec![Some(g.clone().reshape(inputs[0].shape())?)],
        P::Index0(i) => {
            let x = inputs[0];
            let inner = g.len();
            let mut d = vec![0.0; x.len()];
            d[i * inner..(i + 1) * inner].copy_from_slice(g.data());
            vec![Some(Tensor::new(x.shape().to_vec(), d).unwrap())]
        }
        P::Relu => vec![Some(zip_map(g, inputs[0], |gv, x| if x > 0.0 { gv } else { 0.0 }))],
        P::Exp => vec![Some(zip_map(g, out, |gv, y| gv * y))],
        P::Log => vec![Some(zip_map(g, inputs[0], |gv, x| gv / x))],
        P::Sum => {
            let gv = g.data()[0];
            vec![Some(Tensor::full(inputs[0].shape(), gv))]
        }
        P::MeanAxis(axis) => {
            let s = inputs[0].shape();
            let outer: usize = s[..*axis].iter().product();
            let n = s[*axis];
            let inner: usize = s[axis + 1..].iter().product();
            let inv = 1.0 / n as f64;
            let mut d = vec![0.0; inputs[0].len()];
            for o in 0..outer {
                let src = &g.data()[o * inner..(o + 1) * inner];
                for j in 0..n {
                    for (dst, v) in d[(o * n + j) * inner..(o * n + j + 1) * inner]
                        .iter_mut()
                        .zip(src)
                    {
                        *dst = v * inv;
                    }
                }
            }
            vec![Some(Tensor::new(s.to_vec(), d).unwrap())]
        }
        P::Concat(axis) => {
            let s0 = inputs[0].shape();
            let outer: usize = s0[..*axis].iter().product();
            let inner: usize = s0[axis + 1..].iter().product();
            let total: usize = inputs.iter().map(|t| t.shape()[*axis]).sum();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(inputs.len());
            for (idx, t) in inputs.iter().enumerate() {
                let n = t.shape()[*axis];
                if want(idx) {
                    let mut d = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[start..start + n * inner]);
                    }
                    grads.push(Some(Tensor::new(t.shape().to_vec(), d).unwrap()));
                } else {
                    grads.push(None);
                }
                offset += n;
            }
            grads
        }
        P::L2NormalizeRows => {
            let Saved::Norms(norms) = saved else {
                return Err(Error::Invalid("l2-normalize node lost its norms".into()));
            };
            let d = inputs[0].shape()[1].max(1);
            let mut dx = vec![0.0; g.len()];
            for (r, &norm) in norms.iter().enumerate() {
                if norm == 0.0 {
                    continue;
                }
                let y = &out.data()[r * d..(r + 1) * d];
                let gr = &g.data()[r * d..(r + 1) * d];
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    dx[r * d + j] = (gr[j] - y[j] * dot) / norm;
                }
            }
            vec![Some(Tensor::new(inputs[0].shape().to_vec(), dx).unwrap())]
        }
        P::BatchNorm(mode) => {
            let Saved::BatchNorm { xhat, inv_std, .. } = saved else {
                return Err(Error::Invalid("batchnorm node lost its statistics".into()));
            };
            let x = inputs[0];
            let gamma = inputs[1].data();
            let (outer, c, inner) = channel_layout(x.shape()).unwrap();
            let m = (outer * inner) as f64;
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for o in 0..outer {
                for ch in 0..c {
                    let r = (o * c + ch) * inner..(o * c + ch + 1) * inner;
                    for (gv, xh) in g.data()[r.clone()].iter().zip(&xhat[r]) {
                        sum_g[ch] += gv;
                        sum_gx[ch] += gv * xh;
                    }
                }
            }
            let gx = want(0).then(|| {
                let mut dx = vec![0.0; x.len()];
                for o in 0..outer {
                    for ch in 0..c {
                        let r = (o * c + ch) * inner..(o * c + ch + 1) * inner;
                        let scale = gamma[ch] * inv_std[ch];
                        for ((d, gv), xh) in dx[r.clone()].iter_mut().zip(&g.data()[r.clone()]).zip(&xhat[r]) {
                            *d = match mode {
                                BatchNormMode::Train { .. } => {
                                    scale * (gv - sum_g[ch] / m - xh * sum_gx[ch] / m)
                                }
                                BatchNormMode::Eval { .. } => scale * gv,
                            };
                        }
                    }
                }
                Tensor::new(x.shape().to_vec(), dx).unwrap()
            });
            let mut grads = vec![
                gx,
                want(1).then(|| Tensor::from_vec(sum_gx)),
                want(2).then(|| Tensor::from_vec(sum_g)),
            ];
            if matches!(mode, BatchNormMode::Eval { .. }) {
                grads.extend([None, None]);
            }
            grads
        }
        P::Heaviside { threshold, surrogate } => {
            let th = *threshold;
            vec![Some(zip_map(g, inputs[0], |gv, u| gv * surrogate.derivative_at(u - th)))]
        }
        P::LogSoftmaxRows => {
            let cols = out.shape()[1];
            let mut dx = vec![0.0; g.len()];
            for (r, (orow, grow)) in out.data().chunks(cols).zip(g.data().chunks(cols)).enumerate() {
                let gsum: f64 = grow.iter().sum();
                for j in 0..cols {
                    dx[r * cols + j] = grow[j] - orow[j].exp() * gsum;
                }
            }
            vec![Some(Tensor::new(out.shape().to_vec(), dx).unwrap())]
        }
        P::MaskedLogSoftmaxRows => {
            let mask = inputs[1];
            let cols = out.shape()[1].max(1);
            let mut dx = vec![0.0; g.len()];
            for r in 0..out.shape()[0] {
                let range = r * cols..(r + 1) * cols;
                let (orow, grow, mrow) = (&out.data()[range.clone()], &g.data()[range.clone()], &mask.data()[range]);
                let gsum: f64 = grow.iter().zip(mrow).filter(|(_, &m)| m != 0.0).map(|(v, _)| v).sum();
                for j in 0..cols {
                    if mrow[j] != 0.0 {
                        dx[r * cols + j] = grow[j] - orow[j].exp() * gsum;
                    }
                }
            }
            vec![Some(Tensor::new(out.shape().to_vec(), dx).unwrap()), None]
        }
    };
    Ok(grads)
}
