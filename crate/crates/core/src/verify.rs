//! Verification suites behind the `gradcheck` and `oracle-check` commands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{finite_diff_gradient, relative_error, Graph, Var};
use crate::error::Result;
use crate::losses::{
    loss_bl, loss_stcl, loss_tcl, loss_temporal_contrastive, loss_tet, temporal_contrastive,
    EmbeddingBank, LossConfig, LossFamily,
};
use crate::oracle;
use crate::snn::lif::{lif_trace, LifParams};
use crate::snn::network::{architecture, project, BlockConfig, EncoderConfig, HeadVars, LayerKind, Mode, Network};
use crate::snn::surrogate::{Surrogate, SurrogateKind};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed error.
    pub error: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, error: f64, tol: f64) -> Self {
        let passed = error <= tol;
        Self {
            name: name.into(),
            passed,
            error,
            detail: format!("error {error:.3e} (tolerance {tol:.0e})"),
        }
    }

    fn failed(name: impl Into<String>, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: false,
            error: f64::INFINITY,
            detail,
        }
    }
}

fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

type Builder<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

/// Reduces `build`'s output to a scalar with fixed random weights and
/// compares reverse-mode gradients with central differences for every input
/// listed in `wrt`. Returns the worst relative error.
pub fn gradient_error(build: &Builder<'_>, inputs: &[Tensor], wrt: &[usize], seed: u64) -> Result<f64> {
    let weights = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = build(&mut g, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand_tensor(&mut rng, g.shape(y), -1.0, 1.0)
    };
    let scalar = |g: &mut Graph, vars: &[Var]| -> Result<Var> {
        let y = build(g, vars)?;
        if g.value(y).len() == 1 && g.shape(y).is_empty() {
            return Ok(y);
        }
        let w = g.constant(weights.clone());
        let p = g.mul(y, w)?;
        g.sum(p)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if wrt.contains(&i) {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let loss = scalar(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut worst: f64 = 0.0;
    for &i in wrt {
        let analytic = grads.get(vars[i]).expect("leaf gradient").clone();
        let numeric = finite_diff_gradient(
            |x| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g.constant(if j == i { x.clone() } else { t.clone() }))
                    .collect();
                let l = scalar(&mut g, &vars)?;
                g.value(l).item()
            },
            &inputs[i],
            FD_STEP,
        )?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

fn grad_check(name: &str, build: &Builder<'_>, inputs: Vec<Tensor>, wrt: &[usize], seed: u64) -> CheckResult {
    match gradient_error(build, &inputs, wrt, seed) {
        Ok(e) => CheckResult::new(format!("grad/{name}"), e, GRAD_TOL),
        Err(e) => CheckResult::failed(format!("grad/{name}"), e.to_string()),
    }
}

fn unit_rows(rng: &mut impl Rng, rows: usize, d: usize) -> Tensor {
    let mut t = rand_tensor(rng, &[rows, d], -1.0, 1.0);
    for row in t.data_mut().chunks_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    t
}

fn split_steps(g: &mut Graph, z: Var, views: usize, steps: usize, b: usize) -> Result<Vec<Vec<Var>>> {
    let d = g.shape(z)[1];
    let r = g.reshape(z, &[views * steps, b, d])?;
    let mut out = Vec::new();
    for v in 0..views {
        let mut s = Vec::new();
        for t in 0..steps {
            s.push(g.index0(r, v * steps + t)?);
        }
        out.push(s);
    }
    Ok(out)
}

/// Gradient audit of every differentiable primitive, every objective and the
/// surrogate path.
pub fn gradcheck_suite(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();
    let mut s = seed;
    let mut next = || {
        s += 1;
        s
    };

    let a23 = rand_tensor(r, &[2, 3], -2.0, 2.0);
    let b23 = rand_tensor(r, &[2, 3], -2.0, 2.0);
    out.push(grad_check("add", &|g, v| g.add(v[0], v[1]), vec![a23.clone(), b23.clone()], &[0, 1], next()));
    out.push(grad_check("sub", &|g, v| g.sub(v[0], v[1]), vec![a23.clone(), b23.clone()], &[0, 1], next()));
    out.push(grad_check("mul", &|g, v| g.mul(v[0], v[1]), vec![a23.clone(), b23.clone()], &[0, 1], next()));
    out.push(grad_check(
        "mul-scalar-broadcast",
        &|g, v| g.mul(v[0], v[1]),
        vec![a23.clone(), Tensor::scalar(r.gen_range(-2.0..2.0))],
        &[0, 1],
        next(),
    ));
    out.push(grad_check("scalar-mul", &|g, v| g.scale(v[0], -1.7), vec![a23.clone()], &[0], next()));
    out.push(grad_check("add-scalar", &|g, v| g.add_scalar(v[0], 0.3), vec![a23.clone()], &[0], next()));
    let b34 = rand_tensor(r, &[3, 4], -2.0, 2.0);
    let c45 = rand_tensor(r, &[4, 5], -2.0, 2.0);
    out.push(grad_check("matmul", &|g, v| g.matmul(v[0], v[1]), vec![a23.clone(), b34.clone()], &[0, 1], next()));
    out.push(grad_check(
        "matmul-chain",
        &|g, v| {
            let ab = g.matmul(v[0], v[1])?;
            g.matmul(ab, v[2])
        },
        vec![a23.clone(), b34.clone(), c45],
        &[0, 1, 2],
        next(),
    ));
    out.push(grad_check("transpose", &|g, v| g.transpose(v[0]), vec![a23.clone()], &[0], next()));
    out.push(grad_check(
        "add-bias",
        &|g, v| g.add_bias(v[0], v[1]),
        vec![rand_tensor(r, &[2, 3, 2, 2], -2.0, 2.0), rand_tensor(r, &[3], -2.0, 2.0)],
        &[0, 1],
        next(),
    ));
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        out.push(grad_check(
            &format!("conv2d-s{stride}-p{pad}"),
            &move |g, v| g.conv2d(v[0], v[1], stride, pad),
            vec![rand_tensor(r, &[2, 2, 5, 5], -2.0, 2.0), rand_tensor(r, &[3, 2, 3, 3], -2.0, 2.0)],
            &[0, 1],
            next(),
        ));
    }
    out.push(grad_check(
        "avgpool2d",
        &|g, v| g.avgpool2d(v[0], 2),
        vec![rand_tensor(r, &[2, 2, 4, 4], -2.0, 2.0)],
        &[0],
        next(),
    ));
    out.push(grad_check("flatten", &|g, v| g.reshape(v[0], &[6]), vec![a23.clone()], &[0], next()));
    out.push(grad_check("index", &|g, v| g.index0(v[0], 1), vec![a23.clone()], &[0], next()));
    out.push(grad_check("relu", &|g, v| g.relu(v[0]), vec![a23.clone()], &[0], next()));
    out.push(grad_check("exp", &|g, v| g.exp(v[0]), vec![a23.clone()], &[0], next()));
    out.push(grad_check(
        "log",
        &|g, v| g.log(v[0]),
        vec![rand_tensor(r, &[2, 3], 0.2, 2.0)],
        &[0],
        next(),
    ));
    out.push(grad_check("sum", &|g, v| g.sum(v[0]), vec![a23.clone()], &[0], next()));
    for axis in 0..2 {
        out.push(grad_check(
            &format!("mean-over-axis-{axis}"),
            &move |g, v| g.mean_axis(v[0], axis),
            vec![a23.clone()],
            &[0],
            next(),
        ));
    }
    out.push(grad_check(
        "concat",
        &|g, v| g.concat(&[v[0], v[1]], 0),
        vec![a23.clone(), rand_tensor(r, &[1, 3], -2.0, 2.0)],
        &[0, 1],
        next(),
    ));
    out.push(grad_check("l2-normalize-rows", &|g, v| g.l2_normalize_rows(v[0]), vec![a23.clone()], &[0], next()));
    out.push(grad_check(
        "batchnorm-train",
        &|g, v| g.batchnorm_train(v[0], v[1], v[2], 1e-5),
        vec![
            rand_tensor(r, &[4, 3, 2, 2], -2.0, 2.0),
            rand_tensor(r, &[3], 0.5, 2.0),
            rand_tensor(r, &[3], -1.0, 1.0),
        ],
        &[0, 1, 2],
        next(),
    ));
    out.push(grad_check(
        "batchnorm-eval",
        &|g, v| g.batchnorm_eval(v[0], v[1], v[2], v[3], v[4], 1e-5),
        vec![
            rand_tensor(r, &[4, 3], -2.0, 2.0),
            rand_tensor(r, &[3], 0.5, 2.0),
            rand_tensor(r, &[3], -1.0, 1.0),
            rand_tensor(r, &[3], -1.0, 1.0),
            rand_tensor(r, &[3], 0.5, 2.0),
        ],
        &[0, 1, 2],
        next(),
    ));
    out.push(grad_check("log-softmax-rows", &|g, v| g.log_softmax_rows(v[0]), vec![a23.clone()], &[0], next()));
    let mut mask = Tensor::ones(&[3, 3]);
    for i in 0..3 {
        mask.data_mut()[i * 3 + i] = 0.0;
    }
    out.push(grad_check(
        "masked-log-softmax-rows",
        &|g, v| g.masked_log_softmax_rows(v[0], v[1]),
        vec![rand_tensor(r, &[3, 3], -2.0, 2.0), mask],
        &[0],
        next(),
    ));

    // surrogate path: the backward of Θ must equal the closed-form derivative
    for kind in [SurrogateKind::Rectangular, SurrogateKind::Triangular] {
        let sg = Surrogate { kind, width: 1.0 };
        let u = rand_tensor(r, &[40], -1.0, 3.0);
        let w = rand_tensor(r, &[40], -1.0, 1.0);
        let res = (|| -> Result<f64> {
            let mut g = Graph::new();
            let uv = g.leaf(u.clone());
            let y = g.heaviside(uv, 1.0, sg)?;
            let wv = g.constant(w.clone());
            let p = g.mul(y, wv)?;
            let l = g.sum(p)?;
            let grads = g.backward(l)?;
            let got = grads.get(uv).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..u.len() {
                let want = w.data()[i] * sg.derivative_at(u.data()[i] - 1.0);
                worst = worst.max((got.data()[i] - want).abs());
            }
            Ok(worst)
        })();
        out.push(match res {
            Ok(e) => CheckResult::new(format!("grad/heaviside-surrogate-{kind:?}").to_lowercase(), e, 1e-15),
            Err(e) => CheckResult::failed("grad/heaviside-surrogate", e.to_string()),
        });
    }

    // objectives
    let labels3 = vec![0usize, 2, 1];
    let logits = rand_tensor(r, &[2, 3, 4], -2.0, 2.0);
    let steps_of = |g: &mut Graph, x: Var, t: usize| -> Result<Vec<Var>> { (0..t).map(|i| g.index0(x, i)).collect() };
    {
        let l = labels3.clone();
        out.push(grad_check(
            "loss-bl",
            &move |g, v| {
                let s = steps_of(g, v[0], 2)?;
                loss_bl(g, &s, &l)
            },
            vec![logits.clone()],
            &[0],
            next(),
        ));
    }
    {
        let l = labels3.clone();
        out.push(grad_check(
            "loss-tet",
            &move |g, v| {
                let s = steps_of(g, v[0], 2)?;
                loss_tet(g, &s, &l)
            },
            vec![logits.clone()],
            &[0],
            next(),
        ));
    }
    for (views, supervised, labels) in [
        (1, true, vec![0usize, 1]),
        (1, false, vec![0, 1]),
        (2, true, vec![1, 1]),
        (2, false, vec![0, 1]),
    ] {
        let b = labels.len();
        let raw = rand_tensor(r, &[views * 2 * b, 3], -2.0, 2.0);
        let name = format!(
            "loss-contrastive-{}-v{views}",
            if supervised { "supervised" } else { "unsupervised" }
        );
        out.push(grad_check(
            &name,
            &move |g, v| {
                let z = g.l2_normalize_rows(v[0])?;
                let banks = split_steps(g, z, views, 2, b)?;
                temporal_contrastive(g, &banks, &labels, 0.07, supervised)
            },
            vec![raw],
            &[0],
            next(),
        ));
    }
    {
        let l = vec![0usize, 1, 0];
        let raw = rand_tensor(r, &[2 * 3, 4], -2.0, 2.0);
        let mut cfg = LossConfig::new(LossFamily::Tcl);
        cfg.tau = 0.5;
        out.push(grad_check(
            "loss-tcl",
            &move |g, v| {
                let s = steps_of(g, v[0], 2)?;
                let z = g.l2_normalize_rows(v[1])?;
                let tap = split_steps(g, z, 1, 2, 3)?.remove(0);
                Ok(loss_tcl(g, &s, &[tap], &l, &cfg)?.total)
            },
            vec![rand_tensor(r, &[2, 3, 2], -2.0, 2.0), raw],
            &[0, 1],
            next(),
        ));
    }
    {
        let l = vec![0usize, 1];
        let raw = rand_tensor(r, &[2 * 2 * 2, 3], -2.0, 2.0);
        let cfg = LossConfig::new(LossFamily::Stcl);
        out.push(grad_check(
            "loss-stcl",
            &move |g, v| {
                let s1 = steps_of(g, v[0], 2)?;
                let s2 = steps_of(g, v[1], 2)?;
                let z = g.l2_normalize_rows(v[2])?;
                let tap = split_steps(g, z, 2, 2, 2)?;
                Ok(loss_stcl(g, &s1, &s2, &[tap], &l, &cfg)?.total)
            },
            vec![
                rand_tensor(r, &[2, 2, 3], -2.0, 2.0),
                rand_tensor(r, &[2, 2, 3], -2.0, 2.0),
                raw,
            ],
            &[0, 1, 2],
            next(),
        ));
    }
    out.push(grad_check(
        "project",
        &|g, v| {
            let head = HeadVars {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
            };
            project(g, &head, v[0])
        },
        vec![
            rand_tensor(r, &[3, 4], -2.0, 2.0),
            rand_tensor(r, &[4, 4], -1.0, 1.0),
            rand_tensor(r, &[4], -1.0, 1.0),
            rand_tensor(r, &[4, 5], -1.0, 1.0),
            rand_tensor(r, &[5], -1.0, 1.0),
        ],
        &[0, 1, 2, 3, 4],
        next(),
    ));
    out
}

fn random_bank(rng: &mut impl Rng, v: usize, t: usize, b: usize, d: usize) -> (EmbeddingBank, Vec<Vec<Vec<f64>>>) {
    let z = unit_rows(rng, v * t * b, d);
    let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..3)).collect();
    // oracle layout: anchors view-major, then steps
    let mut nested = vec![vec![Vec::new(); t]; v * b];
    for vi in 0..v {
        for ti in 0..t {
            for bi in 0..b {
                let row = ((vi * t + ti) * b + bi) * d;
                nested[vi * b + bi][ti] = z.data()[row..row + d].to_vec();
            }
        }
    }
    let bank = EmbeddingBank::new(z.reshape(&[v, t, b, d]).unwrap(), labels).unwrap();
    (bank, nested)
}

/// Engine contrastive loss against the scalar-loop oracle over random banks.
/// Returns `(banks compared, worst absolute error)`.
pub fn contrastive_oracle_sweep(seed: u64, banks: usize) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taus = [0.05, 0.07, 0.5, 5.0];
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    while compared < banks {
        let b = 1 + k % 4;
        let t = 1 + (k / 4) % 3;
        let v = 1 + (k / 12) % 2;
        let d = 2 + (k / 24) % 5;
        let tau = taus[(k / 3) % 4];
        k += 1;
        let (bank, nested) = random_bank(&mut rng, v, t, b, d);
        for supervised in [true, false] {
            let engine = loss_temporal_contrastive(&bank, tau, supervised);
            if v * t * b < 2 || (!supervised && v * t < 2) {
                if engine.is_ok() {
                    return Err(crate::Error::Numerical(format!(
                        "degenerate bank V={v} T={t} B={b} was accepted"
                    )));
                }
                continue;
            }
            let engine = engine?;
            let reference = oracle::oracle_contrastive(&nested, &bank.labels, v, tau, supervised);
            worst = worst.max((engine - reference).abs());
            compared += 1;
        }
    }
    Ok((compared, worst))
}

/// Engine LIF traces against the scalar recurrence, compared bitwise.
/// Every fourth sequence places inputs exactly on the threshold.
pub fn lif_oracle_sweep(seed: u64, sequences: usize) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for k in 0..sequences {
        let params = LifParams {
            alpha: rng.gen_range(0.0..=1.0),
            v_th: rng.gen_range(0.25..2.0),
            ..LifParams::default()
        };
        let len = rng.gen_range(1..20);
        let xs: Vec<f64> = (0..len)
            .map(|i| {
                if k % 4 == 0 && i % 3 == 0 {
                    params.v_th
                } else {
                    rng.gen_range(-1.0..2.5)
                }
            })
            .collect();
        let inputs: Vec<Tensor> = xs.iter().map(|&x| Tensor::from_vec(vec![x])).collect();
        let tr = lif_trace(&inputs, &params)?;
        let (pre, spk, mem) = oracle::oracle_lif(&xs, params.alpha, params.v_th);
        let bits = |ts: &[Tensor]| ts.iter().map(|t| t.data()[0].to_bits()).collect::<Vec<_>>();
        let obits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&tr.u_pre) != obits(&pre) || bits(&tr.spikes) != obits(&spk) || bits(&tr.u) != obits(&mem) {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

/// Single conv block network against the scalar-loop oracle on a 4x4 input
/// over 3 steps. Returns the worst absolute logit difference.
pub fn conv_block_oracle_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = EncoderConfig {
        blocks: vec![BlockConfig {
            layer: LayerKind::Conv {
                out_channels: 3,
                kernel: 3,
                stride: 1,
            },
            batchnorm: false,
            residual: false,
        }],
        tap_blocks: None,
        pool: Default::default(),
        projection: Default::default(),
    };
    let lif = LifParams::default();
    let arch = architecture(enc, lif, &[2, 4, 4], 3);
    let mut net = Network::new(arch, &mut rng)?;
    // larger weights so that neurons actually fire
    for p in net.params.iter_mut() {
        p.value = p.value.map(|v| 3.0 * v);
    }
    let frames: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &[1, 2, 4, 4], 0.0, 1.0)).collect();
    let mut g = Graph::new();
    let pv = net.bind(&mut g, false);
    let out = net.forward_timesteps(&mut g, &pv, &frames, Mode::Eval, false)?;

    let p = |name: &str| net.param(name).unwrap().value.clone();
    let (w, b, rw, rb) = (p("block0.weight"), p("block0.bias"), p("readout.weight"), p("readout.bias"));
    let weight: Vec<Vec<Vec<Vec<f64>>>> = (0..3)
        .map(|o| {
            (0..2)
                .map(|c| (0..3).map(|i| (0..3).map(|j| w.data()[((o * 2 + c) * 3 + i) * 3 + j]).collect()).collect())
                .collect()
        })
        .collect();
    let oracle_net = oracle::ConvBlockOracle {
        weight,
        bias: b.data().to_vec(),
        stride: 1,
        padding: 1,
        alpha: lif.alpha,
        v_th: lif.v_th,
        readout_weight: (0..3).map(|o| rw.data()[o * 3..o * 3 + 3].to_vec()).collect(),
        readout_bias: rb.data().to_vec(),
    };
    let nested: Vec<Vec<Vec<Vec<f64>>>> = frames
        .iter()
        .map(|f| {
            (0..2)
                .map(|c| (0..4).map(|i| f.data()[(c * 4 + i) * 4..(c * 4 + i) * 4 + 4].to_vec()).collect())
                .collect()
        })
        .collect();
    let want = oracle_net.logits(&nested);
    let mut worst: f64 = 0.0;
    for (t, l) in out.logits.iter().enumerate() {
        for (a, b) in g.value(*l).data().iter().zip(&want[t]) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Engine objectives and primitives against the scalar-loop oracles.
pub fn oracle_suite(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    match contrastive_oracle_sweep(seed, 200) {
        Ok((n, e)) => {
            let mut c = CheckResult::new("oracle/contrastive", e, oracle::LOSS_ABS_TOL);
            c.detail = format!("{n} banks, {}", c.detail);
            out.push(c);
        }
        Err(e) => out.push(CheckResult::failed("oracle/contrastive", e.to_string())),
    }
    out.push(match lif_oracle_sweep(seed, 100) {
        Ok(m) => {
            let mut c = CheckResult::new("oracle/lif", m as f64, 0.0);
            c.detail = format!("{m} of 100 sequences differ bitwise");
            c
        }
        Err(e) => CheckResult::failed("oracle/lif", e.to_string()),
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut res: Result<()> = Ok(());
    for _ in 0..50 {
        let (t, b, c) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(2..6));
        let logits = rand_tensor(&mut rng, &[t, b, c], -3.0, 3.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
        let nested: Vec<Vec<Vec<f64>>> = (0..t)
            .map(|ti| (0..b).map(|bi| logits.data()[(ti * b + bi) * c..(ti * b + bi + 1) * c].to_vec()).collect())
            .collect();
        match (
            crate::losses::bl_value(&logits, &labels),
            crate::losses::tet_value(&logits, &labels),
        ) {
            (Ok(bl), Ok(tet)) => {
                worst = worst
                    .max((bl - oracle::oracle_bl(&nested, &labels)).abs())
                    .max((tet - oracle::oracle_tet(&nested, &labels)).abs());
            }
            (Err(e), _) | (_, Err(e)) => {
                res = Err(e);
                break;
            }
        }
    }
    out.push(match res {
        Ok(()) => CheckResult::new("oracle/cross-entropy", worst, oracle::LOSS_ABS_TOL),
        Err(e) => CheckResult::failed("oracle/cross-entropy", e.to_string()),
    });
    out.push(match conv_block_oracle_check(seed) {
        Ok(e) => CheckResult::new("oracle/conv-block-forward", e, 1e-12),
        Err(e) => CheckResult::failed("oracle/conv-block-forward", e.to_string()),
    });
    out
}
