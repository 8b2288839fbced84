//! Python bindings for spikecl.
//!
//! Tensors cross the boundary as nested lists of floats.

use std::collections::HashMap;
use std::path::Path;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use spikecl::data::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use spikecl::eval::{evaluate_prefix, profile_firing, sweep_prefixes};
use spikecl::losses::{bl_value, loss_temporal_contrastive, tet_value, EmbeddingBank};
use spikecl::snn::lif::{lif_trace, LifParams};
use spikecl::snn::network::Network;
use spikecl::train::checkpoint::Checkpoint;
use spikecl::train::{fit, prepare_out_dir, FitOptions, RunConfig};
use spikecl::{oracle, verify, Error, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numerical(_) | Error::NonFinite { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rectangular<T: Clone>(rows: &[Vec<T>], what: &str) -> PyResult<usize> {
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!("{what} is ragged")));
    }
    Ok(n)
}

fn tensor3(x: &[Vec<Vec<f64>>], what: &str) -> PyResult<Tensor> {
    let b = rectangular(x, what)?;
    let mut c = 0;
    for row in x {
        c = rectangular(row, what)?;
    }
    let flat: Vec<f64> = x.iter().flatten().flatten().copied().collect();
    if flat.len() != x.len() * b * c {
        return Err(PyValueError::new_err(format!("{what} is ragged")));
    }
    Tensor::new(vec![x.len(), b, c], flat).map_err(py_err)
}

/// Temporal contrastive loss of an embedding bank `z[view][step][sample][dim]`.
#[pyfunction]
#[pyo3(signature = (z, labels, tau=0.07, supervised=true))]
fn contrastive_loss(z: Vec<Vec<Vec<Vec<f64>>>>, labels: Vec<usize>, tau: f64, supervised: bool) -> PyResult<f64> {
    let v = z.len();
    let per_view = z.iter().map(|t| tensor3(t, "z")).collect::<PyResult<Vec<_>>>()?;
    let shape = per_view.first().map(|t| t.shape().to_vec()).unwrap_or_default();
    if per_view.iter().any(|t| t.shape() != shape.as_slice()) || shape.len() != 3 {
        return Err(PyValueError::new_err("z must be [views][steps][samples][dim]"));
    }
    let flat: Vec<f64> = per_view.iter().flat_map(|t| t.data().iter().copied()).collect();
    let t = Tensor::new(vec![v, shape[0], shape[1], shape[2]], flat).map_err(py_err)?;
    let bank = EmbeddingBank::new(t, labels).map_err(py_err)?;
    loss_temporal_contrastive(&bank, tau, supervised).map_err(py_err)
}

/// Scalar-loop reference: `z[anchor][step][dim]` with anchors view-major.
#[pyfunction]
#[pyo3(signature = (z, labels, views=1, tau=0.07, supervised=true))]
fn oracle_contrastive(z: Vec<Vec<Vec<f64>>>, labels: Vec<usize>, views: usize, tau: f64, supervised: bool) -> PyResult<f64> {
    if views == 0 || z.len() != views * labels.len() {
        return Err(PyValueError::new_err("z must have views * len(labels) anchors"));
    }
    Ok(oracle::oracle_contrastive(&z, &labels, views, tau, supervised))
}

/// Cross-entropy of step-averaged logits `logits[step][sample][class]`.
#[pyfunction]
fn bl_loss(logits: Vec<Vec<Vec<f64>>>, labels: Vec<usize>) -> PyResult<f64> {
    bl_value(&tensor3(&logits, "logits")?, &labels).map_err(py_err)
}

/// Mean of per-step cross-entropies.
#[pyfunction]
fn tet_loss(logits: Vec<Vec<Vec<f64>>>, labels: Vec<usize>) -> PyResult<f64> {
    tet_value(&tensor3(&logits, "logits")?, &labels).map_err(py_err)
}

/// Single-neuron LIF traces: (pre-spike membrane, spikes, post-reset membrane).
#[pyfunction]
#[pyo3(signature = (inputs, alpha=0.5, v_th=1.0))]
fn lif(inputs: Vec<f64>, alpha: f64, v_th: f64) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let params = LifParams {
        alpha,
        v_th,
        ..LifParams::default()
    };
    let xs: Vec<Tensor> = inputs.iter().map(|&x| Tensor::from_vec(vec![x])).collect();
    let tr = lif_trace(&xs, &params).map_err(py_err)?;
    let first = |ts: &[Tensor]| ts.iter().map(|t| t.data()[0]).collect();
    Ok((first(&tr.u_pre), first(&tr.spikes), first(&tr.u)))
}

/// Writes a synthetic dataset described by a JSON spec; returns the sample count.
#[pyfunction]
#[pyo3(signature = (spec_json, out_dir, force=false))]
fn generate_data(spec_json: &str, out_dir: &str, force: bool) -> PyResult<usize> {
    let spec: SyntheticSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let ds = generate_synthetic(&spec).map_err(py_err)?;
    let out = Path::new(out_dir);
    prepare_out_dir(out, force).map_err(py_err)?;
    save_dataset(&ds, out).map_err(py_err)?;
    Ok(ds.len())
}

/// Trains from a config file; returns one dict per epoch.
#[pyfunction]
#[pyo3(signature = (config, out_dir, seed=None, force=false, deterministic=false))]
fn train(
    py: Python<'_>,
    config: &str,
    out_dir: &str,
    seed: Option<u64>,
    force: bool,
    deterministic: bool,
) -> PyResult<Vec<HashMap<String, f64>>> {
    let mut run = RunConfig::load(Path::new(config)).map_err(py_err)?;
    if let Some(s) = seed {
        run.optim.seed = s;
    }
    let summary = py
        .detach(|| fit(&run, Path::new(out_dir), &FitOptions { force, deterministic }))
        .map_err(py_err)?;
    Ok(summary
        .history
        .iter()
        .map(|r| {
            HashMap::from([
                ("epoch".to_string(), r.epoch as f64),
                ("ce_loss".to_string(), r.ce_loss),
                ("cl_loss".to_string(), r.cl_loss),
                ("total_loss".to_string(), r.total_loss),
                ("train_acc".to_string(), r.train_acc),
                ("eval_acc".to_string(), r.eval_acc),
                ("lr".to_string(), r.lr),
                ("wall_seconds".to_string(), r.wall_seconds),
            ])
        })
        .collect())
}

fn checks(results: Vec<verify::CheckResult>) -> Vec<(String, bool, f64)> {
    results.into_iter().map(|c| (c.name, c.passed, c.error)).collect()
}

/// Gradient audit: (name, passed, worst error) per check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> Vec<(String, bool, f64)> {
    checks(verify::gradcheck_suite(seed))
}

/// Engine against the scalar-loop references: (name, passed, worst error).
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn oracle_check(seed: u64) -> Vec<(String, bool, f64)> {
    checks(verify::oracle_suite(seed))
}

/// A trained network restored from a checkpoint.
#[pyclass(module = "pyspikecl")]
struct Model {
    net: Network,
    time_steps: usize,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(Path::new(path)).map_err(py_err)?;
        Ok(Self {
            net: ck.network().map_err(py_err)?,
            time_steps: ck.meta.time_steps,
        })
    }

    #[getter]
    fn time_steps(&self) -> usize {
        self.time_steps
    }

    #[getter]
    fn num_blocks(&self) -> usize {
        self.net.num_blocks()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.net.architecture().num_classes
    }

    fn param_names(&self) -> Vec<String> {
        self.net.params.iter().map(|p| p.name.clone()).collect()
    }

    /// (shape, flat values) of a named parameter.
    fn param(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let p = self
            .net
            .param(name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter {name}")))?;
        Ok((p.value.shape().to_vec(), p.value.data().to_vec()))
    }

    /// (accuracy percent, mean cross-entropy) with `t` inference steps.
    #[pyo3(signature = (data_dir, t=None))]
    fn evaluate(&self, data_dir: &str, t: Option<usize>) -> PyResult<(f64, f64)> {
        let ds = load_dataset(Path::new(data_dir)).map_err(py_err)?;
        let t = t.unwrap_or(self.time_steps);
        let r = evaluate_prefix(&self.net, &ds, self.time_steps.max(t), t).map_err(py_err)?;
        Ok((r.accuracy, r.mean_ce))
    }

    /// (T', accuracy, mean cross-entropy) for T' = 1..t.
    #[pyo3(signature = (data_dir, t=None))]
    fn sweep(&self, data_dir: &str, t: Option<usize>) -> PyResult<Vec<(usize, f64, f64)>> {
        let ds = load_dataset(Path::new(data_dir)).map_err(py_err)?;
        let rep = sweep_prefixes(&self.net, &ds, self.time_steps, t.unwrap_or(self.time_steps)).map_err(py_err)?;
        Ok(rep.rows.iter().map(|r| (r.inference_t, r.accuracy, r.mean_ce)).collect())
    }

    /// (per-block firing rates in percent, accuracy percent).
    #[pyo3(signature = (data_dir, t=None))]
    fn profile_firing(&self, data_dir: &str, t: Option<usize>) -> PyResult<(Vec<f64>, f64)> {
        let ds = load_dataset(Path::new(data_dir)).map_err(py_err)?;
        let rep = profile_firing(&self.net, &ds, t.unwrap_or(self.time_steps), None).map_err(py_err)?;
        Ok((rep.rates, rep.accuracy))
    }
}

#[pymodule]
fn pyspikecl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_contrastive, m)?)?;
    m.add_function(wrap_pyfunction!(bl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(tet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(lif, m)?)?;
    m.add_function(wrap_pyfunction!(generate_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
