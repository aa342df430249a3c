//! Python bindings: geometry, losses, samplers, the optimizers and the
//! toy training harnesses. Tensors cross the boundary as lists of floats.

use poincare_opt::bench::{embed_tree as embed_tree_rs, TreeTask};
use poincare_opt::diffusion::{energy_distance as energy_distance_rs, DiffusionRun, TrainRunConfig};
use poincare_opt::geometry::{self, ParamTensor, DEFAULT_PROJ_EPS};
use poincare_opt::losses::{self, DEFAULT_LOSS_DELTA};
use poincare_opt::optim::{OptimizerConfig, OptimizerKind, RiemannianSwitches};
use poincare_opt::schedule;
use poincare_opt::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Usage(_) | Error::Domain(_) | Error::Parse(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn tensors(data: Vec<Vec<f64>>) -> Vec<ParamTensor> {
    data.into_iter().map(ParamTensor::from_vec).collect()
}

#[pyfunction]
fn poincare_distance(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    geometry::poincare_distance(&u, &v).map_err(py_err)
}

#[pyfunction]
fn conformal_factor(norm_sq: f64) -> f64 {
    geometry::conformal_factor(norm_sq)
}

#[pyfunction]
fn riemannian_rescale(theta: Vec<f64>, grad: Vec<f64>) -> PyResult<Vec<f64>> {
    geometry::riemannian_rescale(&ParamTensor::from_vec(theta), &ParamTensor::from_vec(grad))
        .map(|t| t.data)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (theta, eps = DEFAULT_PROJ_EPS))]
fn project_to_ball(theta: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    geometry::project_to_ball(&ParamTensor::from_vec(theta), eps)
        .map(|t| t.data)
        .map_err(py_err)
}

/// Returns `(value, gradient with respect to pred)`.
#[pyfunction]
fn mse_loss(pred: Vec<f64>, target: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    let out = losses::mse_loss(&pred, &target).map_err(py_err)?;
    Ok((out.value, out.grad_wrt_pred))
}

/// Returns `(value, gradient with respect to pred)`; rows are `len / batch` wide.
#[pyfunction]
#[pyo3(signature = (pred, target, batch, delta = DEFAULT_LOSS_DELTA))]
fn poincare_loss(pred: Vec<f64>, target: Vec<f64>, batch: usize, delta: f64) -> PyResult<(f64, Vec<f64>)> {
    let out = losses::poincare_loss(&pred, &target, batch, delta).map_err(py_err)?;
    Ok((out.value, out.grad_wrt_pred))
}

#[pyfunction]
fn linear_timesteps(train_timesteps: usize) -> PyResult<Vec<f64>> {
    schedule::linear_timesteps(train_timesteps).map_err(py_err)
}

#[pyfunction]
fn hyperbola_timesteps(train_timesteps: usize) -> PyResult<Vec<f64>> {
    schedule::hyperbola_timesteps(train_timesteps).map_err(py_err)
}

/// Energy distance between two flattened `n × dim` point clouds.
#[pyfunction]
#[pyo3(signature = (a, b, dim = 2))]
fn energy_distance(a: Vec<f64>, b: Vec<f64>, dim: usize) -> PyResult<f64> {
    energy_distance_rs(&a, &b, dim).map_err(py_err)
}

#[pyfunction]
fn rosenbrock(x: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    poincare_opt::bench::rosenbrock(&x).map_err(py_err)
}

/// Stateful optimizer over a fixed list of parameter tensors.
#[pyclass(name = "Optimizer")]
struct PyOptimizer {
    inner: poincare_opt::Optimizer,
}

#[pymethods]
impl PyOptimizer {
    #[new]
    #[pyo3(signature = (kind, lr, weight_decay = 0.0, adam_eps = 1e-8, rescale = true, project = true))]
    fn new(kind: &str, lr: f64, weight_decay: f64, adam_eps: f64, rescale: bool, project: bool) -> PyResult<Self> {
        let kind: OptimizerKind = kind.parse().map_err(py_err)?;
        let config = OptimizerConfig::new(kind, lr)
            .with_weight_decay(weight_decay)
            .with_adam_eps(adam_eps)
            .with_switches(RiemannianSwitches { rescale, project });
        Ok(Self {
            inner: poincare_opt::Optimizer::new(config).map_err(py_err)?,
        })
    }

    /// Parameters as this optimizer expects them (pulled into the ball for
    /// hyperbolic kinds).
    fn register(&self, params: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let mut p = tensors(params);
        self.inner.register(&mut p);
        p.into_iter().map(|t| t.data).collect()
    }

    /// One update; returns the new parameters.
    fn step(&mut self, params: Vec<Vec<f64>>, grads: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let mut p = tensors(params);
        self.inner.step(&mut p, &tensors(grads)).map_err(py_err)?;
        Ok(p.into_iter().map(|t| t.data).collect())
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.inner.state().step_count
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.config().kind.to_string()
    }
}

/// Train one toy-diffusion preset; returns a list of per-epoch dicts.
#[pyfunction]
#[pyo3(signature = (preset = "AdamW+LinearT", epochs = 10, seed = 0, n_points = 1000, hidden = vec![128, 128], metric_every = 5, metric_samples = 256, inference_steps = 200))]
#[allow(clippy::too_many_arguments)]
fn train_diffusion<'py>(
    py: Python<'py>,
    preset: &str,
    epochs: usize,
    seed: u64,
    n_points: usize,
    hidden: Vec<usize>,
    metric_every: usize,
    metric_samples: usize,
    inference_steps: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let base = TrainRunConfig::preset(preset)
        .ok_or_else(|| PyValueError::new_err(format!("unknown preset `{preset}`")))?;
    let cfg = TrainRunConfig {
        epochs,
        seed,
        n_points,
        hidden,
        metric_every,
        metric_samples,
        inference_steps,
        ..base
    };
    let records = py
        .detach(|| DiffusionRun::new(cfg)?.run("py"))
        .map_err(py_err)?;
    records
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("run_id", r.run_id)?;
            d.set_item("config_label", r.config_label)?;
            d.set_item("epoch", r.epoch)?;
            d.set_item("loss", r.loss)?;
            d.set_item("metric", r.metric)?;
            d.set_item("wall_ms", r.wall_ms)?;
            d.set_item("seed", r.seed)?;
            Ok(d)
        })
        .collect()
}

/// Embed a balanced tree; returns `(flattened n × 2 coordinates, losses, distortion)`.
#[pyfunction]
#[pyo3(signature = (branching = 2, depth = 3, optimizer = "hyper_sgd", lr = 0.1, epochs = 500, seed = 0))]
fn embed_tree(
    branching: usize,
    depth: usize,
    optimizer: &str,
    lr: f64,
    epochs: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let task = TreeTask::balanced(branching, depth).map_err(py_err)?;
    let kind: OptimizerKind = optimizer.parse().map_err(py_err)?;
    let r = embed_tree_rs(&task, &OptimizerConfig::new(kind, lr), epochs, seed).map_err(py_err)?;
    Ok((r.embeddings, r.losses, r.distortion))
}

#[pymodule]
fn poincare_opt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(poincare_distance, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_factor, m)?)?;
    m.add_function(wrap_pyfunction!(riemannian_rescale, m)?)?;
    m.add_function(wrap_pyfunction!(project_to_ball, m)?)?;
    m.add_function(wrap_pyfunction!(mse_loss, m)?)?;
    m.add_function(wrap_pyfunction!(poincare_loss, m)?)?;
    m.add_function(wrap_pyfunction!(linear_timesteps, m)?)?;
    m.add_function(wrap_pyfunction!(hyperbola_timesteps, m)?)?;
    m.add_function(wrap_pyfunction!(energy_distance, m)?)?;
    m.add_function(wrap_pyfunction!(rosenbrock, m)?)?;
    m.add_function(wrap_pyfunction!(train_diffusion, m)?)?;
    m.add_function(wrap_pyfunction!(embed_tree, m)?)?;
    m.add_class::<PyOptimizer>()?;
    Ok(())
}
