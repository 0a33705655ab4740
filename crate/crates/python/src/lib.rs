//! Python module `nesi`: weights, training, evaluation, batch EM and
//! checkpoints. Data crosses the boundary as nested lists of floats; rows are
//! raw (unnormalized) inputs unless a function says otherwise.

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use nesi_core::data::{generate_synthetic, random_ground_truth, RawRows};
use nesi_core::em::{self, EmOptions, RUpdate};
use nesi_core::eval;
use nesi_core::model::{self, normalize_input, ModelConfig, Observations, Sample};
use nesi_core::train::{
    self as training, RInit, StopReason, TrainConfig, TrainReport, Variant, WInit,
};

fn err(e: nesi_core::Error) -> PyErr {
    match e {
        nesi_core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat())
        .map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn to_lists(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn observations(rows: &[Vec<f64>], total: f64) -> PyResult<Observations> {
    let normed = rows
        .iter()
        .map(|r| normalize_input(r, total))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    Observations::from_rows(&normed).map_err(err)
}

fn variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(err)
}

/// Network weights: `w` is units x input_dim with rows summing to `total`,
/// `r` is classes x units with rows summing to 1.
#[pyclass(name = "Weights", module = "nesi")]
pub struct PyWeights {
    inner: model::Weights,
}

#[pymethods]
impl PyWeights {
    #[new]
    fn new(w: Vec<Vec<f64>>, r: Vec<Vec<f64>>, total: f64) -> PyResult<Self> {
        let inner =
            model::Weights::from_parts(matrix(&w, "w")?, matrix(&r, "r")?, total).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn uniform(input_dim: usize, units: usize, classes: usize, total: f64) -> PyResult<Self> {
        let config = ModelConfig::new(input_dim, units, classes, total).map_err(err)?;
        Ok(Self {
            inner: model::Weights::uniform(&config).map_err(err)?,
        })
    }

    /// Weights stored in a checkpoint file, with its metadata.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, HashMap<String, String>)> {
        let ckpt = training::restore(&path).map_err(err)?;
        let meta = ckpt.meta.iter().cloned().collect();
        Ok((
            Self {
                inner: ckpt.report.weights,
            },
            meta,
        ))
    }

    #[pyo3(signature = (path, meta=None))]
    fn save(&self, path: PathBuf, meta: Option<HashMap<String, String>>) -> PyResult<()> {
        let report = TrainReport {
            history: Vec::new(),
            weights: self.inner.clone(),
            stop_epoch: 0,
            stop_reason: StopReason::Completed,
        };
        let mut meta: Vec<_> = meta.unwrap_or_default().into_iter().collect();
        meta.sort();
        training::save(&path, &report, &meta).map_err(err)
    }

    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        to_lists(self.inner.w())
    }

    #[getter]
    fn r(&self) -> Vec<Vec<f64>> {
        to_lists(self.inner.r())
    }

    #[getter]
    fn total(&self) -> f64 {
        self.inner.total()
    }

    #[getter]
    fn units(&self) -> usize {
        self.inner.units()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    /// Class posterior and predicted class of one raw input.
    #[pyo3(signature = (x, variant="ff"))]
    fn classify(&self, x: Vec<f64>, variant: &str) -> PyResult<(Vec<f64>, usize)> {
        let mode = self::variant(variant)?.mode();
        let y = normalize_input(&x, self.inner.total()).map_err(err)?;
        let (p, k) = model::classify(&y, &self.inner, mode).map_err(err)?;
        Ok((p.to_vec(), k))
    }

    /// Log-likelihood of raw rows with optional labels.
    fn log_likelihood(&self, rows: Vec<Vec<f64>>, labels: Vec<Option<usize>>) -> PyResult<f64> {
        let obs = observations(&rows, self.inner.total())?;
        model::log_likelihood(&obs, &labels, &self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Weights(input_dim={}, units={}, classes={}, total={})",
            self.inner.input_dim(),
            self.inner.units(),
            self.inner.classes(),
            self.inner.total()
        )
    }
}

/// Outcome of [`train`].
#[pyclass(name = "TrainResult", module = "nesi")]
pub struct PyTrainResult {
    report: TrainReport,
}

#[pymethods]
impl PyTrainResult {
    #[getter]
    fn weights(&self) -> PyWeights {
        PyWeights {
            inner: self.report.weights.clone(),
        }
    }

    #[getter]
    fn stop_epoch(&self) -> usize {
        self.report.stop_epoch
    }

    #[getter]
    fn stop_reason(&self) -> &'static str {
        self.report.stop_reason.as_str()
    }

    /// Per-sample training log-likelihood after each epoch (None if untracked).
    #[getter]
    fn loglik(&self) -> Vec<Option<f64>> {
        self.report.history.iter().map(|e| e.loglik).collect()
    }

    #[getter]
    fn self_labels(&self) -> Vec<usize> {
        self.report.history.iter().map(|e| e.self_labels).collect()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        training::save(&path, &self.report, &[]).map_err(err)
    }
}

/// Trains a network on raw rows. `labels` holds None for unlabeled items.
#[pyfunction]
#[pyo3(signature = (
    rows, labels, units, classes, total,
    variant="ff", epochs=100, seed=0, eps_w_mult=0.2, eps_r_mult=0.2,
    batch_size=1, theta=0.6, w_init="global_mean", r_init="uniform",
    track_likelihood=false, early_stop=false, window=20, uniform_top=false,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    rows: Vec<Vec<f64>>,
    labels: Vec<Option<usize>>,
    units: usize,
    classes: usize,
    total: f64,
    variant: &str,
    epochs: usize,
    seed: u64,
    eps_w_mult: f64,
    eps_r_mult: f64,
    batch_size: usize,
    theta: f64,
    w_init: &str,
    r_init: &str,
    track_likelihood: bool,
    early_stop: bool,
    window: usize,
    uniform_top: bool,
) -> PyResult<PyTrainResult> {
    let obs = observations(&rows, total)?;
    let model = ModelConfig::new(obs.dim(), units, classes, total).map_err(err)?;
    let config = TrainConfig {
        variant: self::variant(variant)?,
        eps_w_mult,
        eps_r_mult,
        batch_size,
        theta,
        epochs,
        seed,
        early_stop,
        window,
        w_init: w_init.parse::<WInit>().map_err(err)?,
        r_init: r_init.parse::<RInit>().map_err(err)?,
        track_likelihood,
        uniform_top,
    };
    let report = py
        .detach(|| training::train(&obs, labels, &model, config))
        .map_err(err)?;
    Ok(PyTrainResult { report })
}

/// Percentage of misclassified raw rows.
#[pyfunction]
#[pyo3(signature = (weights, rows, labels, variant="ff"))]
fn test_error(
    weights: &PyWeights,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    variant: &str,
) -> PyResult<f64> {
    let obs = observations(&rows, weights.inner.total())?;
    eval::test_error(
        &weights.inner,
        &obs,
        &labels,
        self::variant(variant)?.mode(),
    )
    .map_err(err)
}

/// Batch EM from `init`. Returns the final weights and the likelihood after
/// every iteration (the first entry belongs to `init`).
#[pyfunction]
#[pyo3(signature = (rows, labels, init, max_iters=1000, tol=1e-7, labeled_only=false))]
fn run_em(
    py: Python<'_>,
    rows: Vec<Vec<f64>>,
    labels: Vec<Option<usize>>,
    init: &PyWeights,
    max_iters: usize,
    tol: f64,
    labeled_only: bool,
) -> PyResult<(PyWeights, Vec<f64>)> {
    if rows.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let samples = rows
        .iter()
        .zip(labels)
        .map(|(r, label)| {
            Ok(Sample {
                y: normalize_input(r, init.inner.total()).map_err(err)?,
                label,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let opts = EmOptions {
        max_iters,
        tol,
        r_update: if labeled_only {
            RUpdate::LabeledOnly
        } else {
            RUpdate::All
        },
    };
    let start = init.inner.clone();
    let state = py
        .detach(|| em::run_em(&samples, start, &opts))
        .map_err(err)?;
    Ok((
        PyWeights {
            inner: state.weights,
        },
        state.loglik_history,
    ))
}

/// Draws `n` raw samples from a random ground-truth model. Returns rows,
/// labels and the generating weights.
#[pyfunction]
#[pyo3(signature = (input_dim, units, classes, total, n, spread=1.0, seed=0))]
fn synthetic(
    input_dim: usize,
    units: usize,
    classes: usize,
    total: f64,
    n: usize,
    spread: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, PyWeights)> {
    let config = ModelConfig::new(input_dim, units, classes, total).map_err(err)?;
    let gt = random_ground_truth(&config, spread, seed).map_err(err)?;
    let raw = generate_synthetic(&gt, n, seed.wrapping_add(1))
        .map_err(err)?
        .raw;
    let rows = match &raw.rows {
        RawRows::Dense(a) => to_lists(a),
        RawRows::Sparse(_) => (0..raw.len()).map(|i| raw.dense_row(i)).collect(),
    };
    Ok((rows, raw.labels, PyWeights { inner: gt }))
}

#[pymodule]
fn nesi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWeights>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(test_error, m)?)?;
    m.add_function(wrap_pyfunction!(run_em, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    Ok(())
}
