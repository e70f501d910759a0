//! Python bindings for `gem-core`.
//!
//! Embeddings cross the boundary as lists of float rows. Errors surface as
//! `GemError` (a `ValueError` subclass) or `OSError` for file problems.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use gem_core::distill::{self, FeatureSpec, PseudoLabeledSet, Record, StudentModel, TrainConfig};
use gem_core::geometry::EmbeddingSet;
use gem_core::gis::{self, GisConfig};
use gem_core::inference::{self, GemConfig};
use gem_core::io::{self as gio, ModelFile};
use gem_core::metrics::{self, HardPartition};
use gem_core::objective::{empirical_mass, LogJoint, Responsibilities};
use gem_core::synth;

create_exception!(gem_py, GemError, PyValueError);

fn err(e: gem_core::GemError) -> PyErr {
    match e {
        gem_core::GemError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => GemError::new_err(other.to_string()),
    }
}

fn embeddings(rows: Vec<Vec<f64>>) -> PyResult<EmbeddingSet> {
    EmbeddingSet::from_rows(&rows).map_err(err)
}

fn to_rows(x: &EmbeddingSet) -> Vec<Vec<f64>> {
    x.rows().map(|r| r.to_vec()).collect()
}

/// Solver settings. Keyword arguments mirror the `gem fit` flags.
#[pyclass(name = "GemConfig", from_py_object)]
#[derive(Clone)]
struct PyGemConfig {
    inner: GemConfig,
}

#[pymethods]
impl PyGemConfig {
    #[new]
    #[pyo3(signature = (k=24, lambda_=5000.0, max_iters=200, stop_tol=None, kappa_init=1.0, estep_sweeps=3, estep_step=1.0, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        k: usize,
        lambda_: f64,
        max_iters: usize,
        stop_tol: Option<f64>,
        kappa_init: f64,
        estep_sweeps: usize,
        estep_step: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = GemConfig {
            k,
            lambda: lambda_,
            max_iters,
            stop_tol,
            kappa_init,
            estep_sweeps,
            estep_step,
            seed,
            ..GemConfig::default()
        };
        inner.validate().map_err(err)?;
        Ok(PyGemConfig { inner })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("GemConfig(k={}, lambda_={}, seed={})", self.inner.k, self.inner.lambda, self.inner.seed)
    }
}

/// A fitted mixture: mean directions and concentrations.
#[pyclass(name = "Model")]
struct PyModel {
    inner: ModelFile,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: ModelFile::read(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.theta.components.iter().map(|c| c.mu.as_slice().to_vec()).collect()
    }

    #[getter]
    fn kappas(&self) -> Vec<f64> {
        self.inner.theta.kappas()
    }

    /// Posterior over components and the most likely one, for a single point.
    fn assign(&self, x: Vec<f64>) -> PyResult<(Vec<f64>, usize)> {
        inference::assign(&self.inner.theta, &x).map_err(err)
    }

    /// Posterior rows for many points.
    fn posterior(&self, py: Python<'_>, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = embeddings(x)?;
        let g = py.detach(|| LogJoint::compute(&self.inner.theta, &x).map(|lj| lj.posterior()));
        Ok(g.map_err(err)?.rows().map(|r| r.to_vec()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model(k={}, d={}, lambda_={})", self.inner.k, self.inner.d, self.inner.lambda)
    }
}

#[pyclass(name = "FitResult")]
struct PyFitResult {
    #[pyo3(get)]
    objective_trace: Vec<f64>,
    #[pyo3(get)]
    iters_run: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    mstep_rejections: usize,
    gamma: Responsibilities,
    model: Py<PyModel>,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn model(&self, py: Python<'_>) -> Py<PyModel> {
        self.model.clone_ref(py)
    }

    /// Soft assignments from the final E-step, one row per point.
    #[getter]
    fn responsibilities(&self) -> Vec<Vec<f64>> {
        self.gamma.rows().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.gamma.hard_labels()
    }

    /// Average responsibility per component.
    #[getter]
    fn mass(&self) -> Vec<f64> {
        empirical_mass(&self.gamma).0
    }

    #[getter]
    fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }

    fn write_assignments(&self, path: PathBuf) -> PyResult<()> {
        gio::write_assignments(&self.gamma, &path).map_err(err)
    }
}

/// Fits the balance-regularized mixture to unit-normalized rows.
#[pyfunction]
#[pyo3(signature = (x, config=None))]
fn fit(py: Python<'_>, x: Vec<Vec<f64>>, config: Option<PyGemConfig>) -> PyResult<PyFitResult> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let x = embeddings(x)?;
    let res = py.detach(|| inference::fit(&x, &cfg)).map_err(err)?;
    let model = Py::new(
        py,
        PyModel {
            inner: ModelFile::new(&res, &cfg),
        },
    )?;
    Ok(PyFitResult {
        objective_trace: res.objective_trace,
        iters_run: res.iters_run,
        converged: res.converged,
        mstep_rejections: res.mstep_rejections,
        gamma: res.gamma,
        model,
    })
}

/// Top-`s` members of every cluster by GIS score, as `(index, score)` pairs.
#[pyfunction]
#[pyo3(signature = (x, responsibilities, model, beta=1.0, m=16, s=5))]
fn select_representatives(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    responsibilities: Vec<Vec<f64>>,
    model: PyRef<'_, PyModel>,
    beta: f64,
    m: usize,
    s: usize,
) -> PyResult<Vec<Vec<(usize, f64)>>> {
    let x = embeddings(x)?;
    let g = Responsibilities::from_rows(&responsibilities).map_err(err)?;
    let cfg = GisConfig {
        beta,
        m,
        s,
        ..GisConfig::default()
    };
    let theta = &model.inner.theta;
    let reps = py.detach(|| gis::select_representatives(&x, &g, theta, &cfg)).map_err(err)?;
    Ok(reps.per_cluster)
}

/// The taxonomy prompt for one cluster's `(index, text)` documents.
#[pyfunction]
fn render_prompt(docs: Vec<(usize, String)>) -> String {
    let refs: Vec<(usize, &str)> = docs.iter().map(|(i, t)| (*i, t.as_str())).collect();
    gis::render_prompt(&refs)
}

#[pyfunction]
fn parse_prompt(prompt: &str) -> PyResult<Vec<(usize, String)>> {
    gis::parse_prompt(prompt).map_err(err)
}

#[pyfunction]
fn read_embeddings(path: PathBuf) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&gio::read_embeddings(&path).map_err(err)?))
}

#[pyfunction]
fn write_embeddings(x: Vec<Vec<f64>>, path: PathBuf) -> PyResult<()> {
    gio::write_embeddings(&embeddings(x)?, &path).map_err(err)
}

/// `nmi`, `matched_accuracy`, `balance_l2` and `max_share` of a predicted
/// labelling against the truth.
#[pyfunction]
fn cluster_metrics(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<Vec<(String, f64)>> {
    let p = HardPartition::from_labels(pred).map_err(err)?;
    let t = HardPartition::from_labels(truth).map_err(err)?;
    let m = metrics::cluster_metrics(&p, &t).map_err(err)?;
    Ok(vec![
        ("nmi".into(), m.nmi),
        ("matched_accuracy".into(), m.matched_accuracy),
        ("balance_l2".into(), m.balance_l2),
        ("max_share".into(), m.max_share),
    ])
}

/// `k` equal vMF components with mutually orthogonal means.
#[pyfunction]
#[pyo3(signature = (k, d, kappa, n, seed=0))]
fn separated_mixture(k: usize, d: usize, kappa: f64, n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let (x, labels) = synth::separated_mixture(k, d, kappa, n, seed).map_err(err)?;
    Ok((to_rows(&x), labels))
}

/// Hashed n-gram softmax classifier.
#[pyclass(name = "Student")]
struct PyStudent {
    inner: StudentModel,
}

#[pymethods]
impl PyStudent {
    #[staticmethod]
    #[pyo3(signature = (texts, labels, epochs=10, lr=0.1, seed=0, buckets=distill::DEFAULT_BUCKETS))]
    fn train(
        py: Python<'_>,
        texts: Vec<String>,
        labels: Vec<usize>,
        epochs: usize,
        lr: f64,
        seed: u64,
        buckets: u32,
    ) -> PyResult<Self> {
        if texts.len() != labels.len() {
            return Err(err(gem_core::GemError::SizeMismatch {
                left: texts.len(),
                right: labels.len(),
            }));
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let records = texts
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(doc, (text, label))| Record { doc, text, label })
            .collect();
        let ds = PseudoLabeledSet::new(records, k).map_err(err)?;
        let spec = FeatureSpec {
            buckets,
            ..FeatureSpec::default()
        };
        let cfg = TrainConfig { epochs, lr, seed };
        let (inner, _) = py.detach(|| distill::train_student(&ds, spec, &cfg)).map_err(err)?;
        Ok(PyStudent { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyStudent {
            inner: StudentModel::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    /// Class probabilities and the predicted class.
    fn predict(&self, text: &str) -> (Vec<f64>, usize) {
        self.inner.predict(text)
    }
}

#[pymodule]
fn gem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GemError", m.py().get_type::<GemError>())?;
    m.add_class::<PyGemConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyFitResult>()?;
    m.add_class::<PyStudent>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(select_representatives, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(read_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(write_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(separated_mixture, m)?)?;
    Ok(())
}
