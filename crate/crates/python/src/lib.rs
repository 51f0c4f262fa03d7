//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use deepselective::analysis::{self, AnalysisOptions, DEFAULT_BINS};
use deepselective::ata::AtaConfig;
use deepselective::controller::{PidConfig, PidGains, PidState};
use deepselective::data::{self, Split, SyntheticSpec};
use deepselective::diff::Tensor;
use deepselective::dgfs;
use deepselective::model::{self, ModelConfig, ModelParams, TrainConfig};
use deepselective::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ (Error::Data { .. } | Error::Artifact(_)) => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Validation(_) | Error::Parameter(_) | Error::Shape { .. } | Error::UndefinedMetric(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    Tensor::new(vec![n, m], rows.into_iter().flatten().collect()).map_err(err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let w = t.shape().last().copied().unwrap_or(1);
    t.data().chunks(w).map(<[f64]>::to_vec).collect()
}

fn parse_split(s: &str) -> PyResult<Split> {
    s.parse().map_err(err)
}

/// Feature matrix with labels, names and split assignment.
#[pyclass(name = "Dataset", module = "deepselective")]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (features, labels, feature_names=None))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, feature_names: Option<Vec<String>>) -> PyResult<Self> {
        let x = matrix(features)?;
        let names = feature_names.unwrap_or_else(|| (0..x.shape()[1]).map(|j| format!("x{j:03}")).collect());
        Ok(Self { inner: data::Dataset::new(x, labels, names).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: data::load_dataset(&path).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, label_column="label", seed=0))]
    fn from_csv(path: PathBuf, label_column: &str, seed: u64) -> PyResult<Self> {
        let opts = data::IngestOptions { seed, ..Default::default() };
        Ok(Self { inner: data::ingest_csv(&path, label_column, &opts).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save_dataset(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.features)
    }

    #[getter]
    fn labels(&self) -> Vec<f64> {
        self.inner.labels.clone()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn informative(&self) -> Option<Vec<usize>> {
        self.inner.informative.clone()
    }

    /// `(features, labels)` of one split: "train", "val" or "test".
    fn subset(&self, split: &str) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let (x, y) = self.inner.subset(parse_split(split)?).map_err(err)?;
        Ok((rows(&x), y))
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n_samples={}, n_features={})", self.inner.n_samples(), self.inner.n_features())
    }
}

#[pyfunction]
#[pyo3(signature = (n_features=64, n_informative=8, n_samples=4000, noise=0.5, correlation=0.3, missing_rate=0.0, seed=0))]
fn generate_synthetic(
    n_features: usize,
    n_informative: usize,
    n_samples: usize,
    noise: f64,
    correlation: f64,
    missing_rate: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    let spec = SyntheticSpec { n_features, n_informative, n_samples, noise, correlation, missing_rate, seed };
    Ok(PyDataset { inner: data::generate_synthetic(&spec).map_err(err)? })
}

/// Trained model parameters.
#[pyclass(name = "Model", module = "deepselective")]
struct PyModel {
    inner: ModelParams,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: model::load_checkpoint(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn log_pi(&self) -> Vec<f64> {
        self.inner.log_pi().to_vec()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    /// Selected feature indices at the current temperature.
    fn support(&self) -> PyResult<Vec<usize>> {
        Ok(self.inner.selection().map_err(err)?.support)
    }

    /// Softmax of the selection logits.
    fn importance(&self) -> Vec<f64> {
        self.inner.importance()
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(model::predict(&self.inner, &matrix(x)?).map_err(err)?.probabilities)
    }

    /// `(z_s, z_r, x_hat)` for every row.
    fn embed(&self, x: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let e = model::embed(&self.inner, &matrix(x)?).map_err(err)?;
        Ok((rows(&e.z_s), rows(&e.z_r), rows(&e.x_hat)))
    }

    /// Metrics as a JSON string.
    #[pyo3(signature = (x, y, threshold=0.5))]
    fn evaluate(&self, x: Vec<Vec<f64>>, y: Vec<f64>, threshold: f64) -> PyResult<String> {
        let m = analysis::evaluate(&self.inner, &matrix(x)?, &y, threshold).map_err(err)?;
        Ok(to_json(&m))
    }

    /// Full analysis report as a JSON string.
    #[pyo3(signature = (x, y, informative=None, bins=DEFAULT_BINS))]
    fn analyze(&self, x: Vec<Vec<f64>>, y: Vec<f64>, informative: Option<Vec<usize>>, bins: usize) -> PyResult<String> {
        let opts = AnalysisOptions { bins, informative, ..Default::default() };
        let r = analysis::analyze(&self.inner, &matrix(x)?, &y, &opts).map_err(err)?;
        r.to_json().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Model(n_features={}, tau={:.4})", self.inner.config.n_features(), self.inner.tau)
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

/// Trains on the train split; returns the model and the report as JSON.
#[pyfunction]
#[pyo3(signature = (
    dataset, *, epochs=50, batch_size=64, learning_rate=1e-3, selection_learning_rate=0.03,
    beta1=0.1, beta2=0.1, alpha=0.01, tau0=1.0, kp=0.05, ki=0.001, kd=0.01,
    latent_dim=16, embed_dim=16, heads=4, layers=2, ff_dim=64, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    selection_learning_rate: f64,
    beta1: f64,
    beta2: f64,
    alpha: f64,
    tau0: f64,
    kp: f64,
    ki: f64,
    kd: f64,
    latent_dim: usize,
    embed_dim: usize,
    heads: usize,
    layers: usize,
    ff_dim: usize,
    seed: u64,
) -> PyResult<(PyModel, String)> {
    let ds = &dataset.inner;
    let n = ds.n_features();
    let mc = ModelConfig {
        ata: AtaConfig {
            n_features: n,
            latent_dim,
            embed_dim,
            n_heads: heads,
            n_encoder_layers: layers,
            n_decoder_layers: layers,
            ff_dim,
        },
        head_hidden: 2 * latent_dim,
    };
    let cfg = TrainConfig {
        beta1,
        beta2,
        alpha,
        learning_rate,
        selection_learning_rate,
        batch_size,
        epochs,
        seed,
        pid: PidConfig { tau0, gains: PidGains { kp, ki, kd }, ..Default::default() },
        ..Default::default()
    };
    let (x, y) = ds.subset(Split::Train).map_err(err)?;
    let names = ds.feature_names.clone();
    let (params, report) = py.detach(|| model::train(&x, &y, &names, mc, &cfg)).map_err(err)?;
    Ok((PyModel { inner: params }, report.to_json().map_err(err)?))
}

/// Temperature controller.
#[pyclass(name = "PidController", module = "deepselective")]
struct PyPid {
    inner: PidState,
}

#[pymethods]
impl PyPid {
    #[new]
    #[pyo3(signature = (tau0=1.0, kp=0.05, ki=0.001, kd=0.01, tau_min=0.1, tau_max=5.0))]
    fn new(tau0: f64, kp: f64, ki: f64, kd: f64, tau_min: f64, tau_max: f64) -> PyResult<Self> {
        let cfg = PidConfig { tau0, gains: PidGains { kp, ki, kd }, tau_min, tau_max };
        Ok(Self { inner: PidState::new(cfg).map_err(err)? })
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    fn update(&mut self, error: f64) -> PyResult<f64> {
        self.inner.update_tau(error).map_err(err)
    }
}

#[pyfunction]
fn select_support(p: Vec<f64>) -> Vec<usize> {
    dgfs::select_support(&p)
}

/// Relaxed selection probabilities and support for `log_pi`; `seed=None`
/// means no Gumbel noise.
#[pyfunction]
#[pyo3(signature = (log_pi, tau, seed=None))]
fn selection(log_pi: Vec<f64>, tau: f64, seed: Option<u64>) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let s = dgfs::selection_from_logits(&log_pi, tau, seed).map_err(err)?;
    Ok((s.probabilities, s.support))
}

#[pyfunction]
fn auroc(labels: Vec<f64>, scores: Vec<f64>) -> PyResult<f64> {
    analysis::auroc(&labels, &scores).map_err(err)
}

#[pyfunction]
fn auprc(labels: Vec<f64>, scores: Vec<f64>) -> PyResult<f64> {
    analysis::auprc(&labels, &scores).map_err(err)
}

#[pyfunction]
fn min_se_pplus(labels: Vec<f64>, scores: Vec<f64>) -> PyResult<f64> {
    analysis::min_se_pplus(&labels, &scores).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, y, bins=DEFAULT_BINS))]
fn mutual_information(x: Vec<f64>, y: Vec<f64>, bins: usize) -> PyResult<f64> {
    Ok(analysis::mutual_information(&x, &y, bins).map_err(err)?.value)
}

/// Welch's t-test; returns `(t, df, p)`.
#[pyfunction]
fn welch_ttest(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = analysis::welch_ttest(&a, &b).map_err(err)?;
    Ok((r.t, r.df, r.p))
}

/// Projections and explained-variance ratios of the top `k` components.
#[pyfunction]
#[pyo3(signature = (x, k=2))]
fn pca(x: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let p = analysis::pca_project(&matrix(x)?, k).map_err(err)?;
    Ok((rows(&p.projections), p.explained_variance_ratio))
}

#[pymodule]
#[pyo3(name = "deepselective")]
fn deepselective_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPid>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(select_support, m)?)?;
    m.add_function(wrap_pyfunction!(selection, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(auprc, m)?)?;
    m.add_function(wrap_pyfunction!(min_se_pplus, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(welch_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    Ok(())
}
