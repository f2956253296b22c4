//! Python bindings: `import dds_sim`.
//!
//! Feature vectors cross the boundary as sequences of ten floats in dataset
//! column order. Stochastic calls take an explicit `seed`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dds_core::cat::{self, MetricKind};
use dds_core::dds::{DdsConfig, ResidualSource};
use dds_core::forest::{self, ForestConfig};
use dds_core::gpr::{self, Kernel};
use dds_core::metrics::{self, SummaryStats};
use dds_core::seed::{derive_seed, rng_from_seed};
use dds_core::trace::{self, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use dds_core::{synth, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn features(values: Vec<f64>) -> PyResult<FeatureVector> {
    let arr: [f64; FEATURE_COUNT] = values.try_into().map_err(|v: Vec<f64>| {
        PyValueError::new_err(format!("expected {FEATURE_COUNT} features, got {}", v.len()))
    })?;
    Ok(FeatureVector::from_array(arr))
}

fn stats_dict<'py>(py: Python<'py>, s: &SummaryStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("n", s.n)?;
    d.set_item("mean", s.mean)?;
    d.set_item("std", s.std)?;
    d.set_item("min", s.min)?;
    d.set_item("q1", s.q1)?;
    d.set_item("median", s.median)?;
    d.set_item("q3", s.q3)?;
    d.set_item("max", s.max)?;
    Ok(d)
}

/// Labelled transmissions.
#[pyclass(name = "Dataset", module = "dds_sim", frozen)]
struct PyDataset(trace::Dataset);

#[pymethods]
impl PyDataset {
    /// Builds a dataset from feature rows and data rates (MBit/s).
    #[new]
    fn new(rows: Vec<Vec<f64>>, datarates: Vec<f64>) -> PyResult<Self> {
        if rows.len() != datarates.len() {
            return Err(PyValueError::new_err("rows and datarates differ in length"));
        }
        let records = rows
            .into_iter()
            .zip(datarates)
            .map(|(r, datarate)| {
                Ok(trace::TransmissionRecord {
                    features: features(r)?,
                    datarate,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        trace::Dataset::new(records).map(PyDataset).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        trace::load_dataset(path).map(PyDataset).map_err(err)
    }

    /// Synthetic benchmark with `n` records.
    #[staticmethod]
    #[pyo3(signature = (n, seed=0))]
    fn synthetic(n: usize, seed: u64) -> PyResult<Self> {
        synth::generate_dataset(n, seed).map(PyDataset).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.0.feature_rows()
    }

    fn labels(&self) -> Vec<f64> {
        self.0.labels()
    }

    #[getter]
    fn label_min(&self) -> f64 {
        self.0.label_min()
    }

    #[getter]
    fn label_max(&self) -> f64 {
        self.0.label_max()
    }

    /// `k` (train, test) pairs.
    fn split_folds(&self, k: usize, seed: u64) -> PyResult<Vec<(PyDataset, PyDataset)>> {
        Ok(trace::split_folds(&self.0, k, seed)
            .map_err(err)?
            .into_iter()
            .map(|(a, b)| (PyDataset(a), PyDataset(b)))
            .collect())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Time-ordered replay samples.
#[pyclass(name = "Trace", module = "dds_sim", frozen)]
struct PyTrace(trace::Trace);

#[pymethods]
impl PyTrace {
    /// `times` in seconds, strictly increasing; one feature row per time.
    #[new]
    fn new(times: Vec<f64>, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        if times.len() != rows.len() {
            return Err(PyValueError::new_err("times and rows differ in length"));
        }
        let ticks = times
            .into_iter()
            .zip(rows)
            .map(|(t, r)| Ok((t, features(r)?)))
            .collect::<PyResult<Vec<_>>>()?;
        trace::Trace::new(ticks).map(PyTrace).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        trace::load_trace(path).map(PyTrace).map_err(err)
    }

    /// 1 Hz synthetic trace whose SINR oscillates with `period` seconds.
    #[staticmethod]
    #[pyo3(signature = (seconds, period=60.0, seed=0))]
    fn synthetic(seconds: usize, period: f64, seed: u64) -> PyResult<Self> {
        synth::generate_trace(seconds, period, seed).map(PyTrace).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "ForestConfig", module = "dds_sim", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyForestConfig {
    n_trees: usize,
    feature_subset: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
    bootstrap: bool,
    seed: u64,
}

#[pymethods]
impl PyForestConfig {
    #[new]
    #[pyo3(signature = (n_trees=100, feature_subset=4, min_leaf=1, max_depth=None, bootstrap=true, seed=0))]
    fn new(n_trees: usize, feature_subset: usize, min_leaf: usize, max_depth: Option<usize>, bootstrap: bool, seed: u64) -> Self {
        PyForestConfig {
            n_trees,
            feature_subset,
            min_leaf,
            max_depth,
            bootstrap,
            seed,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "ForestConfig(n_trees={}, feature_subset={}, min_leaf={}, max_depth={:?}, bootstrap={}, seed={})",
            self.n_trees, self.feature_subset, self.min_leaf, self.max_depth, self.bootstrap, self.seed
        )
    }
}

impl PyForestConfig {
    fn core(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            feature_subset: self.feature_subset,
            min_leaf: self.min_leaf,
            max_depth: self.max_depth,
            bootstrap: self.bootstrap,
            seed: self.seed,
        }
    }
}

fn forest_config(cfg: Option<PyRef<'_, PyForestConfig>>) -> ForestConfig {
    cfg.map(|c| c.core()).unwrap_or_default()
}

#[pyclass(name = "RandomForest", module = "dds_sim", frozen)]
struct PyRandomForest(forest::RandomForest);

#[pymethods]
impl PyRandomForest {
    #[staticmethod]
    #[pyo3(signature = (dataset, config=None))]
    fn fit(py: Python<'_>, dataset: PyRef<'_, PyDataset>, config: Option<PyRef<'_, PyForestConfig>>) -> PyResult<Self> {
        let cfg = forest_config(config);
        let d = &dataset.0;
        py.detach(|| forest::train_forest(d, &cfg)).map(PyRandomForest).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        forest::RandomForest::load(path).map(PyRandomForest).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    fn predict(&self, features: Vec<f64>) -> PyResult<f64> {
        check_width(&self.0, features.len())?;
        Ok(self.0.predict_row(&features))
    }

    fn predict_many(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        rows.iter()
            .map(|r| {
                check_width(&self.0, r.len())?;
                Ok(self.0.predict_row(r))
            })
            .collect()
    }

    /// Normalized mean decrease in impurity, one value per feature.
    fn feature_importance(&self) -> Vec<f64> {
        self.0.feature_importance()
    }

    #[getter]
    fn leaf_count(&self) -> usize {
        self.0.leaf_count()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.0.trees().len()
    }

    /// Nested-conditional source text for this forest.
    fn export(&self) -> String {
        forest::export_conditional_code(&self.0)
    }

    /// Raises ValueError unless `src` reproduces this forest on `n` random inputs.
    #[pyo3(signature = (src, n=1000, seed=0))]
    fn verify_export(&self, src: &str, n: usize, seed: u64) -> PyResult<()> {
        forest::verify_export(&self.0, src, n, seed).map_err(err)
    }
}

fn check_width(f: &forest::RandomForest, got: usize) -> PyResult<()> {
    if got == f.n_features() {
        Ok(())
    } else {
        Err(PyValueError::new_err(format!("expected {} features, got {got}", f.n_features())))
    }
}

/// Evaluates exported source text at a feature vector.
#[pyfunction]
fn eval_exported(src: &str, features: Vec<f64>) -> PyResult<f64> {
    forest::ExportedModel::parse(src)
        .and_then(|m| m.eval(&features))
        .map_err(err)
}

/// `k`-fold cross-validation: (pooled R², per-fold R²).
#[pyfunction]
#[pyo3(signature = (dataset, k=10, seed=0, config=None))]
fn cross_validate(
    py: Python<'_>,
    dataset: PyRef<'_, PyDataset>,
    k: usize,
    seed: u64,
    config: Option<PyRef<'_, PyForestConfig>>,
) -> PyResult<(f64, Vec<f64>)> {
    let cfg = forest_config(config);
    let d = &dataset.0;
    let cv = py.detach(|| forest::cross_validate(d, &cfg, k, seed)).map_err(err)?;
    Ok((cv.pooled_r2, cv.fold_r2))
}

#[pyclass(name = "ErrorModel", module = "dds_sim", frozen)]
struct PyErrorModel(gpr::ErrorModel);

#[pymethods]
impl PyErrorModel {
    /// Fits measured rates against predicted rates. Without a kernel the
    /// hyperparameters come from the data.
    #[new]
    #[pyo3(signature = (predictions, measurements, signal_variance=None, length_scale=None, noise_variance=None))]
    fn new(
        predictions: Vec<f64>,
        measurements: Vec<f64>,
        signal_variance: Option<f64>,
        length_scale: Option<f64>,
        noise_variance: Option<f64>,
    ) -> PyResult<Self> {
        let kernel = match (signal_variance, length_scale, noise_variance) {
            (None, None, None) => gpr::default_hyperparameters(&predictions, &measurements).map_err(err)?,
            (Some(sv), Some(ls), Some(nv)) => Kernel::new(sv, ls, nv).map_err(err)?,
            _ => return Err(PyValueError::new_err("give all three kernel parameters or none")),
        };
        gpr::fit_error_model(&predictions, &measurements, kernel)
            .map(PyErrorModel)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        gpr::ErrorModel::load(path).map(PyErrorModel).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    /// (mean, predictive variance) at a predicted rate.
    fn posterior(&self, y_pred: f64) -> (f64, f64) {
        let p = self.0.posterior(y_pred);
        (p.mean, p.variance)
    }

    #[pyo3(signature = (y_pred, z=1.96))]
    fn confidence_interval(&self, y_pred: f64, z: f64) -> PyResult<(f64, f64)> {
        self.0.confidence_interval(y_pred, z).map_err(err)
    }

    /// `n` draws from the posterior at `y_pred`.
    #[pyo3(signature = (y_pred, n=1, seed=0))]
    fn sample(&self, y_pred: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| self.0.sample(y_pred, &mut rng)).collect()
    }

    /// (signal_variance, length_scale, noise_variance).
    #[getter]
    fn kernel(&self) -> (f64, f64, f64) {
        let k = self.0.kernel();
        (k.signal_variance, k.length_scale, k.noise_variance)
    }

    #[getter]
    fn prior_mean(&self) -> f64 {
        self.0.prior_mean()
    }
}

/// Forest + error model + label range.
#[pyclass(name = "DdsModel", module = "dds_sim", frozen)]
struct PyDdsModel(dds_core::dds::DdsModel);

#[pymethods]
impl PyDdsModel {
    #[staticmethod]
    #[pyo3(signature = (dataset, config=None, out_of_bag=false))]
    fn build(
        py: Python<'_>,
        dataset: PyRef<'_, PyDataset>,
        config: Option<PyRef<'_, PyForestConfig>>,
        out_of_bag: bool,
    ) -> PyResult<Self> {
        let cfg = DdsConfig {
            forest: forest_config(config),
            residuals: if out_of_bag {
                ResidualSource::OutOfBag
            } else {
                ResidualSource::InSample
            },
            ..DdsConfig::default()
        };
        let d = &dataset.0;
        py.detach(|| dds_core::dds::DdsModel::build(d, &cfg))
            .map(PyDdsModel)
            .map_err(err)
    }

    /// Loads a bundle directory written by `save` or `dds train`.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        dds_core::dds::DdsModel::load(dir).map(PyDdsModel).map_err(err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(dir).map_err(err)
    }

    /// `n` stochastic data-rate draws at one feature vector.
    #[pyo3(signature = (features, n=1, seed=0))]
    fn predict(&self, features: Vec<f64>, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        let x = self::features(features)?;
        let mut rng = rng_from_seed(seed);
        Ok((0..n).map(|_| self.0.predict(&x, &mut rng)).collect())
    }

    fn predict_mean(&self, features: Vec<f64>) -> PyResult<f64> {
        Ok(self.0.predict_mean(&self::features(features)?))
    }

    #[getter]
    fn forest(&self) -> PyRandomForest {
        PyRandomForest(self.0.forest().clone())
    }

    #[getter]
    fn error_model(&self) -> PyErrorModel {
        PyErrorModel(self.0.error_model().clone())
    }

    #[getter]
    fn label_min(&self) -> f64 {
        self.0.label_min()
    }

    #[getter]
    fn label_max(&self) -> f64 {
        self.0.label_max()
    }

    /// Four-way replay of `dataset`: a dict of summary dicts plus
    /// `quantile_r` and `raw_out_of_range`.
    #[pyo3(signature = (dataset, repeats=1, seed=0))]
    fn validate<'py>(
        &self,
        py: Python<'py>,
        dataset: PyRef<'_, PyDataset>,
        repeats: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let r = dds_core::dds::validate(&self.0, &dataset.0, repeats, seed).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("measured", stats_dict(py, &r.measured)?)?;
        d.set_item("rf_only", stats_dict(py, &r.rf_only)?)?;
        d.set_item("raw_gpr", stats_dict(py, &r.raw_gpr)?)?;
        d.set_item("dds", stats_dict(py, &r.dds)?)?;
        d.set_item("quantile_r", r.quantile_r)?;
        d.set_item("raw_out_of_range", r.raw_out_of_range)?;
        Ok(d)
    }
}

#[pyclass(name = "CatConfig", module = "dds_sim", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyCatConfig {
    t_min: f64,
    t_max: f64,
    alpha: f64,
    phi_min: f64,
    phi_max: f64,
    /// "cat", "ml-cat" or "periodic".
    metric: String,
    source_rate: u64,
    tick: f64,
    periodic_interval: f64,
    seed: u64,
}

#[pymethods]
impl PyCatConfig {
    #[new]
    #[pyo3(signature = (metric="cat", t_min=10.0, t_max=120.0, alpha=6.0, phi_min=0.0, phi_max=30.0,
                        source_rate=50_000, tick=1.0, periodic_interval=10.0, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        metric: &str,
        t_min: f64,
        t_max: f64,
        alpha: f64,
        phi_min: f64,
        phi_max: f64,
        source_rate: u64,
        tick: f64,
        periodic_interval: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let c = PyCatConfig {
            t_min,
            t_max,
            alpha,
            phi_min,
            phi_max,
            metric: metric.to_string(),
            source_rate,
            tick,
            periodic_interval,
            seed,
        };
        c.core()?;
        Ok(c)
    }
}

impl PyCatConfig {
    fn core(&self) -> PyResult<cat::CatConfig> {
        let c = cat::CatConfig {
            t_min: self.t_min,
            t_max: self.t_max,
            alpha: self.alpha,
            phi_min: self.phi_min,
            phi_max: self.phi_max,
            metric: self.metric.parse::<MetricKind>().map_err(err)?,
            source_rate: self.source_rate,
            tick: self.tick,
            periodic_interval: self.periodic_interval,
            seed: self.seed,
        };
        c.validate().map_err(err)?;
        Ok(c)
    }
}

/// Transmission probability for metric `phi` after `dt` seconds of buffering.
#[pyfunction]
fn transmission_probability(phi: f64, dt: f64, config: PyRef<'_, PyCatConfig>) -> PyResult<f64> {
    Ok(cat::transmission_probability(phi, dt, &config.core()?))
}

#[pyclass(name = "RunResult", module = "dds_sim", frozen)]
struct PyRunResult(cat::RunResult);

#[pymethods]
impl PyRunResult {
    #[getter]
    fn label(&self) -> &str {
        &self.0.label
    }

    /// (time, payload bytes, data rate, buffer delay, metric) per event.
    #[getter]
    fn events(&self) -> Vec<(f64, u64, f64, f64, f64)> {
        self.0
            .events
            .iter()
            .map(|e| (e.time, e.payload, e.datarate, e.buffer_delay, e.metric_value))
            .collect()
    }

    #[getter]
    fn generated_bytes(&self) -> u64 {
        self.0.generated_bytes
    }

    #[getter]
    fn transmitted_bytes(&self) -> u64 {
        self.0.transmitted_bytes()
    }

    #[getter]
    fn final_buffer_bytes(&self) -> u64 {
        self.0.final_buffer_bytes
    }

    fn events_csv(&self) -> String {
        self.0.events_csv()
    }

    fn __len__(&self) -> usize {
        self.0.events.len()
    }
}

#[pyfunction]
fn run_scheme(
    py: Python<'_>,
    trace: PyRef<'_, PyTrace>,
    config: PyRef<'_, PyCatConfig>,
    model: PyRef<'_, PyDdsModel>,
) -> PyResult<PyRunResult> {
    let cfg = config.core()?;
    let (t, m) = (&trace.0, &model.0);
    py.detach(|| cat::run_scheme(t, &cfg, m)).map(PyRunResult).map_err(err)
}

/// One dict per run with event statistics and uplift vs. `baseline`.
#[pyfunction]
#[pyo3(signature = (results, baseline="periodic"))]
fn compare_runs<'py>(
    py: Python<'py>,
    results: Vec<PyRef<'_, PyRunResult>>,
    baseline: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let runs: Vec<cat::RunResult> = results.iter().map(|r| r.0.clone()).collect();
    cat::compare_runs(&runs, baseline)
        .map_err(err)?
        .into_iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("label", row.label)?;
            d.set_item("n_events", row.n_events)?;
            d.set_item("mean_rate", row.mean_rate)?;
            d.set_item("q1", row.q1)?;
            d.set_item("median", row.median)?;
            d.set_item("q3", row.q3)?;
            d.set_item("mean_delay", row.mean_delay)?;
            d.set_item("uplift_pct", row.uplift_pct)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn r_squared(measured: Vec<f64>, predicted: Vec<f64>) -> PyResult<f64> {
    metrics::r_squared(&measured, &predicted).map_err(err)
}

#[pyfunction]
fn pearson_r(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::pearson_r(&a, &b).map_err(err)
}

#[pyfunction]
fn summarize<'py>(py: Python<'py>, values: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    stats_dict(py, &metrics::summarize(&values).map_err(err)?)
}

#[pyfunction(name = "derive_seed")]
fn py_derive_seed(seed: u64, stream: u64) -> u64 {
    derive_seed(seed, stream)
}

#[pymodule]
fn dds_sim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FEATURE_NAMES", FEATURE_NAMES.to_vec())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyForestConfig>()?;
    m.add_class::<PyRandomForest>()?;
    m.add_class::<PyErrorModel>()?;
    m.add_class::<PyDdsModel>()?;
    m.add_class::<PyCatConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(eval_exported, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(transmission_probability, m)?)?;
    m.add_function(wrap_pyfunction!(run_scheme, m)?)?;
    m.add_function(wrap_pyfunction!(compare_runs, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_r, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(py_derive_seed, m)?)?;
    Ok(())
}
