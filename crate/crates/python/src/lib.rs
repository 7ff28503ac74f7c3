//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rmtgb::eval::{fit_family, FitSettings};
use rmtgb::experiment::batch_rng;
use rmtgb::synth::{gen_multitask, SynthConfig, TaskKind};
use rmtgb::{BaselineKind, BaselineModel, FittedModel, GbParams, ModelFamily, MultiTaskDataset, RmtgbConfig};

fn to_py(e: rmtgb::Error) -> PyErr {
    match e {
        rmtgb::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Ok(Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).expect("checked shape"))
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "Dataset", module = "rmtgb_py", frozen)]
struct PyDataset {
    inner: MultiTaskDataset,
}

#[pymethods]
impl PyDataset {
    /// `num_tasks` defaults to one past the largest task id.
    #[new]
    #[pyo3(signature = (features, targets, task_of, num_tasks=None, num_classes=1))]
    fn new(
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
        task_of: Vec<usize>,
        num_tasks: Option<usize>,
        num_classes: usize,
    ) -> PyResult<Self> {
        let t = num_tasks.unwrap_or_else(|| task_of.iter().max().map_or(0, |m| m + 1));
        let inner = MultiTaskDataset::new(to_matrix(features)?, targets, task_of, t, num_classes).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, num_classes=1))]
    fn from_csv(path: PathBuf, num_classes: usize) -> PyResult<Self> {
        Ok(PyDataset { inner: rmtgb::io::read_dataset_file(&path, num_classes).map_err(to_py)? })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        rmtgb::io::write_dataset_file(&self.inner, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_tasks(&self) -> usize {
        self.inner.num_tasks()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.features())
    }

    #[getter]
    fn targets(&self) -> Vec<f64> {
        self.inner.targets().to_vec()
    }

    #[getter]
    fn task_of(&self) -> Vec<usize> {
        self.inner.task_of().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, dim={}, tasks={}, classes={})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.num_tasks(),
            self.inner.num_classes()
        )
    }
}

/// A fitted model of any family.
#[pyclass(name = "Model", module = "rmtgb_py", frozen)]
struct PyModel {
    inner: FittedModel,
}

#[pymethods]
impl PyModel {
    /// Raw scores, one row per sample (class logits for classification).
    fn predict(&self, features: Vec<Vec<f64>>, task_of: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        let x = to_matrix(features)?;
        Ok(to_rows(&self.inner.predict(&x.view(), &task_of).map_err(to_py)?))
    }

    /// Gate values `σ(θ_t)`; `None` for the baselines.
    fn gates(&self) -> Option<Vec<f64>> {
        self.inner.rmtgb().map(|m| m.gates())
    }

    #[getter]
    fn theta(&self) -> Option<Vec<f64>> {
        self.inner.rmtgb().map(|m| m.theta.clone())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyModel { inner })
    }
}

fn family(name: &str) -> PyResult<ModelFamily> {
    name.parse().map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (dataset, m1=20, m2=20, m3=20, shrinkage=1.0, seed=0, theta_lr=None, theta_mean=0.0, theta_std=1.0))]
#[allow(clippy::too_many_arguments)]
fn fit_rmtgb(
    dataset: &PyDataset,
    m1: usize,
    m2: usize,
    m3: usize,
    shrinkage: f64,
    seed: u64,
    theta_lr: Option<f64>,
    theta_mean: f64,
    theta_std: f64,
) -> PyResult<PyModel> {
    let cfg = RmtgbConfig {
        m1,
        m2,
        m3,
        shrinkage,
        theta_init_mean: theta_mean,
        theta_init_std: theta_std,
        theta_learning_rate: theta_lr,
        seed,
    };
    let model = rmtgb::fit_rmtgb(&dataset.inner, &cfg).map_err(to_py)?;
    Ok(PyModel { inner: FittedModel::Rmtgb(model) })
}

/// Fits `"st-gb"`, `"dp-gb"` or `"taf-gb"` for `rounds` boosting rounds.
#[pyfunction]
#[pyo3(signature = (kind, dataset, rounds, shrinkage=1.0))]
fn fit_baseline(kind: &str, dataset: &PyDataset, rounds: usize, shrinkage: f64) -> PyResult<PyModel> {
    let kind = match family(kind)? {
        ModelFamily::SingleTask => BaselineKind::SingleTask,
        ModelFamily::DataPooling => BaselineKind::DataPooling,
        ModelFamily::TaskAsFeature => BaselineKind::TaskAsFeature,
        other => return Err(PyValueError::new_err(format!("{other} is not a baseline"))),
    };
    let model: BaselineModel =
        rmtgb::fit_baseline(kind, &dataset.inner, GbParams::new(rounds, shrinkage)).map_err(to_py)?;
    Ok(PyModel { inner: FittedModel::Baseline(model) })
}

/// Fits any family with block round counts `(m1, m2, m3)`.
#[pyfunction]
#[pyo3(signature = (model, dataset, m1=0, m2=0, m3=0, shrinkage=1.0, seed=0))]
fn fit(model: &str, dataset: &PyDataset, m1: usize, m2: usize, m3: usize, shrinkage: f64, seed: u64) -> PyResult<PyModel> {
    let settings = FitSettings { shrinkage, seed, ..FitSettings::default() };
    let rounds = rmtgb::Rounds { m1, m2, m3 };
    Ok(PyModel { inner: fit_family(family(model)?, &dataset.inner, rounds, &settings).map_err(to_py)? })
}

fn preset(kind: &str) -> PyResult<SynthConfig> {
    match kind {
        "regression" | "paper-synth-reg" => Ok(SynthConfig::benchmark_preset(TaskKind::Regression)),
        "classification" | "paper-synth-clf" => Ok(SynthConfig::benchmark_preset(TaskKind::Classification)),
        other => Err(PyValueError::new_err(format!("unknown preset '{other}'"))),
    }
}

/// One synthetic batch: `(train, test, outlier_task_ids)`.
#[pyfunction]
#[pyo3(signature = (kind="regression", seed=0, length_scale=None, train_per_task=None, test_per_task=None))]
fn generate(
    kind: &str,
    seed: u64,
    length_scale: Option<f64>,
    train_per_task: Option<usize>,
    test_per_task: Option<usize>,
) -> PyResult<(PyDataset, PyDataset, Vec<usize>)> {
    let mut cfg = preset(kind)?;
    cfg.seed = seed;
    if let Some(v) = length_scale {
        cfg.length_scale = v;
    }
    if let Some(v) = train_per_task {
        cfg.train_per_task = v;
    }
    if let Some(v) = test_per_task {
        cfg.test_per_task = v;
    }
    let b = gen_multitask(&cfg, &mut batch_rng(seed, 0)).map_err(to_py)?;
    Ok((PyDataset { inner: b.train }, PyDataset { inner: b.test }, b.outlier_task_ids))
}

/// `kind` is one of accuracy, macro_recall, rmse, mae.
#[pyfunction]
fn metric(kind: &str, targets: Vec<f64>, predictions: Vec<f64>) -> PyResult<f64> {
    let k = match kind {
        "accuracy" => rmtgb::MetricKind::Accuracy,
        "macro_recall" => rmtgb::MetricKind::MacroRecall,
        "rmse" => rmtgb::MetricKind::Rmse,
        "mae" => rmtgb::MetricKind::Mae,
        other => return Err(PyValueError::new_err(format!("unknown metric '{other}'"))),
    };
    rmtgb::metric(k, &targets, &predictions).map_err(to_py)
}

#[pyfunction]
fn align_theta(sigma_vectors: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    rmtgb::align_theta(&sigma_vectors).map_err(to_py)
}

#[pyfunction]
fn critical_distance(num_models: usize, num_scenarios: usize) -> PyResult<f64> {
    rmtgb::critical_distance(num_models, num_scenarios).map_err(to_py)
}

/// Average ranks over the rows of `table` and the critical distance;
/// `higher_is_better` has one flag per row.
#[pyfunction]
fn rank_models<'py>(py: Python<'py>, table: Vec<Vec<f64>>, higher_is_better: Vec<bool>) -> PyResult<Bound<'py, PyDict>> {
    let s = rmtgb::rank_models(&table, &higher_is_better).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("avg_rank", s.avg_rank)?;
    d.set_item("critical_distance", s.critical_distance)?;
    d.set_item("num_scenarios", s.num_scenarios)?;
    d.set_item("num_models", s.num_models)?;
    Ok(d)
}

/// Runs the synthetic benchmark and returns the summary rows; writes the
/// report files when `out` is given.
#[pyfunction]
#[pyo3(signature = (kind="regression", batches=3, seed=0, models=None, out=None))]
fn benchmark<'py>(
    py: Python<'py>,
    kind: &str,
    batches: usize,
    seed: u64,
    models: Option<Vec<String>>,
    out: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let source = rmtgb::DataSource::Synthetic { config: preset(kind)? };
    let mut cfg = rmtgb::ExperimentConfig::new(source, batches, seed);
    if let Some(ms) = models {
        cfg.models = ms.iter().map(|m| family(m)).collect::<PyResult<_>>()?;
    }
    let report = py.detach(|| rmtgb::run_experiment(&cfg)).map_err(to_py)?;
    if let Some(dir) = out {
        report.write(&dir).map_err(to_py)?;
    }
    report
        .summary()
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("model", r.model.name())?;
            d.set_item("metric", r.metric.name())?;
            d.set_item("train_mean", r.train_mean)?;
            d.set_item("train_std", r.train_std)?;
            d.set_item("test_mean", r.test_mean)?;
            d.set_item("test_std", r.test_std)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn rmtgb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit_rmtgb, m)?)?;
    m.add_function(wrap_pyfunction!(fit_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(metric, m)?)?;
    m.add_function(wrap_pyfunction!(align_theta, m)?)?;
    m.add_function(wrap_pyfunction!(critical_distance, m)?)?;
    m.add_function(wrap_pyfunction!(rank_models, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
