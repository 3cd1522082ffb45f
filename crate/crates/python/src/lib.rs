//! Python bindings. Cohorts, models, evaluation and explanations are exposed
//! as classes; figures come back as SVG strings.

use std::fmt::Display;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyFileNotFoundError};
use pyo3::prelude::*;
use riskstrat_core::eval::{self, EvalReport};
use riskstrat_core::explain::{
    exact_shap, sampled_shap, Attribution, BackgroundSet, GlobalImportance, DEFAULT_BACKGROUND_SIZE,
};
use riskstrat_core::ingest::{self, IngestError, DEFAULT_LABEL};
use riskstrat_core::model::{self, TrainConfig};
use riskstrat_core::report::{self, FigureKind, FigureSpec};
use riskstrat_core::synth;

create_exception!(riskstrat, RiskstratError, PyException);

fn fail(e: impl Display) -> PyErr {
    RiskstratError::new_err(e.to_string())
}

fn ingest_fail(e: IngestError) -> PyErr {
    match e {
        IngestError::FileNotFound(path) => PyFileNotFoundError::new_err(path),
        other => fail(other),
    }
}

#[pyclass(name = "Cohort", module = "riskstrat", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCohort {
    inner: ingest::Cohort,
}

#[pymethods]
impl PyCohort {
    /// Reads a CSV with the survey columns and a binary label column.
    #[staticmethod]
    #[pyo3(signature = (path, label_column = DEFAULT_LABEL))]
    fn from_csv(path: PathBuf, label_column: &str) -> PyResult<Self> {
        let schema = ingest::FeatureSchema::survey_with_label(label_column);
        let inner = ingest::load_cohort(&path, &schema).map_err(ingest_fail)?;
        Ok(Self { inner })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(fail)?;
        self.inner.write_csv(file).map_err(ingest_fail)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Cohort(rows={}, features={:?}, missing={})",
            self.inner.len(),
            self.inner.schema().feature_names(),
            self.inner.total_missing()
        )
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.schema().feature_names()
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn missing_counts(&self) -> Vec<usize> {
        self.inner.missing_counts().to_vec()
    }

    /// Raw records; missing values are `None`.
    fn records(&self) -> Vec<Vec<Option<f64>>> {
        self.inner.records().to_vec()
    }

    /// Median for continuous features, mode for categorical ones.
    fn impute(&self) -> PyResult<Self> {
        let inner = ingest::impute_missing(&self.inner).map_err(ingest_fail)?;
        Ok(Self { inner })
    }
}

impl PyCohort {
    fn complete(&self) -> PyResult<ingest::Cohort> {
        ingest::impute_missing(&self.inner).map_err(ingest_fail)
    }

    fn matrix(&self) -> PyResult<ingest::DesignMatrix> {
        ingest::encode(&self.complete()?).map_err(ingest_fail)
    }

    fn complete_records(&self) -> PyResult<Vec<Vec<f64>>> {
        self.complete()?.complete_records().map_err(ingest_fail)
    }
}

/// Synthetic replica cohort and the probability each label was drawn with.
#[pyfunction]
#[pyo3(signature = (n = None, seed = None, shift = 0.0))]
fn generate_cohort(n: Option<usize>, seed: Option<u64>, shift: f64) -> PyResult<(PyCohort, Vec<f64>)> {
    let mut config = synth::default_replica().with_shift(shift);
    if let Some(n) = n {
        config = config.with_n(n);
    }
    if let Some(seed) = seed {
        config = config.with_seed(seed);
    }
    let out = synth::generate_cohort(&config).map_err(fail)?;
    Ok((PyCohort { inner: out.cohort }, out.true_probability))
}

#[pyclass(name = "RiskModel", module = "riskstrat", frozen)]
struct PyRiskModel {
    inner: model::RiskModel,
}

#[pymethods]
impl PyRiskModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = model::RiskModel::from_json(text).map_err(fail)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(fail)
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.recipe().feature_names()
    }

    #[getter]
    fn column_names(&self) -> Vec<String> {
        self.inner.recipe().columns().iter().map(|c| c.label()).collect()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept()
    }

    /// `(iterations, stop_reason, loss)` of the fit, if the model was trained.
    #[getter]
    fn fit(&self) -> Option<(usize, String, f64)> {
        self.inner
            .fit_summary()
            .map(|f| (f.iterations, format!("{:?}", f.stop), f.loss))
    }

    /// Probability for one complete raw record in feature order.
    fn predict_record(&self, record: Vec<f64>) -> PyResult<f64> {
        self.inner.predict_record(&record).map_err(fail)
    }

    /// Probabilities for every row of a cohort (imputed first).
    fn predict(&self, cohort: &PyCohort) -> PyResult<Vec<f64>> {
        cohort
            .complete_records()?
            .iter()
            .map(|r| self.inner.predict_record(r).map_err(fail))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "RiskModel(features={:?}, intercept={:.4})",
            self.inner.recipe().feature_names(),
            self.inner.intercept()
        )
    }
}

fn train_config(l2_lambda: f64, max_iters: usize, tolerance: f64, seed: u64, folds: usize) -> TrainConfig {
    TrainConfig {
        l2_lambda,
        max_iters,
        tolerance,
        seed,
        folds,
        ..TrainConfig::default()
    }
}

/// Imputes, encodes and fits the penalized logistic model.
#[pyfunction]
#[pyo3(signature = (cohort, l2_lambda = 1.0, max_iters = 500, tolerance = 1e-8, seed = 42))]
fn train(cohort: &PyCohort, l2_lambda: f64, max_iters: usize, tolerance: f64, seed: u64) -> PyResult<PyRiskModel> {
    let config = train_config(l2_lambda, max_iters, tolerance, seed, 5);
    let inner = model::train(&cohort.matrix()?, &config).map_err(fail)?;
    Ok(PyRiskModel { inner })
}

#[pyclass(name = "EvalReport", module = "riskstrat", frozen)]
struct PyEvalReport {
    inner: EvalReport,
    oof: Vec<f64>,
    labels: Vec<u8>,
}

#[pymethods]
impl PyEvalReport {
    #[getter]
    fn auc(&self) -> f64 {
        self.inner.auc
    }

    #[getter]
    fn brier(&self) -> f64 {
        self.inner.brier
    }

    #[getter]
    fn fold_aucs(&self) -> Vec<f64> {
        self.inner.folds.iter().map(|f| f.auc).collect()
    }

    /// Pooled out-of-fold probabilities in row order.
    #[getter]
    fn oof_probabilities(&self) -> Vec<f64> {
        self.oof.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.labels.clone()
    }

    /// `(lower, upper, mean_predicted, observed_frequency, count)` per occupied bin.
    fn calibration(&self) -> Vec<(f64, f64, f64, f64, usize)> {
        self.inner
            .calibration_curve()
            .bins
            .iter()
            .map(|b| (b.lower, b.upper, b.mean_predicted, b.observed_frequency, b.count))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(fail)
    }

    fn roc_svg(&self) -> String {
        report::render_roc(&self.inner.roc_curve(), &FigureSpec::new(FigureKind::Roc))
    }

    fn calibration_svg(&self) -> String {
        report::render_calibration(&self.inner.calibration_curve(), &FigureSpec::new(FigureKind::Calibration))
    }

    fn __repr__(&self) -> String {
        format!("EvalReport(auc={:.4}, brier={:.4}, folds={})", self.inner.auc, self.inner.brier, self.inner.folds.len())
    }
}

/// Stratified k-fold cross-validation scored on pooled out-of-fold predictions.
#[pyfunction]
#[pyo3(signature = (cohort, folds = 5, l2_lambda = 1.0, bins = 10, seed = 42))]
fn cross_validate(cohort: &PyCohort, folds: usize, l2_lambda: f64, bins: usize, seed: u64) -> PyResult<PyEvalReport> {
    let defaults = TrainConfig::default();
    let config = train_config(l2_lambda, defaults.max_iters, defaults.tolerance, seed, folds);
    let cv = model::cross_validate(&cohort.matrix()?, &config).map_err(fail)?;
    let inner = EvalReport::from_cv(&cv, bins).map_err(fail)?;
    Ok(PyEvalReport {
        inner,
        oof: cv.oof_probabilities,
        labels: cv.labels,
    })
}

#[pyclass(name = "Attribution", module = "riskstrat", frozen)]
struct PyAttribution {
    inner: Attribution,
}

#[pymethods]
impl PyAttribution {
    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.inner.phi.clone()
    }

    #[getter]
    fn base_value(&self) -> f64 {
        self.inner.base_value
    }

    #[getter]
    fn prediction(&self) -> f64 {
        self.inner.prediction
    }

    /// Raw feature values of the explained record.
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.target.clone()
    }

    fn efficiency_gap(&self) -> f64 {
        self.inner.efficiency_gap()
    }

    fn as_dict(&self) -> Vec<(String, f64)> {
        self.inner
            .feature_names
            .iter()
            .cloned()
            .zip(self.inner.phi.iter().copied())
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(fail)
    }

    fn waterfall_svg(&self) -> String {
        report::render_waterfall(&self.inner, &FigureSpec::new(FigureKind::Waterfall))
    }

    fn __repr__(&self) -> String {
        format!(
            "Attribution(base_value={:.4}, prediction={:.4}, phi={:?})",
            self.inner.base_value, self.inner.prediction, self.inner.phi
        )
    }
}

/// Shapley attribution for one row of the cohort against a sampled background.
/// Exact unless `permutations` is given.
#[pyfunction]
#[pyo3(signature = (model, cohort, instance, background_size = DEFAULT_BACKGROUND_SIZE, seed = 42, permutations = None))]
fn explain(
    model: &PyRiskModel,
    cohort: &PyCohort,
    instance: usize,
    background_size: usize,
    seed: u64,
    permutations: Option<usize>,
) -> PyResult<PyAttribution> {
    let records = cohort.complete_records()?;
    let target = records
        .get(instance)
        .ok_or_else(|| fail(format!("instance {instance} out of range for {} rows", records.len())))?;
    let background = BackgroundSet::sample(&records, background_size, seed).map_err(fail)?;
    let inner = match permutations {
        Some(n) => sampled_shap(&model.inner, target, &background, n, seed),
        None => exact_shap(&model.inner, target, &background),
    }
    .map_err(fail)?;
    Ok(PyAttribution { inner })
}

#[pyclass(name = "GlobalImportance", module = "riskstrat", frozen)]
struct PyGlobalImportance {
    inner: GlobalImportance,
}

#[pymethods]
impl PyGlobalImportance {
    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn mean_abs_phi(&self) -> Vec<f64> {
        self.inner.mean_abs_phi.clone()
    }

    /// One attribution vector per row.
    #[getter]
    fn phi(&self) -> Vec<Vec<f64>> {
        self.inner.phi.clone()
    }

    /// `(feature, mean |phi|)` by descending importance.
    fn ranking(&self) -> Vec<(String, f64)> {
        self.inner
            .ranking()
            .into_iter()
            .map(|k| (self.inner.feature_names[k].clone(), self.inner.mean_abs_phi[k]))
            .collect()
    }

    fn summary_svg(&self) -> String {
        report::render_summary(&self.inner, &FigureSpec::new(FigureKind::Summary))
    }
}

/// Exact attributions for every row, summarized as mean |phi| per feature.
#[pyfunction]
#[pyo3(signature = (model, cohort, background_size = DEFAULT_BACKGROUND_SIZE, seed = 42))]
fn global_importance(
    py: Python<'_>,
    model: &PyRiskModel,
    cohort: &PyCohort,
    background_size: usize,
    seed: u64,
) -> PyResult<PyGlobalImportance> {
    let records = cohort.complete_records()?;
    let background = BackgroundSet::sample(&records, background_size, seed).map_err(fail)?;
    let inner = py
        .detach(|| riskstrat_core::explain::global_importance(&model.inner, &records, &background))
        .map_err(fail)?;
    Ok(PyGlobalImportance { inner })
}

/// Mann-Whitney AUC; tied scores count one half.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    eval::auc(&scores, &labels).map_err(fail)
}

#[pyfunction]
fn brier_score(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    eval::brier_score(&scores, &labels).map_err(fail)
}

/// Fits a recalibrator (`"platt"` or `"isotonic"`) and applies it to `apply_to`.
#[pyfunction]
#[pyo3(signature = (scores, labels, method = "platt", apply_to = None))]
fn recalibrate(scores: Vec<f64>, labels: Vec<u8>, method: &str, apply_to: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let cal = match method {
        "platt" => eval::fit_platt(&scores, &labels),
        "isotonic" => eval::fit_isotonic(&scores, &labels),
        other => return Err(fail(format!("unknown method {other:?}"))),
    }
    .map_err(fail)?;
    Ok(cal.apply_all(apply_to.as_deref().unwrap_or(&scores)))
}

#[pymodule]
fn riskstrat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RiskstratError", m.py().get_type::<RiskstratError>())?;
    m.add_class::<PyCohort>()?;
    m.add_class::<PyRiskModel>()?;
    m.add_class::<PyEvalReport>()?;
    m.add_class::<PyAttribution>()?;
    m.add_class::<PyGlobalImportance>()?;
    m.add_function(wrap_pyfunction!(generate_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(global_importance, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(brier_score, m)?)?;
    m.add_function(wrap_pyfunction!(recalibrate, m)?)?;
    Ok(())
}
