//! L2-regularized logistic risk model and stratified cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval;
use crate::ingest::{DesignMatrix, EncodingRecipe, IngestError};

/// Version written to and accepted from model documents.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("SingleClass: labels contain only one class")]
    SingleClass,
    #[error("NonFinite: {0} became non-finite")]
    NonFinite(&'static str),
    #[error("TooFewRows: need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("TooFewPerClass: smallest class has {smallest} rows, folds = {folds}")]
    TooFewPerClass { smallest: usize, folds: usize },
    #[error("DimensionMismatch: expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("UnsupportedVersion({0})")]
    UnsupportedVersion(u32),
    #[error("model document: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Encoding(#[from] IngestError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2_lambda: f64,
    pub max_iters: usize,
    /// Stop once the gradient max-norm falls below this.
    pub tolerance: f64,
    /// First trial step of the line search.
    pub learning_rate: f64,
    pub seed: u64,
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_lambda: 1.0,
            max_iters: 500,
            tolerance: 1e-8,
            learning_rate: 0.1,
            seed: 42,
            folds: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be finite and >= 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return bad("tolerance must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.folds < 2 {
            return bad("folds must be >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
    /// No representable step along the negative gradient lowered the loss.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub stop: StopReason,
    pub loss: f64,
    pub gradient_norm: f64,
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// Keeps emitted probabilities strictly inside (0, 1).
fn clamp_open(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Regularized mean negative log-likelihood and its gradient. Parameters are
/// laid out as `[intercept, w_0, ..., w_{p-1}]`; the intercept is not
/// penalized.
pub struct Objective<'a> {
    matrix: &'a DesignMatrix,
    l2_lambda: f64,
}

impl<'a> Objective<'a> {
    pub fn new(matrix: &'a DesignMatrix, l2_lambda: f64) -> Self {
        Self { matrix, l2_lambda }
    }

    pub fn dim(&self) -> usize {
        self.matrix.n_cols() + 1
    }

    fn penalty_scale(&self) -> f64 {
        self.l2_lambda / self.matrix.n_rows() as f64
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let n = self.matrix.n_rows() as f64;
        let (b, w) = params.split_first().expect("non-empty parameters");
        let mut nll = 0.0;
        for (row, &y) in self.matrix.rows().zip(self.matrix.labels()) {
            let z = b + dot(w, row);
            nll += softplus(z) - f64::from(y) * z;
        }
        nll / n + 0.5 * self.penalty_scale() * dot(w, w)
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let n = self.matrix.n_rows() as f64;
        let (b, w) = params.split_first().expect("non-empty parameters");
        let mut g = vec![0.0; params.len()];
        for (row, &y) in self.matrix.rows().zip(self.matrix.labels()) {
            let r = sigmoid(b + dot(w, row)) - f64::from(y);
            g[0] += r;
            for (gj, xj) in g[1..].iter_mut().zip(row) {
                *gj += r * xj;
            }
        }
        let lam = self.penalty_scale();
        g[0] /= n;
        for (gj, wj) in g[1..].iter_mut().zip(w) {
            *gj = *gj / n + lam * wj;
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    weights: Vec<f64>,
    blocks: Vec<std::ops::Range<usize>>,
    intercept: f64,
    recipe: EncodingRecipe,
    train_config: TrainConfig,
    fit: Option<FitSummary>,
}

impl RiskModel {
    /// Builds a model from known parameters, e.g. for scoring with fixed
    /// coefficients.
    pub fn from_parameters(
        weights: Vec<f64>,
        intercept: f64,
        recipe: EncodingRecipe,
    ) -> Result<Self> {
        if weights.len() != recipe.width() {
            return Err(ModelError::DimensionMismatch {
                expected: recipe.width(),
                got: weights.len(),
            });
        }
        Ok(Self {
            weights,
            blocks: recipe.blocks(),
            intercept,
            recipe,
            train_config: TrainConfig::default(),
            fit: None,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn recipe(&self) -> &EncodingRecipe {
        &self.recipe
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    /// Present for trained models.
    pub fn fit_summary(&self) -> Option<&FitSummary> {
        self.fit.as_ref()
    }

    /// Linear predictor for an encoded row, summed feature block by feature
    /// block so that it agrees bit-for-bit with [`RiskModel::logit_record`].
    pub fn logit(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.weights.len(),
                got: row.len(),
            });
        }
        let mut z = self.intercept;
        for block in &self.blocks {
            let mut s = 0.0;
            for j in block.clone() {
                s += self.weights[j] * row[j];
            }
            z += s;
        }
        Ok(z)
    }

    pub fn predict_proba(&self, row: &[f64]) -> Result<f64> {
        Ok(clamp_open(sigmoid(self.logit(row)?)))
    }

    /// Linear predictor for a raw (unencoded) record.
    pub fn logit_record(&self, record: &[f64]) -> Result<f64> {
        let mut terms = vec![0.0; self.recipe.n_features()];
        self.logit_terms(record, &mut terms)?;
        Ok(self.sum_terms(&terms))
    }

    /// Per-feature contributions to the linear predictor of a raw record.
    pub fn logit_terms(&self, record: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.recipe.n_features();
        if record.len() != m || out.len() != m {
            return Err(ModelError::DimensionMismatch {
                expected: m,
                got: if record.len() != m { record.len() } else { out.len() },
            });
        }
        for (((enc, block), &v), slot) in self
            .recipe
            .features()
            .iter()
            .zip(&self.blocks)
            .zip(record)
            .zip(out.iter_mut())
        {
            *slot = enc.block_score(v, &self.weights[block.clone()])?;
        }
        Ok(())
    }

    fn sum_terms(&self, terms: &[f64]) -> f64 {
        terms.iter().fold(self.intercept, |z, t| z + t)
    }

    /// Probability from the output of [`RiskModel::logit_terms`].
    pub fn proba_from_terms(&self, terms: &[f64]) -> f64 {
        clamp_open(sigmoid(self.sum_terms(terms)))
    }

    pub fn predict_record(&self, record: &[f64]) -> Result<f64> {
        Ok(clamp_open(sigmoid(self.logit_record(record)?)))
    }

    pub fn predict_matrix(&self, matrix: &DesignMatrix) -> Result<Vec<f64>> {
        matrix.rows().map(|r| self.predict_proba(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            version: MODEL_FORMAT_VERSION,
            feature_columns: self.recipe.columns().iter().map(|c| c.label()).collect(),
            weights: self.weights.clone(),
            intercept: self.intercept,
            recipe: self.recipe.clone(),
            train_config: self.train_config.clone(),
            fit: self.fit.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(text)?;
        if probe.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(probe.version));
        }
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.weights.len() != doc.recipe.width() {
            return Err(ModelError::DimensionMismatch {
                expected: doc.recipe.width(),
                got: doc.weights.len(),
            });
        }
        Ok(Self {
            blocks: doc.recipe.blocks(),
            weights: doc.weights,
            intercept: doc.intercept,
            recipe: doc.recipe,
            train_config: doc.train_config,
            fit: doc.fit,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    feature_columns: Vec<String>,
    weights: Vec<f64>,
    intercept: f64,
    recipe: EncodingRecipe,
    train_config: TrainConfig,
    fit: Option<FitSummary>,
}

fn check_classes(labels: &[u8]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ModelError::SingleClass);
    }
    Ok((pos, neg))
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const ROUNDING: f64 = 1e-13;

/// Full-batch gradient descent with Armijo backtracking. Each iteration
/// starts from twice the last accepted step (initially `learning_rate`) and
/// halves until the loss decreases sufficiently.
pub fn train(matrix: &DesignMatrix, config: &TrainConfig) -> Result<RiskModel> {
    config.validate()?;
    if matrix.n_rows() < 2 {
        return Err(ModelError::TooFewRows(matrix.n_rows()));
    }
    check_classes(matrix.labels())?;

    let objective = Objective::new(matrix, config.l2_lambda);
    let mut params = vec![0.0; objective.dim()];
    let mut loss = objective.loss(&params);
    let mut grad = objective.gradient(&params);
    let mut step = config.learning_rate;
    let mut iterations = 0;
    let mut stop = StopReason::MaxIters;
    let mut trial = vec![0.0; params.len()];

    while iterations < config.max_iters {
        if !loss.is_finite() {
            return Err(ModelError::NonFinite("loss"));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFinite("gradient"));
        }
        if max_abs(&grad) < config.tolerance {
            stop = StopReason::Converged;
            break;
        }
        iterations += 1;
        let g2 = dot(&grad, &grad);
        let mut t = step * 2.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            for ((x, p), g) in trial.iter_mut().zip(&params).zip(&grad) {
                *x = p - t * g;
            }
            let candidate = objective.loss(&trial);
            let required = ARMIJO * t * g2;
            let noisy = required < ROUNDING * loss.abs();
            if !noisy && candidate.is_finite() && candidate <= loss - required {
                std::mem::swap(&mut params, &mut trial);
                loss = candidate;
                grad = objective.gradient(&params);
                accepted = true;
                break;
            }
            // Near the optimum the required decrease is below the loss's
            // rounding error. The objective is convex, so a trial whose
            // gradient still points along the current one has not passed the
            // line minimum and cannot have increased the loss.
            if noisy && candidate.is_finite() {
                let g_trial = objective.gradient(&trial);
                if dot(&g_trial, &grad) >= 0.0 {
                    std::mem::swap(&mut params, &mut trial);
                    loss = candidate.min(loss);
                    grad = g_trial;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            stop = StopReason::Stalled;
            break;
        }
        step = t;
    }
    if stop != StopReason::Converged && max_abs(&grad) < config.tolerance {
        stop = StopReason::Converged;
    }

    let (intercept, weights) = params.split_first().expect("non-empty parameters");
    Ok(RiskModel {
        weights: weights.to_vec(),
        blocks: matrix.recipe().blocks(),
        intercept: *intercept,
        recipe: matrix.recipe().clone(),
        train_config: config.clone(),
        fit: Some(FitSummary {
            iterations,
            stop,
            loss,
            gradient_norm: max_abs(&grad),
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub auc: f64,
    pub brier: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldSummary>,
    /// Out-of-fold probability for every row, in row order.
    pub oof_probabilities: Vec<f64>,
    pub labels: Vec<u8>,
    /// Test fold of every row.
    pub fold_of: Vec<usize>,
}

/// Seeded stratified assignment: each class is shuffled and dealt round-robin,
/// negatives continuing where positives stopped so fold sizes stay balanced.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let (pos, neg) = check_classes(labels)?;
    if folds < 2 {
        return Err(ModelError::InvalidConfig("folds must be >= 2".into()));
    }
    if pos.min(neg) < folds {
        return Err(ModelError::TooFewPerClass {
            smallest: pos.min(neg),
            folds,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in [1u8, 0u8] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// Trains one model per fold. Folds run on scoped threads; the report is
/// assembled in fold order, so the result does not depend on scheduling.
pub fn cross_validate(matrix: &DesignMatrix, config: &TrainConfig) -> Result<CvReport> {
    config.validate()?;
    let fold_of = stratified_folds(matrix.labels(), config.folds, config.seed)?;
    let fit_fold = |k: usize| -> Result<(Vec<usize>, Vec<f64>)> {
        let (test, train_idx): (Vec<usize>, Vec<usize>) =
            (0..matrix.n_rows()).partition(|&i| fold_of[i] == k);
        let model = train(&matrix.select_rows(&train_idx), config)?;
        let scores = test
            .iter()
            .map(|&i| model.predict_proba(matrix.row(i)))
            .collect::<Result<Vec<f64>>>()?;
        Ok((test, scores))
    };
    let results: Vec<Result<(Vec<usize>, Vec<f64>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.folds)
            .map(|k| s.spawn(move || fit_fold(k)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fold worker panicked"))
            .collect()
    });

    let mut oof = vec![f64::NAN; matrix.n_rows()];
    let mut folds = Vec::with_capacity(config.folds);
    for (k, result) in results.into_iter().enumerate() {
        let (test, scores) = result?;
        let labels: Vec<u8> = test.iter().map(|&i| matrix.labels()[i]).collect();
        for (&i, &p) in test.iter().zip(&scores) {
            oof[i] = p;
        }
        let auc = eval::auc(&scores, &labels).map_err(|_| ModelError::SingleClass)?;
        let brier = eval::brier_score(&scores, &labels).map_err(|_| ModelError::NonFinite("brier"))?;
        folds.push(FoldSummary {
            fold: k,
            auc,
            brier,
            n_test: test.len(),
        });
    }
    Ok(CvReport {
        folds,
        oof_probabilities: oof,
        labels: matrix.labels().to_vec(),
        fold_of,
    })
}
