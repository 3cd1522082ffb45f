//! Interventional Shapley attributions over schema-level features.
//!
//! A coalition `S` keeps the target's raw values for the features in `S` and
//! takes the rest from a background row, before any encoding happens. A
//! categorical feature therefore enters or leaves a coalition as one unit and
//! its attribution covers all of its indicator columns. Attributions are in
//! probability units.

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::RiskModel;

/// Largest feature count exact enumeration accepts.
pub const MAX_EXACT_FEATURES: usize = 20;
/// Largest feature count the permutation estimator accepts (coalitions are u64 masks).
pub const MAX_SAMPLED_FEATURES: usize = 64;
pub const DEFAULT_BACKGROUND_SIZE: usize = 128;
pub const UNITS: &str = "probability";

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("TooManyFeatures({0})")]
    TooManyFeatures(usize),
    #[error("record has {got} values, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("n_permutations must be >= 1")]
    NoPermutations,
    #[error("model rejected record: {0}")]
    Model(String),
}

pub type Result<T, E = ExplainError> = std::result::Result<T, E>;

/// A model that scores raw, schema-level records.
pub trait RecordModel {
    fn feature_names(&self) -> Vec<String>;
    fn predict_record(&self, record: &[f64]) -> Result<f64>;

    fn n_features(&self) -> usize {
        self.feature_names().len()
    }

    /// Models whose output is a fixed link of a per-feature sum can expose
    /// that structure; coalition values are then assembled from cached terms.
    fn additive(&self) -> Option<&dyn AdditiveScore> {
        None
    }
}

/// `predict_record(x) == score_terms(terms(x))` must hold bit for bit.
pub trait AdditiveScore {
    fn feature_terms(&self, record: &[f64], out: &mut [f64]) -> Result<()>;
    fn score_terms(&self, terms: &[f64]) -> f64;
}

impl RecordModel for RiskModel {
    fn feature_names(&self) -> Vec<String> {
        self.recipe().feature_names()
    }

    fn predict_record(&self, record: &[f64]) -> Result<f64> {
        RiskModel::predict_record(self, record).map_err(|e| ExplainError::Model(e.to_string()))
    }

    fn n_features(&self) -> usize {
        self.recipe().n_features()
    }

    fn additive(&self) -> Option<&dyn AdditiveScore> {
        Some(self)
    }
}

impl AdditiveScore for RiskModel {
    fn feature_terms(&self, record: &[f64], out: &mut [f64]) -> Result<()> {
        self.logit_terms(record, out)
            .map_err(|e| ExplainError::Model(e.to_string()))
    }

    fn score_terms(&self, terms: &[f64]) -> f64 {
        self.proba_from_terms(terms)
    }
}

/// Reference rows that stand in for "absent" features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSet {
    rows: Vec<Vec<f64>>,
}

impl BackgroundSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(ExplainError::EmptyBackground);
        };
        let m = first.len();
        if let Some(r) = rows.iter().find(|r| r.len() != m) {
            return Err(ExplainError::DimensionMismatch {
                expected: m,
                got: r.len(),
            });
        }
        Ok(Self { rows })
    }

    /// Up to `size` rows drawn without replacement; the selected rows keep
    /// their original relative order.
    pub fn sample(records: &[Vec<f64>], size: usize, seed: u64) -> Result<Self> {
        if records.is_empty() || size == 0 {
            return Err(ExplainError::EmptyBackground);
        }
        let take = size.min(records.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, records.len(), take).into_vec();
        picked.sort_unstable();
        Self::new(picked.into_iter().map(|i| records[i].clone()).collect())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub feature_names: Vec<String>,
    pub phi: Vec<f64>,
    /// Mean model output over the background set, E[f(X)].
    pub base_value: f64,
    /// Model output for the explained record, f(x).
    pub prediction: f64,
    pub target: Vec<f64>,
}

impl Attribution {
    /// `prediction - (base_value + sum(phi))`
    pub fn efficiency_gap(&self) -> f64 {
        self.prediction - (self.base_value + self.phi.iter().sum::<f64>())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        #[derive(Serialize)]
        struct Contribution<'a> {
            feature: &'a str,
            value: f64,
            phi: f64,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            base_value: f64,
            prediction: f64,
            units: &'static str,
            contributions: Vec<Contribution<'a>>,
        }
        let contributions = waterfall(self)
            .steps
            .iter()
            .map(|s| Contribution {
                feature: &self.feature_names[s.feature_index],
                value: s.value,
                phi: s.phi,
            })
            .collect();
        serde_json::to_string_pretty(&Doc {
            base_value: self.base_value,
            prediction: self.prediction,
            units: UNITS,
            contributions,
        })
    }

    /// Reads the document written by [`Attribution::to_json`]. Features come
    /// back in contribution order.
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        #[derive(Deserialize)]
        struct Contribution {
            feature: String,
            value: f64,
            phi: f64,
        }
        #[derive(Deserialize)]
        struct Doc {
            base_value: f64,
            prediction: f64,
            contributions: Vec<Contribution>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        Ok(Self {
            feature_names: doc.contributions.iter().map(|c| c.feature.clone()).collect(),
            phi: doc.contributions.iter().map(|c| c.phi).collect(),
            target: doc.contributions.iter().map(|c| c.value).collect(),
            base_value: doc.base_value,
            prediction: doc.prediction,
        })
    }
}

struct CoalitionGame<'a, M: RecordModel + ?Sized> {
    model: &'a M,
    target: &'a [f64],
    background: &'a BackgroundSet,
    prediction: f64,
    scratch: Vec<f64>,
    cached: Option<CachedTerms<'a>>,
}

struct CachedTerms<'a> {
    scorer: &'a dyn AdditiveScore,
    target: Vec<f64>,
    /// row-major, one row of terms per background record
    background: Vec<f64>,
}

impl<'a, M: RecordModel + ?Sized> CoalitionGame<'a, M> {
    fn new(model: &'a M, target: &'a [f64], background: &'a BackgroundSet) -> Result<Self> {
        let m = model.n_features();
        if target.len() != m {
            return Err(ExplainError::DimensionMismatch {
                expected: m,
                got: target.len(),
            });
        }
        if background.is_empty() {
            return Err(ExplainError::EmptyBackground);
        }
        if let Some(r) = background.rows().iter().find(|r| r.len() != m) {
            return Err(ExplainError::DimensionMismatch {
                expected: m,
                got: r.len(),
            });
        }
        let cached = match model.additive() {
            Some(scorer) => {
                let mut t = vec![0.0; m];
                scorer.feature_terms(target, &mut t)?;
                let mut bg = vec![0.0; m * background.len()];
                for (row, out) in background.rows().iter().zip(bg.chunks_mut(m)) {
                    scorer.feature_terms(row, out)?;
                }
                Some(CachedTerms {
                    scorer,
                    target: t,
                    background: bg,
                })
            }
            None => None,
        };
        Ok(Self {
            model,
            target,
            background,
            prediction: model.predict_record(target)?,
            scratch: vec![0.0; m],
            cached,
        })
    }

    fn full_mask(&self) -> u64 {
        let m = self.target.len();
        if m == 64 {
            u64::MAX
        } else {
            (1u64 << m) - 1
        }
    }

    fn value(&mut self, mask: u64) -> Result<f64> {
        if mask == self.full_mask() {
            return Ok(self.prediction);
        }
        // Mean as first + mean offset from it: exact when every composite
        // scores the same, so a feature the model ignores gets phi = 0 exactly.
        let mut first = None;
        let mut offset = 0.0;
        let mut add = |f: f64| match first {
            None => first = Some(f),
            Some(f0) => offset += f - f0,
        };
        if let Some(c) = &self.cached {
            let m = self.target.len();
            for b in c.background.chunks(m) {
                for (k, slot) in self.scratch.iter_mut().enumerate() {
                    *slot = if mask >> k & 1 == 1 { c.target[k] } else { b[k] };
                }
                add(c.scorer.score_terms(&self.scratch));
            }
        } else {
            for b in self.background.rows() {
                for (k, slot) in self.scratch.iter_mut().enumerate() {
                    *slot = if mask >> k & 1 == 1 { self.target[k] } else { b[k] };
                }
                add(self.model.predict_record(&self.scratch)?);
            }
        }
        let f0 = first.expect("background is nonempty");
        Ok(f0 + offset / self.background.len() as f64)
    }
}

fn mask_of(coalition: &[usize]) -> u64 {
    coalition.iter().fold(0, |m, &k| m | 1 << k)
}

/// Interventional value `v(S)`: mean model output over background rows with
/// the features in `coalition` taken from `target`.
pub fn coalition_value<M: RecordModel + ?Sized>(
    model: &M,
    target: &[f64],
    background: &BackgroundSet,
    coalition: &[usize],
) -> Result<f64> {
    let m = model.n_features();
    if m > MAX_SAMPLED_FEATURES {
        return Err(ExplainError::TooManyFeatures(m));
    }
    if let Some(&k) = coalition.iter().find(|&&k| k >= m) {
        return Err(ExplainError::DimensionMismatch { expected: m, got: k + 1 });
    }
    CoalitionGame::new(model, target, background)?.value(mask_of(coalition))
}

/// Exact Shapley values by enumerating all `2^M` coalitions, each evaluated once.
pub fn exact_shap<M: RecordModel + ?Sized>(
    model: &M,
    target: &[f64],
    background: &BackgroundSet,
) -> Result<Attribution> {
    let m = model.n_features();
    if m > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures(m));
    }
    let mut game = CoalitionGame::new(model, target, background)?;
    let n_masks = 1usize << m;
    let values = (0..n_masks as u64)
        .map(|mask| game.value(mask))
        .collect::<Result<Vec<f64>>>()?;

    // |S|! (M - |S| - 1)! / M! for |S| = 0..M-1
    let mut fact = vec![1.0f64; m + 1];
    for k in 1..=m {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..m)
        .map(|s| fact[s] * fact[m - s - 1] / fact[m])
        .collect();

    let mut phi = vec![0.0; m];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in 0..n_masks {
            if mask & bit == 0 {
                let size = mask.count_ones() as usize;
                acc += weight[size] * (values[mask | bit] - values[mask]);
            }
        }
        *phi_i = acc;
    }
    Ok(Attribution {
        feature_names: model.feature_names(),
        phi,
        base_value: values[0],
        prediction: game.prediction,
        target: target.to_vec(),
    })
}

/// Permutation-sampling estimate of the Shapley values. Marginal
/// contributions are averaged along `n_permutations` random feature orders;
/// the remaining efficiency residual is then spread in proportion to `|phi|`
/// so that the attribution sums exactly to the prediction.
pub fn sampled_shap<M: RecordModel + ?Sized>(
    model: &M,
    target: &[f64],
    background: &BackgroundSet,
    n_permutations: usize,
    seed: u64,
) -> Result<Attribution> {
    if n_permutations == 0 {
        return Err(ExplainError::NoPermutations);
    }
    let m = model.n_features();
    if m > MAX_SAMPLED_FEATURES {
        return Err(ExplainError::TooManyFeatures(m));
    }
    let mut game = CoalitionGame::new(model, target, background)?;
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut value = |mask: u64, game: &mut CoalitionGame<'_, M>| -> Result<f64> {
        if let Some(&v) = cache.get(&mask) {
            return Ok(v);
        }
        let v = game.value(mask)?;
        cache.insert(mask, v);
        Ok(v)
    };

    let base_value = value(0, &mut game)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut sums = vec![0.0; m];
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        let mut mask = 0u64;
        let mut prev = base_value;
        for &k in &order {
            mask |= 1 << k;
            let v = value(mask, &mut game)?;
            sums[k] += v - prev;
            prev = v;
        }
    }
    let mut phi: Vec<f64> = sums.iter().map(|s| s / n_permutations as f64).collect();

    let prediction = game.prediction;
    let residual = prediction - base_value - phi.iter().sum::<f64>();
    if residual != 0.0 {
        let total_abs: f64 = phi.iter().map(|p| p.abs()).sum();
        if total_abs > 0.0 {
            for p in &mut phi {
                *p += residual * p.abs() / total_abs;
            }
        } else {
            for p in &mut phi {
                *p += residual / m as f64;
            }
        }
    }
    Ok(Attribution {
        feature_names: model.feature_names(),
        phi,
        base_value,
        prediction,
        target: target.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub feature_names: Vec<String>,
    /// Mean |phi| per feature over the cohort.
    pub mean_abs_phi: Vec<f64>,
    /// One attribution vector per instance.
    pub phi: Vec<Vec<f64>>,
    /// Raw feature values per instance; categorical features as codes.
    pub values: Vec<Vec<f64>>,
}

impl GlobalImportance {
    /// Feature indices by descending importance, ties in schema order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.mean_abs_phi.len()).collect();
        idx.sort_by(|&a, &b| self.mean_abs_phi[b].total_cmp(&self.mean_abs_phi[a]));
        idx
    }

    /// `(feature index, phi, raw value)` for every instance and feature.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.phi.iter().zip(&self.values).flat_map(|(phi, vals)| {
            phi.iter()
                .zip(vals)
                .enumerate()
                .map(|(k, (&p, &v))| (k, p, v))
        })
    }

    pub fn n_instances(&self) -> usize {
        self.phi.len()
    }
}

/// Exact attributions for every record, summarized as mean |phi|.
pub fn global_importance<M: RecordModel + Sync + ?Sized>(
    model: &M,
    records: &[Vec<f64>],
    background: &BackgroundSet,
) -> Result<GlobalImportance> {
    if records.is_empty() {
        return Err(ExplainError::EmptyCohort);
    }
    let m = model.n_features();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
    let chunk = records.len().div_ceil(workers);
    let parts: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|rows| {
                s.spawn(move || {
                    rows.iter()
                        .map(|r| exact_shap(model, r, background).map(|a| a.phi))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("attribution worker panicked"))
            .collect()
    });
    let mut phi = Vec::with_capacity(records.len());
    for part in parts {
        phi.extend(part?);
    }
    // summed in record order, independent of the chunking
    let mut sums = vec![0.0; m];
    for row in &phi {
        for (s, p) in sums.iter_mut().zip(row) {
            *s += p.abs();
        }
    }
    Ok(GlobalImportance {
        feature_names: model.feature_names(),
        mean_abs_phi: sums.iter().map(|s| s / records.len() as f64).collect(),
        phi,
        values: records.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallStep {
    pub feature_index: usize,
    pub feature: String,
    pub value: f64,
    pub phi: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    pub base_value: f64,
    pub prediction: f64,
    pub steps: Vec<WaterfallStep>,
}

/// Contributions by descending |phi| (ties in schema order) with running
/// totals from the base value; the last step ends at the prediction.
pub fn waterfall(attribution: &Attribution) -> Waterfall {
    let mut order: Vec<usize> = (0..attribution.phi.len()).collect();
    order.sort_by(|&a, &b| attribution.phi[b].abs().total_cmp(&attribution.phi[a].abs()));
    let mut running = attribution.base_value;
    let mut steps: Vec<WaterfallStep> = order
        .into_iter()
        .map(|k| {
            let start = running;
            running += attribution.phi[k];
            WaterfallStep {
                feature_index: k,
                feature: attribution.feature_names[k].clone(),
                value: attribution.target.get(k).copied().unwrap_or(f64::NAN),
                phi: attribution.phi[k],
                start,
                end: running,
            }
        })
        .collect();
    if let Some(last) = steps.last_mut() {
        last.end = attribution.prediction;
    }
    Waterfall {
        base_value: attribution.base_value,
        prediction: attribution.prediction,
        steps,
    }
}
