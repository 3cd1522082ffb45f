//! Discrimination, calibration and post hoc recalibration.
//!
//! AUC is the Mann-Whitney statistic with half credit for ties. ROC curves
//! carry one point per distinct threshold, so the trapezoidal area under the
//! stored points equals the rank statistic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sigmoid, CvReport, FoldSummary};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("SingleClass: both labels must be present")]
    SingleClass,
    #[error("length mismatch: {scores} scores, {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no scores")]
    Empty,
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("label {0} is not 0 or 1")]
    NonBinaryLabel(u8),
    #[error("n_bins must be >= 2, got {0}")]
    InvalidBins(usize),
    #[error("NonFinite: recalibration fit diverged")]
    NonFinite,
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(s));
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(EvalError::NonBinaryLabel(y));
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        Err(EvalError::SingleClass)
    } else {
        Ok((pos, neg))
    }
}

fn check_probabilities(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        Some(&s) => Err(EvalError::ScoreOutOfRange(s)),
        None => Ok(()),
    }
}

/// Indices of `scores` in ascending score order.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Area under the ROC curve via midranks: `(R+ - n+(n+ + 1)/2) / (n+ n-)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let idx = ascending(scores);
    // twice the positive rank sum stays an exact integer
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        // ranks start+1..=end share the midrank (start + 1 + end) / 2
        let twice_midrank = (start + 1 + end) as u128;
        let tied_pos = idx[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        twice_rank_sum += tied_pos * twice_midrank;
        start = end;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive. The leading point uses
    /// `max score + 1`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Trapezoidal area under the stored points.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }
}

pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut idx = ascending(scores);
    idx.reverse();
    let max_score = scores[idx[0]];
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: max_score + 1.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the trapezoid area in count units, kept exact
    let mut twice_area: u128 = 0;
    let mut start = 0;
    while start < idx.len() {
        let threshold = scores[idx[start]];
        let (prev_tp, prev_fp) = (tp, fp);
        while start < idx.len() && scores[idx[start]] == threshold {
            if labels[idx[start]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            start += 1;
        }
        twice_area += u128::from(fp - prev_fp) * u128::from(tp + prev_tp);
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }
    let auc = twice_area as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_predicted: f64,
    pub observed_frequency: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    /// Occupied bins only, in ascending order.
    pub bins: Vec<CalibrationBin>,
    pub n_bins: usize,
}

impl CalibrationCurve {
    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Equal-width reliability diagram over `[0, 1]`; the last bin is closed on
/// the right.
pub fn calibration_curve(scores: &[f64], labels: &[u8], n_bins: usize) -> Result<CalibrationCurve> {
    if n_bins < 2 {
        return Err(EvalError::InvalidBins(n_bins));
    }
    check_inputs(scores, labels)?;
    check_probabilities(scores)?;
    let edge = |b: usize| b as f64 / n_bins as f64;
    let mut sum_pred = vec![0.0; n_bins];
    let mut range = vec![(f64::INFINITY, f64::NEG_INFINITY); n_bins];
    let mut positives = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&s, &y) in scores.iter().zip(labels) {
        // bin b holds edge(b) <= s < edge(b + 1), using the same edges that are reported
        let mut b = ((s * n_bins as f64) as usize).min(n_bins - 1);
        while b > 0 && s < edge(b) {
            b -= 1;
        }
        while b + 1 < n_bins && s >= edge(b + 1) {
            b += 1;
        }
        sum_pred[b] += s;
        range[b] = (range[b].0.min(s), range[b].1.max(s));
        positives[b] += usize::from(y);
        counts[b] += 1;
    }
    let bins = (0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| CalibrationBin {
            lower: edge(b),
            upper: edge(b + 1),
            // rounding can push a mean of near-equal scores just past them
            mean_predicted: (sum_pred[b] / counts[b] as f64).clamp(range[b].0, range[b].1),
            observed_frequency: positives[b] as f64 / counts[b] as f64,
            count: counts[b],
        })
        .collect();
    Ok(CalibrationCurve { bins, n_bins })
}

/// Mean squared difference between score and outcome.
pub fn brier_score(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    check_probabilities(scores)?;
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| (s - f64::from(y)).powi(2))
        .sum();
    Ok(sum / scores.len() as f64)
}

/// Lower/upper clip applied to scores before taking their logit.
pub const PLATT_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Recalibrator {
    /// `s -> sigmoid(a * logit(s) + b)`
    Platt { a: f64, b: f64 },
    /// Right-continuous step function; inputs below the first breakpoint map
    /// to the first value.
    Isotonic {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Recalibrator {
    pub fn apply(&self, score: f64) -> f64 {
        match self {
            Self::Platt { a, b } => sigmoid(a * clipped_logit(score) + b),
            Self::Isotonic {
                breakpoints,
                values,
            } => {
                let k = breakpoints.partition_point(|&x| x <= score);
                values[k.saturating_sub(1)]
            }
        }
    }

    pub fn apply_all(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&s| self.apply(s)).collect()
    }
}

fn clipped_logit(s: f64) -> f64 {
    let s = s.clamp(PLATT_CLIP, 1.0 - PLATT_CLIP);
    (s / (1.0 - s)).ln()
}

/// Maximum-likelihood Platt scaling by damped Newton iterations on `(a, b)`.
pub fn fit_platt(scores: &[f64], labels: &[u8]) -> Result<Recalibrator> {
    check_inputs(scores, labels)?;
    class_counts(labels)?;
    let xs: Vec<f64> = scores.iter().map(|&s| clipped_logit(s)).collect();
    let nll = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(labels)
            .map(|(&x, &y)| {
                let z = a * x + b;
                let sp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                sp - f64::from(y) * z
            })
            .sum::<f64>()
            / xs.len() as f64
    };
    let (mut a, mut b) = (1.0, 0.0);
    let mut loss = nll(a, b);
    for _ in 0..200 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(labels) {
            let p = sigmoid(a * x + b);
            let r = p - f64::from(y);
            let w = p * (1.0 - p);
            ga += r * x;
            gb += r;
            haa += w * x * x;
            hab += w * x;
            hbb += w;
        }
        let n = xs.len() as f64;
        let (ga, gb, haa, hab, hbb) = (ga / n, gb / n, haa / n, hab / n, hbb / n);
        if ga.abs().max(gb.abs()) < 1e-12 {
            break;
        }
        // small ridge keeps the system solvable when every logit is equal
        let ridge = 1e-10;
        let (haa, hbb) = (haa + ridge, hbb + ridge);
        let det = haa * hbb - hab * hab;
        let (mut da, mut db) = if det > 0.0 && det.is_finite() {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut improved = false;
        for _ in 0..60 {
            let cand = nll(a - da, b - db);
            if cand.is_finite() && cand <= loss {
                a -= da;
                b -= db;
                improved = cand < loss;
                loss = cand;
                break;
            }
            da *= 0.5;
            db *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite() && loss.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(Recalibrator::Platt { a, b })
}

/// Pool-adjacent-violators over `(score, label)` pairs; tied scores are
/// pooled before any violator is merged.
pub fn fit_isotonic(scores: &[f64], labels: &[u8]) -> Result<Recalibrator> {
    check_inputs(scores, labels)?;
    class_counts(labels)?;
    let idx = ascending(scores);
    let mut levels: Vec<(f64, f64, f64)> = Vec::new(); // (score, label sum, weight)
    for &i in &idx {
        let y = f64::from(labels[i]);
        match levels.last_mut() {
            Some(last) if last.0 == scores[i] => {
                last.1 += y;
                last.2 += 1.0;
            }
            _ => levels.push((scores[i], y, 1.0)),
        }
    }
    let targets: Vec<(f64, f64)> = levels.iter().map(|&(_, s, w)| (s / w, w)).collect();
    let fitted = pava(&targets);
    Ok(Recalibrator::Isotonic {
        breakpoints: levels.iter().map(|l| l.0).collect(),
        values: fitted,
    })
}

/// Weighted isotonic least squares over `(value, weight)` pairs in order.
pub fn pava(points: &[(f64, f64)]) -> Vec<f64> {
    // blocks of (weighted sum, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(points.len());
    for &(v, w) in points {
        blocks.push((v * w, w, 1));
        while blocks.len() > 1 {
            let (s2, w2, l2) = blocks[blocks.len() - 1];
            let (s1, w1, l1) = blocks[blocks.len() - 2];
            if s1 / w1 <= s2 / w2 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().expect("two blocks") = (s1 + s2, w1 + w2, l1 + l2);
        }
    }
    let mut out = Vec::with_capacity(points.len());
    for (s, w, l) in blocks {
        out.extend(std::iter::repeat_n(s / w, l));
    }
    out
}

/// Serialized evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    /// `[fpr, tpr, threshold]` triples.
    pub roc: Vec<[f64; 3]>,
    /// `[mean_predicted, observed_frequency, count]` triples.
    pub calibration: Vec<[f64; 3]>,
    pub brier: f64,
    pub folds: Vec<FoldSummary>,
    #[serde(default)]
    pub n_bins: usize,
}

impl EvalReport {
    /// Scores pooled out-of-fold predictions.
    pub fn from_cv(cv: &CvReport, n_bins: usize) -> Result<Self> {
        let roc = roc_points(&cv.oof_probabilities, &cv.labels)?;
        let calibration = calibration_curve(&cv.oof_probabilities, &cv.labels, n_bins)?;
        let brier = brier_score(&cv.oof_probabilities, &cv.labels)?;
        Ok(Self::assemble(&roc, &calibration, brier, cv.folds.clone()))
    }

    pub fn assemble(
        roc: &RocCurve,
        calibration: &CalibrationCurve,
        brier: f64,
        folds: Vec<FoldSummary>,
    ) -> Self {
        Self {
            auc: roc.auc,
            roc: roc
                .points
                .iter()
                .map(|p| [p.fpr, p.tpr, p.threshold])
                .collect(),
            calibration: calibration
                .bins
                .iter()
                .map(|b| [b.mean_predicted, b.observed_frequency, b.count as f64])
                .collect(),
            brier,
            folds,
            n_bins: calibration.n_bins,
        }
    }

    pub fn roc_curve(&self) -> RocCurve {
        RocCurve {
            points: self
                .roc
                .iter()
                .map(|&[fpr, tpr, threshold]| RocPoint { fpr, tpr, threshold })
                .collect(),
            auc: self.auc,
        }
    }

    pub fn calibration_curve(&self) -> CalibrationCurve {
        let n_bins = self.n_bins.max(2);
        let edge = |b: usize| b as f64 / n_bins as f64;
        CalibrationCurve {
            bins: self
                .calibration
                .iter()
                .map(|&[mean_predicted, observed_frequency, count]| {
                    let mut b = ((mean_predicted * n_bins as f64) as usize).min(n_bins - 1);
                    while b > 0 && mean_predicted < edge(b) {
                        b -= 1;
                    }
                    while b + 1 < n_bins && mean_predicted >= edge(b + 1) {
                        b += 1;
                    }
                    CalibrationBin {
                        lower: edge(b),
                        upper: edge(b + 1),
                        mean_predicted,
                        observed_frequency,
                        count: count as usize,
                    }
                })
                .collect(),
            n_bins,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}
