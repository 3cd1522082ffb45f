//! Seeded synthetic cohorts with a known logistic risk.
//!
//! Features are drawn independently from their marginals. The true logit is
//! linear in the population-standardized continuous features and in
//! indicators for non-reference categorical levels:
//!
//! ```text
//! logit = intercept
//!       + age_per_sd * (age - age_mean) / age_sd
//!       + income_per_sd * (income - income_mean) / income_sd
//!       + ethnicity[code] + gender[code] + medical_history[code]
//! ```
//!
//! Labels use `logit + miscalibration_shift`. The row's label uniform is drawn
//! after its features and does not depend on the shift, so two configs that
//! differ only in the shift yield the same features with coupled labels.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Cohort, FeatureSchema};
use crate::model::sigmoid;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    /// Inclusive integer age range in years.
    pub age_min: u32,
    pub age_max: u32,
    /// Median and log-scale sd of the income-to-poverty ratio before capping.
    pub income_median: f64,
    pub income_log_sd: f64,
    pub income_cap: f64,
    /// Weights over RIDRETH1 codes 1..=5.
    pub ethnicity_weights: [f64; 5],
    /// Weights over RIAGENDR codes 1, 2.
    pub gender_weights: [f64; 2],
    /// Weights over MCQ010 codes 1, 2, 9.
    pub medical_history_weights: [f64; 3],
}

impl Marginals {
    pub fn age_moments(&self) -> (f64, f64) {
        let k = f64::from(self.age_max - self.age_min + 1);
        let mean = f64::from(self.age_min + self.age_max) / 2.0;
        (mean, ((k * k - 1.0) / 12.0).sqrt())
    }

    /// Mean and sd of `min(X, cap)` for the log-normal `X`, by Simpson's rule
    /// over the standard normal density.
    pub fn income_moments(&self) -> (f64, f64) {
        let mu = self.income_median.ln();
        let sigma = self.income_log_sd;
        let cap = self.income_cap;
        let steps = 20_000;
        let (lo, hi) = (-12.0, 12.0);
        let h = (hi - lo) / steps as f64;
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..=steps {
            let z = lo + h * i as f64;
            let w = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let x = (mu + sigma * z).exp().min(cap);
            m1 += w * density * x;
            m2 += w * density * x * x;
        }
        let (m1, m2) = (m1 * h / 3.0, m2 * h / 3.0);
        (m1, (m2 - m1 * m1).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueLogit {
    pub intercept: f64,
    pub age_per_sd: f64,
    pub income_per_sd: f64,
    /// Offsets for RIDRETH1 codes 2..=5 (code 1 is the reference).
    pub ethnicity: [f64; 4],
    /// Offset for RIAGENDR code 2.
    pub gender: f64,
    /// Offset for MCQ010 code 2; codes 1 and 9 contribute nothing.
    pub medical_history: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub true_logit: TrueLogit,
    pub marginals: Marginals,
    /// Per-feature probability of blanking a slot, in schema order.
    pub missing_rate: [f64; 5],
    /// Added to the true logit when drawing labels only.
    pub miscalibration_shift: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        let mg = &self.marginals;
        if self.n == 0 {
            return bad("n must be >= 1");
        }
        if mg.age_min > mg.age_max {
            return bad("age_min > age_max");
        }
        if !(mg.income_median > 0.0 && mg.income_log_sd > 0.0 && mg.income_cap > 0.0) {
            return bad("income parameters must be positive");
        }
        let weights_ok = |w: &[f64]| w.iter().all(|&x| x >= 0.0 && x.is_finite()) && w.iter().sum::<f64>() > 0.0;
        if !weights_ok(&mg.ethnicity_weights)
            || !weights_ok(&mg.gender_weights)
            || !weights_ok(&mg.medical_history_weights)
        {
            return bad("categorical weights must be non-negative with positive sum");
        }
        if self.missing_rate.iter().any(|r| !(0.0..1.0).contains(r)) {
            return bad("missing rates must lie in [0, 1)");
        }
        let t = &self.true_logit;
        let coefs = [t.intercept, t.age_per_sd, t.income_per_sd, t.gender, t.medical_history, self.miscalibration_shift];
        if coefs.iter().chain(&t.ethnicity).any(|c| !c.is_finite()) {
            return bad("coefficients must be finite");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.miscalibration_shift = shift;
        self
    }

    /// True logit (without the shift) for complete raw records in schema order.
    pub fn logit_fn(&self) -> impl Fn(&[f64]) -> f64 + '_ {
        let t = &self.true_logit;
        let (age_mean, age_sd) = self.marginals.age_moments();
        let (inc_mean, inc_sd) = self.marginals.income_moments();
        move |record: &[f64]| {
            let eth = record[2] as usize;
            t.intercept
                + t.age_per_sd * (record[0] - age_mean) / age_sd
                + t.income_per_sd * (record[1] - inc_mean) / inc_sd
                + if eth >= 2 { t.ethnicity[eth - 2] } else { 0.0 }
                + if record[3] == 2.0 { t.gender } else { 0.0 }
                + if record[4] == 2.0 { t.medical_history } else { 0.0 }
        }
    }
}

/// Shift used for the replica's under-estimation scenario.
pub const REPLICA_MISCALIBRATION_SHIFT: f64 = 0.8;

/// Replica configuration. Coefficients were tuned so that the Bayes AUC of
/// the true probabilities is about 0.61, with age and income dominant,
/// lower income raising risk and medical history carrying no signal.
pub fn default_replica() -> SynthConfig {
    SynthConfig {
        n: 4000,
        seed: 7,
        true_logit: TrueLogit {
            intercept: -0.65,
            age_per_sd: 0.30,
            income_per_sd: -0.26,
            ethnicity: [-0.05, -0.16, -0.08, -0.12],
            gender: -0.10,
            medical_history: 0.0,
        },
        marginals: Marginals {
            age_min: 2,
            age_max: 17,
            income_median: 1.8,
            income_log_sd: 0.7,
            income_cap: 5.0,
            ethnicity_weights: [0.22, 0.10, 0.36, 0.22, 0.10],
            gender_weights: [0.5, 0.5],
            medical_history_weights: [0.15, 0.84, 0.01],
        },
        missing_rate: [0.0, 0.03, 0.0, 0.0, 0.0],
        miscalibration_shift: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub cohort: Cohort,
    /// Probability each label was drawn with, including any shift.
    pub true_probability: Vec<f64>,
}

impl SynthCohort {
    /// Sidecar table `row,true_probability`.
    pub fn write_truth_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "true_probability"])?;
        for (i, p) in self.true_probability.iter().enumerate() {
            w.write_record([i.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn generate_cohort(config: &SynthConfig) -> Result<SynthCohort, SynthError> {
    config.validate()?;
    let mg = &config.marginals;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let income = LogNormal::new(mg.income_median.ln(), mg.income_log_sd)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let weighted = |w: &[f64]| WeightedIndex::new(w).map_err(|e| SynthError::InvalidConfig(e.to_string()));
    let ethnicity = weighted(&mg.ethnicity_weights)?;
    let gender = weighted(&mg.gender_weights)?;
    let history = weighted(&mg.medical_history_weights)?;
    const HISTORY_CODES: [f64; 3] = [1.0, 2.0, 9.0];
    let logit = config.logit_fn();

    let mut raw = Vec::with_capacity(config.n);
    let mut labels = Vec::with_capacity(config.n);
    let mut truth = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let record = [
            f64::from(rng.random_range(mg.age_min..=mg.age_max)),
            // reported to two decimals
            (income.sample(&mut rng).min(mg.income_cap) * 100.0).round() / 100.0,
            (ethnicity.sample(&mut rng) + 1) as f64,
            (gender.sample(&mut rng) + 1) as f64,
            HISTORY_CODES[history.sample(&mut rng)],
        ];
        let p = sigmoid(logit(&record) + config.miscalibration_shift);
        let u: f64 = rng.random();
        labels.push(u8::from(u < p));
        truth.push(p);
        let slots = record
            .iter()
            .zip(&config.missing_rate)
            .map(|(&v, &rate)| {
                let blank = rng.random::<f64>() < rate;
                (!blank).then_some(v)
            })
            .collect();
        raw.push(slots);
    }
    let cohort = Cohort::from_raw(FeatureSchema::survey(), raw, labels)
        .expect("generated values conform to the survey schema");
    Ok(SynthCohort {
        cohort,
        true_probability: truth,
    })
}
