//! Explainable risk stratification for tabular socio-demographic cohorts.
//!
//! The pipeline runs [`ingest`] (load, impute, encode) into [`model`]
//! (logistic fit and stratified cross-validation), scores with [`eval`],
//! attributes predictions with [`explain`] and draws figures with
//! [`report`]. [`synth`] generates seeded stand-in cohorts.

pub mod eval;
pub mod explain;
pub mod ingest;
pub mod model;
pub mod report;
pub mod synth;

pub use eval::{auc, brier_score, calibration_curve, fit_isotonic, fit_platt, roc_points, EvalReport};
pub use explain::{exact_shap, global_importance, sampled_shap, waterfall, Attribution, BackgroundSet, RecordModel};
pub use ingest::{encode, impute_missing, load_cohort, Cohort, DesignMatrix, FeatureSchema};
pub use model::{cross_validate, train, RiskModel, TrainConfig};
pub use synth::{default_replica, generate_cohort, SynthConfig};
