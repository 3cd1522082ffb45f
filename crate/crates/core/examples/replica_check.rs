//! Prints the replica's operating point for a range of seeds.
//!
//! cargo run --release -p riskstrat-core --example replica_check -- [seeds]

use riskstrat_core::eval::{auc, calibration_curve};
use riskstrat_core::explain::{global_importance, BackgroundSet};
use riskstrat_core::synth::REPLICA_MISCALIBRATION_SHIFT;
use riskstrat_core::*;

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = TrainConfig::default();
    for seed in 7..7 + seeds {
        let t = std::time::Instant::now();
        let big = generate_cohort(&default_replica().with_seed(seed).with_n(20_000)).unwrap();
        let bayes = auc(&big.true_probability, big.cohort.labels()).unwrap();
        let m = encode(&impute_missing(&big.cohort).unwrap()).unwrap();
        let cv = cross_validate(&m, &cfg).unwrap();
        let cal = calibration_curve(&cv.oof_probabilities, &cv.labels, 10).unwrap();
        let dev = cal
            .bins
            .iter()
            .map(|b| (b.observed_frequency - b.mean_predicted).abs())
            .fold(0.0, f64::max);

        let base = default_replica().with_seed(seed);
        let plain = generate_cohort(&base).unwrap();
        let shifted = generate_cohort(&base.clone().with_shift(REPLICA_MISCALIBRATION_SHIFT)).unwrap();
        let imputed = impute_missing(&plain.cohort).unwrap();
        let m = encode(&imputed).unwrap();
        let cv = cross_validate(&m, &cfg).unwrap();
        let oof_auc = auc(&cv.oof_probabilities, &cv.labels).unwrap();
        let cal_s = calibration_curve(&cv.oof_probabilities, shifted.cohort.labels(), 10).unwrap();
        let top3: Vec<String> = cal_s.bins[cal_s.bins.len().saturating_sub(3)..]
            .iter()
            .map(|b| format!("{}:{:+.3}", b.count, b.observed_frequency - b.mean_predicted))
            .collect();
        let model = train(&m, &cfg).unwrap();
        let records = imputed.complete_records().unwrap();
        let bg = BackgroundSet::sample(&records, 128, cfg.seed).unwrap();
        let gi = global_importance(&model, &records, &bg).unwrap();
        let rank: Vec<String> = gi
            .ranking()
            .iter()
            .map(|&k| format!("{}={:.4}", gi.feature_names[k], gi.mean_abs_phi[k]))
            .collect();
        println!(
            "seed {seed}: bayes {bayes:.4} cal20k maxdev {dev:.4} ({} bins) | oof auc {oof_auc:.4} fit {:?} | shifted top3 {top3:?} | {} | {:.2?}",
            cal.bins.len(),
            model.fit_summary().map(|f| (f.iterations, f.stop)),
            rank.join(" "),
            t.elapsed()
        );
    }
}
