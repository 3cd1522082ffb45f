use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskstrat_core::explain::{
    coalition_value, exact_shap, global_importance, sampled_shap, waterfall, Attribution,
    BackgroundSet, ExplainError, RecordModel, MAX_EXACT_FEATURES,
};
use riskstrat_core::model::{sigmoid, train, RiskModel, TrainConfig};
use riskstrat_core::synth::{default_replica, generate_cohort};
use riskstrat_core::{encode, impute_missing};

type Res<T> = Result<T, ExplainError>;

/// f(x) = c + sum a_i x_i
struct Additive {
    c: f64,
    a: Vec<f64>,
}

impl RecordModel for Additive {
    fn feature_names(&self) -> Vec<String> {
        (0..self.a.len()).map(|i| format!("f{i}")).collect()
    }

    fn predict_record(&self, x: &[f64]) -> Res<f64> {
        Ok(self.c + self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>())
    }
}

fn replica() -> (RiskModel, Vec<Vec<f64>>) {
    let synth = generate_cohort(&default_replica()).unwrap();
    let imputed = impute_missing(&synth.cohort).unwrap();
    let model = train(&encode(&imputed).unwrap(), &TrainConfig::default()).unwrap();
    (model, imputed.complete_records().unwrap())
}

#[test]
fn additive_closed_form() {
    let model = Additive {
        c: 0.3,
        a: vec![0.2, -0.1],
    };
    let bg = BackgroundSet::new(vec![vec![0.0, 0.0]]).unwrap();
    let a = exact_shap(&model, &[1.0, 1.0], &bg).unwrap();
    assert!((a.phi[0] - 0.2).abs() < 1e-12);
    assert!((a.phi[1] + 0.1).abs() < 1e-12);
    assert!((a.base_value - 0.3).abs() < 1e-12);

    let w = waterfall(&a);
    let path: Vec<(f64, f64)> = w.steps.iter().map(|s| (s.start, s.end)).collect();
    assert!((path[0].0 - 0.3).abs() < 1e-12 && (path[0].1 - 0.5).abs() < 1e-12);
    assert!((path[1].0 - 0.5).abs() < 1e-12 && path[1].1 == a.prediction);
}

#[test]
fn linear_oracle_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let m = rng.random_range(1..=8);
        let model = Additive {
            c: rng.random_range(-1.0..1.0),
            a: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let rows: Vec<Vec<f64>> = (0..rng.random_range(1..=30))
            .map(|_| (0..m).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let means: Vec<f64> = (0..m)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect();
        let bg = BackgroundSet::new(rows).unwrap();
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = exact_shap(&model, &x, &bg).unwrap();
        for i in 0..m {
            assert!((a.phi[i] - model.a[i] * (x[i] - means[i])).abs() < 1e-9);
        }
    }
}

#[test]
fn null_game() {
    let model = Additive {
        c: 0.42,
        a: vec![0.0; 4],
    };
    let bg = BackgroundSet::new(vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4]]).unwrap();
    let a = exact_shap(&model, &[9.0, 9.0, 9.0, 9.0], &bg).unwrap();
    assert!(a.phi.iter().all(|&p| p == 0.0));
    assert_eq!(a.base_value, a.prediction);
    let gi = global_importance(&model, &[vec![1.0; 4], vec![5.0; 4]], &bg).unwrap();
    assert!(gi.mean_abs_phi.iter().all(|&v| v == 0.0));
}

#[test]
fn coalition_value_matches_hand_composition() {
    let (model, records) = replica();
    let b = records[17].clone();
    let bg = BackgroundSet::new(vec![b.clone()]).unwrap();
    let target = &records[3];
    for mask in 0u32..32 {
        let coalition: Vec<usize> = (0..5).filter(|k| mask >> k & 1 == 1).collect();
        let composite: Vec<f64> = (0..5)
            .map(|k| if mask >> k & 1 == 1 { target[k] } else { b[k] })
            .collect();
        let row = model.recipe().apply(&composite).unwrap();
        let z = model.intercept()
            + row.iter().zip(model.weights()).map(|(x, w)| x * w).sum::<f64>();
        let v = coalition_value(&model, target, &bg, &coalition).unwrap();
        assert!((v - sigmoid(z)).abs() < 1e-12);
        assert_eq!(v, model.predict_proba(&row).unwrap());
    }
    let full = coalition_value(&model, target, &bg, &[0, 1, 2, 3, 4]).unwrap();
    assert_eq!(full, model.predict_record(target).unwrap());
}

#[test]
fn empty_coalition_is_background_mean() {
    let (model, records) = replica();
    let bg = BackgroundSet::sample(&records, 128, 42).unwrap();
    let mean = bg
        .rows()
        .iter()
        .map(|r| model.predict_record(r).unwrap())
        .sum::<f64>()
        / bg.len() as f64;
    let v = coalition_value(&model, &records[0], &bg, &[]).unwrap();
    assert!((v - mean).abs() < 1e-15);
    let a = exact_shap(&model, &records[0], &bg).unwrap();
    assert_eq!(a.base_value, v);
}

#[test]
fn sampled_tracks_exact_on_replica() {
    let (model, records) = replica();
    let bg = BackgroundSet::sample(&records, 128, 42).unwrap();
    let mut worst: f64 = 0.0;
    for (k, x) in records.iter().step_by(79).take(50).enumerate() {
        let exact = exact_shap(&model, x, &bg).unwrap();
        let approx = sampled_shap(&model, x, &bg, 2000, k as u64).unwrap();
        assert!(approx.efficiency_gap().abs() < 1e-12);
        for (e, s) in exact.phi.iter().zip(&approx.phi) {
            worst = worst.max((e - s).abs());
        }
    }
    assert!(worst < 0.02, "max deviation {worst}");
}

#[test]
fn sampled_is_seeded_and_exact_for_one_feature() {
    let (model, records) = replica();
    let bg = BackgroundSet::sample(&records, 64, 1).unwrap();
    let a = sampled_shap(&model, &records[5], &bg, 50, 9).unwrap();
    let b = sampled_shap(&model, &records[5], &bg, 50, 9).unwrap();
    assert_eq!(a, b);

    let single = Additive {
        c: 0.1,
        a: vec![0.7],
    };
    let bg = BackgroundSet::new(vec![vec![0.5], vec![-1.0]]).unwrap();
    for n in [1, 3, 100] {
        let s = sampled_shap(&single, &[2.0], &bg, n, 4).unwrap();
        assert_eq!(s.phi[0], s.prediction - s.base_value);
    }
    assert!(matches!(
        sampled_shap(&single, &[2.0], &bg, 0, 4),
        Err(ExplainError::NoPermutations)
    ));
}

#[test]
fn exact_guard_on_feature_count() {
    let wide = Additive {
        c: 0.0,
        a: vec![0.1; MAX_EXACT_FEATURES + 1],
    };
    let bg = BackgroundSet::new(vec![vec![0.0; MAX_EXACT_FEATURES + 1]]).unwrap();
    assert!(matches!(
        exact_shap(&wide, &[1.0; MAX_EXACT_FEATURES + 1], &bg),
        Err(ExplainError::TooManyFeatures(21))
    ));
    let a = sampled_shap(&wide, &[1.0; MAX_EXACT_FEATURES + 1], &bg, 20, 0).unwrap();
    assert!(a.phi.iter().all(|p| (p - 0.1).abs() < 1e-12));
}

#[test]
fn dominant_feature_dominates_importance() {
    let model = Additive {
        c: 0.0,
        a: vec![0.05, 2.0, -0.1, 0.02],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let bg = BackgroundSet::sample(&rows, 50, 3).unwrap();
    let gi = global_importance(&model, &rows, &bg).unwrap();
    assert_eq!(gi.ranking()[0], 1);
    let top = gi.mean_abs_phi[1];
    assert!(gi
        .mean_abs_phi
        .iter()
        .enumerate()
        .all(|(i, &v)| i == 1 || v < top));
    assert_eq!(gi.pairs().count(), 200 * 4);
    assert!(gi.mean_abs_phi.iter().all(|&v| v >= 0.0));
}

#[test]
fn replica_phi_grouped_per_feature() {
    let (model, records) = replica();
    let bg = BackgroundSet::sample(&records, 128, 42).unwrap();
    let a = exact_shap(&model, &records[0], &bg).unwrap();
    assert_eq!(
        a.feature_names,
        vec!["RIDAGEYR", "INDFMPIR", "RIDRETH1", "RIAGENDR", "MCQ010"]
    );
    assert!(model.weights().len() > a.phi.len());
    assert!(a.efficiency_gap().abs() < 1e-9);
}

#[test]
fn waterfall_ordering_and_closure() {
    let a = Attribution {
        feature_names: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        phi: vec![0.1, -0.3, 0.1, 0.0],
        base_value: 0.4,
        prediction: 0.3,
        target: vec![1.0, 2.0, 3.0, 4.0],
    };
    let w = waterfall(&a);
    let order: Vec<usize> = w.steps.iter().map(|s| s.feature_index).collect();
    assert_eq!(order, vec![1, 0, 2, 3]);
    assert_eq!(w.steps[0].start, 0.4);
    for pair in w.steps.windows(2) {
        assert_eq!(pair[0].end, pair[1].start);
    }
    assert_eq!(w.steps.last().unwrap().end, 0.3);

    let flat = Attribution {
        phi: vec![0.0; 4],
        prediction: 0.4,
        ..a
    };
    let w = waterfall(&flat);
    assert!(w.steps.iter().all(|s| s.start == 0.4 && s.end == 0.4));
}

#[test]
fn attribution_json_follows_waterfall() {
    let a = Attribution {
        feature_names: vec!["x".into(), "y".into()],
        phi: vec![0.2, -0.5],
        base_value: 0.5,
        prediction: 0.2,
        target: vec![3.0, 1.0],
    };
    let doc: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
    assert_eq!(doc["units"], "probability");
    assert_eq!(doc["contributions"][0]["feature"], "y");
    assert_eq!(doc["contributions"][0]["value"], 1.0);
    assert_eq!(doc["contributions"][1]["phi"], 0.2);
    assert_eq!(doc["base_value"], 0.5);
}

#[test]
fn background_validation() {
    assert!(matches!(
        BackgroundSet::new(vec![]),
        Err(ExplainError::EmptyBackground)
    ));
    let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
    let bg = BackgroundSet::sample(&rows, 4, 5).unwrap();
    assert_eq!(bg.len(), 4);
    let mut seen: Vec<f64> = bg.rows().iter().map(|r| r[0]).collect();
    seen.dedup();
    assert_eq!(seen.len(), 4);
    assert_eq!(BackgroundSet::sample(&rows, 50, 5).unwrap().len(), 10);
    assert_eq!(bg, BackgroundSet::sample(&rows, 4, 5).unwrap());
}
