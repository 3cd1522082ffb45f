use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use riskstrat_core::model::{
    cross_validate, sigmoid, stratified_folds, train, ModelError, Objective, StopReason,
    TrainConfig,
};
use riskstrat_core::synth::{default_replica, generate_cohort, TrueLogit};
use riskstrat_core::ingest::ColumnKind;
use riskstrat_core::{encode, impute_missing, DesignMatrix};

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..p).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

fn logistic_labels(rng: &mut ChaCha8Rng, rows: &[Vec<f64>], w: &[f64], b: f64) -> Vec<u8> {
    rows.iter()
        .map(|r| {
            let z = b + r.iter().zip(w).map(|(x, w)| x * w).sum::<f64>();
            u8::from(rng.random::<f64>() < sigmoid(z))
        })
        .collect()
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = gaussian_rows(&mut rng, 300, 6);
    let labels = logistic_labels(&mut rng, &rows, &[0.5, -1.0, 0.2, 0.0, 0.7, -0.3], 0.1);
    let m = DesignMatrix::from_rows(&rows, labels).unwrap();
    for lambda in [0.0, 1.0, 25.0] {
        let obj = Objective::new(&m, lambda);
        for _ in 0..20 {
            let params: Vec<f64> = (0..obj.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let analytic = obj.gradient(&params);
            let h = 1e-5;
            let numeric: Vec<f64> = (0..obj.dim())
                .map(|j| {
                    let mut up = params.clone();
                    let mut down = params.clone();
                    up[j] += h;
                    down[j] -= h;
                    (obj.loss(&up) - obj.loss(&down)) / (2.0 * h)
                })
                .collect();
            let diff = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / scale < 1e-6, "relative error {}", diff / scale);
        }
    }
}

#[test]
fn recovers_known_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let truth = [0.8, -0.6, 0.3, 0.0, 0.0];
    let rows = gaussian_rows(&mut rng, 5000, truth.len());
    let labels = logistic_labels(&mut rng, &rows, &truth, 0.0);
    let m = DesignMatrix::from_rows(&rows, labels).unwrap();
    let config = TrainConfig {
        l2_lambda: 1e-3,
        ..TrainConfig::default()
    };
    let model = train(&m, &config).unwrap();
    assert_eq!(model.fit_summary().unwrap().stop, StopReason::Converged);
    for (w, t) in model.weights().iter().zip(&truth) {
        assert!((w - t).abs() < 0.1, "{:?}", model.weights());
    }
    for _ in 0..20 {
        let row: Vec<f64> = (0..truth.len()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let p_true = sigmoid(row.iter().zip(&truth).map(|(x, w)| x * w).sum());
        let p = model.predict_proba(&row).unwrap();
        assert!((p - p_true).abs() < 0.05, "{p} vs {p_true}");
    }
}

#[test]
fn random_labels_give_small_weights() {
    let mut config = default_replica().with_n(2000).with_seed(101);
    config.true_logit = TrueLogit {
        intercept: -0.5,
        age_per_sd: 0.0,
        income_per_sd: 0.0,
        ethnicity: [0.0; 4],
        gender: 0.0,
        medical_history: 0.0,
    };
    let synth = generate_cohort(&config).unwrap();
    let m = encode(&impute_missing(&synth.cohort).unwrap()).unwrap();
    let model = train(&m, &TrainConfig::default()).unwrap();
    let n = m.n_rows() as f64;
    let prevalence = m.labels().iter().map(|&y| f64::from(y)).sum::<f64>() / n;
    for (j, (w, col)) in model.weights().iter().zip(m.columns()).enumerate() {
        match col.kind {
            ColumnKind::Standardized => assert!(w.abs() < 0.1, "{}: {w}", col.label()),
            ColumnKind::Indicator(_) => {
                // sparse levels are noisier than 0.1; bound by their own standard error
                let share = m.rows().map(|r| r[j]).sum::<f64>() / n;
                let se = 1.0 / (n * share * (1.0 - share) * prevalence * (1.0 - prevalence)).sqrt();
                assert!(w.abs() < 3.0 * se, "{}: {w} (se {se})", col.label());
            }
        }
    }
}

#[test]
fn loss_never_increases_with_more_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows = gaussian_rows(&mut rng, 400, 4);
    let labels = logistic_labels(&mut rng, &rows, &[1.5, -0.5, 0.0, 2.0], -0.4);
    let m = DesignMatrix::from_rows(&rows, labels).unwrap();
    let obj = Objective::new(&m, 1.0);
    let mut prev = f64::INFINITY;
    for iters in 1..=120 {
        let config = TrainConfig {
            max_iters: iters,
            ..TrainConfig::default()
        };
        let model = train(&m, &config).unwrap();
        let mut params = vec![model.intercept()];
        params.extend_from_slice(model.weights());
        let loss = obj.loss(&params);
        assert!(loss <= prev, "iteration {iters}: {loss} > {prev}");
        prev = loss;
    }
}

#[test]
fn stop_reason_is_recorded() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows = gaussian_rows(&mut rng, 200, 3);
    let labels = logistic_labels(&mut rng, &rows, &[1.0, 1.0, 1.0], 0.0);
    let m = DesignMatrix::from_rows(&rows, labels).unwrap();
    let capped = train(
        &m,
        &TrainConfig {
            max_iters: 2,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let fit = capped.fit_summary().unwrap();
    assert_eq!((fit.iterations, fit.stop), (2, StopReason::MaxIters));
    let full = train(&m, &TrainConfig::default()).unwrap();
    let fit = full.fit_summary().unwrap();
    assert_eq!(fit.stop, StopReason::Converged);
    assert!(fit.gradient_norm < 1e-8);
}

#[test]
fn rejects_degenerate_input() {
    let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
    let m = DesignMatrix::from_rows(&rows, vec![1, 1, 1]).unwrap();
    assert!(matches!(
        train(&m, &TrainConfig::default()),
        Err(ModelError::SingleClass)
    ));
    let m = DesignMatrix::from_rows(&rows[..1], vec![1]).unwrap();
    assert!(matches!(
        train(&m, &TrainConfig::default()),
        Err(ModelError::TooFewRows(1))
    ));
    let m = DesignMatrix::from_rows(&[vec![f64::NAN], vec![1.0]], vec![0, 1]).unwrap();
    assert!(matches!(
        train(&m, &TrainConfig::default()),
        Err(ModelError::NonFinite(_))
    ));
}

#[test]
fn folds_are_stratified() {
    let labels: Vec<u8> = (0..10).map(|i| u8::from(i % 2 == 0)).collect();
    let folds = stratified_folds(&labels, 5, 42).unwrap();
    for k in 0..5 {
        let pos = (0..10).filter(|&i| folds[i] == k && labels[i] == 1).count();
        let neg = (0..10).filter(|&i| folds[i] == k && labels[i] == 0).count();
        assert_eq!((pos, neg), (1, 1));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for folds in 2..=10 {
        let labels: Vec<u8> = (0..537).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
        let assignment = stratified_folds(&labels, folds, 9).unwrap();
        let total_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        for k in 0..folds {
            let pos = (0..labels.len())
                .filter(|&i| assignment[i] == k && labels[i] == 1)
                .count() as f64;
            assert!((pos - total_pos / folds as f64).abs() <= 1.0);
        }
    }
}

#[test]
fn too_few_per_class() {
    let labels = vec![1, 1, 0, 0, 0, 0];
    assert!(matches!(
        stratified_folds(&labels, 3, 1),
        Err(ModelError::TooFewPerClass {
            smallest: 2,
            folds: 3
        })
    ));
}

#[test]
fn cross_validation_covers_every_row_once_and_is_repeatable() {
    let synth = generate_cohort(&default_replica().with_n(600)).unwrap();
    let m = encode(&impute_missing(&synth.cohort).unwrap()).unwrap();
    let config = TrainConfig::default();
    let a = cross_validate(&m, &config).unwrap();
    let b = cross_validate(&m, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.oof_probabilities.len(), 600);
    assert!(a.oof_probabilities.iter().all(|&p| p > 0.0 && p < 1.0));
    assert_eq!(a.folds.iter().map(|f| f.n_test).sum::<usize>(), 600);
    for (k, f) in a.folds.iter().enumerate() {
        assert_eq!(f.fold, k);
        assert_eq!(a.fold_of.iter().filter(|&&x| x == k).count(), f.n_test);
    }
}

#[test]
fn intercept_only_fit_recovers_log_odds() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for p in [0.05, 0.3, 0.5, 0.81] {
        let labels: Vec<u8> = (0..2000).map(|_| u8::from(rng.random::<f64>() < p)).collect();
        let prevalence = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / 2000.0;
        let m = DesignMatrix::from_rows(&vec![Vec::new(); 2000], labels).unwrap();
        let model = train(&m, &TrainConfig::default()).unwrap();
        assert!(model.weights().is_empty());
        let target = (prevalence / (1.0 - prevalence)).ln();
        assert!((model.intercept() - target).abs() < 1e-4, "{} vs {target}", model.intercept());
    }
}
