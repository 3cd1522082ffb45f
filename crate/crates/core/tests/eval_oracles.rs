use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskstrat_core::eval::{
    auc, brier_score, calibration_curve, fit_isotonic, fit_platt, roc_points, EvalError,
    Recalibrator,
};

/// Pairwise count over every positive/negative pair, ties worth one half.
fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Scores drawn from a small grid so that ties are common.
fn tied_input(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    let grid = rng.random_range(2..=20);
    let scores: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0..=grid) as f64 / grid as f64)
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
    labels[0] = 0;
    labels[1] = 1;
    (scores, labels)
}

#[test]
fn auc_matches_pairwise_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let n = rng.random_range(2..=200);
        let (scores, labels) = if case % 2 == 0 {
            tied_input(&mut rng, n)
        } else {
            let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let mut l: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
            l[0] = 1;
            l[n - 1] = 0;
            (s, l)
        };
        let expected = brute_auc(&scores, &labels);
        let got = auc(&scores, &labels).unwrap();
        assert!((got - expected).abs() < 1e-12, "case {case}: {got} vs {expected}");
        let roc = roc_points(&scores, &labels).unwrap();
        assert!((roc.auc - expected).abs() < 1e-12);
        assert!((roc.trapezoid_area() - expected).abs() < 1e-12);
    }
}

#[test]
fn roc_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (scores, labels) = tied_input(&mut rng, 60);
        let roc = roc_points(&scores, &labels).unwrap();
        let first = roc.points.first().unwrap();
        let last = roc.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in roc.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            assert!(w[1].threshold < w[0].threshold);
        }
        let mut distinct = scores.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(roc.points.len(), distinct.len() + 1);
    }
}

#[test]
fn roc_examples() {
    let roc = roc_points(&[0.9, 0.1], &[1, 0]).unwrap();
    let pts: Vec<(f64, f64)> = roc.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    assert_eq!(pts, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    assert_eq!(roc.auc, 1.0);
    let inv = roc_points(&[0.9, 0.1], &[0, 1]).unwrap();
    let pts: Vec<(f64, f64)> = inv.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    assert_eq!(pts, vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]);
    assert_eq!(inv.auc, 0.0);
    assert!(matches!(roc_points(&[0.1, 0.2], &[1, 1]), Err(EvalError::SingleClass)));
}

#[test]
fn calibration_of_calibrated_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<u8> = scores.iter().map(|&s| u8::from(rng.random::<f64>() < s)).collect();
    let curve = calibration_curve(&scores, &labels, 10).unwrap();
    assert_eq!(curve.bins.len(), 10);
    assert_eq!(curve.total_count(), 10_000);
    for b in &curve.bins {
        assert!(
            (b.observed_frequency - b.mean_predicted).abs() < 0.05,
            "{b:?}"
        );
    }
}

#[test]
fn calibration_degenerate_bin() {
    let scores = vec![0.7; 10];
    let labels: Vec<u8> = (0..10).map(|i| u8::from(i < 7)).collect();
    let curve = calibration_curve(&scores, &labels, 10).unwrap();
    assert_eq!(curve.bins.len(), 1);
    let b = &curve.bins[0];
    assert_eq!(b.count, 10);
    assert!((b.mean_predicted - 0.7).abs() < 1e-15);
    assert!((b.observed_frequency - 0.7).abs() < 1e-15);
}

#[test]
fn brier_examples() {
    assert_eq!(brier_score(&[1.0, 0.0], &[1, 0]).unwrap(), 0.0);
    assert_eq!(brier_score(&[0.5; 4], &[1, 0, 1, 0]).unwrap(), 0.25);
    assert!((brier_score(&[0.8, 0.4], &[1, 0]).unwrap() - 0.10).abs() < 1e-15);
}

#[test]
fn platt_recovers_identity_on_calibrated_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.01..0.99)).collect();
    let labels: Vec<u8> = scores.iter().map(|&s| u8::from(rng.random::<f64>() < s)).collect();
    let Recalibrator::Platt { a, b } = fit_platt(&scores, &labels).unwrap() else {
        panic!("expected platt");
    };
    assert!((a - 1.0).abs() < 0.1, "a = {a}");
    assert!(b.abs() < 0.1, "b = {b}");
}

#[test]
fn platt_constant_scores_recover_prevalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels: Vec<u8> = (0..5000).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
    let prevalence = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / 5000.0;
    let cal = fit_platt(&vec![0.5; 5000], &labels).unwrap();
    assert!((cal.apply(0.5) - prevalence).abs() < 0.02);
}

#[test]
fn monotone_recalibration_keeps_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scores: Vec<f64> = (0..2000).map(|_| rng.random_range(0.05..0.95)).collect();
    let labels: Vec<u8> = scores
        .iter()
        .map(|&s| u8::from(rng.random::<f64>() < (s * s)))
        .collect();
    let cal = fit_platt(&scores, &labels).unwrap();
    let Recalibrator::Platt { a, .. } = cal else { unreachable!() };
    assert!(a > 0.0);
    let before = auc(&scores, &labels).unwrap();
    let after = auc(&cal.apply_all(&scores), &labels).unwrap();
    assert!((before - after).abs() < 1e-12);
}

/// Minimum weighted squared error over every monotone partition of the
/// tie-pooled levels into contiguous blocks.
fn brute_isotonic(levels: &[(f64, f64)]) -> Vec<f64> {
    let k = levels.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cuts in 0u32..(1 << (k - 1)) {
        let mut fit = Vec::with_capacity(k);
        let mut start = 0;
        for end in 1..=k {
            if end == k || cuts >> (end - 1) & 1 == 1 {
                let (s, w) = levels[start..end]
                    .iter()
                    .fold((0.0, 0.0), |(s, w), &(v, wt)| (s + v * wt, w + wt));
                fit.extend(std::iter::repeat_n(s / w, end - start));
                start = end;
            }
        }
        if fit.windows(2).any(|p| p[0] > p[1] + 1e-15) {
            continue;
        }
        let sse: f64 = fit
            .iter()
            .zip(levels)
            .map(|(f, &(v, w))| w * (f - v) * (f - v))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| sse < b - 1e-15) {
            best = Some((sse, fit));
        }
    }
    best.unwrap().1
}

fn pooled_levels(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<(f64, f64)>) {
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut keys: Vec<f64> = Vec::new();
    let mut acc: Vec<(f64, f64)> = Vec::new();
    for (s, y) in pairs {
        if keys.last() == Some(&s) {
            let last = acc.last_mut().unwrap();
            last.0 += f64::from(y);
            last.1 += 1.0;
        } else {
            keys.push(s);
            acc.push((f64::from(y), 1.0));
        }
    }
    let levels = acc.iter().map(|&(s, w)| (s / w, w)).collect();
    (keys, levels)
}

#[test]
fn isotonic_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..300 {
        let n = rng.random_range(2..=12);
        let (scores, labels) = tied_input(&mut rng, n);
        let (keys, levels) = pooled_levels(&scores, &labels);
        let expected = brute_isotonic(&levels);
        let cal = fit_isotonic(&scores, &labels).unwrap();
        for (key, want) in keys.iter().zip(&expected) {
            assert!((cal.apply(*key) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn isotonic_kkt_at_n100() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..20 {
        let (scores, labels) = tied_input(&mut rng, 100);
        let cal = fit_isotonic(&scores, &labels).unwrap();
        let (keys, levels) = pooled_levels(&scores, &labels);
        let fitted: Vec<f64> = keys.iter().map(|&k| cal.apply(k)).collect();
        assert!(fitted.windows(2).all(|w| w[0] <= w[1]));
        // each maximal constant run is the weighted mean of its labels
        let mut start = 0;
        while start < fitted.len() {
            let mut end = start + 1;
            while end < fitted.len() && fitted[end] == fitted[start] {
                end += 1;
            }
            let (s, w) = levels[start..end]
                .iter()
                .fold((0.0, 0.0), |(s, w), &(v, wt)| (s + v * wt, w + wt));
            assert!((fitted[start] - s / w).abs() < 1e-12);
            start = end;
        }
        let before = brier_score(&scores, &labels).unwrap();
        let after = brier_score(&cal.apply_all(&scores), &labels).unwrap();
        assert!(after <= before + 1e-15);
    }
}

#[test]
fn isotonic_examples() {
    let cal = fit_isotonic(&[0.2, 0.8], &[1, 0]).unwrap();
    assert_eq!(cal.apply_all(&[0.2, 0.8]), vec![0.5, 0.5]);
    let scores = [0.1, 0.1, 0.4, 0.4, 0.9];
    let labels = [0, 1, 0, 1, 1];
    let cal = fit_isotonic(&scores, &labels).unwrap();
    assert_eq!(cal.apply_all(&scores), vec![0.5, 0.5, 0.5, 0.5, 1.0]);
}
