mod common;

use common::{mask_strategy, rng};
use flowmc::rank1::{path_alpha_beta, rank1_error_bound, rank1_full, PathEstimator, RankOneModel};
use flowmc::sim::extreme_sparsity;
use flowmc::stats::pearson;
use flowmc::DataMatrix;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn noisy(
    r: &mut impl Rng,
    mask: &flowmc::ObservationMask,
    truth: &DataMatrix,
    sigma: f64,
) -> DataMatrix {
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut y = DataMatrix::from_element(truth.nrows(), truth.ncols(), f64::NAN);
    for (i, j) in mask.iter() {
        y[(i, j)] = truth[(i, j)] + normal.sample(r);
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn noiseless_recovery(mask in mask_strategy(9, 9), seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, m) = (mask.n_rows(), mask.n_cols());
        let model = RankOneModel::new(
            DVector::from_fn(n, |_, _| r.random_range(1.0..10.0)),
            DVector::from_fn(m, |_, _| r.random_range(1.0..10.0)),
        );
        prop_assert!(model.bounded_below_by_one());
        let report = rank1_full(&mask, &model.matrix(), None).unwrap();
        for (i, j, v) in report.estimates.iter() {
            prop_assert_eq!(v.is_some(), report.k[(i, j)] > 0);
            if let Some(v) = v {
                prop_assert!((v - model.entry(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sign_flip_leaves_model_and_estimates_unchanged(mask in mask_strategy(7, 7), seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, m) = (mask.n_rows(), mask.n_cols());
        let a = RankOneModel::new(
            DVector::from_fn(n, |_, _| r.random_range(1.0..5.0)),
            DVector::from_fn(m, |_, _| r.random_range(1.0..5.0)),
        );
        let flipped = RankOneModel::new(-a.row_factors.clone(), -a.col_factors.clone());
        prop_assert_eq!(a.matrix(), flipped.matrix());
        let noise_seed = r.random::<u64>();
        let ya = noisy(&mut rng(noise_seed), &mask, &a.matrix(), 0.1);
        let yb = noisy(&mut rng(noise_seed), &mask, &flipped.matrix(), 0.1);
        let est = PathEstimator::new(&mask);
        prop_assert_eq!(est.report(&ya, None).unwrap().estimates, est.report(&yb, None).unwrap().estimates);
    }
}

#[test]
fn denominator_stays_away_from_zero_with_many_paths() {
    let mut r = rng(41);
    let n = 33;
    let mask = extreme_sparsity(n);
    let truth = RankOneModel::new(
        DVector::from_fn(n, |_, _| r.random_range(1.0..3.0)),
        DVector::from_fn(n, |_, _| r.random_range(1.0..3.0)),
    )
    .matrix();
    let est = PathEstimator::new(&mask);
    let paths = est.path_set(0, 0).unwrap().clone();
    assert!(paths.k >= 30);
    let delta = 0.05;
    let trials = 2000;
    let mut low = 0;
    for _ in 0..trials {
        let y = noisy(&mut r, &mask, &truth, 0.1);
        let den: f64 = paths
            .paths
            .iter()
            .map(|p| path_alpha_beta(p, &y, &mask).unwrap().beta.powi(2))
            .sum::<f64>()
            / paths.k as f64;
        if den <= 0.5 {
            low += 1;
        }
    }
    assert!((low as f64) / (trials as f64) <= delta);
}

#[test]
fn disjoint_path_statistics_are_uncorrelated() {
    let mut r = rng(42);
    let mask = extreme_sparsity(8);
    let truth = DataMatrix::from_element(8, 8, 1.0);
    let paths = PathEstimator::new(&mask).path_set(0, 0).unwrap().clone();
    let trials = 10_000;
    let mut stats = vec![Vec::new(); paths.k];
    for _ in 0..trials {
        let y = noisy(&mut r, &mask, &truth, 0.1);
        for (k, p) in paths.paths.iter().enumerate() {
            let s = path_alpha_beta(p, &y, &mask).unwrap();
            stats[k].push(s.alpha * s.beta);
        }
    }
    for a in 0..paths.k {
        for b in a + 1..paths.k {
            let rho = pearson(&stats[a], &stats[b]);
            assert!(rho.abs() < 0.05, "paths {a},{b}: rho {rho}");
        }
    }
}

#[test]
fn mse_scales_as_one_over_k() {
    let mut r = rng(43);
    let sigma = 0.05;
    let mut scaled = Vec::new();
    for n in [9, 17, 33] {
        let mask = extreme_sparsity(n);
        let truth = DataMatrix::from_element(n, n, 1.0);
        let est = PathEstimator::new(&mask);
        let k = est.path_set(0, 0).unwrap().k;
        let trials = 2000;
        let mse = (0..trials)
            .map(|_| {
                (est.entry(&noisy(&mut r, &mask, &truth, sigma), 0, 0)
                    .unwrap()
                    - 1.0)
                    .powi(2)
            })
            .sum::<f64>()
            / trials as f64;
        // Never beats the single-observation floor σ²/K.
        assert!(mse * k as f64 >= sigma * sigma, "n = {n}");
        scaled.push(mse * k as f64);
        // The bound is finite and shrinks with K.
        let b = rank1_error_bound(k, 3, sigma, 1.0, n, n, 0.05, 1.0).unwrap();
        let b2 = rank1_error_bound(2 * k, 3, sigma, 1.0, n, n, 0.05, 1.0).unwrap();
        assert!(b.is_finite() && b2 < b);
    }
    let (lo, hi) = scaled
        .iter()
        .fold((f64::MAX, 0f64), |(l, h), &x| (l.min(x), h.max(x)));
    assert!(hi / lo < 1.5, "MSE·K not flat: {scaled:?}");
}
