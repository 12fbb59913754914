mod common;

use common::{connected_mask, mask_data_pair, mean_and_se, rng};
use flowmc::additive::{
    additive_kl_divergence, hard_instance_additive, minimax_lower_bound, path_estimate_additive,
    unit_flow_estimate, verify_equivalence, AdditiveModel, ElectricalFlowEstimator,
};
use flowmc::electrical::{
    effective_resistance, electrical_flow, verify_unit_flow, UnitFlow, FLOW_TOLERANCE,
};
use flowmc::graph::{build_graph, incidence_matrix};
use flowmc::maxflow::max_disjoint_paths;
use flowmc::{DataMatrix, Error, Vertex};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn additive_truth(r: &mut impl Rng, n: usize, m: usize) -> AdditiveModel {
    AdditiveModel::new(
        DVector::from_fn(n, |_, _| r.random_range(-3.0..3.0)),
        DVector::from_fn(m, |_, _| r.random_range(-3.0..3.0)),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn efe_matches_least_squares((mask, data, _i, _j) in mask_data_pair(12, 12)) {
        prop_assert!(verify_equivalence(&mask, &data, 1e-8));
    }

    #[test]
    fn unidentifiable_exactly_when_resistance_infinite((mask, data, _i, _j) in mask_data_pair(8, 8)) {
        let est = ElectricalFlowEstimator::new(&mask).unwrap();
        let report = est.report(&data, None, None).unwrap();
        for (i, j, r) in report.resistance.iter() {
            prop_assert_eq!(report.estimates[(i, j)].is_none(), !r.is_finite());
            prop_assert_eq!(report.identifiable[(i, j)], r.is_finite());
        }
    }

    #[test]
    fn shift_leaves_model_and_estimates_unchanged(
        (mask, _data, _i, _j) in mask_data_pair(8, 8),
        c in -50.0..50.0f64,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let model = additive_truth(&mut r, mask.n_rows(), mask.n_cols());
        let shifted = model.shifted(c);
        let (x, y) = (model.matrix(), shifted.matrix());
        prop_assert!((&x - &y).abs().max() < 1e-12);
        let est = ElectricalFlowEstimator::new(&mask).unwrap();
        let (ex, ey) = (est.estimate(&x).unwrap(), est.estimate(&y).unwrap());
        for (i, j, v) in ex.iter() {
            match (v, ey[(i, j)]) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (None, None) => {}
                _ => prop_assert!(false, "identifiability changed under a shift"),
            }
        }
    }

    #[test]
    fn noiseless_recovery_on_identifiable_entries((mask, _data, _i, _j) in mask_data_pair(10, 10), seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = additive_truth(&mut r, mask.n_rows(), mask.n_cols());
        let est = ElectricalFlowEstimator::new(&mask).unwrap().estimate(&model.matrix()).unwrap();
        for (i, j, v) in est.iter() {
            if let Some(v) = v {
                prop_assert!((v - model.entry(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn every_disjoint_path_is_an_unbiased_single_path_estimate((mask, _data, i, j) in mask_data_pair(8, 8), seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = additive_truth(&mut r, mask.n_rows(), mask.n_cols());
        let truth = model.matrix();
        for p in max_disjoint_paths(&build_graph(&mask), i, j).paths {
            let v = path_estimate_additive(&p, &truth, &mask).unwrap();
            prop_assert!((v - model.entry(i, j)).abs() < 1e-9);
        }
    }
}

#[test]
fn path_estimate_rejects_invalid_paths() {
    let mask = flowmc::ObservationMask::from_pairs(2, 2, [(0, 0), (1, 0), (1, 1)]).unwrap();
    let data = DataMatrix::from_element(2, 2, 1.0);
    let bad: [&[Vertex]; 4] = [
        &[Vertex::Row(0), Vertex::Col(1)],
        &[Vertex::Col(0), Vertex::Row(0)],
        &[
            Vertex::Row(0),
            Vertex::Col(0),
            Vertex::Row(0),
            Vertex::Col(0),
        ],
        &[],
    ];
    for p in bad {
        assert!(
            matches!(
                path_estimate_additive(p, &data, &mask),
                Err(Error::InvalidPath(_))
            ),
            "{p:?}"
        );
    }
    let good = [
        Vertex::Row(0),
        Vertex::Col(0),
        Vertex::Row(1),
        Vertex::Col(1),
    ];
    assert_eq!(path_estimate_additive(&good, &data, &mask).unwrap(), 1.0);
}

/// A unit flow off the electrical one.
fn skewed_flow(r: &mut impl Rng, mask: &flowmc::ObservationMask, i: usize, j: usize) -> UnitFlow {
    let g = build_graph(mask);
    let est = ElectricalFlowEstimator::new(mask).unwrap();
    let e = electrical_flow(&g, est.core(), i, j).unwrap();
    let b = incidence_matrix(&g);
    let pinv = est.core().full_pinv();
    let z = DVector::from_fn(b.nrows(), |_, _| r.random_range(-0.5..0.5));
    let circ = &z - &b * (&pinv * (b.transpose() * &z));
    let f = UnitFlow {
        values: &e.values + circ,
        source: i,
        sink: j,
    };
    assert!(verify_unit_flow(&f, &g, i, j, FLOW_TOLERANCE));
    f
}

type NoiseLaw = Box<dyn Fn(&mut rand_chacha::ChaCha8Rng) -> f64>;

#[test]
fn unit_flow_estimates_are_unbiased_under_several_noise_laws() {
    let mut r = rng(31);
    let mask = connected_mask(&mut r, 6, 7, 0.4);
    let g = build_graph(&mask);
    let model = additive_truth(&mut r, 6, 7);
    let truth = model.matrix();
    let (i, j) = (2, 5);
    let flows = [
        skewed_flow(&mut r, &mask, i, j),
        skewed_flow(&mut r, &mask, i, j),
    ];
    let normal = Normal::new(0.0, 0.5).unwrap();
    let laws: [(&str, NoiseLaw); 3] = [
        ("gaussian", Box::new(move |r| normal.sample(r))),
        (
            "rademacher",
            Box::new(|r| if r.random_bool(0.5) { 1.0 } else { -1.0 }),
        ),
        ("uniform", Box::new(|r| r.random_range(-1.0..1.0))),
    ];
    for (name, draw) in &laws {
        for f in &flows {
            let samples: Vec<f64> = (0..10_000)
                .map(|_| {
                    let mut y = truth.clone();
                    for (k, l) in mask.iter() {
                        y[(k, l)] += draw(&mut r);
                    }
                    unit_flow_estimate(f, &g, &y).unwrap()
                })
                .collect();
            let (mean, se) = mean_and_se(&samples);
            assert!(
                (mean - model.entry(i, j)).abs() < 4.0 * se,
                "{name}: mean {mean} vs {}",
                model.entry(i, j)
            );
        }
    }
}

#[test]
fn lower_bound_sits_below_observed_error() {
    let mut r = rng(32);
    let mask = connected_mask(&mut r, 8, 8, 0.3);
    let est = ElectricalFlowEstimator::new(&mask).unwrap();
    let model = additive_truth(&mut r, 8, 8);
    let truth = model.matrix();
    let sigma = 0.3;
    let normal = Normal::new(0.0, sigma).unwrap();
    let trials = 2000;
    let mut sq = DataMatrix::zeros(8, 8);
    for _ in 0..trials {
        let mut y = truth.clone();
        for (k, l) in mask.iter() {
            y[(k, l)] += normal.sample(&mut r);
        }
        for (k, l, v) in est.estimate(&y).unwrap().iter() {
            sq[(k, l)] += (v.unwrap() - truth[(k, l)]).powi(2);
        }
    }
    for (k, l, res) in est.resistances().iter() {
        let mse = sq[(k, l)] / trials as f64;
        assert!(minimax_lower_bound(sigma, res.as_f64()) <= mse);
    }
}

#[test]
fn hard_instance_divergence_is_half_eps_squared_resistance_over_sigma_squared() {
    let mut r = rng(33);
    for _ in 0..20 {
        let mask = connected_mask(&mut r, 5, 6, 0.4);
        let est = ElectricalFlowEstimator::new(&mask).unwrap();
        let base = additive_truth(&mut r, 5, 6);
        let (i, j, eps, sigma) = (r.random_range(0..5), r.random_range(0..6), 0.3, 0.7);
        let z = hard_instance_additive(&base, est.core(), i, j, eps).unwrap();
        let res = effective_resistance(est.core(), i, j).as_f64();
        let kl = additive_kl_divergence(&mask, &base, &z, sigma);
        assert!((kl - eps * eps * res / (2.0 * sigma * sigma)).abs() < 1e-9);
    }
}
