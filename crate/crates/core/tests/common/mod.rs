#![allow(dead_code)]

use flowmc::graph::{build_graph, connected_components};
use flowmc::{DataMatrix, ObservationMask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Arbitrary mask up to `max_n × max_m`, possibly disconnected.
pub fn mask_strategy(max_n: usize, max_m: usize) -> impl Strategy<Value = ObservationMask> {
    (1..=max_n, 1..=max_m).prop_flat_map(|(n, m)| {
        proptest::collection::vec(proptest::bool::weighted(0.45), n * m)
            .prop_map(move |bits| ObservationMask::from_fn(n, m, |i, j| bits[i * m + j]))
    })
}

/// Mask with data and one target pair.
pub fn mask_data_pair(
    max_n: usize,
    max_m: usize,
) -> impl Strategy<Value = (ObservationMask, DataMatrix, usize, usize)> {
    mask_strategy(max_n, max_m).prop_flat_map(|mask| {
        let (n, m) = (mask.n_rows(), mask.n_cols());
        (
            Just(mask),
            proptest::collection::vec(-10.0..10.0f64, n * m),
            0..n,
            0..m,
        )
            .prop_map(move |(mask, vals, i, j)| {
                (mask, DataMatrix::from_row_slice(n, m, &vals), i, j)
            })
    })
}

/// Bernoulli mask with bridging edges added until it is connected.
pub fn connected_mask(rng: &mut ChaCha8Rng, n: usize, m: usize, p: f64) -> ObservationMask {
    let mut mask = ObservationMask::from_fn(n, m, |_, _| rng.random_bool(p));
    loop {
        let labels = connected_components(&build_graph(&mask));
        if labels.count() == 1 {
            return mask;
        }
        let outside: Vec<usize> = (0..n + m).filter(|&v| !labels.same(0, v)).collect();
        let v = outside[rng.random_range(0..outside.len())];
        let anchor_cols: Vec<usize> = (0..m).filter(|&c| labels.same(0, n + c)).collect();
        if v >= n {
            mask.insert(0, v - n).unwrap();
        } else if anchor_cols.is_empty() {
            mask.insert(v, rng.random_range(0..m)).unwrap();
            mask.insert(0, rng.random_range(0..m)).unwrap();
        } else {
            mask.insert(v, anchor_cols[rng.random_range(0..anchor_cols.len())])
                .unwrap();
        }
    }
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
