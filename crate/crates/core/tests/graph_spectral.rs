mod common;

use common::{connected_mask, mask_strategy, rng};
use flowmc::graph::{build_graph, connected_components, incidence_matrix, laplacian, vec_omega};
use flowmc::spectral::{pseudo_inverse, SpectralCore, DEFAULT_RANK_TOLERANCE};
use flowmc::DataMatrix;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn rel_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).abs().max() <= tol * (1.0 + b.abs().max())
}

proptest! {
    #[test]
    fn edges_match_mask_and_gram_is_laplacian(mask in mask_strategy(9, 9)) {
        let g = build_graph(&mask);
        prop_assert_eq!(g.edge_count(), mask.len());
        let b = incidence_matrix(&g);
        // Integer entries, so the product is exact.
        prop_assert_eq!(b.transpose() * &b, laplacian(&g));
    }

    #[test]
    fn edge_order_is_vec_order(mask in mask_strategy(7, 7)) {
        let (n, m) = (mask.n_rows(), mask.n_cols());
        let data = DataMatrix::from_fn(n, m, |i, j| (i * m + j) as f64);
        let v = vec_omega(&mask, &data).unwrap();
        let g = build_graph(&mask);
        for (e, &(r, c)) in g.edges().iter().enumerate() {
            prop_assert_eq!(v[e], (r * m + c) as f64);
        }
    }

    #[test]
    fn components_partition(mask in mask_strategy(9, 9)) {
        let g = build_graph(&mask);
        let labels = connected_components(&g);
        prop_assert_eq!(labels.labels().len(), g.vertex_count());
        let members = labels.members();
        prop_assert_eq!(members.iter().map(Vec::len).sum::<usize>(), g.vertex_count());
        for &(r, c) in g.edges() {
            prop_assert!(labels.same(r, g.n_left() + c));
        }
    }

    #[test]
    fn null_space_dimension_is_component_count(mask in mask_strategy(8, 8)) {
        let g = build_graph(&mask);
        let p = pseudo_inverse(&laplacian(&g), DEFAULT_RANK_TOLERANCE).unwrap();
        prop_assert_eq!(p.null_dim, connected_components(&g).count());
    }
}

#[test]
fn penrose_conditions_up_to_two_hundred_vertices() {
    let mut r = rng(11);
    for &(n, m, p) in &[(5, 7, 0.5), (20, 30, 0.2), (60, 40, 0.08), (100, 100, 0.04)] {
        let mask = connected_mask(&mut r, n, m, p);
        let g = build_graph(&mask);
        let l = laplacian(&g);
        let core = SpectralCore::new(&g).unwrap();
        let x = core.full_pinv();
        assert!(rel_close(&(&l * &x * &l), &l, 1e-8));
        assert!(rel_close(&(&x * &l * &x), &x, 1e-8));
        let lx = &l * &x;
        assert!(rel_close(&lx, &lx.transpose(), 1e-8));
        let xl = &x * &l;
        assert!(rel_close(&xl, &xl.transpose(), 1e-8));
    }
}

#[test]
fn pseudoinverse_is_block_diagonal_over_components() {
    let mut r = rng(12);
    for _ in 0..20 {
        let (n, m) = (r.random_range(2..12), r.random_range(2..12));
        let mask = flowmc::ObservationMask::from_fn(n, m, |_, _| r.random_bool(0.15));
        let g = build_graph(&mask);
        let labels = connected_components(&g);
        let core = SpectralCore::new(&g).unwrap();
        let x = core.full_pinv();
        let direct = pseudo_inverse(&laplacian(&g), DEFAULT_RANK_TOLERANCE)
            .unwrap()
            .matrix;
        assert!(rel_close(&x, &direct, 1e-8));
        for a in 0..n + m {
            for b in 0..n + m {
                if !labels.same(a, b) {
                    assert_eq!(x[(a, b)], 0.0);
                }
            }
        }
    }
}
