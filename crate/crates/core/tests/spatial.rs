mod common;

use mpenssar::spatial::{
    inverse_distance_weights, knn_weights, split_ordinary, split_spatial, WeightSpec, DEFAULT_SPLIT_FRACTIONS,
};
use proptest::prelude::*;

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[test]
fn knn_matches_brute_force() {
    let mut rng = common::rng(3);
    for &(n, k) in &[(10, 1), (25, 4), (40, 8)] {
        let coords = common::random_coords(&mut rng, n);
        let w = knn_weights(&coords, k, false).unwrap();
        for i in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist(&coords[i], &coords[a]).total_cmp(&dist(&coords[i], &coords[b])));
            let mut expected = others[..k].to_vec();
            expected.sort_unstable();
            let got: Vec<usize> = w.row(i).iter().map(|(j, _)| *j).collect();
            assert_eq!(got, expected, "row {i}");
            assert!(w.row(i).iter().all(|(_, v)| *v == 1.0));
        }
        let wn = knn_weights(&coords, k, true).unwrap();
        assert!(wn.check_invariants());
        for i in 0..n {
            let s: f64 = wn.row(i).iter().map(|(_, v)| v).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }
}

#[test]
fn knn_rejects_degenerate_requests() {
    let coords = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    assert!(knn_weights(&coords, 0, true).is_err());
    assert!(knn_weights(&coords, 3, true).is_err());
    assert!(knn_weights(&[[0.0, f64::NAN], [1.0, 0.0], [0.0, 1.0]], 1, true).is_err());
    // coincident units are neighbours at distance zero; ties go to the lower index
    let w = knn_weights(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]], 1, true).unwrap();
    assert_eq!(w.row(0), &[(1, 1.0)]);
    assert_eq!(w.row(2), &[(0, 1.0)]);
}

#[test]
fn inverse_distance_weights_decrease_with_distance() {
    let mut rng = common::rng(8);
    let coords = common::random_coords(&mut rng, 50);
    let w = inverse_distance_weights(&coords, 3, false).unwrap();
    for i in 0..50 {
        let row = w.row(i);
        assert!(row.len() >= 3);
        for &(j, v) in row {
            assert_ne!(i, j);
            assert!((v - 1.0 / (1.0 + dist(&coords[i], &coords[j]))).abs() < 1e-15);
        }
        let mut by_dist: Vec<(f64, f64)> = row.iter().map(|&(j, v)| (dist(&coords[i], &coords[j]), v)).collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(by_dist.windows(2).all(|p| p[0].1 >= p[1].1));
    }
}

#[test]
fn subset_weights_use_only_the_subset() {
    let coords: Vec<[f64; 2]> = (0..12).map(|i| [i as f64, 0.0]).collect();
    let spec = WeightSpec::Knn { k: 1, normalize: true };
    let w = spec.build_subset(&coords, &[0, 5, 6, 11]).unwrap();
    assert_eq!(w.n(), 4);
    assert_eq!(w.row(0), &[(1, 1.0)]);
    assert_eq!(w.row(3), &[(2, 1.0)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ordinary_split_is_a_partition(n in 8usize..300, seed in any::<u64>()) {
        let s = split_ordinary(n, DEFAULT_SPLIT_FRACTIONS, seed).unwrap();
        prop_assert!(s.is_partition(n));
        prop_assert_eq!(s.validation.len(), (n as f64 * 0.25).round() as usize);
        prop_assert_eq!(s.test.len(), (n as f64 * 0.25).round() as usize);
        prop_assert_eq!(s, split_ordinary(n, DEFAULT_SPLIT_FRACTIONS, seed).unwrap());
    }

    #[test]
    fn spatial_split_is_a_partition(seed in any::<u64>(), n in 30usize..120) {
        let mut rng = common::rng(seed);
        let coords = common::random_coords(&mut rng, n);
        let s = split_spatial(&coords, 6, seed).unwrap();
        prop_assert!(s.is_partition(n));
    }

    #[test]
    fn knn_rows_have_k_entries(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = common::rng(seed);
        let coords = common::random_coords(&mut rng, 20);
        let w = knn_weights(&coords, k, true).unwrap();
        prop_assert!((0..20).all(|i| w.row(i).len() == k));
        prop_assert_eq!(w.max_neighbors(), k);
    }
}
