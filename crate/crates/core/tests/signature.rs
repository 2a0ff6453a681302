mod common;

use mpenssar::path::{augment, augment_without_basepoint, Path};
use mpenssar::signature::{
    path_signature, read_sig_matrix, sig_dim, sig_matrix, signature, truncated_product, with_unit, write_sig_matrix,
    DEFAULT_DIM_CAP,
};
use num_bigint::BigUint;
use proptest::prelude::*;

fn path_strategy(channels: usize) -> impl Strategy<Value = Path> {
    (2usize..8)
        .prop_flat_map(move |len| prop::collection::vec(prop::collection::vec(-2.0f64..2.0, channels), len))
        .prop_map(|rows| Path::from_values(rows).unwrap())
}

fn suffix(p: &Path, from: usize) -> Path {
    Path::new(p.times()[from..].to_vec(), (from..p.len()).map(|i| p.value(i).to_vec()).collect()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn matches_riemann_sums() {
    let mut rng = common::rng(101);
    for _ in 0..10 {
        let p = common::random_path(&mut rng, 2, 4);
        let exact = path_signature(&p, 4, DEFAULT_DIM_CAP).unwrap();
        let approx = common::riemann_signature(&p, 4, 2000);
        assert!(max_abs_diff(exact.coeffs(), &approx) < 1e-6);
    }
}

#[test]
fn level_one_is_the_increment() {
    let p = Path::from_values(vec![vec![1.0, -1.0], vec![0.5, 2.0], vec![3.0, 0.0]]).unwrap();
    let s = path_signature(&p, 3, DEFAULT_DIM_CAP).unwrap();
    assert_eq!(s.level(1), &[2.0, 1.0]);
    // the level-2 symmetric part is half the squared increment
    assert!((s.get(&[1, 1]) - 2.0).abs() < 1e-14);
    assert!((s.get(&[1, 2]) + s.get(&[2, 1]) - 2.0).abs() < 1e-14);
}

#[test]
fn refining_a_segment_changes_nothing() {
    let p = Path::new(vec![0.0, 1.0, 3.0], vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![-1.0, 1.0]]).unwrap();
    let q = Path::new(
        vec![0.0, 0.2, 1.0, 2.5, 3.0],
        vec![vec![0.0, 0.0], vec![0.25, 0.5], vec![1.0, 2.0], vec![-0.5, 1.25], vec![-1.0, 1.0]],
    )
    .unwrap();
    let a = path_signature(&p, 5, DEFAULT_DIM_CAP).unwrap();
    let b = path_signature(&q, 5, DEFAULT_DIM_CAP).unwrap();
    assert!(max_abs_diff(a.coeffs(), b.coeffs()) < 1e-12);
}

#[test]
fn raw_signature_ignores_time_stamps() {
    let values = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![1.5, 0.5], vec![0.0, 0.0]];
    let a = Path::new(vec![0.0, 1.0, 2.0, 3.0], values.clone()).unwrap();
    let b = Path::new(vec![-4.0, 0.1, 0.2, 10.0], values).unwrap();
    let sa = path_signature(&a, 4, DEFAULT_DIM_CAP).unwrap();
    let sb = path_signature(&b, 4, DEFAULT_DIM_CAP).unwrap();
    assert_eq!(sa.coeffs(), sb.coeffs());
}

#[test]
fn dimension_matches_big_integer_sum() {
    for p in 1usize..40 {
        for m in 1usize..70 {
            let mut total = BigUint::from(0u32);
            let mut power = BigUint::from(1u32);
            for _ in 0..m {
                power *= p;
                total += &power;
            }
            let expected = usize::try_from(&total).ok();
            assert_eq!(sig_dim(p, m).ok(), expected, "P = {p}, m = {m}");
        }
    }
    assert!(sig_dim(0, 3).is_err());
    assert!(sig_dim(3, 0).is_err());
}

#[test]
fn dump_round_trips() {
    let mut rng = common::rng(5);
    let paths: Vec<_> = (0..7).map(|_| augment(&common::random_path(&mut rng, 2, 5))).collect();
    let s = sig_matrix(&paths, 3).unwrap();
    let mut buf = Vec::new();
    write_sig_matrix(&mut buf, &s).unwrap();
    assert_eq!(buf.len(), 8 + 8 * s.len());
    assert_eq!(read_sig_matrix(buf.as_slice()).unwrap(), s);
    assert!(read_sig_matrix(&buf[..buf.len() - 3]).is_err());
}

#[test]
fn cap_is_enforced() {
    let p = augment(&Path::from_values(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
    assert!(signature(&p, 8).is_ok());
    assert!(signature(&p, 9).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chen_identity(p in path_strategy(2), cut in 0usize..100) {
        prop_assume!(p.len() >= 3);
        let j = 1 + cut % (p.len() - 2);
        let head = p.truncated(j + 1).unwrap();
        let tail = suffix(&p, j);
        let m = 4;
        let whole = with_unit(&path_signature(&p, m, DEFAULT_DIM_CAP).unwrap()).unwrap();
        let a = with_unit(&path_signature(&head, m, DEFAULT_DIM_CAP).unwrap()).unwrap();
        let b = with_unit(&path_signature(&tail, m, DEFAULT_DIM_CAP).unwrap()).unwrap();
        let prod = truncated_product(&a, &b).unwrap();
        prop_assert!(max_abs_diff(whole.coeffs(), prod.coeffs()) < 1e-10);
    }

    #[test]
    fn norm_is_bounded_by_exp_variation(p in path_strategy(3), m in 1usize..6) {
        let ap = augment(&p);
        let s = signature(&ap, m).unwrap();
        let full = (1.0 + s.norm().powi(2)).sqrt();
        let tv = mpenssar::path::total_variation(&ap.inner);
        prop_assert!(full <= tv.exp() * (1.0 + 1e-12));
    }

    #[test]
    fn translation_invariant_without_basepoint(p in path_strategy(2), dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let a = signature(&augment_without_basepoint(&p), 4).unwrap();
        let b = signature(&augment_without_basepoint(&p.translated(&[dx, dy]).unwrap()), 4).unwrap();
        prop_assert!(max_abs_diff(a.coeffs(), b.coeffs()) < 1e-12 * (1.0 + a.norm()));
    }

    #[test]
    fn truncation_is_a_prefix(p in path_strategy(2)) {
        let s = path_signature(&p, 5, DEFAULT_DIM_CAP).unwrap();
        for m in 1..5 {
            let lower = path_signature(&p, m, DEFAULT_DIM_CAP).unwrap();
            let t = s.truncate(m);
            prop_assert_eq!(t.coeffs(), lower.coeffs());
        }
    }
}
