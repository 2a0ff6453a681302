mod common;

use mpenssar::path::{augment, interpolate_missing, total_variation, Path};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Values linear in time between the kept stamps are recovered exactly.
    #[test]
    fn interpolation_recovers_masked_linear_segments(
        knots in prop::collection::vec(-3.0f64..3.0, 3..6),
        gaps in prop::collection::vec(0.1f64..1.0, 20),
        mask in prop::collection::vec(any::<bool>(), 20),
    ) {
        let segs = knots.len() - 1;
        let per = 4;
        let len = segs * per + 1;
        let times: Vec<f64> = std::iter::once(0.0)
            .chain(gaps.iter().cycle().take(len - 1).scan(0.0, |t, g| { *t += g; Some(*t) }))
            .collect();
        let truth: Vec<f64> = (0..len)
            .map(|i| {
                let s = (i / per).min(segs - 1);
                let (t0, t1) = (times[s * per], times[(s + 1) * per]);
                let w = (times[i] - t0) / (t1 - t0);
                knots[s] + w * (knots[s + 1] - knots[s])
            })
            .collect();
        let raw: Vec<(f64, Vec<Option<f64>>)> = (0..len)
            .map(|i| {
                let keep = i % per == 0 || mask[i % mask.len()];
                (times[i], vec![keep.then_some(truth[i]), Some(1.0)])
            })
            .collect();
        let p = interpolate_missing(&raw).unwrap();
        for (i, t) in truth.iter().enumerate() {
            prop_assert!((p.value(i)[0] - t).abs() < 1e-12);
        }
    }

    #[test]
    fn augmented_variation_is_bounded(seed in any::<u64>(), channels in 1usize..4) {
        let mut rng = common::rng(seed);
        let p = common::random_path(&mut rng, channels, 6);
        let ap = augment(&p);
        let start = p.value(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(total_variation(&ap.inner) <= start + total_variation(&p) + 1.0 + 1e-12);
    }
}

#[test]
fn flat_extension_outside_observed_range() {
    let raw = vec![
        (0.0, vec![None]),
        (1.0, vec![Some(2.0)]),
        (2.0, vec![None]),
        (3.0, vec![Some(4.0)]),
        (4.0, vec![None]),
    ];
    let p = interpolate_missing(&raw).unwrap();
    let got: Vec<f64> = p.rows().map(|r| r[0]).collect();
    assert_eq!(got, vec![2.0, 2.0, 3.0, 4.0, 4.0]);
}

#[test]
fn rejects_bad_inputs() {
    assert!(Path::new(vec![0.0], vec![vec![1.0]]).is_err());
    assert!(Path::new(vec![0.0, 0.0], vec![vec![1.0], vec![2.0]]).is_err());
    assert!(Path::new(vec![0.0, 1.0], vec![vec![1.0], vec![f64::NAN]]).is_err());
    assert!(interpolate_missing(&[(0.0, vec![Some(1.0)]), (1.0, vec![None])]).is_err());
}

#[test]
fn augmentation_shape() {
    let p = Path::new(vec![2.0, 3.0, 5.0], vec![vec![1.0], vec![2.0], vec![0.0]]).unwrap();
    let ap = augment(&p);
    assert_eq!(ap.inner.len(), 4);
    assert_eq!(ap.inner.times()[0], 1.0);
    let time_channel: Vec<f64> = ap.inner.rows().map(|r| r[1]).collect();
    assert_eq!(time_channel, vec![0.0, 0.25, 0.5, 1.0]);
    assert_eq!(ap.inner.value(0), &[0.0, 0.0]);
}
