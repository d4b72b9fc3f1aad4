mod common;

use ndarray::Array2;
use proptest::prelude::*;
use xmodseg::metrics::{dsc, hd95, kl_divergence, theil_sen_growth, IntensityHistogram, LongitudinalSeries, SeriesSource};
use xmodseg::phantom::{Mask, Spacing};

#[test]
fn metrics_match_brute_force_oracles() {
    let summary = common::metric_oracle_suite(100, 7).unwrap();
    println!("{summary}");
}

#[test]
fn shifted_square_hd95_is_exact() {
    let mut a = Mask::zeros((20, 20));
    let mut b = Mask::zeros((20, 20));
    a.slice_mut(ndarray::s![4..14, 4..14]).fill(1);
    b.slice_mut(ndarray::s![4..14, 7..17]).fill(1);
    let sp = Spacing::new(1.0, 1.0).unwrap();
    assert_eq!(hd95(&a, &b, sp).unwrap(), common::oracle_hd95(&a, &b, sp));
}

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = Mask> {
    proptest::collection::vec(any::<bool>(), h * w).prop_map(move |v| {
        let mut m = Array2::from_shape_vec((h, w), v.into_iter().map(u8::from).collect()).unwrap();
        m[(h / 2, w / 2)] = 1;
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dsc_is_symmetric_and_bounded(p in mask_strategy(12, 12), t in mask_strategy(12, 12)) {
        let d = dsc(&p, &t).unwrap();
        prop_assert_eq!(d, dsc(&t, &p).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(dsc(&p, &p).unwrap(), 1.0);
    }

    #[test]
    fn hd95_is_symmetric(p in mask_strategy(10, 14), t in mask_strategy(10, 14), r in 0.5f64..2.0, c in 0.5f64..2.0) {
        let sp = Spacing::new(r, c).unwrap();
        prop_assert_eq!(hd95(&p, &t, sp).unwrap(), hd95(&t, &p, sp).unwrap());
        prop_assert_eq!(hd95(&p, &p, sp).unwrap(), 0.0);
    }

    #[test]
    fn hd95_of_a_translate_is_bounded_by_the_shift(dr in 0usize..4, dc in 0usize..4, r in 0.5f64..2.0, c in 0.5f64..2.0) {
        let mut a = Mask::zeros((24, 24));
        a.slice_mut(ndarray::s![5..12, 6..13]).fill(1);
        a[(12, 9)] = 1;
        let mut b = Mask::zeros((24, 24));
        for ((i, j), &v) in a.indexed_iter() {
            if v != 0 {
                b[(i + dr, j + dc)] = 1;
            }
        }
        let sp = Spacing::new(r, c).unwrap();
        let shift = (dr as f64 * r).hypot(dc as f64 * c);
        prop_assert!(hd95(&a, &b, sp).unwrap() <= shift + 1e-12);
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_identity(
        p in proptest::collection::vec(0u64..50, 64),
        q in proptest::collection::vec(0u64..50, 64),
    ) {
        let mut hp = IntensityHistogram::new(64).unwrap();
        let mut hq = hp.clone();
        hp.counts = p;
        hq.counts = q;
        prop_assert!(kl_divergence(&hp, &hq, 1e-10).unwrap() >= -1e-9);
        prop_assert!(kl_divergence(&hp, &hp, 1e-10).unwrap().abs() <= 1e-9);
        let probs: f64 = hp.probabilities(1e-10).iter().sum();
        prop_assert!((probs - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn theil_sen_ignores_a_minority_of_outliers(
        slope in -5.0f64..5.0,
        bad in proptest::collection::vec((0usize..11, -500.0f64..500.0), 1..3),
    ) {
        let mut pts: Vec<(f64, f64)> = (0..11).map(|w| (w as f64, 20.0 + slope * w as f64)).collect();
        for (i, v) in bad {
            pts[i].1 += v;
        }
        let s = LongitudinalSeries::new("S", SeriesSource::Expert, pts).unwrap();
        let est = theil_sen_growth(&s).unwrap();
        prop_assert!((est - slope).abs() < 1e-9, "estimate {} vs {}", est, slope);
    }
}
