use ideolens_core::report::fmt6;
use ideolens_core::scorer::{log_sum_exp, normalize};
use ideolens_core::stats::{bonferroni_adjust, paired_t_test, squeeze_unit_interval, Tails};
use proptest::prelude::*;

fn labelled(v: &[f64]) -> Vec<(String, f64)> {
    v.iter()
        .enumerate()
        .map(|(i, x)| (format!("v{i}"), *x))
        .collect()
}

proptest! {
    #[test]
    fn shares_sum_to_one(lps in prop::collection::vec(-200.0f64..0.0, 2..6)) {
        let (linear, logs) = normalize(&labelled(&lps));
        let s: f64 = linear.values().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        for (k, l) in &logs {
            prop_assert!((l.exp() - linear[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn shares_ignore_a_common_offset(lps in prop::collection::vec(-50.0f64..0.0, 2..5), shift in -500.0f64..500.0) {
        let shifted: Vec<f64> = lps.iter().map(|v| v + shift).collect();
        let (a, _) = normalize(&labelled(&lps));
        let (b, _) = normalize(&labelled(&shifted));
        for (k, v) in &a {
            prop_assert!((v - b[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn log_sum_exp_brackets_the_max(v in prop::collection::vec(-1e3f64..1e3, 1..8)) {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = log_sum_exp(&v);
        prop_assert!(l >= m - 1e-12);
        prop_assert!(l <= m + (v.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn bonferroni_is_a_capped_monotone_scaling(p in 0.0f64..=1.0, q in 0.0f64..=1.0, m in 1usize..50) {
        let a = bonferroni_adjust(p, m);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(a >= p);
        prop_assert_eq!(a, (p * m as f64).min(1.0));
        if p <= q {
            prop_assert!(a <= bonferroni_adjust(q, m));
        }
    }

    #[test]
    fn swapping_pairs_negates_t(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..30)) {
        let swapped: Vec<(f64, f64)> = pairs.iter().map(|(a, b)| (*b, *a)).collect();
        if let (Ok(x), Ok(y)) = (paired_t_test(&pairs, Tails::Two), paired_t_test(&swapped, Tails::Two)) {
            prop_assert!((x.t_statistic + y.t_statistic).abs() < 1e-9 * x.t_statistic.abs().max(1.0));
            prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x.p_value));
        }
    }

    #[test]
    fn squeeze_lands_strictly_inside(y in prop::collection::vec(0.0f64..=1.0, 2..100)) {
        let s = squeeze_unit_interval(&y).unwrap();
        prop_assert!(s.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn fmt6_keeps_six_significant_digits(x in -1e6f64..1e6) {
        prop_assume!(x.abs() > 1e-4);
        let back: f64 = fmt6(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-6 * x.abs());
    }
}
