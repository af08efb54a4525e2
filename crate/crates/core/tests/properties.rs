use approx::assert_abs_diff_eq;
use gaussdesign::covmap::{discretize, f_arm, f_cross, quantile_thresholds};
use gaussdesign::elliptope::{validate, CorrelationFactor};
use gaussdesign::estimators::{ht_contrast_slices, ExperimentRecord};
use gaussdesign::hermite::{hermite_coeffs, mehler_series, ScalarFunction};
use gaussdesign::inference::randomization_ci_discrete;
use gaussdesign::optimizer::pgd_step;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(n: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * m).prop_map(move |v| DMatrix::from_row_slice(n, m, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arm_maps_are_bounded_and_monotone_on_positive_rho(
        arms in 2usize..7,
        k_seed in 0usize..64,
        a in -1.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        // Nonnegative series coefficients: monotone on [0, 1] only.
        let k = 1 + k_seed % arms;
        let f = f_arm(arms, k).unwrap();
        let kk = arms as f64;
        prop_assert!(f.eval(a) <= (kk - 1.0) / (kk * kk) + 1e-12);
        prop_assert!(f.eval(a) >= -1.0 / (kk * kk) - 1e-12);
        let (lo, hi) = if a.abs() <= b { (a.abs(), b) } else { (b, a.abs()) };
        prop_assert!(f.eval(lo) <= f.eval(hi) + 1e-12);
        prop_assert!(f.deriv(b) >= -1e-12);
    }

    #[test]
    fn arm_indicator_covariances_sum_to_zero(arms in 2usize..6, k_seed in 0usize..64, rho in -0.999f64..0.999) {
        // Σ_l 1{D_j = l} = 1, so the covariances with unit j's indicators sum to 0.
        let k = 1 + k_seed % arms;
        let total: f64 = (1..=arms)
            .map(|l| if l == k { f_arm(arms, k).unwrap().eval(rho) } else { f_cross(arms, k, l).unwrap().eval(rho) })
            .sum();
        prop_assert!(total.abs() < 1e-9);
    }

    #[test]
    fn cross_maps_are_symmetric(arms in 3usize..6, k in 1usize..4, l in 1usize..4, rho in -0.99f64..0.99) {
        prop_assume!(k != l && k <= arms && l <= arms);
        let a = f_cross(arms, k, l).unwrap().eval(rho);
        let b = f_cross(arms, l, k).unwrap().eval(rho);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn discretization_is_monotone(arms in 2usize..10, s in -4.0f64..4.0, t in -4.0f64..4.0) {
        let q = quantile_thresholds(arms).unwrap();
        let (ds, dt) = (discretize(s, &q).unwrap(), discretize(t, &q).unwrap());
        prop_assert!((1..=arms).contains(&ds));
        if s <= t {
            prop_assert!(ds <= dt);
        }
    }

    #[test]
    fn projected_step_keeps_unit_rows(v in matrix(5, 3), g in matrix(5, 5), eta in 0.0f64..2.0) {
        prop_assume!(v.row_iter().all(|r| r.norm() > 1e-3));
        let f = CorrelationFactor::normalized(v);
        let g = (&g + g.transpose()) * 0.5;
        let out = pgd_step(&f, &g, eta);
        for row in out.factor.matrix().row_iter() {
            prop_assert!((row.norm() - 1.0).abs() < 1e-12);
        }
        prop_assert!(validate(&out.factor.gram()).unwrap().passes);
    }

    #[test]
    fn ht_contrast_is_linear_in_weights(
        d in prop::collection::vec(1usize..4, 8),
        y in prop::collection::vec(-5.0f64..5.0, 8),
        w1 in prop::collection::vec(-1.0f64..1.0, 3),
        w2 in prop::collection::vec(-1.0f64..1.0, 3),
        c in -3.0f64..3.0,
    ) {
        let combo: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + c * b).collect();
        let lhs = ht_contrast_slices(&d, &y, &combo);
        let rhs = ht_contrast_slices(&d, &y, &w1) + c * ht_contrast_slices(&d, &y, &w2);
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn mehler_series_of_square(rho in -1.0f64..1.0) {
        // Cov(Z₁², Z₂²) = 2ρ².
        let e = hermite_coeffs(&ScalarFunction::smooth(|x| x * x), 8, 40).unwrap();
        prop_assert!((mehler_series(&e, &e, rho).unwrap() - 2.0 * rho * rho).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn randomization_intervals_nest(seed in 0u64..1000, a1 in 0.02f64..0.2, gap in 0.05f64..0.5) {
        let n = 12;
        let records: Vec<ExperimentRecord> = (0..n)
            .map(|i| {
                let x = i as f64 / n as f64;
                let d = 1 + i % 3;
                ExperimentRecord { t: None, d: Some(d), y: x * d as f64 + (i % 5) as f64 * 0.1, x: vec![x] }
            })
            .collect();
        let f = CorrelationFactor::identity(n);
        let w = [1.0, -1.0, 0.0];
        let wide = randomization_ci_discrete(&records, &f, 3, &w, 300, a1, seed).unwrap();
        let narrow = randomization_ci_discrete(&records, &f, 3, &w, 300, (a1 + gap).min(0.9), seed).unwrap();
        prop_assert!(wide.lower <= narrow.lower && narrow.upper <= wide.upper);
    }
}

#[test]
fn row_sum_identity_at_endpoints() {
    for arms in 2..=5 {
        for k in 1..=arms {
            let total: f64 = (1..=arms)
                .map(|l| {
                    if l == k {
                        f_arm(arms, k).unwrap().eval(1.0)
                    } else {
                        f_cross(arms, k, l).unwrap().eval(1.0)
                    }
                })
                .sum();
            assert_abs_diff_eq!(total, 0.0, epsilon = 1e-9);
        }
    }
}
