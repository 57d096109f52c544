use std::f64::consts::TAU;

use num_complex::Complex64;
use proptest::prelude::*;

use pzd_core::channel::{make_expansion, rician_pdf, ChannelParams, PolarPoint};
use pzd_core::constellation::{feasible, project, ConstraintSet, CostFunction, RingConstellation};
use pzd_core::special_fn::{bessel_i_complex, bessel_i_scaled};

fn constellation() -> impl Strategy<Value = RingConstellation> {
    prop::collection::vec((0.0..6.0f64, 0.01..1.0f64), 1..6).prop_map(|atoms| {
        let (r, w): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
        RingConstellation::from_weights(&r, &w).unwrap()
    })
}

fn constraints() -> impl Strategy<Value = ConstraintSet> {
    prop_oneof![
        (0.5..5.0f64).prop_map(|rho| ConstraintSet::peak(rho).unwrap()),
        (0.5..8.0f64, 2.5..5.0f64)
            .prop_map(|(a, q)| ConstraintSet::average(CostFunction::PowerLaw { q }, a).unwrap()),
        (0.5..5.0f64, 0.5..8.0f64)
            .prop_map(|(rho, a)| ConstraintSet::joint(rho, CostFunction::PowerLaw { q: 2.0 }, a).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bessel_recurrence(m in 1u32..40, x in 0.1..100.0f64) {
        let lo = bessel_i_scaled(m - 1, x).unwrap();
        let mid = bessel_i_scaled(m, x).unwrap();
        let hi = bessel_i_scaled(m + 1, x).unwrap();
        let rhs = 2.0 * m as f64 / x * mid;
        prop_assert!(((lo - hi) - rhs).abs() <= 1e-9 * rhs.abs().max(lo), "{} vs {}", lo - hi, rhs);
    }

    #[test]
    fn bessel_monotone_and_bounded(m in 0u32..40, x in 0.0..200.0f64, dx in 0.0..5.0f64) {
        let a = bessel_i_scaled(m, x).unwrap();
        let b = bessel_i_scaled(m, x + dx).unwrap();
        prop_assert!(a <= 1.0 && b <= 1.0);
        prop_assert!(b * dx.exp() >= a * (1.0 - 1e-12));
        prop_assert!(bessel_i_scaled(0, x).unwrap() * x.exp() >= 1.0);
    }

    #[test]
    fn complex_bessel_below_real_part(m in 0u32..30, re in -60.0..60.0f64, im in -60.0..60.0f64) {
        let lhs = bessel_i_complex(m, Complex64::new(re, im)).unwrap().log_magnitude;
        let rhs = bessel_i_scaled(0, re.abs()).unwrap().ln() + re.abs();
        prop_assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
    }

    #[test]
    fn projection_is_feasible_and_idempotent(c in constellation(), s in constraints()) {
        let p = project(&c, &s);
        prop_assert!(feasible(&p, &s).feasible, "{:?}", feasible(&p, &s));
        prop_assert_eq!(project(&p, &s), p.clone());
        let top = c.max_radius();
        prop_assert!(p.radii().iter().all(|&r| r <= top));
        let mean = |k: &RingConstellation| k.radii().iter().zip(k.probs()).map(|(r, q)| r * q).sum::<f64>();
        prop_assert!(mean(&p) <= mean(&c) + 1e-12);
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn joint_pdf_nonnegative_and_marginalizes(
        gamma in 0.0..5.0f64,
        r in 0.0..6.0f64,
        r0 in 0.0..3.0f64,
        phi0 in 0.0..TAU,
    ) {
        let p = ChannelParams::new(gamma, 1.0, 1.0).unwrap();
        let exp = make_expansion(p, 1e-10, 6.0, 3.0).unwrap();
        // equispaced rule with more nodes than orders integrates the series exactly
        let n = 2 * exp.truncation_m + 8;
        let x0 = PolarPoint::new(r0, phi0).unwrap();
        let mut total = 0.0;
        for k in 0..n {
            let y = PolarPoint::new(r, TAU * k as f64 / n as f64).unwrap();
            let raw = exp.joint_pdf_raw(y, x0).unwrap();
            prop_assert!(raw >= -exp.tail_bound, "{raw}");
            total += raw * TAU / n as f64;
        }
        let want = rician_pdf(1.0, r, r0);
        prop_assert!((total - want).abs() <= TAU * exp.tail_bound + 1e-13, "{total} vs {want}");
    }
}
