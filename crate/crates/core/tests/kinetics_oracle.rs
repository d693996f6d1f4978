use std::f64::consts::E;

use proptest::prelude::*;
use wastetwin_core::plant::{builtin_scenario, GompertzParams, BUILTIN_SCENARIOS};

// Closed-form landmarks of the modified Gompertz curve.
#[test]
fn lag_and_inflection_landmarks() {
    for (name, _) in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap().substrate;
        for g in s.fractions() {
            // At t = lambda the inner exponent is exactly 1.
            let at_lag = g.cumulative(g.lambda);
            assert!((at_lag - g.b0 * (-E).exp()).abs() < 1e-14, "{name}");
            // The inflection sits at lambda + b0/(rm e), where the rate equals rm.
            let ti = g.lambda + g.b0 / (g.rm * E);
            assert!((g.rate(ti) - g.rm).abs() < 1e-12, "{name}: {} vs {}", g.rate(ti), g.rm);
            assert!((g.cumulative(ti) - g.b0 / E).abs() < 1e-14, "{name}");
        }
    }
}

#[test]
fn rate_is_the_derivative_of_cumulative() {
    let s = builtin_scenario("food_waste").unwrap().substrate;
    let h = 1e-5;
    for k in 1..170 {
        let t = k as f64 * 0.1;
        let fd = (s.cumulative_per_gram(t + h) - s.cumulative_per_gram(t - h)) / (2.0 * h);
        assert!((fd - s.rate_per_gram(t)).abs() < 1e-8, "t={t}");
    }
}

proptest! {
    #[test]
    fn cumulative_is_monotone_and_bounded(
        b0 in 0.01f64..1.0,
        rm in 0.001f64..0.5,
        lambda in 0.0f64..10.0,
        t in 0.0f64..60.0,
        dt in 0.0f64..5.0,
    ) {
        let g = GompertzParams { b0, rm, lambda };
        let (a, b) = (g.cumulative(t), g.cumulative(t + dt));
        prop_assert!(a >= 0.0 && a <= b && b <= b0);
        prop_assert!(g.rate(t) >= 0.0 && g.rate(t) <= rm * (1.0 + 1e-12));
    }
}
