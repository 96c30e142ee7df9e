//! Property tests: serialization round-trips, expression parser determinism,
//! domain geometry, and decomposition identities.

use std::sync::Arc;

use morphint::domain::{HyperRectangle, IntegralEstimate, Warning};
use morphint::expr::ExpressionProgram;
use morphint::integrand::{Integrand, Signedness};
use morphint::report::to_json_string;
use morphint::splitting::{split_components, SplitConfig};
use proptest::prelude::*;

fn finite_f64() -> impl Strategy<Value = f64> {
    // Broad magnitude coverage, no NaN/inf (JSON has no encoding for them).
    prop_oneof![
        -1e160..1e160f64,
        -1e3..1e3f64,
        Just(0.0),
        Just(-0.0),
        (-300i32..300, -9_007_199_254_740_992i64..9_007_199_254_740_992)
            .prop_map(|(e, m)| (m as f64) * 2f64.powi(e - 53)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn estimate_serialization_round_trips_bit_exactly(
        value in finite_f64(),
        sigma in finite_f64().prop_map(f64::abs),
        bias in finite_f64(),
        acceptance in 0.0..100.0f64,
        factors in proptest::collection::vec(finite_f64(), 0..8),
    ) {
        let est = IntegralEstimate {
            value,
            sigma,
            bias,
            acceptance_pct: acceptance,
            block_factors: factors,
            warnings: vec![Warning::LargeRelativeSigma],
        };
        let json = to_json_string(&est).unwrap();
        let back: IntegralEstimate = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.value.to_bits(), est.value.to_bits());
        prop_assert_eq!(back.sigma.to_bits(), est.sigma.to_bits());
        prop_assert_eq!(back.bias.to_bits(), est.bias.to_bits());
        for (a, b) in back.block_factors.iter().zip(&est.block_factors) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn volume_is_permutation_invariant(
        bounds in proptest::collection::vec((-1e3..1e3f64, 1e-3..1e3f64), 1..12),
        seed in any::<u64>(),
    ) {
        let lower: Vec<f64> = bounds.iter().map(|&(lo, _)| lo).collect();
        let upper: Vec<f64> = bounds.iter().map(|&(lo, w)| lo + w).collect();
        let domain = HyperRectangle::new(lower.clone(), upper.clone()).unwrap();

        // Fisher-Yates with a splitmix-style walk keeps the shuffle cheap.
        let mut perm: Vec<usize> = (0..bounds.len()).collect();
        let mut state = seed;
        for i in (1..perm.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            perm.swap(i, j);
        }
        let plower: Vec<f64> = perm.iter().map(|&i| lower[i]).collect();
        let pupper: Vec<f64> = perm.iter().map(|&i| upper[i]).collect();
        let permuted = HyperRectangle::new(plower, pupper).unwrap();
        let (a, b) = (domain.volume(), permuted.volume());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
    }

    #[test]
    fn split_reconstruction_is_exact_to_round_off(
        f in -1e60..1e60f64,
        k in 1.0..8.0f64,
        epsilon in 1e-12..1e-2f64,
    ) {
        struct Fixed(f64);
        impl Integrand for Fixed {
            fn dim(&self) -> usize { 1 }
            fn signedness(&self) -> Signedness { Signedness::MaySignChange }
            fn value(&self, _: &[f64]) -> f64 { self.0 }
        }
        let pair = split_components(Arc::new(Fixed(f)), &SplitConfig { k, epsilon }).unwrap();
        let fp = pair.plus.value(&[0.0]);
        let fm = pair.minus.value(&[0.0]);
        let envelope = k * f.hypot(epsilon);
        prop_assert!(fp > 0.0 && fm > 0.0);
        prop_assert!(((fp - fm) - f).abs() <= 4.0 * f64::EPSILON * envelope);
    }
}

// ---------------------------------------------------------------------------
// Expression generator: pretty-print must re-parse to the identical program.
// ---------------------------------------------------------------------------

fn arb_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (1u32..4).prop_map(|v| format!("x{v}")),
        (0.001f64..1e4).prop_map(|c| format!("{c}")),
        (1u32..80).prop_map(|c| format!("{c}")),
    ];
    leaf.prop_recursive(5, 64, 4, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), prop_oneof![Just("+"), Just("-"), Just("*"), Just("/")])
                .prop_map(|(a, b, op)| format!("({a} {op} {b})")),
            (inner.clone(), 1u32..4).prop_map(|(a, e)| format!("{a}^{e}")),
            inner.clone().prop_map(|a| format!("-{a}")),
            (
                inner,
                prop_oneof![
                    Just("exp"),
                    Just("ln"),
                    Just("sin"),
                    Just("cos"),
                    Just("tan"),
                    Just("sqrt"),
                    Just("abs")
                ]
            )
                .prop_map(|(a, f)| format!("{f}({a})")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn pretty_print_reparses_to_the_same_program(src in arb_expr()) {
        let program = ExpressionProgram::parse(&src, 3).unwrap();
        let printed = program.pretty_print();
        let reparsed = ExpressionProgram::parse(&printed, 3).unwrap();
        prop_assert_eq!(program.instructions(), reparsed.instructions(), "{} -> {}", src, printed);
    }

    #[test]
    fn evaluation_never_panics_on_finite_input(
        src in arb_expr(),
        x in proptest::collection::vec(-100.0..100.0f64, 3),
    ) {
        let program = ExpressionProgram::parse(&src, 3).unwrap();
        let _ = program.eval(&x);
    }
}
