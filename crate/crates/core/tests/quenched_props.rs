mod common;

use proptest::prelude::*;
use rwre::env::{Environment, Regime};
use rwre::quenched::oracle::oracle_solve;
use rwre::quenched::{
    exit_prob, expected_hitting_with, expected_time_left_of, variance_hitting_with, LeftBoundary,
};

const R: LeftBoundary = LeftBoundary::Reflecting;

/// Window plus a < b inside it.
fn window_with_pair() -> impl Strategy<Value = (Environment, i64, i64)> {
    common::window(0.05, 0.95, 30, 30).prop_flat_map(|env| {
        let (l, r) = (env.left(), env.right());
        (Just(env), l..r).prop_flat_map(move |(env, a)| (Just(env), Just(a), a + 1..=r))
    })
}

/// 16 Σ_{a≤y<b} Σ_{L≤z'≤z≤x≤y} e^{V(y)+V(x)−V(z)−V(z')}.
fn variance_bound(env: &Environment, a: i64, b: i64) -> f64 {
    let left = env.left();
    let mut pairs = 0.0;
    let mut single = 0.0;
    let mut inner = Vec::new();
    for x in left..b {
        single += (-env.v(x)).exp();
        pairs += (-env.v(x)).exp() * single;
        inner.push(env.v(x).exp() * pairs);
    }
    let mut total = 0.0;
    let mut running = 0.0;
    for (k, y) in (left..b).enumerate() {
        running += inner[k];
        if y >= a {
            total += env.v(y).exp() * running;
        }
    }
    16.0 * total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn agrees_with_rational_oracle((env, a, b) in window_with_pair()) {
        let o = oracle_solve(&env, a, b).unwrap();
        for x in a..=b {
            let p = exit_prob(&env, a, x, b).unwrap();
            let q = o.exit_from(x);
            prop_assert!(common::rel(p, q) <= 1e-9 || (p - q).abs() <= 1e-300, "exit at {x}: {p} vs {q}");
        }
        let e = expected_hitting_with(&env, a, b, R).unwrap();
        prop_assert!(common::rel(e, o.expected_from(a)) <= 1e-9, "mean {e} vs {}", o.expected_from(a));
        let v = variance_hitting_with(&env, a, b, R).unwrap();
        prop_assert!(common::rel(v, o.variance_from_a) <= 1e-8, "variance {v} vs {}", o.variance_from_a);
    }

    #[test]
    fn exit_matches_ruin_sums((env, a, b) in window_with_pair()) {
        for x in a..=b {
            let p = exit_prob(&env, a, x, b).unwrap();
            prop_assert!((p - common::exit_by_sums(&env, a, x, b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn hitting_is_additive((env, a, c) in window_with_pair(), frac in 0.0f64..1.0) {
        prop_assume!(c - a >= 2);
        let b = a + 1 + ((c - a - 1) as f64 * frac) as i64;
        let whole = expected_hitting_with(&env, a, c, R).unwrap();
        let parts = expected_hitting_with(&env, a, b, R).unwrap() + expected_hitting_with(&env, b, c, R).unwrap();
        prop_assert!(common::rel(parts, whole) <= 1e-10);
    }

    #[test]
    fn moments_are_positive((env, a, b) in window_with_pair()) {
        prop_assert!(expected_hitting_with(&env, a, b, R).unwrap() > 0.0);
        let v = variance_hitting_with(&env, a, b, R).unwrap();
        // A reflected single step is deterministic.
        if !(a == env.left() && b == a + 1) {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn exit_is_monotone_with_absorbing_ends((env, a, b) in window_with_pair()) {
        prop_assert_eq!(exit_prob(&env, a, a, b).unwrap(), 0.0);
        prop_assert_eq!(exit_prob(&env, a, b, b).unwrap(), 1.0);
        for x in a..b {
            prop_assert!(exit_prob(&env, a, x, b).unwrap() < exit_prob(&env, a, x + 1, b).unwrap());
        }
    }

    #[test]
    fn exit_ignores_the_origin((env, a, b) in window_with_pair(), shift in -20i64..20) {
        prop_assume!(env.left() + shift <= 0 && env.right() + shift >= 0);
        let moved = Environment::from_omegas(env.left() + shift, env.omegas().to_vec(), Regime::Plain).unwrap();
        for x in a..=b {
            let p = exit_prob(&env, a, x, b).unwrap();
            let q = exit_prob(&moved, a + shift, x + shift, b + shift).unwrap();
            prop_assert!((p - q).abs() <= 1e-12 * p.max(1e-300));
        }
    }

    #[test]
    fn variance_respects_expanded_bound((env, a, b) in window_with_pair()) {
        let v = variance_hitting_with(&env, a, b, R).unwrap();
        prop_assert!(v <= variance_bound(&env, a, b) * (1.0 + 1e-12));
    }

    #[test]
    fn time_left_of_everything_is_the_hitting_time((env, a, b) in window_with_pair()) {
        let all = expected_time_left_of(&env, a, b, b, R).unwrap();
        prop_assert!(common::rel(all, expected_hitting_with(&env, a, b, R).unwrap()) <= 1e-10);
    }
}
