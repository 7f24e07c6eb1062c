#![allow(dead_code)]

use proptest::prelude::*;
use rwre::env::{Environment, Regime};

/// Plain window [left, right] with ω drawn uniformly from [lo, hi].
pub fn window(lo: f64, hi: f64, max_left: i64, max_right: i64) -> impl Strategy<Value = Environment> {
    (0..=max_left, 1..=max_right).prop_flat_map(move |(l, r)| {
        prop::collection::vec(lo..hi, (l + r + 1) as usize)
            .prop_map(move |omegas| Environment::from_omegas(-l, omegas, Regime::Plain).expect("valid omegas"))
    })
}

pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        ((a - b) / b).abs()
    }
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Direct gambler's-ruin sum: P_x(τ(b) < τ(a)) = Σ_{a≤y<x} e^{V(y)} / Σ_{a≤y<b} e^{V(y)}.
pub fn exit_by_sums(env: &Environment, a: i64, x: i64, b: i64) -> f64 {
    let num: f64 = (a..x).map(|y| env.v(y).exp()).sum();
    let den: f64 = (a..b).map(|y| env.v(y).exp()).sum();
    num / den
}
