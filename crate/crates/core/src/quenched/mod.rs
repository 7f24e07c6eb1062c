//! Quenched exit probabilities and moments of hitting times, computed in
//! linear time with log-space recurrences.
//!
//! With W_y = Σ_{L≤z<y} e^{V(y)−V(z)} = ρ_y (1 + W_{y−1}), the crossing
//! time of the edge (y, y+1) has mean 1 + 2W_y and variance 4U_y where
//! U_y = ρ_y U_{y−1} + (1 + 1/ρ_y) W_y². Both are exact for the walk
//! reflected at the left edge L of the window.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::numerics::{log_add_exp, softplus, LogSum};
use crate::valleys::{ValleyDecomposition, DEFAULT_REL_TOL};

const LN2: f64 = std::f64::consts::LN_2;

/// How sums reaching past the stored left edge are treated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeftBoundary {
    /// The walk lives on the whole line; the omitted tail beyond the edge
    /// must be below `rel_tol` of the result.
    Monitored { rel_tol: f64 },
    /// The walk is reflected at the edge (ω_L treated as 1).
    Reflecting,
}

impl Default for LeftBoundary {
    fn default() -> Self {
        LeftBoundary::Monitored { rel_tol: DEFAULT_REL_TOL }
    }
}

fn check_range(env: &Environment, a: i64, b: i64) -> Result<()> {
    env.check_site(a)?;
    env.check_site(b)?;
    if a > b {
        return Err(Error::Window(format!("need a <= b, got a = {a}, b = {b}")));
    }
    Ok(())
}

/// ln P_x(τ(b) < τ(a)).
pub fn log_exit_prob(env: &Environment, a: i64, x: i64, b: i64) -> Result<f64> {
    check_range(env, a, b)?;
    if !(a <= x && x <= b) || a == b {
        return Err(Error::Window(format!("need a <= x <= b and a < b, got ({a}, {x}, {b})")));
    }
    let mut num = LogSum::new();
    let mut den = LogSum::new();
    for y in a..b {
        if y < x {
            num.push(env.v(y));
        }
        den.push(env.v(y));
    }
    Ok(num.ln() - den.ln())
}

pub fn exit_prob(env: &Environment, a: i64, x: i64, b: i64) -> Result<f64> {
    Ok(log_exit_prob(env, a, x, b)?.exp().clamp(0.0, 1.0))
}

/// P_{a+1}(τ(a) = ∞) = (Σ_{y≥a} e^{V(y)−V(a)})^{−1}, the sum truncated once
/// the last term is below `rel_tol` of it.
pub fn escape_prob(env: &Environment, a: i64, rel_tol: f64) -> Result<f64> {
    env.check_site(a)?;
    let base = env.v(a);
    let mut acc = LogSum::new();
    for y in a..=env.right() {
        let t = env.v(y) - base;
        acc.push(t);
        if (t - acc.ln()).exp() < rel_tol {
            return Ok((-acc.ln()).exp());
        }
    }
    Err(Error::InsufficientWindow(format!(
        "series for the escape probability from {a} not converged by site {}",
        env.right()
    )))
}

/// Per-site quantities of the crossing times along [a, b).
struct Crossings {
    /// ln(1 + 2W_y) for y in [a, b).
    log_mean: Vec<f64>,
    /// ln U_y for y in [a, b).
    log_u: Vec<f64>,
    /// ln of the first-order change of 1 + 2W_y and U_y when the window is
    /// extended past its left edge.
    log_mean_sens: Vec<f64>,
    log_u_sens: Vec<f64>,
}

fn crossings(env: &Environment, a: i64, b: i64, with_variance: bool) -> Crossings {
    let left = env.left();
    let cap = (b - a).max(0) as usize;
    let mut out = Crossings {
        log_mean: Vec::with_capacity(cap),
        log_u: Vec::with_capacity(if with_variance { cap } else { 0 }),
        log_mean_sens: Vec::with_capacity(cap),
        log_u_sens: Vec::with_capacity(if with_variance { cap } else { 0 }),
    };
    let mut log_w = f64::NEG_INFINITY;
    let mut log_u = f64::NEG_INFINITY;
    // Unit perturbations of W_L and U_L carried forward.
    let mut log_dw = 0.0f64;
    let mut log_du = 0.0f64;
    for y in left..b {
        if y > left {
            let lr = env.log_rho(y);
            log_w = lr + softplus(log_w);
            log_dw += lr;
            if with_variance {
                let src = softplus(-lr) + 2.0 * log_w;
                log_u = log_add_exp(lr + log_u, src);
                let dsrc = softplus(-lr) + LN2 + log_w + log_dw;
                log_du = log_add_exp(lr + log_du, dsrc);
            }
        }
        if y >= a {
            out.log_mean.push(softplus(LN2 + log_w));
            out.log_mean_sens.push(LN2 + log_dw);
            if with_variance {
                out.log_u.push(log_u);
                out.log_u_sens.push(log_du);
            }
        }
    }
    out
}

fn check_tail(log_sens: &LogSum, log_value: f64, boundary: LeftBoundary, what: &str, left: i64) -> Result<()> {
    if let LeftBoundary::Monitored { rel_tol } = boundary {
        let rel = (log_sens.ln() - log_value).exp();
        if rel > rel_tol {
            return Err(Error::InsufficientWindow(format!(
                "{what}: sites left of {left} contribute about {rel:.3e} of the value, above {rel_tol:.1e}"
            )));
        }
    }
    Ok(())
}

/// ln E_a[τ(b)].
pub fn log_expected_hitting_with(env: &Environment, a: i64, b: i64, boundary: LeftBoundary) -> Result<f64> {
    check_range(env, a, b)?;
    if a == b {
        return Ok(f64::NEG_INFINITY);
    }
    let c = crossings(env, a, b, false);
    let mut total = LogSum::new();
    let mut sens = LogSum::new();
    for (m, s) in c.log_mean.iter().zip(&c.log_mean_sens) {
        total.push(*m);
        sens.push(*s);
    }
    check_tail(&sens, total.ln(), boundary, "expected hitting time", env.left())?;
    Ok(total.ln())
}

pub fn expected_hitting_with(env: &Environment, a: i64, b: i64, boundary: LeftBoundary) -> Result<f64> {
    log_expected_hitting_with(env, a, b, boundary).map(f64::exp)
}

pub fn expected_hitting(env: &Environment, a: i64, b: i64) -> Result<f64> {
    expected_hitting_with(env, a, b, LeftBoundary::default())
}

pub fn log_expected_hitting(env: &Environment, a: i64, b: i64) -> Result<f64> {
    log_expected_hitting_with(env, a, b, LeftBoundary::default())
}

/// ln Var_a(τ(b)).
pub fn log_variance_hitting_with(env: &Environment, a: i64, b: i64, boundary: LeftBoundary) -> Result<f64> {
    check_range(env, a, b)?;
    if a == b {
        return Ok(f64::NEG_INFINITY);
    }
    let c = crossings(env, a, b, true);
    let mut total = LogSum::new();
    let mut sens = LogSum::new();
    for (u, s) in c.log_u.iter().zip(&c.log_u_sens) {
        total.push(*u);
        sens.push(*s);
    }
    check_tail(&sens, total.ln(), boundary, "hitting time variance", env.left())?;
    Ok(2.0 * LN2 + total.ln())
}

pub fn variance_hitting_with(env: &Environment, a: i64, b: i64, boundary: LeftBoundary) -> Result<f64> {
    log_variance_hitting_with(env, a, b, boundary).map(f64::exp)
}

pub fn variance_hitting(env: &Environment, a: i64, b: i64) -> Result<f64> {
    variance_hitting_with(env, a, b, LeftBoundary::default())
}

pub fn log_variance_hitting(env: &Environment, a: i64, b: i64) -> Result<f64> {
    log_variance_hitting_with(env, a, b, LeftBoundary::default())
}

/// Quenched mean and variance of τ(e_p, e_{p+1}) for every excursion, in one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionWeights {
    pub log_mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

pub fn excursion_moments(env: &Environment, decomp: &ValleyDecomposition, boundary: LeftBoundary) -> Result<ExcursionWeights> {
    let n = decomp.n();
    if n == 0 {
        return Ok(ExcursionWeights { log_mean: vec![], log_var: vec![] });
    }
    let end = decomp.epochs[n];
    env.check_site(end)?;
    let c = crossings(env, 0, end, true);
    let mut log_mean = Vec::with_capacity(n);
    let mut log_var = Vec::with_capacity(n);
    for p in 0..n {
        let (lo, hi) = (decomp.epochs[p] as usize, decomp.epochs[p + 1] as usize);
        let mut m = LogSum::new();
        let mut ms = LogSum::new();
        let mut u = LogSum::new();
        let mut us = LogSum::new();
        for k in lo..hi {
            m.push(c.log_mean[k]);
            ms.push(c.log_mean_sens[k]);
            u.push(c.log_u[k]);
            us.push(c.log_u_sens[k]);
        }
        check_tail(&ms, m.ln(), boundary, "excursion weight", env.left())?;
        check_tail(&us, u.ln(), boundary, "excursion variance", env.left())?;
        log_mean.push(m.ln());
        log_var.push(2.0 * LN2 + u.ln());
    }
    Ok(ExcursionWeights { log_mean, log_var })
}

/// Z_p = E_ω[τ(e_p, e_{p+1})] for p < n.
pub fn excursion_weights(env: &Environment, decomp: &ValleyDecomposition) -> Result<Vec<f64>> {
    let w = excursion_moments(env, decomp, LeftBoundary::default())?;
    Ok(w.log_mean.into_iter().map(f64::exp).collect())
}

/// ln(1 − p) = ln ω_0 − ln Σ_{0≤x<e_1} e^{V(x)}, the probability that an
/// attempt from 0 reaches e_1 before returning to 0.
pub fn log_success_prob(env: &Environment) -> Result<f64> {
    let base = env.v(0);
    let mut acc = LogSum::new();
    let mut x = 0i64;
    loop {
        acc.push(env.v(x) - base);
        x += 1;
        if x > env.right() {
            return Err(Error::InsufficientWindow("window ends before e_1".into()));
        }
        if env.v(x) <= base {
            break;
        }
    }
    Ok(env.omega(0).ln() - acc.ln())
}

/// ln P_a(τ(b) < τ^+(a)) = ln ω_a − ln Σ_{a≤x<b} e^{V(x)−V(a)} for a < b.
pub fn log_success_prob_between(env: &Environment, a: i64, b: i64) -> Result<f64> {
    check_range(env, a, b)?;
    if a == b {
        return Err(Error::Window(format!("empty excursion at {a}")));
    }
    let base = env.v(a);
    let mut acc = LogSum::new();
    for x in a..b {
        acc.push(env.v(x) - base);
    }
    Ok(env.omega(a).ln() - acc.ln())
}

pub fn success_prob(env: &Environment) -> Result<f64> {
    log_success_prob(env).map(f64::exp)
}

/// Expected number of steps taken from sites ≤ z before τ(b), starting at a.
/// Uses the mean edge-crossing counts m_x = ρ_x (m_{x+1} + 1{a ≤ x < b}).
pub fn expected_time_left_of(env: &Environment, a: i64, b: i64, z: i64, boundary: LeftBoundary) -> Result<f64> {
    check_range(env, a, b)?;
    let left = env.left();
    let mut m_next = 0.0f64;
    let mut total = 0.0f64;
    let mut edge = 0.0f64;
    for x in (left..b).rev() {
        let up = m_next + if x >= a { 1.0 } else { 0.0 };
        let m = if x == left && boundary == LeftBoundary::Reflecting { 0.0 } else { up * env.log_rho(x).exp() };
        if x <= z {
            total += up + m;
        }
        if x == left {
            edge = m;
        }
        m_next = m;
    }
    if let LeftBoundary::Monitored { rel_tol } = boundary {
        if total > 0.0 && edge > rel_tol * total {
            return Err(Error::InsufficientWindow(format!(
                "crossings at the left edge {left} are {:.3e} of the time left of {z}",
                edge / total
            )));
        }
    }
    Ok(total)
}
