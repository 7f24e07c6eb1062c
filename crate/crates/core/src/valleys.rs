//! Ladder epochs, deep valleys, excursion functionals and good environments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    glue_excursions, sample_excursion_conditioned, Environment, Excursion, HeightCondition,
    OmegaSampler, Regime,
};
use crate::error::{Error, Result};
use crate::numerics::{softplus, LogSum};

/// Default relative tolerance for every truncated left-tail sum.
pub const DEFAULT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepValley {
    pub i: usize,
    pub sigma: usize,
    pub a: i64,
    pub b: i64,
    pub d: i64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValleyDecomposition {
    /// e_0 = 0, e_1, …, e_n.
    pub epochs: Vec<i64>,
    /// H_0, …, H_{n−1}.
    pub heights: Vec<f64>,
    /// e_{−1}, e_{−2}, … as far as the stored window allows.
    pub left_epochs: Vec<i64>,
    /// H_{−1}, H_{−2}, … matching `left_epochs`.
    pub left_heights: Vec<f64>,
    pub h_n: Option<f64>,
    pub d_n: Option<usize>,
    pub deep: Vec<DeepValley>,
}

impl ValleyDecomposition {
    pub fn n(&self) -> usize {
        self.heights.len()
    }

    pub fn k_n(&self) -> usize {
        self.deep.len()
    }

    /// e_p for any p covered by the window (negative p to the left of 0).
    pub fn epoch(&self, p: i64) -> Option<i64> {
        if p >= 0 {
            self.epochs.get(p as usize).copied()
        } else {
            self.left_epochs.get((-p - 1) as usize).copied()
        }
    }

    pub fn height(&self, p: i64) -> Option<f64> {
        if p >= 0 {
            self.heights.get(p as usize).copied()
        } else {
            self.left_heights.get((-p - 1) as usize).copied()
        }
    }
}

/// The first `n` ladder epochs to the right of 0 and every complete left
/// excursion of the window.
pub fn ladder_epochs(env: &Environment, n: usize) -> Result<ValleyDecomposition> {
    let mut epochs = vec![0i64];
    let mut heights = Vec::with_capacity(n);
    let mut x = 0i64;
    while heights.len() < n {
        let base = env.v(x);
        let mut h = 0.0f64;
        let mut y = x + 1;
        loop {
            if y > env.right() {
                return Err(Error::InsufficientWindow(format!(
                    "only {} of {n} excursions fit in the window ending at {}",
                    heights.len(),
                    env.right()
                )));
            }
            let rel = env.v(y) - base;
            if rel <= 0.0 {
                break;
            }
            h = h.max(rel);
            y += 1;
        }
        heights.push(h);
        epochs.push(y);
        x = y;
    }
    let (left_epochs, left_heights) = left_ladder(env);
    Ok(ValleyDecomposition { epochs, heights, left_epochs, left_heights, ..Default::default() }
    )
}

/// Left epochs are the weak running minima of V read from the left edge.
fn left_ladder(env: &Environment) -> (Vec<i64>, Vec<f64>) {
    let mut candidates = Vec::new();
    let mut run_min = f64::INFINITY;
    for x in env.left()..0 {
        let v = env.v(x);
        if v <= run_min {
            candidates.push(x);
        }
        run_min = run_min.min(v);
    }
    candidates.reverse();
    let mut heights = Vec::with_capacity(candidates.len());
    let mut upper = 0i64;
    for &e in &candidates {
        let base = env.v(e);
        let h = (e..upper).map(|x| env.v(x) - base).fold(0.0f64, f64::max);
        heights.push(h);
        upper = e;
    }
    (candidates, heights)
}

/// n(x) = max{p : e_p ≤ x}.
pub fn n_of_x(decomp: &ValleyDecomposition, x: i64) -> usize {
    decomp.epochs.partition_point(|&e| e <= x).saturating_sub(1)
}

/// h_n = (1/κ) log n − log log n.
pub fn critical_height(n: f64, kappa: f64) -> Result<f64> {
    if !(n >= 3.0) || !(kappa > 0.0) {
        return Err(Error::Domain(format!("critical height needs n >= 3 and kappa > 0, got n = {n}")));
    }
    Ok(n.ln() / kappa - n.ln().ln())
}

/// hP_t = log t − log log t.
pub fn hitting_scale_height(t: f64) -> Result<f64> {
    if !(t >= std::f64::consts::E.powf(std::f64::consts::E) * (1.0 - 1e-15)) {
        return Err(Error::Domain(format!("hitting scale height needs t >= e^e, got {t}")));
    }
    Ok(t.ln() - t.ln().ln())
}

/// D_n = ⌈(1 + γ)/(Aκ) · log n⌉.
pub fn valley_depth(n: f64, kappa: f64, a: f64, gamma: f64) -> Result<usize> {
    if !(a > 0.0 && gamma > 0.0 && kappa > 0.0 && n > 1.0) {
        return Err(Error::Parameter(format!("D_n needs A, gamma, kappa > 0 (A = {a}, gamma = {gamma})")));
    }
    Ok((((1.0 + gamma) / (a * kappa)) * n.ln()).ceil().max(1.0) as usize)
}

/// Marks the deep valleys with the critical height of n = decomp.n().
pub fn deep_valleys(decomp: &ValleyDecomposition, kappa: f64, a: f64, gamma: f64) -> Result<ValleyDecomposition> {
    let n = decomp.n() as f64;
    deep_valleys_with(decomp, critical_height(n, kappa)?, valley_depth(n, kappa, a, gamma)?)
}

/// Marks the excursions with H_p ≥ h and reaches D excursions to the left of each.
pub fn deep_valleys_with(decomp: &ValleyDecomposition, h: f64, depth: usize) -> Result<ValleyDecomposition> {
    let mut out = decomp.clone();
    out.h_n = Some(h);
    out.d_n = Some(depth);
    out.deep.clear();
    for (p, &hp) in decomp.heights.iter().enumerate() {
        if hp < h {
            continue;
        }
        let back = p as i64 - depth as i64;
        let a = decomp.epoch(back).ok_or_else(|| {
            Error::InsufficientWindow(format!(
                "deep valley at p = {p} needs e_{back} but only {} left epochs are stored",
                decomp.left_epochs.len()
            ))
        })?;
        out.deep.push(DeepValley {
            i: out.deep.len() + 1,
            sigma: p,
            a,
            b: decomp.epochs[p],
            d: decomp.epochs[p + 1],
        });
    }
    Ok(out)
}

/// NO(n): the deep valleys lie in (0, ∞) and are disjoint.
pub fn no_overlap(decomp: &ValleyDecomposition) -> bool {
    match decomp.deep.first() {
        None => true,
        Some(first) => first.a > 0 && decomp.deep.windows(2).all(|w| w[0].d < w[1].a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionFunctionals {
    pub start: i64,
    pub end: i64,
    pub height: f64,
    pub t_h: i64,
    pub log_m1: f64,
    pub log_m1_prime: f64,
    pub log_m2: f64,
    pub log_r_minus: f64,
    pub s_window: f64,
    pub log_z: f64,
}

impl ExcursionFunctionals {
    pub fn m1(&self) -> f64 {
        self.log_m1.exp()
    }
    pub fn m1_prime(&self) -> f64 {
        self.log_m1_prime.exp()
    }
    pub fn m2(&self) -> f64 {
        self.log_m2.exp()
    }
    pub fn r_minus(&self) -> f64 {
        self.log_r_minus.exp()
    }
}

fn truncation_error(what: &str, rel: f64, tol: f64, left: i64) -> Error {
    Error::InsufficientWindow(format!(
        "{what}: left-edge term at {left} is {rel:.3e} of the sum, above tolerance {tol:.1e}"
    ))
}

/// ln Σ_{L≤x<upto} e^{−(V(x)−base)}, requiring the edge term to be negligible.
fn log_left_sum(env: &Environment, upto: i64, base: f64, rel_tol: f64, what: &str) -> Result<f64> {
    let mut acc = LogSum::new();
    for x in env.left()..upto {
        acc.push(base - env.v(x));
    }
    let edge = base - env.v(env.left());
    let rel = (edge - acc.ln()).exp();
    if rel > rel_tol {
        return Err(truncation_error(what, rel, rel_tol, env.left()));
    }
    Ok(acc.ln())
}

/// Functionals of the excursion [e_p, e_{p+1}], potential measured from V(e_p).
pub fn functionals(env: &Environment, decomp: &ValleyDecomposition, p: usize, rel_tol: f64) -> Result<ExcursionFunctionals> {
    let start = *decomp.epochs.get(p).ok_or_else(|| Error::Parameter(format!("no excursion {p}")))?;
    let end = *decomp.epochs.get(p + 1).ok_or_else(|| Error::Parameter(format!("no excursion {p}")))?;
    let base = env.v(start);
    let mut height = 0.0f64;
    let mut t_h = start;
    for x in start..end {
        let rel = env.v(x) - base;
        if rel > height {
            height = rel;
            t_h = x;
        }
    }
    let mut m2 = LogSum::new();
    for x in start..end {
        m2.push(env.v(x) - base - height);
    }
    let log_m1 = log_left_sum(env, t_h, base, rel_tol, "M1")?;
    let log_m1_prime = log_left_sum(env, end, base, rel_tol, "M1'")?;
    let log_r_minus = log_left_sum(env, 1, 0.0, rel_tol, "R_-")?;
    let s_window = (0..=env.right()).map(|x| env.v(x)).fold(f64::NEG_INFINITY, f64::max);
    let log_m2 = m2.ln();
    Ok(ExcursionFunctionals {
        start,
        end,
        height,
        t_h,
        log_m1,
        log_m1_prime,
        log_m2,
        log_r_minus,
        s_window,
        log_z: log_m1 + log_m2 + height,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KestenSum {
    pub log_value: f64,
    pub truncation_site: i64,
    /// Last retained term relative to the sum.
    pub tail_bound: f64,
}

/// R = Σ_{x≥0} e^{V(x)} over the right window, stopped once a term falls
/// below `rel_tol` times the running sum.
pub fn kesten_series(env: &Environment, rel_tol: f64) -> Result<KestenSum> {
    let mut acc = LogSum::new();
    for x in 0..=env.right() {
        let t = env.v(x);
        acc.push(t);
        let rel = (t - acc.ln()).exp();
        if rel < rel_tol {
            return Ok(KestenSum { log_value: acc.ln(), truncation_site: x, tail_bound: rel });
        }
    }
    Err(Error::InsufficientWindow(format!(
        "Kesten series not converged within the window ending at {}",
        env.right()
    )))
}

/// Kesten series Σ_{n≥0} ρ_0⋯ρ_n drawn directly from the law.
pub fn sample_kesten<R: Rng + ?Sized>(law: &OmegaSampler, rel_tol: f64, max_len: usize, rng: &mut R) -> Result<f64> {
    let mut v = 0.0;
    let mut acc = LogSum::new();
    for _ in 0..max_len {
        let w = law.sample(rng);
        v += (-w).ln_1p() - w.ln();
        acc.push(v);
        if v - acc.ln() < rel_tol.ln() {
            return Ok(acc.value());
        }
    }
    Err(Error::Runaway(max_len))
}

/// Maximal rise max_{x≤u≤v≤y} (V(v) − V(u)).
pub fn v_up(env: &Environment, x: i64, y: i64) -> f64 {
    let mut best = 0.0f64;
    let mut run_min = f64::INFINITY;
    for s in x..=y {
        let v = env.v(s);
        run_min = run_min.min(v);
        best = best.max(v - run_min);
    }
    best
}

/// Maximal fall min_{x≤u≤v≤y} (V(v) − V(u)), a nonpositive number.
pub fn v_down(env: &Environment, x: i64, y: i64) -> f64 {
    let mut best = 0.0f64;
    let mut run_max = f64::NEG_INFINITY;
    for s in x..=y {
        let v = env.v(s);
        run_max = run_max.max(v);
        best = best.min(v - run_max);
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodEnvironment {
    pub omega1: bool,
    pub omega2: bool,
    pub omega3: bool,
    pub e1: i64,
    pub v_down: f64,
    pub v_up: f64,
    pub log_r_bar: f64,
}

impl GoodEnvironment {
    pub fn all(&self) -> bool {
        self.omega1 && self.omega2 && self.omega3
    }
}

/// The legal interval (max{0, 1−κ}, min{1, 2−κ}) for α.
pub fn alpha_range(kappa: f64) -> (f64, f64) {
    ((1.0 - kappa).max(0.0), (2.0 - kappa).min(1.0))
}

pub fn default_alpha(kappa: f64) -> f64 {
    let (lo, hi) = alpha_range(kappa);
    0.5 * (lo + hi)
}

pub const DEFAULT_C: f64 = 20.0;

/// ln R⁻, with R⁻ = Σ_{u≤0} (1 + 2 Σ_{u<y≤0} e^{V(y)−V(u)}) (e^{−V(u)} + 2 Σ_{z<u} e^{−V(z)}).
pub fn log_r_bar(env: &Environment, rel_tol: f64) -> Result<f64> {
    let left = env.left();
    let len = (-left + 1) as usize;
    // log A_u with A_u = ρ_{u+1}(1 + A_{u+1}), A_0 = 0.
    let mut log_a = vec![f64::NEG_INFINITY; len];
    for u in (left..0).rev() {
        let i = (u - left) as usize;
        log_a[i] = env.log_rho(u + 1) + softplus(log_a[i + 1]);
    }
    let ln2 = std::f64::consts::LN_2;
    let mut b = LogSum::new();
    let mut total = LogSum::new();
    let mut weights = LogSum::new();
    for u in left..=0 {
        let i = (u - left) as usize;
        let first = softplus(ln2 + log_a[i]);
        let mut second = LogSum::new();
        second.push(-env.v(u));
        if !b.is_empty() {
            second.push(ln2 + b.ln());
        }
        total.push(first + second.ln());
        weights.push(first);
        b.push(-env.v(u));
    }
    // Sites left of the window feed every term through the inner sums.
    let mut missing = LogSum::new();
    missing.push(softplus(ln2 + log_a[0]));
    missing.push(ln2 + weights.ln());
    let rel = (missing.ln() - env.v(left) - total.ln()).exp();
    if rel > rel_tol {
        return Err(truncation_error("R-bar", rel, rel_tol, left));
    }
    Ok(total.ln())
}

pub fn good_env_check(env: &Environment, t: f64, kappa: f64, alpha: f64, c: f64, rel_tol: f64) -> Result<GoodEnvironment> {
    let (lo, hi) = alpha_range(kappa);
    if !(alpha > lo && alpha < hi) {
        return Err(Error::Parameter(format!("alpha = {alpha} outside ({lo}, {hi})")));
    }
    if !(c > 0.0 && t > 1.0) {
        return Err(Error::Parameter(format!("need C > 0 and t > 1, got C = {c}, t = {t}")));
    }
    let decomp = ladder_epochs(env, 1)?;
    let e1 = decomp.epochs[1];
    let mut height = 0.0f64;
    let mut t_h = 0i64;
    for x in 0..e1 {
        if env.v(x) > height {
            height = env.v(x);
            t_h = x;
        }
    }
    let down = v_down(env, 0, t_h);
    let up = v_up(env, t_h, e1);
    let lr = log_r_bar(env, rel_tol)?;
    let lt = t.ln();
    Ok(GoodEnvironment {
        omega1: (e1 as f64) <= c * lt,
        omega2: (-down).max(up) <= alpha * lt,
        omega3: lr <= 4.0 * lt.ln() + alpha * lt,
        e1,
        v_down: down,
        v_up: up,
        log_r_bar: lr,
    })
}

/// Replaces every complete excursion of height ≥ h, on both sides of 0, by an
/// independent one conditioned on height < h.
pub fn substitute_high_excursions<R: Rng + ?Sized>(
    env: &Environment,
    law: &OmegaSampler,
    h: f64,
    rng: &mut R,
    budget: u64,
) -> Result<Environment> {
    let (left_epochs, _) = left_ladder(env);
    // Right excursions until the window runs out; the remainder is kept as is.
    let mut right_epochs = vec![0i64];
    let mut x = 0i64;
    'outer: loop {
        let base = env.v(x);
        let mut y = x + 1;
        while y <= env.right() {
            if env.v(y) <= base {
                right_epochs.push(y);
                x = y;
                continue 'outer;
            }
            y += 1;
        }
        break;
    }
    let piece = |from: i64, to: i64| -> Excursion {
        let omegas: Vec<f64> = (from + 1..=to).map(|s| env.omega(s)).collect();
        let increments: Vec<f64> = (from + 1..=to).map(|s| env.log_rho(s)).collect();
        let base = env.v(from);
        let height = (from..to).map(|s| env.v(s) - base).fold(0.0f64, f64::max);
        Excursion { omegas, increments, height, drop: env.v(to) - base }
    };
    let replace = |exc: Excursion, rng: &mut R| -> Result<Excursion> {
        if exc.height >= h {
            sample_excursion_conditioned(law, HeightCondition::Below, h, rng, budget)
        } else {
            Ok(exc)
        }
    };
    let mut left = Vec::with_capacity(left_epochs.len());
    let mut upper = 0i64;
    for &e in &left_epochs {
        left.push(replace(piece(e, upper), rng)?);
        upper = e;
    }
    let mut right = Vec::with_capacity(right_epochs.len());
    for w in right_epochs.windows(2) {
        right.push(replace(piece(w[0], w[1]), rng)?);
    }
    let tail_start = *right_epochs.last().expect("starts with 0");
    if tail_start < env.right() {
        let omegas: Vec<f64> = (tail_start + 1..=env.right()).map(|s| env.omega(s)).collect();
        let increments: Vec<f64> = (tail_start + 1..=env.right()).map(|s| env.log_rho(s)).collect();
        right.push(Excursion { omegas, increments, height: f64::NAN, drop: f64::NAN });
    }
    let out = glue_excursions(&left, &right, env.omega(env.left()), Regime::Plain)?;
    let regime = Regime::Modified { h };
    Ok(out.with_regime(regime))
}

/// d_− = max{e_p : p ≤ 0, H_{p−1} ≥ h}.
pub fn find_d_minus(decomp: &ValleyDecomposition, h: f64) -> Result<i64> {
    for (k, &hk) in decomp.left_heights.iter().enumerate() {
        if hk >= h {
            return Ok(if k == 0 { 0 } else { decomp.left_epochs[k - 1] });
        }
    }
    Err(Error::InsufficientWindow(format!(
        "none of the {} stored left excursions reaches height {h}",
        decomp.left_heights.len()
    )))
}
