//! Exact rational solution of the birth–death linear systems, used to check
//! the fast formulas. Every ω is converted exactly to a rational, so the only
//! rounding is the final conversion to f64.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::env::{Environment, Regime};
use crate::error::{Error, Result};
use crate::quenched::{exit_prob, expected_hitting_with, variance_hitting_with, LeftBoundary};
use crate::rng::stream;

pub const MAX_ORACLE_WINDOW: i64 = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub a: i64,
    pub b: i64,
    pub left: i64,
    /// P_x(τ(b) < τ(a)) for x = a..=b.
    pub exit: Vec<f64>,
    /// E_x[τ(b)] for x = left..=b, reflected at `left`.
    pub expected: Vec<f64>,
    /// E_x[τ(b)²] for x = left..=b.
    pub second_moment: Vec<f64>,
    /// Var_a(τ(b)), formed before rounding.
    pub variance_from_a: f64,
}

impl OracleSolution {
    pub fn exit_from(&self, x: i64) -> f64 {
        self.exit[(x - self.a) as usize]
    }

    pub fn expected_from(&self, x: i64) -> f64 {
        self.expected[(x - self.left) as usize]
    }
}

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite transition probability")
}

/// Solves a_i u_{i−1} + b_i u_i + c_i u_{i+1} = d_i by forward elimination.
fn thomas(lower: &[BigRational], diag: &[BigRational], upper: &[BigRational], rhs: &[BigRational]) -> Vec<BigRational> {
    let n = diag.len();
    let mut c = vec![BigRational::zero(); n];
    let mut d = vec![BigRational::zero(); n];
    c[0] = &upper[0] / &diag[0];
    d[0] = &rhs[0] / &diag[0];
    for i in 1..n {
        let m = &diag[i] - &lower[i] * &c[i - 1];
        if i + 1 < n {
            c[i] = &upper[i] / &m;
        }
        d[i] = (&rhs[i] - &lower[i] * &d[i - 1]) / &m;
    }
    let mut x = vec![BigRational::zero(); n];
    x[n - 1] = d[n - 1].clone();
    for i in (0..n - 1).rev() {
        x[i] = &d[i] - &c[i] * &x[i + 1];
    }
    x
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Absorbing at a and b for the exit problem; reflecting at the window's
/// left edge for the hitting-time moments of b.
pub fn oracle_solve(env: &Environment, a: i64, b: i64) -> Result<OracleSolution> {
    env.check_site(a)?;
    env.check_site(b)?;
    let left = env.left();
    if a >= b || b - left > MAX_ORACLE_WINDOW {
        return Err(Error::Window(format!(
            "oracle needs a < b and b − left <= {MAX_ORACLE_WINDOW} (a = {a}, b = {b}, left = {left})"
        )));
    }
    let one = BigRational::one();
    let omega: Vec<BigRational> = (left..=b).map(|x| rat(env.omega(x))).collect();
    let w = |x: i64| &omega[(x - left) as usize];

    // Exit: h_x − ω h_{x+1} − (1−ω) h_{x−1} = 0, h_a = 0, h_b = 1.
    let mut exit = vec![0.0; (b - a + 1) as usize];
    exit[(b - a) as usize] = 1.0;
    if b - a > 1 {
        let interior: Vec<i64> = (a + 1..b).collect();
        let lower: Vec<BigRational> = interior.iter().map(|&x| -(&one - w(x))).collect();
        let diag = vec![one.clone(); interior.len()];
        let upper: Vec<BigRational> = interior.iter().map(|&x| -w(x).clone()).collect();
        let mut rhs = vec![BigRational::zero(); interior.len()];
        let last = interior.len() - 1;
        rhs[last] = w(b - 1).clone();
        let h = thomas(&lower, &diag, &upper, &rhs);
        for (k, hk) in h.iter().enumerate() {
            exit[k + 1] = to_f64(hk);
        }
    }

    // Moments of τ(b) on [left, b): E_L = 1 + E_{L+1}, E_b = 0.
    let sites: Vec<i64> = (left..b).collect();
    let n = sites.len();
    let mut lower = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for &x in &sites {
        diag.push(one.clone());
        if x == left {
            lower.push(BigRational::zero());
            upper.push(-one.clone());
        } else {
            lower.push(-(&one - w(x)));
            upper.push(-w(x).clone());
        }
    }
    let rhs = vec![one.clone(); n];
    let e = thomas(&lower, &diag, &upper, &rhs);
    // S_x − ω S_{x+1} − (1−ω) S_{x−1} = 2E_x − 1.
    let two = BigRational::from_integer(BigInt::from(2));
    let rhs2: Vec<BigRational> = e.iter().map(|ex| &two * ex - &one).collect();
    let s = thomas(&lower, &diag, &upper, &rhs2);
    let ka = (a - left) as usize;
    let variance = &s[ka] - &e[ka] * &e[ka];

    let mut expected: Vec<f64> = e.iter().map(to_f64).collect();
    expected.push(0.0);
    let mut second_moment: Vec<f64> = s.iter().map(to_f64).collect();
    second_moment.push(0.0);
    Ok(OracleSolution { a, b, left, exit, expected, second_moment, variance_from_a: to_f64(&variance) })
}

pub const VALIDATION_CASES: usize = 200;
pub const VALIDATION_MAX_WINDOW: usize = 60;
pub const EXIT_TOL: f64 = 1e-9;
pub const MEAN_TOL: f64 = 1e-9;
pub const VARIANCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    ExitProb,
    ExpectedHitting,
    VarianceHitting,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::ExitProb => "exit_prob",
            Op::ExpectedHitting => "expected_hitting",
            Op::VarianceHitting => "variance_hitting",
        }
    }

    pub const ALL: [Op; 3] = [Op::ExitProb, Op::ExpectedHitting, Op::VarianceHitting];

    fn tol(self) -> f64 {
        match self {
            Op::ExitProb => EXIT_TOL,
            Op::ExpectedHitting => MEAN_TOL,
            Op::VarianceHitting => VARIANCE_TOL,
        }
    }
}

/// Test hook: scales one op's fast value by (1 + rel) in one case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub op: Op,
    pub case: usize,
    pub rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCase {
    pub case: usize,
    /// Seed that regenerates this window alone: `stream(seed, "validate", &[case])`.
    pub seed: u64,
    pub left: i64,
    pub right: i64,
    pub a: i64,
    pub b: i64,
    /// Worst relative error over x ∈ [a, b].
    pub exit_rel: f64,
    pub mean_rel: f64,
    pub variance_rel: f64,
}

impl ValidationCase {
    pub fn error(&self, op: Op) -> f64 {
        match op {
            Op::ExitProb => self.exit_rel,
            Op::ExpectedHitting => self.mean_rel,
            Op::VarianceHitting => self.variance_rel,
        }
    }

    pub fn failing(&self) -> Vec<Op> {
        Op::ALL.into_iter().filter(|&op| !(self.error(op) <= op.tol())).collect()
    }
}

fn rel_err(fast: f64, exact: f64) -> f64 {
    if exact == 0.0 {
        fast.abs()
    } else {
        (fast - exact).abs() / exact.abs()
    }
}

/// Random windows of length 2..=60 with ω ∈ [0.05, 0.95]; fast formulas
/// (reflected at the window edge) against the rational oracle.
pub fn validation_suite(seed: u64, cases: usize, fault: Option<Fault>) -> Result<Vec<ValidationCase>> {
    (0..cases)
        .map(|case| {
            let mut rng = stream(seed, "validate", &[case as u64]);
            let len = rng.random_range(2..=VALIDATION_MAX_WINDOW);
            let left = -(rng.random_range(0..len) as i64);
            let omegas: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..=0.95)).collect();
            let env = Environment::from_omegas(left, omegas, Regime::Plain)?;
            let a = rng.random_range(env.left()..env.right());
            let b = rng.random_range(a + 1..=env.right());
            let o = oracle_solve(&env, a, b)?;
            let bump = |op: Op, v: f64| match fault {
                Some(f) if f.op == op && f.case == case => v * (1.0 + f.rel),
                _ => v,
            };
            let mut exit_rel = 0f64;
            for x in a..=b {
                exit_rel = exit_rel.max(rel_err(bump(Op::ExitProb, exit_prob(&env, a, x, b)?), o.exit_from(x)));
            }
            let mean = bump(Op::ExpectedHitting, expected_hitting_with(&env, a, b, LeftBoundary::Reflecting)?);
            let var = bump(Op::VarianceHitting, variance_hitting_with(&env, a, b, LeftBoundary::Reflecting)?);
            Ok(ValidationCase {
                case,
                seed,
                left: env.left(),
                right: env.right(),
                a,
                b,
                exit_rel,
                mean_rel: rel_err(mean, o.expected_from(a)),
                variance_rel: rel_err(var, o.variance_from_a),
            })
        })
        .collect()
}
