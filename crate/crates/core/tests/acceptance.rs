//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwre::env::{EnvSpec, Environment, Regime};
use rwre::experiments::{experiment_names, reduced_config, run, CheckKind, ExperimentConfig, ExperimentResult};
use rwre::limits::{c_k_from_lambda, lambda_beta, lambda_kappa1};
use rwre::quenched::oracle::oracle_solve;
use rwre::quenched::{exit_prob, expected_hitting, expected_hitting_with, variance_hitting, variance_hitting_with, LeftBoundary};
use rwre::specialfn::{beta_fn, digamma, gamma, log_gamma};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn experiment(name: &str, config: &ExperimentConfig) -> Result<ExperimentResult, String> {
    run(name, config).map_err(|e| format!("{name}: {e}"))
}

/// Named checks must all pass; every other check is listed.
fn checks(r: &ExperimentResult, names: &[&str]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in names {
        match r.check(name) {
            Some(c) => {
                pass &= c.passed;
                parts.push(format!("{}={}{}", c.name, fmt(c.value), if c.passed { "" } else { " (failed)" }));
            }
            None => {
                pass = false;
                parts.push(format!("{name} missing"));
            }
        }
    }
    let soft: Vec<String> = r
        .checks
        .iter()
        .filter(|c| c.kind == CheckKind::Soft && !names.contains(&c.name.as_str()))
        .map(|c| format!("{}:{}", c.name, if c.passed { "ok" } else { "miss" }))
        .collect();
    if !soft.is_empty() {
        parts.push(format!("soft [{}]", soft.join(" ")));
    }
    if r.censoring.breach {
        pass = false;
        parts.push(format!("censored fraction {:.4}", r.censoring.fraction()));
    }
    outcome(pass, format!("{}: {}", r.name, parts.join(", ")))
}

fn hard_names(r: &ExperimentResult) -> Vec<&str> {
    r.checks.iter().filter(|c| c.kind == CheckKind::Hard).map(|c| c.name.as_str()).collect()
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_exit, mut worst_mean, mut worst_var) = (0f64, 0f64, 0f64);
    for _ in 0..200 {
        let len = rng.random_range(2..=60usize);
        let left = -(rng.random_range(0..len) as i64);
        let omegas: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..=0.95)).collect();
        let env = Environment::from_omegas(left, omegas, Regime::Plain).unwrap();
        let a = rng.random_range(env.left()..env.right());
        let b = rng.random_range(a + 1..=env.right());
        let o = oracle_solve(&env, a, b).unwrap();
        for x in a..=b {
            let p = exit_prob(&env, a, x, b).unwrap();
            let q = o.exit_from(x);
            if q > 0.0 {
                worst_exit = worst_exit.max(rel(p, q));
            } else {
                worst_exit = worst_exit.max(p.abs());
            }
        }
        let e = expected_hitting_with(&env, a, b, LeftBoundary::Reflecting).unwrap();
        worst_mean = worst_mean.max(rel(e, o.expected_from(a)));
        let v = variance_hitting_with(&env, a, b, LeftBoundary::Reflecting).unwrap();
        worst_var = worst_var.max(rel(v, o.variance_from_a));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_exit <= 1e-9 && worst_mean <= 1e-9 && worst_var <= 1e-8 && secs < 10.0,
        format!("200 windows: exit {worst_exit:.2e}, mean {worst_mean:.2e}, variance {worst_var:.2e}, {secs:.2} s"),
    )
}

fn closed_forms() -> Outcome {
    let env = Environment::homogeneous(0.7, -400, 10).unwrap();
    let e = expected_hitting(&env, 0, 1).unwrap();
    let v = variance_hitting(&env, 0, 1).unwrap();
    let (re, rv) = (rel(e, 2.5), rel(v, 13.125));
    outcome(re <= 1e-12 && rv <= 1e-9, format!("E = {e} (rel {re:.1e}), Var = {v} (rel {rv:.1e})"))
}

fn constants(tails: &ExperimentResult) -> Outcome {
    let spec = EnvSpec::beta(3.0, 2.0);
    let kappa = spec.calibrate_kappa().unwrap();
    let residual = (spec.moment_rho(kappa).unwrap() - 1.0).abs();
    let lb = lambda_beta(3.0, 2.0).unwrap();
    let lk = lambda_kappa1(&spec).unwrap();
    let c_k = c_k_from_lambda(kappa, spec.moment_rho_log(kappa).unwrap(), lb);
    let exact = (kappa - 1.0).abs() <= 1e-12 && residual <= 1e-12 && rel(lb, 4.0) <= 1e-10 && (lb - lk).abs() <= 1e-10 && rel(c_k, 2.0) <= 1e-10;
    let fit = checks(tails, &["lambda_closed_forms", "kesten_kappa", "c_k_fit"]);
    outcome(
        exact && fit.pass,
        format!("kappa = {kappa}, residual {residual:.1e}, lambda = {lb} / {lk}, C_K = {c_k}; {}", fit.detail),
    )
}

fn special_functions() -> Outcome {
    let psi1 = digamma(1.0).unwrap();
    let b12 = beta_fn(1.0, 2.0).unwrap();
    let g5 = gamma(5.0).unwrap();
    let mut worst_psi = 0f64;
    let mut worst_lg = 0f64;
    for k in 0..20_000 {
        let x = 1e-3 + k as f64 * 2.5e-3;
        let lhs = digamma(x + 1.0).unwrap();
        worst_psi = worst_psi.max((lhs - digamma(x).unwrap() - 1.0 / x).abs() / lhs.abs().max(1.0));
        let lg = log_gamma(x + 1.0).unwrap();
        worst_lg = worst_lg.max((lg - log_gamma(x).unwrap() - x.ln()).abs() / lg.abs().max(1.0));
    }
    let pass = (psi1 + 0.5772156649).abs() <= 1e-10
        && rel(b12, 0.5) <= 1e-12
        && rel(g5, 24.0) <= 1e-12
        && worst_psi <= 1e-10
        && worst_lg <= 1e-10;
    outcome(pass, format!("Psi(1) = {psi1}, B(1,2) = {b12}, Gamma(5) = {g5}, recurrences {worst_psi:.1e} / {worst_lg:.1e}"))
}

fn determinism() -> Outcome {
    let mut differing = Vec::new();
    for name in experiment_names() {
        let outputs: Vec<Result<String, String>> = [1, 8]
            .iter()
            .map(|&w| {
                let mut c = reduced_config(name, 20_240).unwrap();
                c.workers = w;
                experiment(name, &c).map(|mut r| {
                    r.config.workers = 1;
                    format!("{}\n{:?}", serde_json::to_string(&r).unwrap(), r.table)
                })
            })
            .collect();
        match (&outputs[0], &outputs[1]) {
            (Ok(a), Ok(b)) if a == b => {}
            (Err(e), _) | (_, Err(e)) => differing.push(e.clone()),
            _ => differing.push(name.to_string()),
        }
    }
    let detail = if differing.is_empty() {
        format!("{} experiments identical at 1 and 8 workers", experiment_names().len())
    } else {
        format!("differs: {}", differing.join(", "))
    };
    outcome(differing.is_empty(), detail)
}

fn default_run(name: &str, spec: &EnvSpec, f: impl Fn(&ExperimentResult) -> Outcome) -> Outcome {
    let mut c = ExperimentConfig::new(20_240);
    c.spec = spec.clone();
    match experiment(name, &c) {
        Ok(r) => f(&r),
        Err(e) => outcome(false, e),
    }
}

fn hard(r: &ExperimentResult) -> Outcome {
    checks(r, &hard_names(r))
}

fn main() -> ExitCode {
    let beta32 = EnvSpec::beta(3.0, 2.0);
    let mut failed = 0;
    let mut report = |n: usize, o: Outcome, t: Instant| {
        if !o.pass {
            failed += 1;
        }
        println!("criterion {n:>2}: {} ({:.0} s) {}", if o.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), o.detail);
    };

    let t = Instant::now();
    report(1, oracle_equivalence(), t);
    let t = Instant::now();
    report(2, closed_forms(), t);

    let t = Instant::now();
    let tails = experiment("tails", &ExperimentConfig::new(20_240));
    match &tails {
        Ok(r) => {
            report(3, constants(r), t);
            let t = Instant::now();
            let c_i: Vec<&str> = r.checks.iter().map(|c| c.name.as_str()).filter(|n| n.starts_with("iglehart_c_i")).collect();
            report(4, checks(r, &[&["iglehart_flatness"], c_i.as_slice()].concat()), t);
            report(5, checks(r, &["z_kappa", "z_amplitude"]), t);
            report(6, checks(r, &["tau_kappa", "tau_amplitude"]), t);
        }
        Err(e) => {
            for n in 3..=6 {
                report(n, outcome(false, e.clone()), t);
            }
        }
    }

    let t = Instant::now();
    report(7, default_run("single-valley", &beta32, |r| checks(r, &[&hard_names(r)[..], &["w1_final"]].concat())), t);

    let t = Instant::now();
    let mixture = default_run("theorem-mixture", &beta32, hard);
    let corollary = default_run("corollary", &beta32, hard);
    report(8, outcome(mixture.pass && corollary.pass, format!("{}; {}", mixture.detail, corollary.detail)), t);

    let t = Instant::now();
    let k1 = default_run("interarrival", &beta32, hard);
    let k13 = default_run("interarrival", &EnvSpec::beta(4.0, 2.7), hard);
    report(9, outcome(k1.pass && k13.pass, format!("kappa = 1 {}; kappa = 1.3 {}", k1.detail, k13.detail)), t);

    let t = Instant::now();
    report(10, special_functions(), t);
    let t = Instant::now();
    report(11, determinism(), t);

    if failed == 0 {
        println!("acceptance: all 11 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 11 criteria fail");
        ExitCode::FAILURE
    }
}
