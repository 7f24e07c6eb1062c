mod common;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rwre::env::{
    glue_excursions, sample_edge_omega, sample_env_conditioned_deep, sample_excursion_conditioned,
    sample_env, sample_left_excursions, EnvSpec, Environment, HeightCondition, Regime,
};
use rwre::limits::wasserstein1_exponential;
use rwre::quenched::{
    expected_hitting, expected_hitting_with, expected_time_left_of, log_success_prob_between, success_prob,
    variance_hitting_with, LeftBoundary,
};
use rwre::rng::stream;
use rwre::valleys::ladder_epochs;
use rwre::walk::{couple_n_exponential, CrossingSampler, HittingSampler, StepSampler, WalkRequest};

fn samplers() -> [&'static dyn HittingSampler; 2] {
    [&StepSampler, &CrossingSampler]
}

fn test_env(seed: u64, n: usize) -> Environment {
    let law = EnvSpec::beta(3.0, 2.0).sampler().unwrap();
    sample_env_conditioned_deep(&law, n, 40.0, &mut stream(seed, "walk-env", &[])).unwrap()
}

fn run(s: &dyn HittingSampler, env: &Environment, req: &WalkRequest, reps: usize, tag: &str) -> Vec<rwre::walk::WalkRecord> {
    (0..reps).map(|r| s.simulate(env, req, &mut stream(3, tag, &[r as u64])).unwrap()).collect()
}

/// Reflected Beta(3, 2) window on [−10, 30]; the hitting moments of 25 are light-tailed here.
fn reflected_env(seed: u64) -> Environment {
    let law = EnvSpec::beta(3.0, 2.0).sampler().unwrap();
    sample_env(&law, -10, 30, &mut stream(seed, "walk-window", &[])).unwrap()
}

#[test]
fn hitting_time_mean_and_variance() {
    for seed in 0..3 {
        let env = reflected_env(seed);
        let b = 25;
        let mean = expected_hitting_with(&env, 0, b, LeftBoundary::Reflecting).unwrap();
        let var = variance_hitting_with(&env, 0, b, LeftBoundary::Reflecting).unwrap();
        let req = WalkRequest::to(0, b).boundary(LeftBoundary::Reflecting);
        for s in samplers() {
            let t: Vec<f64> = run(s, &env, &req, 20_000, s.name()).iter().map(|r| r.tau_last() as f64).collect();
            let n = t.len() as f64;
            let (m, v) = common::mean_var(&t);
            assert!((m - mean).abs() <= 4.0 * (var / n).sqrt(), "{} env {seed}: mean {m} vs {mean}", s.name());
            let m4 = t.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
            let v_se = ((m4 - v * v) / n).sqrt();
            assert!((v - var).abs() <= 5.0 * v_se, "{} env {seed}: variance {v} vs {var}", s.name());
        }
    }
}

#[test]
fn time_left_of_marker() {
    let env = test_env(7, 4);
    let d = ladder_epochs(&env, 4).unwrap();
    let b = d.epochs[4];
    let z = d.epochs[1];
    let want = expected_time_left_of(&env, 0, b, z, LeftBoundary::default()).unwrap();
    let want0 = expected_time_left_of(&env, 0, b, -3, LeftBoundary::default()).unwrap();
    let req = WalkRequest::to(0, b).markers(vec![z, -3]).boundary(LeftBoundary::default());
    for s in samplers() {
        let recs = run(s, &env, &req, 20_000, "left-of");
        for (k, target) in [want, want0].into_iter().enumerate() {
            let xs: Vec<f64> = recs.iter().map(|r| r.time_left_of[k] as f64).collect();
            let (m, v) = common::mean_var(&xs);
            let se = (v / xs.len() as f64).sqrt();
            assert!((m - target).abs() <= 4.0 * se, "{} marker {k}: {m} vs {target}", s.name());
        }
    }
}

#[test]
fn returns_to_each_segment_start() {
    let env = test_env(9, 5);
    let d = ladder_epochs(&env, 5).unwrap();
    let goals = d.epochs[1..].to_vec();
    let req = WalkRequest::to(0, goals[4]).goals(goals).boundary(LeftBoundary::default());
    for s in samplers() {
        let recs = run(s, &env, &req, 20_000, "segments");
        for p in 0..5 {
            let succ = log_success_prob_between(&env, d.epochs[p], d.epochs[p + 1]).unwrap().exp();
            let want = (1.0 - succ) / succ;
            let xs: Vec<f64> = recs.iter().map(|r| r.segment_returns[p] as f64).collect();
            let (m, v) = common::mean_var(&xs);
            let se = (v / xs.len() as f64).sqrt().max(1e-12);
            assert!((m - want).abs() <= 4.0 * se, "{} segment {p}: {m} vs {want}", s.name());
        }
        assert!(recs.iter().all(|r| r.segment_returns[0] <= r.returns));
    }
}

/// First excursion of height ≥ h with a deep left window.
fn deep_valley(h: f64, seed: u64) -> Environment {
    let law = EnvSpec::beta(3.0, 2.0).sampler().unwrap();
    let mut rng = stream(seed, "deep-valley", &[]);
    let exc = sample_excursion_conditioned(&law, HeightCondition::AtLeast, h, &mut rng, 1_000_000_000).unwrap();
    let left = sample_left_excursions(&law, 1, 40.0, &mut rng).unwrap();
    let edge = sample_edge_omega(&law, &mut rng).unwrap();
    glue_excursions(&left, &[exc], edge, Regime::ConditionedNonnegLeft).unwrap()
}

#[test]
fn exponential_exit_from_a_deep_valley() {
    let env = deep_valley(9.0, 1);
    let e1 = env.right();
    let mean = expected_hitting(&env, 0, e1).unwrap();
    let success = success_prob(&env).unwrap();
    let req = WalkRequest::to(0, e1).boundary(LeftBoundary::default());
    let recs = run(&CrossingSampler, &env, &req, 20_000, "deep");
    let scaled: Vec<f64> = recs.iter().map(|r| r.tau_last() as f64 / mean).collect();
    let w1 = wasserstein1_exponential(&scaled);
    assert!(w1 <= 0.05, "W1 = {w1}");

    let n: Vec<f64> = recs.iter().map(|r| r.returns as f64).collect();
    let (m, v) = common::mean_var(&n);
    let want = (1.0 - success) / success;
    assert!((m - want).abs() <= 3.0 * (v / n.len() as f64).sqrt(), "E[N] = {m} vs {want}");
}

#[test]
fn coupled_exponential_is_exponential() {
    let mut rng = stream(5, "couple", &[]);
    for p in [0.01, 0.5, 0.999] {
        let xs: Vec<f64> = (0..50_000)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                let n = (e / -f64::ln(p)).floor() as u64;
                couple_n_exponential(p, n, rng.random()).unwrap()
            })
            .collect();
        assert!(wasserstein1_exponential(&xs) < 0.02, "p = {p}");
        assert!(xs.iter().all(|&e| e >= 0.0));
    }
    let e = couple_n_exponential(0.3, 4, 0.5).unwrap();
    assert_eq!((e / -f64::ln(0.3)).floor() as u64, 4);
}
