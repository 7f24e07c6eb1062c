use rwre::env::{sample_env_conditioned_deep, EnvSpec};
use rwre::experiments::{experiment_names, reduced_config, run, CheckKind, ExperimentConfig, ExperimentResult};
use rwre::quenched::LeftBoundary;
use rwre::rng::stream;
use rwre::valleys::ladder_epochs;
use rwre::walk::{par_map, CrossingSampler, HittingSampler, WalkRequest};

fn render(mut r: ExperimentResult) -> String {
    r.config.workers = 1;
    format!("{}\n{:?}", serde_json::to_string(&r).unwrap(), r.table)
}

#[test]
fn every_experiment_ignores_the_worker_count() {
    for name in experiment_names() {
        let outputs: Vec<String> = [1, 8]
            .iter()
            .map(|&w| {
                let mut c = reduced_config(name, 11).unwrap();
                c.workers = w;
                render(run(name, &c).unwrap())
            })
            .collect();
        assert!(outputs[0] == outputs[1], "{name} differs between 1 and 8 workers");
    }
}

#[test]
fn results_round_trip_through_json() {
    let c = reduced_config("backtracking", 4).unwrap();
    let r = run("backtracking", &c).unwrap();
    let text = serde_json::to_string_pretty(&r).unwrap();
    let back: ExperimentResult = serde_json::from_str(&text).unwrap();
    assert_eq!(back.table.rows.len(), 0);
    let mut r = r;
    r.table = Default::default();
    assert_eq!(back, r);
    assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
}

#[test]
fn config_defaults_and_unknown_fields() {
    let c: ExperimentConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
    assert_eq!(c, ExperimentConfig::new(3));
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"seed": 3, "sead": 4}"#).is_err());
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"workers": 2}"#).is_err());
}

#[test]
fn reduced_runs_are_well_formed() {
    for name in experiment_names() {
        let r = run(name, &reduced_config(name, 2).unwrap()).unwrap();
        assert_eq!(r.name, name);
        assert!(!r.checks.is_empty(), "{name} has no checks");
        let hard = r.checks.iter().filter(|c| c.kind == CheckKind::Hard).all(|c| c.passed);
        assert_eq!(r.verdict.hard, hard);
        assert_eq!(r.verdict.pass, hard);
        assert!(r.statistics.values().all(|v| v.is_finite()));
        assert!(r.table.rows.iter().all(|row| row.len() == r.table.columns.len()));
        assert!(r.censoring.truncated + r.censoring.failed <= r.censoring.total);
    }
}

#[test]
fn seeds_change_the_outcome() {
    let a = run("single-valley", &reduced_config("single-valley", 1).unwrap()).unwrap();
    let b = run("single-valley", &reduced_config("single-valley", 2).unwrap()).unwrap();
    assert_ne!(a.statistics, b.statistics);
}

#[test]
fn parallel_batch_mean_matches_a_plain_loop() {
    let law = EnvSpec::beta(3.0, 2.0).sampler().unwrap();
    let env = sample_env_conditioned_deep(&law, 10, 40.0, &mut stream(5, "batch", &[])).unwrap();
    let e10 = ladder_epochs(&env, 10).unwrap().epochs[10];
    let req = WalkRequest::to(0, e10).boundary(LeftBoundary::default());
    let walk = |r: usize| CrossingSampler.simulate(&env, &req, &mut stream(6, "batch", &[r as u64])).unwrap().tau_last();
    let reps = 25_000;
    let batch = par_map(8, reps, walk);
    let mut total = 0u64;
    for r in 0..reps {
        total += walk(r);
    }
    assert_eq!(batch.iter().sum::<u64>(), total);
    assert_eq!(batch, (0..reps).map(walk).collect::<Vec<_>>());
}

#[test]
fn unknown_names_and_bad_configs_are_rejected() {
    assert!(run("nope", &ExperimentConfig::new(1)).is_err());
    assert!(reduced_config("nope", 1).is_err());
    let mut c = reduced_config("tails", 1).unwrap();
    c.samples = Some(0);
    assert!(run("tails", &c).is_err());
}
