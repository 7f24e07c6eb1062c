use proptest::prelude::*;
use rwre::env::{sample_env_conditioned_deep, EnvSpec};
use rwre::limits::{tail_fit, DEFAULT_FIT_WINDOW};
use rwre::rng::stream;
use rwre::valleys::{functionals, ladder_epochs, DEFAULT_REL_TOL};
use rwre::walk::par_map;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ladder_and_heights(seed in any::<u64>(), n in 1usize..40) {
        let law = EnvSpec::beta(3.0, 2.0).sampler().unwrap();
        let env = sample_env_conditioned_deep(&law, n, 40.0, &mut stream(seed, "ladder", &[])).unwrap();
        let d = ladder_epochs(&env, n).unwrap();
        for p in 0..n {
            let (a, b) = (d.epochs[p], d.epochs[p + 1]);
            prop_assert!(env.v(b) <= env.v(a));
            for x in a + 1..b {
                prop_assert!(env.v(x) > env.v(a));
            }
            let open = (a..b).map(|x| env.v(x) - env.v(a)).fold(f64::NEG_INFINITY, f64::max);
            let closed = (a..=b).map(|x| env.v(x) - env.v(a)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(open, closed);
            prop_assert!((d.heights[p] - open).abs() <= 1e-12 * open.abs().max(1.0));
            let f = functionals(&env, &d, p, DEFAULT_REL_TOL).unwrap();
            prop_assert!(f.log_m1 <= f.log_m1_prime);
            prop_assert!((f.log_z - (f.log_m1 + f.log_m2 + f.height)).abs() <= 1e-12 * f.log_z.abs().max(1.0));
        }
    }
}

struct Sample {
    height: f64,
    log_z: f64,
    log_m1p_m2: f64,
}

fn first_excursions(count: usize) -> Vec<Sample> {
    let law = EnvSpec::beta(3.0, 2.0).sampler().unwrap();
    par_map(1, count, |i| {
        let env = sample_env_conditioned_deep(&law, 1, 40.0, &mut stream(21, "z-tail", &[i as u64])).unwrap();
        let d = ladder_epochs(&env, 1).unwrap();
        let f = functionals(&env, &d, 0, DEFAULT_REL_TOL).unwrap();
        Sample { height: f.height, log_z: f.log_z, log_m1p_m2: f.log_m1_prime + f.log_m2 }
    })
}

#[test]
fn z_tail_and_renewal_estimates() {
    let samples = first_excursions(100_000);
    let z: Vec<f64> = samples.iter().map(|s| s.log_z.exp()).collect();
    let fit = tail_fit(&z, DEFAULT_FIT_WINDOW.0, DEFAULT_FIT_WINDOW.1).unwrap();
    assert!((fit.kappa_hat - 1.0).abs() < 0.1, "Z tail exponent {}", fit.kappa_hat);

    // E[M1' M2 e^{γH} ; H < h] stays bounded for γ < κ and grows like e^{(γ−κ)h} beyond.
    let hs = [4.0, 6.0, 8.0];
    let slope = |gamma: f64| {
        let logs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let total: f64 = samples
                    .iter()
                    .filter(|s| s.height < h)
                    .map(|s| (s.log_m1p_m2 + gamma * s.height).exp())
                    .sum();
                (total / samples.len() as f64).ln()
            })
            .collect();
        (logs[2] - logs[0]) / (hs[2] - hs[0])
    };
    let below = slope(0.5);
    let above = slope(1.5);
    assert!(below.abs() < 0.1, "γ = 0.5 slope {below}");
    assert!((0.3..0.7).contains(&above), "γ = 1.5 slope {above}");
}
