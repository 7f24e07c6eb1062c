use super::{deep_window, Censoring, CheckKind, Experiment, ExperimentConfig, ExperimentResult, ResultBuilder};
use crate::env::{sample_excursion, sample_excursion_summary};
use crate::error::Result;
use crate::limits::{estimate_constants, lambda_beta, lambda_kappa1, tail_fit_bootstrap, BOOTSTRAP_RESAMPLES};
use crate::quenched::{expected_hitting, LeftBoundary};
use crate::rng::Streams;
use crate::specialfn::ln_gamma_unchecked;
use crate::walk::{par_map, CrossingSampler, HittingSampler, WalkRequest};
use crate::env::EnvSpec;

pub struct Tails;

const CHUNK: usize = 10_000;

impl Experiment for Tails {
    fn name(&self) -> &'static str {
        "tails"
    }

    fn summary(&self) -> &'static str {
        "tail constants: Kesten amplitude, height tail, quenched mean and annealed hitting-time tails"
    }

    fn run(&self, config: &ExperimentConfig) -> Result<ExperimentResult> {
        let streams = Streams::new(config.seed, self.name());
        let report = estimate_constants(&config.spec, config.constants, &streams.child("constants"), config.workers)?;
        let kappa = config.kappa.unwrap_or(report.kappa);
        let law = config.spec.sampler()?;
        let mut out = ResultBuilder::new(self.name(), config, kappa);
        let (q_lo, q_hi) = config.fit_window;

        out.stat("kappa", report.kappa);
        out.stat("lambda", report.lambda);
        out.stat("c_k", report.c_k);
        out.stat("c_k_fit", report.c_k_fit);
        out.stat("c_k_ci_lo", report.c_k_ci.lo);
        out.stat("c_k_ci_hi", report.c_k_ci.hi);
        out.stat("kesten_kappa_hat", report.kesten_kappa_hat);
        out.stat("c_i", report.c_i);
        out.stat("c_u", report.c_u);
        out.stat("c_t", report.c_t);
        out.stat("e_e1", report.e_e1.value);
        out.stat("e_exp_kappa_v", report.e_exp_kappa_v.value);
        out.stat("a", report.a);
        if let EnvSpec::Beta { alpha, beta } = config.spec {
            if (report.kappa - 1.0).abs() < 1e-12 {
                let gap = (lambda_beta(alpha, beta)? - lambda_kappa1(&config.spec)?).abs();
                out.bound("lambda_closed_forms", CheckKind::Hard, gap, None, Some(1e-10), "Beta and kappa = 1 closed forms");
            }
        }
        out.bound("kesten_kappa", CheckKind::Hard, report.kesten_kappa_hat, Some(report.kappa - 0.1), Some(report.kappa + 0.1), "tail exponent of Kesten's series");
        if let Some(c) = report.c_k_closed_form {
            out.bound("c_k_fit", CheckKind::Hard, report.c_k_fit / c - 1.0, Some(-0.3), Some(0.3), "fitted C_K relative to the closed form");
            out.flag("c_k_ci_contains_closed_form", CheckKind::Soft, report.c_k_ci.contains(c), "bootstrap interval of the fitted C_K");
        }

        // Height tail.
        let heights = config.heights.clone().unwrap_or_else(|| vec![4.0, 6.0, 8.0]);
        let samples = config.samples.unwrap_or(10_000_000);
        let ex_streams = streams.child("iglehart");
        let chunks = samples.div_ceil(CHUNK);
        let counts = par_map(config.workers, chunks, |c| -> Result<Vec<u64>> {
            let mut rng = ex_streams.get(&[c as u64]);
            let mut hits = vec![0u64; heights.len()];
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                let s = sample_excursion_summary(&law, &mut rng)?;
                for (k, &h) in heights.iter().enumerate() {
                    hits[k] += (s.height >= h) as u64;
                }
            }
            Ok(hits)
        });
        let mut hits = vec![0u64; heights.len()];
        for part in counts {
            for (k, v) in part?.into_iter().enumerate() {
                hits[k] += v;
            }
        }
        let flat: Vec<f64> = heights.iter().zip(&hits).map(|(&h, &c)| c as f64 / samples as f64 * (kappa * h).exp()).collect();
        let lo = flat.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.series("height_tail_scaled", heights.clone(), flat.clone());
        out.bound("iglehart_flatness", CheckKind::Hard, (hi - lo) / lo, None, Some(0.25), "spread of P(H >= h) e^{kappa h} over h");
        for (&h, &f) in heights.iter().zip(&flat) {
            out.bound(&format!("iglehart_c_i_h{h}"), CheckKind::Hard, f / report.c_i - 1.0, Some(-0.25), Some(0.25), "P(H >= h) e^{kappa h} relative to C_I");
        }

        // Quenched mean and annealed hitting time of e_1 under P^{≥0}.
        let envs = config.env_replicas.unwrap_or(100_000);
        let env_streams = streams.child("env");
        let walk_streams = streams.child("walk");
        let rows = par_map(config.workers, envs.div_ceil(CHUNK), |c| -> Result<Vec<(f64, Option<f64>)>> {
            let len = CHUNK.min(envs - c * CHUNK);
            (0..len)
                .map(|j| {
                    let i = (c * CHUNK + j) as u64;
                    let mut rng = env_streams.get(&[i]);
                    let exc = sample_excursion(&law, &mut rng)?;
                    let env = deep_window(&law, &[exc], config.left_height, &mut rng)?;
                    let e1 = env.right();
                    let z = expected_hitting(&env, 0, e1)?;
                    let req = WalkRequest::to(0, e1).boundary(LeftBoundary::default());
                    let tau = CrossingSampler
                        .simulate(&env, &req, &mut walk_streams.get(&[i]))
                        .ok()
                        .filter(|r| !r.truncated)
                        .map(|r| r.tau_last() as f64);
                    Ok((z, tau))
                })
                .collect()
        });
        let mut z = Vec::with_capacity(envs);
        let mut tau = Vec::with_capacity(envs);
        let mut table = Vec::with_capacity(envs);
        let mut censoring = Censoring::default();
        for part in rows {
            for (zi, ti) in part? {
                censoring.total += 1;
                match ti {
                    Some(t) => tau.push(t),
                    None => censoring.failed += 1,
                }
                table.push(vec![table.len() as f64, zi, ti.unwrap_or(-1.0)]);
                z.push(zi);
            }
        }
        out.censoring(censoring);
        let two_k = 2f64.powf(kappa);
        let z_target = two_k * report.c_u;
        let t_target = two_k * ln_gamma_unchecked(kappa + 1.0).exp() * report.c_u;
        let mut boot = streams.child("bootstrap").get(&[]);
        let zf = tail_fit_bootstrap(&z, q_lo, q_hi, Some(kappa), BOOTSTRAP_RESAMPLES, &mut boot)?;
        let z_amp = zf.fit.amplitude_at_ref.expect("reference exponent given");
        out.stat("z_kappa_hat", zf.fit.kappa_hat);
        out.stat("z_amplitude", z_amp);
        out.stat("z_amplitude_free", zf.fit.amplitude);
        out.stat("z_hill", zf.fit.hill);
        out.stat("z_target", z_target);
        out.bound("z_kappa", CheckKind::Hard, zf.fit.kappa_hat, Some(kappa - 0.1), Some(kappa + 0.1), "tail exponent of E_w[tau(e_1)]");
        out.bound("z_amplitude", CheckKind::Hard, z_amp / z_target - 1.0, Some(-0.3), Some(0.3), "tail amplitude of E_w[tau(e_1)] relative to 2^kappa C_U");
        let tf = tail_fit_bootstrap(&tau, q_lo, q_hi, Some(kappa), BOOTSTRAP_RESAMPLES, &mut boot)?;
        let t_amp = tf.fit.amplitude_at_ref.expect("reference exponent given");
        out.stat("tau_kappa_hat", tf.fit.kappa_hat);
        out.stat("tau_amplitude", t_amp);
        out.stat("tau_amplitude_free", tf.fit.amplitude);
        out.stat("tau_hill", tf.fit.hill);
        out.stat("tau_target", t_target);
        out.bound("tau_kappa", CheckKind::Hard, tf.fit.kappa_hat, Some(kappa - 0.1), Some(kappa + 0.1), "tail exponent of tau(e_1)");
        out.bound("tau_amplitude", CheckKind::Hard, t_amp / t_target - 1.0, Some(-0.35), Some(0.35), "tail amplitude of tau(e_1) relative to C_T");
        out.table(&["env", "expected_tau", "tau"], table);
        Ok(out.finish())
    }
}
