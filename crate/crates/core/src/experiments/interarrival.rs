use super::{deep_window, CheckKind, Experiment, ExperimentConfig, ExperimentResult, ResultBuilder};
use crate::env::{sample_excursion, Environment};
use crate::error::{Error, Result};
use crate::numerics::{median, LogSum};
use crate::quenched::{excursion_moments, LeftBoundary};
use crate::rng::Streams;
use crate::valleys::{critical_height, ladder_epochs, substitute_high_excursions};
use crate::walk::par_map;

pub struct Interarrival;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Sum over the excursions of height below h_n in the original window.
    Direct,
    /// Replace every excursion of height ≥ h_n, then sum over all of them.
    Modified,
}

impl Route {
    pub fn for_kappa(kappa: f64) -> Self {
        if (kappa - 1.0).abs() < 1e-9 {
            Route::Modified
        } else {
            Route::Direct
        }
    }
}

/// Var_ω(τ_IA) over the first n excursions, cut at height h.
pub fn interarrival_variance(
    env: &Environment,
    n: usize,
    h: f64,
    route: Route,
    law: &crate::env::OmegaSampler,
    budget: u64,
    rng: &mut crate::rng::Stream,
) -> Result<f64> {
    let (window, keep_all) = match route {
        Route::Direct => (None, false),
        Route::Modified => (Some(substitute_high_excursions(env, law, h, rng, budget)?), true),
    };
    let w = window.as_ref().unwrap_or(env);
    let decomp = ladder_epochs(w, n)?;
    let moments = excursion_moments(w, &decomp, LeftBoundary::default())?;
    let mut acc = LogSum::new();
    for (p, &lv) in moments.log_var.iter().enumerate() {
        if keep_all || decomp.heights[p] < h {
            acc.push(lv);
        }
    }
    Ok(if acc.is_empty() { 0.0 } else { acc.value() })
}

impl Experiment for Interarrival {
    fn name(&self) -> &'static str {
        "interarrival"
    }

    fn summary(&self) -> &'static str {
        "quenched variance of the time spent in shallow excursions against its envelope"
    }

    fn run(&self, config: &ExperimentConfig) -> Result<ExperimentResult> {
        let kappa = config.kappa()?;
        if !(kappa > 0.0 && kappa < 2.0) {
            return Err(Error::Parameter(format!("kappa must lie in (0, 2), got {kappa}")));
        }
        let law = config.spec.sampler()?;
        let ladder = config.ladder.clone().unwrap_or_else(|| vec![1_000, 10_000, 100_000]);
        if ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter(format!("ladder must increase strictly, got {ladder:?}")));
        }
        let n_max = *ladder.last().expect("nonempty ladder");
        let envs = config.env_replicas.unwrap_or(50);
        let route = Route::for_kappa(kappa);
        let forced = config.heights.as_ref().and_then(|h| h.first().copied());
        let cuts: Vec<f64> = ladder
            .iter()
            .map(|&n| forced.map(Ok).unwrap_or_else(|| critical_height(n as f64, kappa)))
            .collect::<Result<_>>()?;
        let streams = Streams::new(config.seed, self.name());
        let env_streams = streams.child("env");
        let sub_streams = streams.child("substitute");
        let mut out = ResultBuilder::new(self.name(), config, kappa);
        out.stat("modified_route", (route == Route::Modified) as u8 as f64);
        let rows = par_map(config.workers, envs, |i| -> Result<Vec<f64>> {
            let mut rng = env_streams.get(&[i as u64]);
            let right = (0..n_max).map(|_| sample_excursion(&law, &mut rng)).collect::<Result<Vec<_>>>()?;
            let env = deep_window(&law, &right, config.left_height, &mut rng)?;
            ladder
                .iter()
                .zip(&cuts)
                .enumerate()
                .map(|(k, (&n, &h))| {
                    let mut srng = sub_streams.get(&[i as u64, k as u64]);
                    interarrival_variance(&env, n, h, route, &law, config.budget, &mut srng)
                })
                .collect()
        });
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        let mut stat = Vec::new();
        let mut ratio = Vec::new();
        for (k, &n) in ladder.iter().enumerate() {
            let nf = n as f64;
            let s = median(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()) / nf.powf(2.0 / kappa);
            let envelope = nf.ln().powf(-(2.0 - kappa));
            stat.push(s);
            ratio.push(s / envelope);
            out.stat(&format!("h_n{n}"), cuts[k]);
        }
        let xs: Vec<f64> = ladder.iter().map(|&n| n as f64).collect();
        out.series("normalized_variance", xs.clone(), stat.clone());
        out.series("envelope_ratio", xs, ratio.clone());
        let first = ratio[0];
        let worst = ratio.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.stat("envelope_ratio_max_over_first", worst / first);
        if first > 0.0 {
            out.bound("envelope", CheckKind::Hard, worst / first, None, Some(2.0), "largest envelope ratio over the first one");
        } else {
            out.flag("envelope", CheckKind::Hard, worst <= 0.0, "no shallow excursions at the first ladder entry");
        }
        out.decreasing("variance_decreasing", CheckKind::Soft, &stat);
        let mut table = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            for (k, &n) in ladder.iter().enumerate() {
                table.push(vec![i as f64, n as f64, cuts[k], r[k], r[k] / (n as f64).powf(2.0 / kappa)]);
            }
        }
        out.table(&["env", "n", "h_n", "variance", "normalized_variance"], table);
        Ok(out.finish())
    }
}
