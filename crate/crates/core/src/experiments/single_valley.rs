use rand::Rng;

use super::{deep_window, Censoring, CheckKind, Experiment, ExperimentConfig, ExperimentResult, ResultBuilder};
use crate::env::{sample_excursion_conditioned, HeightCondition};
use crate::error::{Error, Result};
use crate::limits::wasserstein1_exponential;
use crate::numerics::chi_square_sf;
use crate::quenched::{expected_hitting, success_prob, LeftBoundary};
use crate::rng::Streams;
use crate::valleys::{default_alpha, functionals, good_env_check, ladder_epochs, DEFAULT_REL_TOL};
use crate::walk::{par_map, CrossingSampler, HittingSampler, WalkRequest};

pub struct SingleValley;

pub const PIT_BINS: usize = 20;

/// t with log t − log log t = h, the time scale whose critical height is h.
fn time_scale(h: f64) -> f64 {
    let mut l = h.max(std::f64::consts::E);
    for _ in 0..100 {
        l = h + l.ln();
    }
    l.exp()
}

/// Randomized probability integral transform of a count N against the
/// geometric law P(N = k) = (1 − s)^k s.
pub fn geometric_pit(count: u64, success: f64, v: f64) -> f64 {
    let q = (-success).ln_1p();
    let tail = (count as f64 * q).exp();
    1.0 - tail + v * tail * success
}

/// Chi-square statistic of uniform values on `bins` equal cells and its p-value.
pub fn uniform_chi_square(values: &[f64], bins: usize) -> (f64, f64) {
    let mut counts = vec![0u64; bins];
    for &u in values {
        let b = ((u * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let expect = values.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    (stat, chi_square_sf(stat, bins - 1))
}

struct ValleyRow {
    e1: i64,
    height: f64,
    mean: f64,
    ratio: f64,
    success: f64,
    w1: f64,
    good: bool,
    pit: Vec<f64>,
    censoring: Censoring,
}

impl Experiment for SingleValley {
    fn name(&self) -> &'static str {
        "single-valley"
    }

    fn summary(&self) -> &'static str {
        "hitting time of the end of one deep conditioned valley vs the exponential law"
    }

    fn run(&self, config: &ExperimentConfig) -> Result<ExperimentResult> {
        let kappa = config.kappa()?;
        let law = config.spec.sampler()?;
        let heights = config.heights.clone().unwrap_or_else(|| vec![6.0, 8.0, 10.0]);
        if heights.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter(format!("heights must increase, got {heights:?}")));
        }
        let envs = config.env_replicas.unwrap_or(20);
        let walks = config.walk_replicas.unwrap_or(20_000);
        let threshold = config.threshold.unwrap_or(0.05);
        let alpha = config.alpha.unwrap_or_else(|| default_alpha(kappa));
        let streams = Streams::new(config.seed, self.name());
        let mut out = ResultBuilder::new(self.name(), config, kappa);
        let env_streams = streams.child("env");
        let walk_streams = streams.child("walk");
        let mut mean_w1 = Vec::new();
        let mut table = Vec::new();
        let mut last_rows = Vec::new();
        for (hk, &h) in heights.iter().enumerate() {
            let t = time_scale(h);
            let rows = par_map(config.workers, envs, |i| -> Result<ValleyRow> {
                let mut rng = env_streams.get(&[hk as u64, i as u64]);
                let exc = sample_excursion_conditioned(&law, HeightCondition::AtLeast, h, &mut rng, config.budget)?;
                let env = deep_window(&law, &[exc], config.left_height, &mut rng)?;
                let e1 = env.right();
                let mean = expected_hitting(&env, 0, e1)?;
                let decomp = ladder_epochs(&env, 1)?;
                let f = functionals(&env, &decomp, 0, DEFAULT_REL_TOL)?;
                let success = success_prob(&env)?;
                let good = good_env_check(&env, t, kappa, alpha, config.c, DEFAULT_REL_TOL).map(|g| g.all()).unwrap_or(false);
                let req = WalkRequest::to(0, e1).boundary(LeftBoundary::default());
                let mut censoring = Censoring::default();
                let mut scaled = Vec::with_capacity(walks);
                let mut pit = Vec::with_capacity(walks);
                for r in 0..walks {
                    censoring.total += 1;
                    let mut wrng = walk_streams.get(&[hk as u64, i as u64, r as u64]);
                    match CrossingSampler.simulate(&env, &req, &mut wrng) {
                        Ok(rec) if rec.truncated => censoring.truncated += 1,
                        Ok(rec) => {
                            scaled.push(rec.tau_last() as f64 / mean);
                            pit.push(geometric_pit(rec.returns, success, wrng.random()));
                        }
                        Err(_) => censoring.failed += 1,
                    }
                }
                if scaled.is_empty() {
                    return Err(Error::Parameter(format!("environment {i}: every walk was censored")));
                }
                Ok(ValleyRow {
                    e1,
                    height: f.height,
                    mean,
                    ratio: mean / (2.0 * f.log_z.exp()),
                    success,
                    w1: wasserstein1_exponential(&scaled),
                    good,
                    pit,
                    censoring,
                })
            });
            let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
            let m = rows.iter().map(|r| r.w1).sum::<f64>() / rows.len() as f64;
            mean_w1.push(m);
            let pit: Vec<f64> = rows.iter().flat_map(|r| r.pit.iter().copied()).collect();
            let (stat, p) = uniform_chi_square(&pit, PIT_BINS);
            out.stat(&format!("mean_w1_h{h}"), m);
            out.stat(&format!("chi_square_h{h}"), stat);
            out.stat(&format!("chi_square_p_h{h}"), p);
            out.stat(&format!("good_fraction_h{h}"), rows.iter().filter(|r| r.good).count() as f64 / rows.len() as f64);
            for (i, r) in rows.iter().enumerate() {
                out.censoring(r.censoring);
                table.push(vec![h, i as f64, r.e1 as f64, r.height, r.mean, r.ratio, r.success, r.w1, r.good as u8 as f64]);
            }
            if hk + 1 == heights.len() {
                last_rows = rows;
            }
        }
        let last = heights.len() - 1;
        let h_last = heights[last];
        out.series("mean_w1", heights.clone(), mean_w1.clone());
        out.decreasing("w1_decreasing", CheckKind::Hard, &mean_w1);
        out.bound("w1_final", CheckKind::Soft, mean_w1[last], None, Some(threshold), "mean W1 to Exp(1) at the largest height");
        let p = out.get(&format!("chi_square_p_h{h_last}")).unwrap_or(f64::NAN);
        out.bound("geometric_n", CheckKind::Hard, p, Some(1e-3), None, "pooled chi-square p-value of the number of failed attempts");
        let (lo, hi) = last_rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.ratio), b.max(r.ratio)));
        out.stat("ratio_min", lo);
        out.stat("ratio_max", hi);
        out.bound("ratio_min", CheckKind::Hard, lo, Some(0.8), None, "E[tau(e_1)] / (2 e^H M_1 M_2)");
        out.bound("ratio_max", CheckKind::Hard, hi, None, Some(1.25), "E[tau(e_1)] / (2 e^H M_1 M_2)");
        out.table(&["h", "env", "e1", "height", "mean_tau", "ratio", "success_prob", "w1", "good"], table);
        Ok(out.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pit_is_uniform_for_geometric_counts() {
        use crate::rng::stream;
        let mut rng = stream(4, "pit", &[]);
        let s: f64 = 0.3;
        let us: Vec<f64> = (0..50_000)
            .map(|_| {
                let n = (rng.random::<f64>().ln() / (1.0 - s).ln()).floor() as u64;
                geometric_pit(n, s, rng.random())
            })
            .collect();
        let (_, p) = uniform_chi_square(&us, PIT_BINS);
        assert!(p > 1e-3, "p = {p}");
        assert!(us.iter().all(|&u| (0.0..=1.0).contains(&u)));
    }

    #[test]
    fn time_scale_inverts_critical_height() {
        let t = time_scale(10.0);
        assert!((t.ln() - t.ln().ln() - 10.0).abs() < 1e-10);
    }
}
