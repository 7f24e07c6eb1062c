use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{deep_window, ladder_or, Censoring, CheckKind, Experiment, ExperimentConfig, ExperimentResult, ResultBuilder};
use crate::env::{sample_excursion, Environment, OmegaSampler};
use crate::error::{Error, Result};
use crate::limits::{estimate_constants, excursion_stats, wasserstein1, LimitModel, Provenance};
use crate::numerics::{iqr, median, CompensatedSum};
use crate::quenched::{excursion_moments, log_success_prob_between, LeftBoundary};
use crate::rng::Streams;
use crate::valleys::{deep_valleys, ladder_epochs, ValleyDecomposition};
use crate::walk::{couple_n_exponential, par_map, CrossingSampler, HittingSampler, WalkRequest};

/// P^{≥0} window with `n_right` excursions, its decomposition and the
/// weights Z_p.
fn weighted_window(
    law: &OmegaSampler,
    n_right: usize,
    left_height: f64,
    rng: &mut crate::rng::Stream,
) -> Result<(Environment, ValleyDecomposition, Vec<f64>)> {
    let right = (0..n_right).map(|_| sample_excursion(law, rng)).collect::<Result<Vec<_>>>()?;
    let env = deep_window(law, &right, left_height, rng)?;
    let decomp = ladder_epochs(&env, n_right)?;
    let w = excursion_moments(&env, &decomp, LeftBoundary::default())?;
    let z = w.log_mean.into_iter().map(f64::exp).collect();
    Ok((env, decomp, z))
}

/// The decomposition restricted to its first n excursions.
fn truncated(decomp: &ValleyDecomposition, n: usize) -> ValleyDecomposition {
    let mut d = decomp.clone();
    d.epochs.truncate(n + 1);
    d.heights.truncate(n);
    d
}

fn check_ladder(ladder: &[usize]) -> Result<()> {
    if ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter(format!("ladder must increase strictly, got {ladder:?}")));
    }
    Ok(())
}

pub struct TheoremMixture;

struct MixtureRow {
    w1: Vec<f64>,
    w1_fresh: Vec<f64>,
    w1_deep: Vec<f64>,
    gap: Vec<f64>,
    w1_interp: Vec<f64>,
    k_n: Vec<f64>,
    censoring: Censoring,
}

impl Experiment for TheoremMixture {
    fn name(&self) -> &'static str {
        "theorem-mixture"
    }

    fn summary(&self) -> &'static str {
        "quenched law of the centered hitting time vs the exponential mixture of the excursion weights"
    }

    fn run(&self, config: &ExperimentConfig) -> Result<ExperimentResult> {
        let kappa = config.kappa()?;
        let law = config.spec.sampler()?;
        let n = config.n.unwrap_or(4096);
        let ladder = ladder_or(config, n);
        check_ladder(&ladder)?;
        let n_max = *ladder.last().expect("nonempty ladder");
        let envs = config.env_replicas.unwrap_or(200);
        let walks = config.walk_replicas.unwrap_or(400);
        let threshold = config.threshold.unwrap_or(0.2);
        let streams = Streams::new(config.seed, self.name());
        let ex = excursion_stats(&config.spec, kappa, config.constants.excursions, &streams.child("excursions"), config.workers)?;
        let mut out = ResultBuilder::new(self.name(), config, kappa);
        out.stat("e_e1", ex.e_e1.value);
        out.stat("a", ex.a);
        if ex.a_fallback {
            out.warn("A = E[-V(e_1)] unstable between half and full sample; using A = 1");
        }
        // Room for the interpolated count ⌊e_n / E[e_1]⌋, which may exceed n.
        let n_right = n_max + n_max / 4 + 64;
        let env_streams = streams.child("env");
        let walk_streams = streams.child("walk");
        let mix_streams = streams.child("mixture");
        let rows = par_map(config.workers, envs, |i| -> Result<MixtureRow> {
            let (env, decomp, z) = weighted_window(&law, n_right, config.left_height, &mut env_streams.get(&[i as u64]))?;
            let goals: Vec<i64> = ladder.iter().map(|&k| decomp.epochs[k]).collect();
            let mut partial = CompensatedSum::new();
            let mut means = Vec::with_capacity(ladder.len());
            let mut next = 0usize;
            for (p, &zp) in z.iter().enumerate() {
                if next < ladder.len() && p == ladder[next] {
                    means.push(partial.value());
                    next += 1;
                }
                partial.add(zp);
            }
            while means.len() < ladder.len() {
                means.push(partial.value());
            }
            let scale: Vec<f64> = ladder.iter().map(|&k| (k as f64).powf(1.0 / kappa)).collect();
            let interp: Vec<usize> = goals.iter().map(|&e| ((e as f64 / ex.e_e1.value).floor() as usize).min(n_right)).collect();
            let deep: Vec<Vec<usize>> = ladder
                .iter()
                .map(|&k| {
                    deep_valleys(&truncated(&decomp, k), kappa, ex.a, config.gamma)
                        .map(|d| d.deep.iter().map(|v| v.sigma).collect())
                })
                .collect::<Result<_>>()?;

            // One goal per epoch: N_p, the returns to e_p before e_{p+1}, is
            // Geom with return probability r_p, and e_p = c_p (N_p + U_p)
            // couples a unit exponential to each walk.
            let epochs: Vec<i64> = decomp.epochs[1..=n_max].to_vec();
            let ret: Vec<f64> = (0..n_max)
                .map(|p| log_success_prob_between(&env, decomp.epochs[p], decomp.epochs[p + 1]).map(|l| -l.exp_m1()))
                .collect::<Result<_>>()?;
            let req = WalkRequest::to(0, epochs[n_max - 1]).goals(epochs).boundary(LeftBoundary::default());
            let mut censoring = Censoring::default();
            let mut walk_samples: Vec<Vec<f64>> = vec![Vec::with_capacity(walks); ladder.len()];
            let mut coupled: Vec<Vec<Vec<f64>>> = vec![vec![Vec::with_capacity(walks); ladder.len()]; 3];
            let p_max = interp.iter().copied().max().unwrap_or(0).max(n_max);
            let mut terms = vec![0.0f64; p_max];
            for r in 0..walks {
                censoring.total += 1;
                let mut wrng = walk_streams.get(&[i as u64, r as u64]);
                let rec = match CrossingSampler.simulate(&env, &req, &mut wrng) {
                    Ok(rec) if rec.truncated => {
                        censoring.truncated += 1;
                        continue;
                    }
                    Ok(rec) => rec,
                    Err(_) => {
                        censoring.failed += 1;
                        continue;
                    }
                };
                for (p, t) in terms.iter_mut().enumerate() {
                    let e = if p < n_max {
                        couple_n_exponential(ret[p], rec.segment_returns[p], wrng.random())?
                    } else {
                        Exp1.sample(&mut wrng)
                    };
                    *t = z[p] * (e - 1.0);
                }
                for k in 0..ladder.len() {
                    walk_samples[k].push((rec.tau[ladder[k] - 1] as f64 - means[k]) / scale[k]);
                    let full: f64 = terms[..ladder[k]].iter().sum();
                    let dv: f64 = deep[k].iter().map(|&p| terms[p]).sum();
                    let it: f64 = terms[..interp[k]].iter().sum();
                    coupled[0][k].push(full / scale[k]);
                    coupled[1][k].push(dv / scale[k]);
                    coupled[2][k].push(it / scale[k]);
                }
            }
            let mut fresh: Vec<Vec<f64>> = vec![Vec::with_capacity(walks); ladder.len()];
            for j in 0..walks {
                let mut rng = mix_streams.get(&[i as u64, j as u64]);
                for t in terms.iter_mut().take(n_max) {
                    let e: f64 = Exp1.sample(&mut rng);
                    *t = e - 1.0;
                }
                for k in 0..ladder.len() {
                    let full: f64 = terms[..ladder[k]].iter().zip(&z).map(|(t, zp)| t * zp).sum();
                    fresh[k].push(full / scale[k]);
                }
            }
            let mut row = MixtureRow { w1: vec![], w1_fresh: vec![], w1_deep: vec![], gap: vec![], w1_interp: vec![], k_n: vec![], censoring };
            for k in 0..ladder.len() {
                if walk_samples[k].is_empty() {
                    return Err(Error::Parameter(format!("environment {i}: every walk was censored")));
                }
                row.w1.push(wasserstein1(&walk_samples[k], &coupled[0][k])?);
                row.w1_fresh.push(wasserstein1(&walk_samples[k], &fresh[k])?);
                row.w1_deep.push(wasserstein1(&walk_samples[k], &coupled[1][k])?);
                row.gap.push(wasserstein1(&coupled[0][k], &coupled[1][k])?);
                row.w1_interp.push(wasserstein1(&walk_samples[k], &coupled[2][k])?);
                row.k_n.push(deep[k].len() as f64);
            }
            Ok(row)
        });
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        let med = |f: &dyn Fn(&MixtureRow) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>());
        let xs: Vec<f64> = ladder.iter().map(|&k| k as f64).collect();
        let mut w1 = Vec::new();
        let mut w1_fresh = Vec::new();
        let mut w1_deep = Vec::new();
        let mut gap = Vec::new();
        let mut w1_interp = Vec::new();
        for (k, rung) in ladder.iter().enumerate() {
            w1.push(med(&|r| r.w1[k]));
            w1_fresh.push(med(&|r| r.w1_fresh[k]));
            w1_deep.push(med(&|r| r.w1_deep[k]));
            gap.push(med(&|r| r.gap[k]));
            w1_interp.push(med(&|r| r.w1_interp[k]));
            out.stat(&format!("mean_k_n_{rung}"), rows.iter().map(|r| r.k_n[k]).sum::<f64>() / rows.len() as f64);
        }
        for r in &rows {
            out.censoring(r.censoring);
        }
        let last = ladder.len() - 1;
        let interp_change = (w1_interp[last] - w1[last]).abs() / w1[last];
        out.stat("median_w1_final", w1[last]);
        out.stat("median_w1_fresh_final", w1_fresh[last]);
        out.stat("median_w1_deep_final", w1_deep[last]);
        out.stat("median_gap_final", gap[last]);
        out.stat("interpolation_relative_change", interp_change);
        out.series("median_w1", xs.clone(), w1.clone());
        out.series("median_w1_fresh", xs.clone(), w1_fresh.clone());
        out.series("median_w1_deep", xs.clone(), w1_deep);
        out.series("median_gap", xs.clone(), gap);
        out.series("median_w1_interpolated", xs, w1_interp);
        out.decreasing("w1_decreasing", CheckKind::Hard, &w1);
        out.bound("w1_final", CheckKind::Soft, w1[last], None, Some(threshold), "median normalized W1 at the top of the ladder");
        out.decreasing("w1_fresh_decreasing", CheckKind::Soft, &w1_fresh);
        out.bound("w1_fresh_final", CheckKind::Soft, w1_fresh[last], None, Some(threshold), "median W1 against independent mixture draws");
        out.bound("interpolation", CheckKind::Soft, interp_change, None, Some(0.25), "relative change of W1 when n(x) is replaced by x/E[e_1]");
        let mut columns = vec!["env".to_string()];
        for &k in &ladder {
            for c in ["w1", "w1_fresh", "w1_deep", "gap", "w1_interp", "k_n"] {
                columns.push(format!("{c}_n{k}"));
            }
        }
        let table = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut v = vec![i as f64];
                for k in 0..ladder.len() {
                    v.extend([r.w1[k], r.w1_fresh[k], r.w1_deep[k], r.gap[k], r.w1_interp[k], r.k_n[k]]);
                }
                v
            })
            .collect();
        let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
        out.table(&cols, table);
        Ok(out.finish())
    }
}

/// sign(x) log(1 + |x|): compresses the heavy tails before W1 is taken.
pub(crate) fn compress(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

pub struct Corollary;

impl Corollary {
    fn model(config: &ExperimentConfig, kappa: f64, streams: &Streams) -> Result<LimitModel> {
        if let Some(lambda) = config.lambda {
            return LimitModel::new(kappa, lambda, Provenance::Estimated);
        }
        match LimitModel::closed_form(&config.spec) {
            Ok(m) => Ok(LimitModel { kappa, ..m }),
            Err(_) => {
                let r = estimate_constants(&config.spec, config.constants, &streams.child("constants"), config.workers)?;
                LimitModel::new(kappa, r.lambda, Provenance::Estimated)
            }
        }
    }
}

const LIMIT_CHUNK: usize = 1000;

pub(crate) fn limit_draws(model: &LimitModel, count: usize, tol: f64, streams: &Streams, workers: usize) -> Vec<f64> {
    let k = model.truncation_index(tol);
    let chunks = count.div_ceil(LIMIT_CHUNK);
    par_map(workers, chunks, |c| {
        let mut rng = streams.get(&[c as u64]);
        let len = LIMIT_CHUNK.min(count - c * LIMIT_CHUNK);
        (0..len).map(|_| model.limit_law_sample_k(k, true, &mut rng)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

impl Experiment for Corollary {
    fn name(&self) -> &'static str {
        "corollary"
    }

    fn summary(&self) -> &'static str {
        "annealed mixture of the excursion weights vs the Poisson limit law"
    }

    fn run(&self, config: &ExperimentConfig) -> Result<ExperimentResult> {
        let kappa = config.kappa()?;
        let law = config.spec.sampler()?;
        let n = config.n.unwrap_or(8192);
        let ladder = ladder_or(config, n);
        check_ladder(&ladder)?;
        let n_max = *ladder.last().expect("nonempty ladder");
        let envs = config.env_replicas.unwrap_or(2000);
        let draws = config.walk_replicas.unwrap_or(50);
        let samples = config.samples.unwrap_or(100_000);
        let threshold = config.threshold.unwrap_or(0.1);
        let streams = Streams::new(config.seed, self.name());
        let model = Self::model(config, kappa, &streams)?;
        let mut out = ResultBuilder::new(self.name(), config, kappa);
        out.stat("lambda", model.lambda);
        out.stat("truncation_index", model.truncation_index(config.limit_tol) as f64);

        let limit = limit_draws(&model, samples, config.limit_tol, &streams.child("limit"), config.workers);
        let limit_b = limit_draws(&model, samples, config.limit_tol, &streams.child("limit-b"), config.workers);
        let limit_c: Vec<f64> = limit.iter().map(|&x| compress(x)).collect();
        let scale_c = iqr(&limit_c);
        let scale_raw = iqr(&limit);
        let self_w1 = wasserstein1(&limit_c, &limit_b.iter().map(|&x| compress(x)).collect::<Vec<_>>())? / scale_c;
        out.stat("limit_iqr", scale_raw);
        out.stat("self_test_w1", self_w1);
        out.bound("self_test", CheckKind::Hard, self_w1, None, Some(0.02), "limit law against itself, two seeds");

        let env_streams = streams.child("env");
        let mix_streams = streams.child("mixture");
        let n_right = n_max + 64;
        let per_env = par_map(config.workers, envs, |i| -> Result<Vec<Vec<f64>>> {
            let (_, decomp, z) = weighted_window(&law, n_right, config.left_height, &mut env_streams.get(&[i as u64]))?;
            let scale: Vec<f64> = ladder.iter().map(|&k| (decomp.epochs[k] as f64).powf(1.0 / kappa)).collect();
            let mut rng = mix_streams.get(&[i as u64]);
            let mut samples = vec![Vec::with_capacity(draws); ladder.len()];
            for _ in 0..draws {
                let mut acc = 0.0f64;
                let mut next = 0usize;
                for (p, &zp) in z.iter().enumerate().take(n_max) {
                    let e: f64 = Exp1.sample(&mut rng);
                    acc += zp * (e - 1.0);
                    if p + 1 == ladder[next] {
                        samples[next].push(acc / scale[next]);
                        next += 1;
                    }
                }
            }
            Ok(samples)
        });
        let per_env = per_env.into_iter().collect::<Result<Vec<_>>>()?;
        let mut w1 = Vec::new();
        let mut w1_raw = Vec::new();
        let mut table = Vec::new();
        for k in 0..ladder.len() {
            let pooled: Vec<f64> = per_env.iter().flat_map(|s| s[k].iter().copied()).collect();
            let pooled_c: Vec<f64> = pooled.iter().map(|&x| compress(x)).collect();
            let w = wasserstein1(&pooled_c, &limit_c)? / scale_c;
            let wr = wasserstein1(&pooled, &limit)? / scale_raw;
            table.push(vec![ladder[k] as f64, w, wr, pooled.len() as f64]);
            w1.push(w);
            w1_raw.push(wr);
        }
        let xs: Vec<f64> = ladder.iter().map(|&k| k as f64).collect();
        let last = ladder.len() - 1;
        out.stat("w1_final", w1[last]);
        out.stat("w1_raw_final", w1_raw[last]);
        out.series("w1", xs.clone(), w1.clone());
        out.series("w1_raw", xs, w1_raw);
        out.decreasing("w1_decreasing", CheckKind::Hard, &w1);
        out.bound("w1_final", CheckKind::Soft, w1[last], None, Some(threshold), "pooled W1 after log compression, over the limit IQR");
        out.table(&["n", "w1", "w1_raw", "pooled"], table);
        Ok(out.finish())
    }
}
