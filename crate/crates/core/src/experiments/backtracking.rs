use super::{slope, CheckKind, Experiment, ExperimentConfig, ExperimentResult, ResultBuilder, Censoring};
use crate::env::{
    glue_excursions, sample_edge_omega, sample_excursion, sample_excursion_conditioned, sample_excursion_summary,
    sample_left_excursions, Environment, HeightCondition, OmegaSampler, Regime,
};
use crate::error::{Error, Result};
use crate::numerics::mean_se;
use crate::quenched::{expected_hitting, expected_time_left_of, LeftBoundary};
use crate::rng::{Stream, Streams};
use crate::valleys::{find_d_minus, ladder_epochs};
use crate::walk::{par_map, CrossingSampler, HittingSampler, WalkRequest};

/// Expected time spent left of d_− before τ(e_1), on {H_0 < h}.
///
/// Given ω, that time has mean Σ_{0≤x<e_1} e^{V(x)−V(d_−)} · (1 + 2W_{d_−}).
/// Under P^{≥0} the three pieces (excursion 0, the shallow left excursions
/// down to d_−, everything left of d_−) are independent, so the mean is
/// E[M 1{H<h}] · q / (1 − E[e^{V(e_1)} 1{H<h}]) · E[1 + 2W_{d_−}] with
/// M = Σ_{0≤x<e_1} e^{V(x)}, q = P(H ≥ h), and the last factor taken over
/// a window whose first left excursion is conditioned on H ≥ h.
pub struct Backtracking;

const MIN_DIRECT_EVENTS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factors {
    pub mass: f64,
    pub mass_se: f64,
    pub q: f64,
    pub shallow_drop: f64,
    pub crossing: f64,
    pub crossing_se: f64,
}

impl Factors {
    pub fn value(&self) -> f64 {
        self.mass * self.q / (1.0 - self.shallow_drop) * self.crossing
    }

    /// Relative standard error from the two Monte Carlo means.
    pub fn rel_se(&self) -> f64 {
        ((self.mass_se / self.mass).powi(2) + (self.crossing_se / self.crossing).powi(2)).sqrt()
    }
}

/// Left excursions: shallow ones until the first of height ≥ h, then enough
/// further ones to reach `left_height` beyond it.
fn left_until_high(law: &OmegaSampler, h: f64, left_height: f64, rng: &mut Stream, budget: u64) -> Result<Vec<crate::env::Excursion>> {
    let mut out = Vec::new();
    for _ in 0..budget {
        let exc = sample_excursion(law, rng)?;
        let high = exc.height >= h;
        out.push(exc);
        if high {
            out.extend(sample_left_excursions(law, 1, left_height, rng)?);
            return Ok(out);
        }
    }
    Err(Error::BudgetExhausted { budget, rate: 0.0 })
}

/// Window around 0 with excursion 0 on the right and `left` glued to its left.
fn window(law: &OmegaSampler, left: &[crate::env::Excursion], right: &[crate::env::Excursion], rng: &mut Stream) -> Result<Environment> {
    let edge = sample_edge_omega(law, rng)?;
    glue_excursions(left, right, edge, Regime::ConditionedNonnegLeft)
}

impl Experiment for Backtracking {
    fn name(&self) -> &'static str {
        "backtracking"
    }

    fn summary(&self) -> &'static str {
        "time spent left of the last high left valley before crossing the first excursion"
    }

    fn run(&self, config: &ExperimentConfig) -> Result<ExperimentResult> {
        let kappa = config.kappa()?;
        let law = config.spec.sampler()?;
        let heights = config.heights.clone().unwrap_or_else(|| vec![4.0, 6.0, 8.0]);
        if heights.len() < 2 || heights.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter(format!("need at least two increasing heights, got {heights:?}")));
        }
        let samples = config.samples.unwrap_or(2_000_000);
        let reps = config.env_replicas.unwrap_or(4000);
        let walk_reps = config.walk_replicas.unwrap_or(reps);
        let streams = Streams::new(config.seed, self.name());
        let mut out = ResultBuilder::new(self.name(), config, kappa);

        // Excursion-0 factors for every h from one sample.
        const CHUNK: usize = 10_000;
        let chunks = samples.div_ceil(CHUNK);
        let ex_streams = streams.child("excursions");
        let summaries = par_map(config.workers, chunks, |c| {
            let mut rng = ex_streams.get(&[c as u64]);
            let len = CHUNK.min(samples - c * CHUNK);
            (0..len).map(|_| sample_excursion_summary(&law, &mut rng)).collect::<Result<Vec<_>>>()
        });
        let mut summ = Vec::with_capacity(samples);
        for part in summaries {
            summ.extend(part?);
        }

        let left_streams = streams.child("left");
        let direct_streams = streams.child("direct");
        let walk_streams = streams.child("walk");
        let mut factored = Vec::new();
        let mut direct = Vec::new();
        let mut table = Vec::new();
        let mut censoring = Censoring::default();
        for (hk, &h) in heights.iter().enumerate() {
            let masses: Vec<f64> = summ.iter().map(|s| if s.height < h { s.log_sum_exp_v.exp() } else { 0.0 }).collect();
            let (mass, mass_se) = mean_se(&masses);
            let q = summ.iter().filter(|s| s.height >= h).count() as f64 / summ.len() as f64;
            let shallow_drop = summ.iter().filter(|s| s.height < h).map(|s| s.drop.exp()).sum::<f64>() / summ.len() as f64;
            if q == 0.0 {
                return Err(Error::Parameter(format!("no excursion of height >= {h} among {samples} samples")));
            }
            let crossings = par_map(config.workers, reps, |i| -> Result<f64> {
                let mut rng = left_streams.get(&[hk as u64, i as u64]);
                let high = sample_excursion_conditioned(&law, HeightCondition::AtLeast, h, &mut rng, config.budget)?;
                let mut left = vec![high];
                left.extend(sample_left_excursions(&law, 1, config.left_height, &mut rng)?);
                let right = [sample_excursion(&law, &mut rng)?];
                let env = window(&law, &left, &right, &mut rng)?;
                expected_hitting(&env, 0, 1)
            });
            let crossings = crossings.into_iter().collect::<Result<Vec<_>>>()?;
            let (crossing, crossing_se) = mean_se(&crossings);
            let f = Factors { mass, mass_se, q, shallow_drop, crossing, crossing_se };
            factored.push(f);

            // Direct route: exact quenched mean on whole sampled windows.
            let rows = par_map(config.workers, reps, |i| -> Result<(f64, f64, Option<Result<f64>>)> {
                let mut rng = direct_streams.get(&[hk as u64, i as u64]);
                let exc0 = sample_excursion(&law, &mut rng)?;
                let shallow = exc0.height < h;
                let left = left_until_high(&law, h, config.left_height, &mut rng, config.budget)?;
                let env = window(&law, &left, &[exc0], &mut rng)?;
                let decomp = ladder_epochs(&env, 1)?;
                let d_minus = find_d_minus(&decomp, h)?;
                let e1 = decomp.epochs[1];
                if !shallow {
                    return Ok((0.0, 0.0, None));
                }
                let exact = expected_time_left_of(&env, 0, e1, d_minus, LeftBoundary::default())?;
                let tau = expected_hitting(&env, 0, e1)?;
                let walk = (hk == 0 && i < walk_reps).then(|| {
                    let req = WalkRequest::to(0, e1).markers(vec![d_minus]).boundary(LeftBoundary::default());
                    CrossingSampler
                        .simulate(&env, &req, &mut walk_streams.get(&[i as u64]))
                        .map(|r| r.time_left_of[0] as f64)
                });
                Ok((exact, tau, walk))
            });
            let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
            let exact: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let taus: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let (d, d_se) = mean_se(&exact);
            let (tau_mean, _) = mean_se(&taus);
            direct.push(d);
            if hk == 0 {
                let mut walked = Vec::new();
                for (i, r) in rows.iter().enumerate() {
                    if i >= walk_reps {
                        break;
                    }
                    censoring.total += 1;
                    match &r.2 {
                        None => walked.push(0.0),
                        Some(Ok(t)) => walked.push(*t),
                        Some(Err(_)) => censoring.failed += 1,
                    }
                }
                let (w, w_se) = mean_se(&walked);
                out.stat(&format!("walk_estimate_h{h}"), w);
                out.stat(&format!("walk_estimate_se_h{h}"), w_se);
            }
            let v = f.value();
            out.stat(&format!("factored_h{h}"), v);
            out.stat(&format!("factored_rel_se_h{h}"), f.rel_se());
            out.stat(&format!("direct_h{h}"), d);
            out.stat(&format!("direct_se_h{h}"), d_se);
            out.stat(&format!("expected_tau_shallow_h{h}"), tau_mean);
            out.stat(&format!("relative_to_tau_h{h}"), v / tau_mean);
            let gap = (v - d).abs();
            let se = (d_se.powi(2) + (v * f.rel_se()).powi(2)).sqrt();
            // The direct mean is carried by {d_− = 0}, of probability q per replica.
            if reps as f64 * q >= MIN_DIRECT_EVENTS {
                out.bound(&format!("routes_agree_h{h}"), CheckKind::Soft, gap / se, None, Some(4.0), "factored and direct estimates, in standard errors");
            } else {
                out.warn(format!("h = {h}: {reps} direct replicas expect {:.1} windows with d_- = 0; direct route not compared", reps as f64 * q));
            }
            table.push(vec![h, v, f.rel_se(), d, d_se, mass, q, shallow_drop, crossing, tau_mean]);
        }
        out.censoring(censoring);
        let logs: Vec<f64> = factored.iter().map(|f| f.value().ln()).collect();
        let s = slope(&heights, &logs);
        let s_direct = slope(&heights, &direct.iter().map(|d| d.ln()).collect::<Vec<_>>());
        out.stat("slope", s);
        out.stat("slope_direct", s_direct);
        let corrected: Vec<f64> = logs.iter().zip(&heights).map(|(l, h)| l - h.ln()).collect();
        out.stat("slope_log_corrected", slope(&heights, &corrected));
        out.series("factored", heights.clone(), factored.iter().map(Factors::value).collect());
        out.series("direct", heights.clone(), direct);
        out.bound("slope", CheckKind::Hard, s, Some(-kappa - 0.3), Some(-kappa + 0.3), "log-linear slope in h");
        let h_last = *heights.last().expect("nonempty");
        let rel = out.get(&format!("relative_to_tau_h{h_last}")).unwrap_or(f64::NAN);
        out.bound("magnitude", CheckKind::Soft, rel, None, Some(1e-2), "relative to E[E_w tau(e_1); H < h] at the largest h");
        out.table(
            &["h", "factored", "factored_rel_se", "direct", "direct_se", "mass", "q", "shallow_drop", "crossing", "expected_tau_shallow"],
            table,
        );
        Ok(out.finish())
    }
}
