use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use super::{HittingSampler, WalkRecord, WalkRequest};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::quenched::LeftBoundary;
use crate::rng::Stream;

/// Samples the number of left steps D_x taken from every site before τ(b).
///
/// Each right step out of x is preceded by a geometric number of left steps,
/// and the right steps out of x number D_{x+1} + 1{a ≤ x < b}, so
/// D_x = Σ_{j ≤ D_{x+1} + 1{a≤x<b}} Geom_0(ω_x) and τ(b) = (b − a) + 2 Σ D_x.
/// Inter-goal segments are independent by the strong Markov property.
#[derive(Debug, Clone, Copy, Default)]
pub struct CrossingSampler;

/// Failures before `r` successes of probability ω, with ln_q = ln(1 − ω).
fn neg_binomial(r: u64, rho: f64, ln_q: f64, rng: &mut Stream) -> u64 {
    if r == 0 {
        return 0;
    }
    if r <= 16 {
        let mut total = 0u64;
        for _ in 0..r {
            let u = 1.0 - rng.random::<f64>();
            total += (u.ln() / ln_q) as u64;
        }
        return total;
    }
    let lambda = Gamma::new(r as f64, rho).expect("positive shape").sample(rng);
    if lambda > 1e12 {
        let z: f64 = StandardNormal.sample(rng);
        return (lambda + lambda.sqrt() * z).round().max(0.0) as u64;
    }
    match Poisson::new(lambda) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => 0,
    }
}

impl HittingSampler for CrossingSampler {
    fn name(&self) -> &'static str {
        "crossing"
    }

    fn supports(&self, req: &WalkRequest) -> bool {
        !req.failures
    }

    fn simulate(&self, env: &Environment, req: &WalkRequest, rng: &mut Stream) -> Result<WalkRecord> {
        req.validate(env)?;
        if req.failures {
            return Err(Error::Parameter("the crossing sampler cannot list failure durations".into()));
        }
        let left = env.left();
        let reflecting = req.boundary == LeftBoundary::Reflecting;
        let omegas = env.omegas();
        let s = req.start;
        let mut rec = WalkRecord {
            tau: Vec::with_capacity(req.goals.len()),
            segment_returns: Vec::with_capacity(req.goals.len()),
            time_left_of: vec![0; req.markers.len()],
            ..Default::default()
        };
        let mut elapsed: u64 = 0;
        let mut a = s;
        for &b in &req.goals {
            let mut d_next: u64 = 0;
            let mut left_steps: u64 = 0;
            let mut seg_returns: u64 = 0;
            let mut x = b - 1;
            while x >= left {
                let inside = x >= a;
                let up = d_next + inside as u64;
                if !inside && up == 0 {
                    break;
                }
                let w = omegas[(x - left) as usize];
                let d = if x == left && reflecting {
                    0
                } else {
                    let d = neg_binomial(up, (1.0 - w) / w, (-w).ln_1p(), rng);
                    if x == left && d > 0 {
                        return Err(Error::WindowExit(left));
                    }
                    d
                };
                if x == s || x == s + 1 {
                    rec.returns += d;
                }
                if x == a || x == a + 1 {
                    seg_returns += d;
                }
                for (k, &z) in req.markers.iter().enumerate() {
                    if x <= z {
                        rec.time_left_of[k] += up + d;
                    }
                }
                left_steps = left_steps.saturating_add(d);
                d_next = d;
                x -= 1;
            }
            let seg = ((b - a) as u64).saturating_add(left_steps.saturating_mul(2));
            elapsed = elapsed.saturating_add(seg);
            rec.tau.push(elapsed);
            rec.segment_returns.push(seg_returns);
            a = b;
        }
        rec.truncated = elapsed > req.horizon;
        if !rec.truncated {
            rec.fill_pairs(req);
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::mean_se;
    use crate::rng::stream;

    #[test]
    fn neg_binomial_mean() {
        let mut rng = stream(5, "nb", &[]);
        for r in [3u64, 40] {
            let w: f64 = 0.6;
            let rho = (1.0 - w) / w;
            let xs: Vec<f64> = (0..200_000).map(|_| neg_binomial(r, rho, (-w).ln_1p(), &mut rng) as f64).collect();
            let (m, se) = mean_se(&xs);
            let want = r as f64 * rho;
            assert!((m - want).abs() < 4.0 * se, "r = {r}: {m} vs {want}");
        }
    }

    #[test]
    fn ballistic_limit() {
        let env = Environment::homogeneous(1.0 - 1e-15, 0, 30).unwrap();
        let req = WalkRequest::to(0, 30).goals(vec![5, 30]);
        let rec = CrossingSampler.simulate(&env, &req, &mut stream(1, "t", &[])).unwrap();
        assert_eq!(rec.tau, vec![5, 30]);
    }

    #[test]
    fn refuses_failure_lists() {
        let env = Environment::homogeneous(0.7, 0, 3).unwrap();
        let req = WalkRequest::to(0, 3).with_failures();
        assert!(!CrossingSampler.supports(&req));
        assert!(CrossingSampler.simulate(&env, &req, &mut stream(1, "t", &[])).is_err());
    }
}
