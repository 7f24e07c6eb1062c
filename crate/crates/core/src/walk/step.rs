use rand::Rng;

use super::{HittingSampler, WalkRecord, WalkRequest};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::quenched::LeftBoundary;
use crate::rng::Stream;

/// Moves right from y with probability ω_y, one uniform per step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepSampler;

impl HittingSampler for StepSampler {
    fn name(&self) -> &'static str {
        "step"
    }

    fn supports(&self, _req: &WalkRequest) -> bool {
        true
    }

    fn simulate(&self, env: &Environment, req: &WalkRequest, rng: &mut Stream) -> Result<WalkRecord> {
        req.validate(env)?;
        let left = env.left();
        let reflecting = req.boundary == LeftBoundary::Reflecting;
        let omegas = env.omegas();
        let mut rec = WalkRecord {
            tau: vec![0; req.goals.len()],
            segment_returns: vec![0; req.goals.len()],
            time_left_of: vec![0; req.markers.len()],
            ..Default::default()
        };
        let mut x = req.start;
        let mut t: u64 = 0;
        let mut next_goal = 0usize;
        let mut last_visit: u64 = 0;
        let final_goal = req.last_goal();
        loop {
            for (k, &z) in req.markers.iter().enumerate() {
                if x <= z {
                    rec.time_left_of[k] += 1;
                }
            }
            let w = omegas[(x - left) as usize];
            let right = (reflecting && x == left) || rng.random::<f64>() < w;
            if right {
                x += 1;
            } else {
                if x == left {
                    return Err(Error::WindowExit(left));
                }
                x -= 1;
            }
            t += 1;
            if x == req.start {
                rec.returns += 1;
                if req.failures {
                    rec.failures.push(t - last_visit);
                }
                last_visit = t;
            }
            let seg_start = if next_goal == 0 { req.start } else { req.goals[next_goal - 1] };
            if x == seg_start && next_goal < req.goals.len() {
                rec.segment_returns[next_goal] += 1;
            }
            while next_goal < req.goals.len() && x == req.goals[next_goal] {
                rec.tau[next_goal] = t;
                next_goal += 1;
            }
            if x == final_goal {
                break;
            }
            if t >= req.horizon {
                rec.truncated = true;
                break;
            }
        }
        rec.success = t - last_visit;
        if !rec.truncated {
            rec.fill_pairs(req);
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn ballistic_walk() {
        let env = Environment::homogeneous(1.0 - 1e-15, 0, 30).unwrap();
        let req = WalkRequest::to(0, 30).goals(vec![5, 17, 30]).pairs(vec![(5, 17)]);
        let rec = StepSampler.simulate(&env, &req, &mut stream(1, "t", &[])).unwrap();
        assert_eq!(rec.tau, vec![5, 17, 30]);
        assert_eq!(rec.inter_arrivals, vec![12]);
        assert_eq!(rec.returns, 0);
    }

    #[test]
    fn decomposition_identity() {
        let env = Environment::homogeneous(0.55, -200, 10).unwrap();
        let req = WalkRequest::to(0, 10).with_failures().markers(vec![0, -3]);
        for r in 0..200 {
            let rec = StepSampler.simulate(&env, &req, &mut stream(2, "t", &[r])).unwrap();
            let f: u64 = rec.failures.iter().sum();
            assert_eq!(f + rec.success, rec.tau_last());
            assert_eq!(rec.failures.len() as u64, rec.returns);
            assert!(rec.time_left_of[1] <= rec.time_left_of[0]);
        }
    }

    #[test]
    fn window_exit_and_horizon() {
        let env = Environment::homogeneous(0.2, -2, 40).unwrap();
        let req = WalkRequest::to(0, 40).boundary(LeftBoundary::default());
        let r = StepSampler.simulate(&env, &req, &mut stream(3, "t", &[]));
        assert!(matches!(r, Err(Error::WindowExit(-2))));
        let req = WalkRequest::to(0, 40).horizon(50);
        let rec = StepSampler.simulate(&env, &req, &mut stream(3, "t", &[])).unwrap();
        assert!(rec.truncated);
    }
}
