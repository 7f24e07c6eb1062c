//! Monte Carlo simulation of the quenched walk.
//!
//! Two samplers share the `HittingSampler` trait: `step` moves the walk one
//! uniform draw at a time; `crossing` draws the edge-crossing counts of the
//! whole path at once, which has the same law for every statistic it reports
//! and costs time proportional to the visited range instead of τ.

mod crossing;
mod step;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crossing::CrossingSampler;
pub use step::StepSampler;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::quenched::LeftBoundary;
use crate::rng::{Stream, Streams};

pub const DEFAULT_HORIZON: u64 = 10_000_000_000;

/// What to record along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkRequest {
    pub start: i64,
    /// Increasing targets; the walk stops at the last one.
    pub goals: Vec<i64>,
    /// Pairs (x, y) of goals whose inter-arrival time τ(y) − τ(x) is wanted.
    pub pairs: Vec<(i64, i64)>,
    /// Sites z for which #{t < τ(last goal) : X_t ≤ z} is counted.
    pub markers: Vec<i64>,
    /// Record the durations of the failed attempts from `start`.
    pub failures: bool,
    pub horizon: u64,
    pub boundary: LeftBoundary,
}

impl WalkRequest {
    pub fn to(start: i64, goal: i64) -> Self {
        Self {
            start,
            goals: vec![goal],
            pairs: vec![],
            markers: vec![],
            failures: false,
            horizon: DEFAULT_HORIZON,
            boundary: LeftBoundary::Reflecting,
        }
    }

    pub fn goals(mut self, goals: Vec<i64>) -> Self {
        self.goals = goals;
        self
    }

    pub fn pairs(mut self, pairs: Vec<(i64, i64)>) -> Self {
        self.pairs = pairs;
        self
    }

    pub fn markers(mut self, markers: Vec<i64>) -> Self {
        self.markers = markers;
        self
    }

    pub fn with_failures(mut self) -> Self {
        self.failures = true;
        self
    }

    pub fn horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn boundary(mut self, boundary: LeftBoundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn last_goal(&self) -> i64 {
        *self.goals.last().expect("validated request has a goal")
    }

    fn validate(&self, env: &Environment) -> Result<()> {
        if self.goals.is_empty() {
            return Err(Error::Parameter("walk request without goals".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Parameter("horizon must be at least 1".into()));
        }
        env.check_site(self.start)?;
        let mut prev = self.start;
        for &g in &self.goals {
            env.check_site(g)?;
            if g <= prev {
                return Err(Error::Parameter(format!(
                    "goals must increase strictly from the start {}, got {:?}",
                    self.start, self.goals
                )));
            }
            prev = g;
        }
        for &(x, y) in &self.pairs {
            if !self.goals.contains(&x) || !self.goals.contains(&y) || x >= y {
                return Err(Error::Parameter(format!("pair ({x}, {y}) must be increasing goals")));
            }
        }
        Ok(())
    }

    fn goal_index(&self, x: i64) -> usize {
        self.goals.iter().position(|&g| g == x).expect("validated pair")
    }
}

/// Outcome of one replica. Vectors are aligned with the request fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WalkRecord {
    pub tau: Vec<u64>,
    pub inter_arrivals: Vec<u64>,
    pub time_left_of: Vec<u64>,
    /// Visits to the start after time 0, before the last goal is hit.
    pub returns: u64,
    /// Per goal: returns to the previous goal (or the start) before it is hit.
    pub segment_returns: Vec<u64>,
    pub failures: Vec<u64>,
    pub success: u64,
    pub truncated: bool,
}

impl WalkRecord {
    pub fn tau_last(&self) -> u64 {
        *self.tau.last().unwrap_or(&0)
    }

    fn fill_pairs(&mut self, req: &WalkRequest) {
        self.inter_arrivals = req
            .pairs
            .iter()
            .map(|&(x, y)| self.tau[req.goal_index(y)] - self.tau[req.goal_index(x)])
            .collect();
    }
}

pub trait HittingSampler: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the sampler can fill every field the request asks for.
    fn supports(&self, req: &WalkRequest) -> bool;

    fn simulate(&self, env: &Environment, req: &WalkRequest, rng: &mut Stream) -> Result<WalkRecord>;
}

static SAMPLERS: &[&dyn HittingSampler] = &[&StepSampler, &CrossingSampler];

pub fn sampler_names() -> Vec<&'static str> {
    SAMPLERS.iter().map(|s| s.name()).collect()
}

pub fn sampler(name: &str) -> Result<&'static dyn HittingSampler> {
    SAMPLERS
        .iter()
        .copied()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::Unknown { kind: "walk sampler", name: name.to_string() })
}

/// Exact Markov-chain walk from `req.start` with one uniform per step.
pub fn simulate(env: &Environment, req: &WalkRequest, rng: &mut Stream) -> Result<WalkRecord> {
    StepSampler.simulate(env, req, rng)
}

/// N = ⌊e/(−log p)⌋ for a unit exponential e, so that P(N = k) = p^k (1 − p).
pub fn couple_exponential_n(p: f64, e: f64) -> Result<u64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("return probability must lie in (0, 1), got {p}")));
    }
    if !(e >= 0.0) {
        return Err(Error::Domain(format!("exponential draw must be nonnegative, got {e}")));
    }
    Ok((e / -p.ln()).floor() as u64)
}

/// Inverse of `couple_exponential_n`: given N ~ Geom(p) and a uniform u,
/// e = c (N + U) with c = −log p and U the exponential of rate c truncated to
/// [0, 1), so that e is a unit exponential with ⌊e/c⌋ = N.
pub fn couple_n_exponential(p: f64, n: u64, u: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("return probability must lie in (0, 1), got {p}")));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::Domain(format!("uniform draw must lie in [0, 1), got {u}")));
    }
    let c = -p.ln();
    let frac = -(-u * -(-c).exp_m1()).ln_1p() / c;
    Ok(c * (n as f64 + frac.min(1.0)))
}

/// Runs `f(i)` for i in 0..n on a pool of `workers` threads and returns the
/// results in index order, so the output never depends on scheduling.
pub fn par_map<T, F>(workers: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub env_index: usize,
    pub replica: usize,
    pub record: std::result::Result<WalkRecord, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchTable {
    pub rows: Vec<BatchRow>,
}

impl BatchTable {
    pub fn ok_records(&self) -> impl Iterator<Item = &WalkRecord> {
        self.rows.iter().filter_map(|r| r.record.as_ref().ok()).filter(|r| !r.truncated)
    }

    pub fn censored(&self) -> usize {
        self.rows.iter().filter(|r| matches!(&r.record, Ok(rec) if rec.truncated)).count()
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.record.is_err()).count()
    }
}

#[derive(Debug, Clone)]
pub struct BatchSpec<'a> {
    pub sampler: &'a str,
    pub request: &'a WalkRequest,
    pub replicas: usize,
    pub workers: usize,
    pub streams: Streams,
}

/// Replica r of environment i uses the stream at path [i, r]. Errors are
/// recorded per row.
pub fn run_batch(envs: &[Environment], spec: &BatchSpec<'_>) -> Result<BatchTable> {
    let sampler = sampler(spec.sampler)?;
    if !sampler.supports(spec.request) {
        return Err(Error::Parameter(format!("sampler '{}' cannot fill this request", spec.sampler)));
    }
    let total = envs.len() * spec.replicas;
    let rows = par_map(spec.workers, total, |k| {
        let (i, r) = (k / spec.replicas, k % spec.replicas);
        let mut rng = spec.streams.get(&[i as u64, r as u64]);
        let record = sampler.simulate(&envs[i], spec.request, &mut rng).map_err(|e| e.to_string());
        BatchRow { env_index: i, replica: r, record }
    });
    Ok(BatchTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_law_is_geometric() {
        assert_eq!(couple_exponential_n(0.5, 0.0).unwrap(), 0);
        // P(N = k) = P(k ≤ e/ln 2 < k + 1) = 2^{−k} − 2^{−(k+1)}.
        let mut tv = 0.0;
        let c = 2f64.ln();
        for k in 0..=60u32 {
            let lo = k as f64 * c;
            let hi = (k + 1) as f64 * c;
            let exact = (-lo).exp() - (-hi).exp();
            tv += (exact - 0.5f64.powi(k as i32 + 1)).abs();
            assert_eq!(couple_exponential_n(0.5, lo + 1e-9).unwrap(), k as u64);
        }
        assert!(tv <= 1e-12);
        assert!(couple_exponential_n(1.0, 1.0).is_err());
        assert!(couple_exponential_n(0.0, 1.0).is_err());
    }

    #[test]
    fn registry_lookup() {
        assert_eq!(sampler_names(), vec!["step", "crossing"]);
        assert!(sampler("step").is_ok());
        assert!(matches!(sampler("teleport"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn empty_batch() {
        let req = WalkRequest::to(0, 1);
        let spec = BatchSpec { sampler: "step", request: &req, replicas: 4, workers: 2, streams: Streams::new(1, "t") };
        assert!(run_batch(&[], &spec).unwrap().rows.is_empty());
    }
}
