//! End-to-end experiments. Each one is registered by name behind the
//! `Experiment` trait and turns a config into a result with measured
//! statistics, hard and soft checks, and a per-environment table.

mod backtracking;
mod interarrival;
mod mixture;
mod single_valley;
mod tails;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use backtracking::Backtracking;
pub use interarrival::Interarrival;
pub use mixture::{Corollary, TheoremMixture};
pub use single_valley::SingleValley;
pub use tails::Tails;

use crate::env::{
    glue_excursions, sample_edge_omega, sample_left_excursions, EnvSpec, Environment, Excursion,
    OmegaSampler, Regime, DEFAULT_SPEC,
};
use crate::error::{Error, Result};
use crate::limits::{SampleSizes, DEFAULT_FIT_WINDOW};

/// Fraction of failed or truncated walks above which a run is flagged.
pub const MAX_CENSORED_FRACTION: f64 = 0.01;

fn default_spec() -> EnvSpec {
    DEFAULT_SPEC
}
fn default_workers() -> usize {
    1
}
fn default_gamma() -> f64 {
    0.5
}
fn default_c() -> f64 {
    crate::valleys::DEFAULT_C
}
fn default_fit_window() -> (f64, f64) {
    DEFAULT_FIT_WINDOW
}
fn default_budget() -> u64 {
    1_000_000_000
}
fn default_left_height() -> f64 {
    40.0
}
fn default_limit_tol() -> f64 {
    0.1
}

/// Unset sizes fall back to each experiment's own defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_spec")]
    pub spec: EnvSpec,
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Excursion count at the top of the ladder.
    pub n: Option<usize>,
    pub ladder: Option<Vec<usize>>,
    pub heights: Option<Vec<f64>>,
    pub env_replicas: Option<usize>,
    pub walk_replicas: Option<usize>,
    /// Monte Carlo sample count of the experiment's main estimator.
    pub samples: Option<usize>,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    /// Soft threshold on the final statistic.
    pub threshold: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub alpha: Option<f64>,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_fit_window")]
    pub fit_window: (f64, f64),
    /// Attempts allowed to each conditioned excursion sampler.
    #[serde(default = "default_budget")]
    pub budget: u64,
    /// Height of the left edge of every P^{≥0} window.
    #[serde(default = "default_left_height")]
    pub left_height: f64,
    /// Second-moment tolerance of the limit-law sampler.
    #[serde(default = "default_limit_tol")]
    pub limit_tol: f64,
    #[serde(default)]
    pub constants: SampleSizes,
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            spec: DEFAULT_SPEC,
            seed,
            workers: 1,
            n: None,
            ladder: None,
            heights: None,
            env_replicas: None,
            walk_replicas: None,
            samples: None,
            kappa: None,
            lambda: None,
            threshold: None,
            gamma: default_gamma(),
            alpha: None,
            c: default_c(),
            fit_window: DEFAULT_FIT_WINDOW,
            budget: default_budget(),
            left_height: default_left_height(),
            limit_tol: default_limit_tol(),
            constants: SampleSizes::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.n, self.env_replicas, self.walk_replicas, self.samples];
        if counts.iter().flatten().any(|&c| c == 0) || self.workers == 0 || self.budget == 0 {
            return Err(Error::Parameter("all counts must be at least 1".into()));
        }
        if let Some(l) = &self.ladder {
            if l.is_empty() || l.iter().any(|&x| x < 3) {
                return Err(Error::Parameter("ladder entries must be at least 3".into()));
            }
        }
        if let Some(h) = &self.heights {
            if h.is_empty() || h.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Parameter("heights must be finite and nonnegative".into()));
            }
        }
        let positive = [self.gamma, self.c, self.left_height, self.limit_tol];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::Parameter("gamma, c, left_height and limit_tol must be positive".into()));
        }
        for x in [self.kappa, self.lambda, self.threshold, self.alpha].into_iter().flatten() {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Parameter(format!("overrides and thresholds must be positive, got {x}")));
            }
        }
        let (lo, hi) = self.fit_window;
        if !(0.5 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Parameter(format!("fit window must satisfy 0.5 < lo < hi < 1, got ({lo}, {hi})")));
        }
        if self.kappa.is_some() {
            self.spec.sampler()?;
            let drift = self.spec.mean_log_rho()?;
            if !(drift < 0.0) {
                return Err(Error::NotTransient(drift));
            }
        } else {
            self.spec.validate()?;
        }
        Ok(())
    }

    /// κ used for every normalization: the override if given, else calibrated.
    pub fn kappa(&self) -> Result<f64> {
        match self.kappa {
            Some(k) => Ok(k),
            None => self.spec.calibrate_kappa(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Trend or exactness criterion; decides the verdict.
    Hard,
    /// Engineering threshold at finite size; reported only.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub value: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub passed: bool,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub hard: bool,
    pub soft: bool,
    /// Every hard check passed.
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Censoring {
    pub total: u64,
    pub truncated: u64,
    pub failed: u64,
    pub breach: bool,
}

impl Censoring {
    pub fn add(&mut self, other: Censoring) {
        self.total += other.total;
        self.truncated += other.truncated;
        self.failed += other.failed;
    }

    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            (self.truncated + self.failed) as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Per-environment rows for CSV export.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub config: ExperimentConfig,
    pub kappa: f64,
    pub statistics: BTreeMap<String, f64>,
    pub series: Vec<Series>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
    pub censoring: Censoring,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub table: Table,
}

impl ExperimentResult {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn statistic(&self, name: &str) -> Option<f64> {
        self.statistics.get(name).copied()
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }
}

pub(crate) struct ResultBuilder {
    name: &'static str,
    config: ExperimentConfig,
    kappa: f64,
    statistics: BTreeMap<String, f64>,
    series: Vec<Series>,
    checks: Vec<Check>,
    censoring: Censoring,
    warnings: Vec<String>,
    table: Table,
}

impl ResultBuilder {
    pub(crate) fn new(name: &'static str, config: &ExperimentConfig, kappa: f64) -> Self {
        let mut warnings = Vec::new();
        if config.spec.is_lattice() {
            warnings.push("discrete law: the non-lattice assumption may fail and limit laws may not apply".into());
        }
        Self {
            name,
            config: config.clone(),
            kappa,
            statistics: BTreeMap::new(),
            series: Vec::new(),
            checks: Vec::new(),
            censoring: Censoring::default(),
            warnings,
            table: Table::default(),
        }
    }

    pub(crate) fn stat(&mut self, key: &str, value: f64) {
        if value.is_finite() {
            self.statistics.insert(key.to_string(), value);
        } else {
            self.warnings.push(format!("statistic {key} is not finite"));
        }
    }

    pub(crate) fn get(&self, key: &str) -> Option<f64> {
        self.statistics.get(key).copied()
    }

    pub(crate) fn series(&mut self, name: &str, x: Vec<f64>, y: Vec<f64>) {
        if y.iter().chain(&x).any(|v| !v.is_finite()) {
            self.warnings.push(format!("series {name} has non-finite entries"));
        }
        let clean = |v: Vec<f64>| v.into_iter().map(|t| if t.is_finite() { t } else { 0.0 }).collect();
        self.series.push(Series { name: name.to_string(), x: clean(x), y: clean(y) });
    }

    fn push_check(&mut self, name: &str, kind: CheckKind, value: Option<f64>, lo: Option<f64>, hi: Option<f64>, passed: bool, note: &str) {
        let value = value.filter(|v| v.is_finite());
        self.checks.push(Check { name: name.into(), kind, value, lo, hi, passed, note: note.into() });
    }

    /// value ∈ [lo, hi], either side optional.
    pub(crate) fn bound(&mut self, name: &str, kind: CheckKind, value: f64, lo: Option<f64>, hi: Option<f64>, note: &str) {
        let passed = value.is_finite() && lo.is_none_or(|l| value >= l) && hi.is_none_or(|h| value <= h);
        self.push_check(name, kind, Some(value), lo, hi, passed, note);
    }

    pub(crate) fn flag(&mut self, name: &str, kind: CheckKind, passed: bool, note: &str) {
        self.push_check(name, kind, None, None, None, passed, note);
    }

    pub(crate) fn decreasing(&mut self, name: &str, kind: CheckKind, values: &[f64]) {
        let passed = strictly_decreasing(values);
        self.push_check(name, kind, None, None, None, passed, "strictly decreasing across the ladder");
    }

    pub(crate) fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub(crate) fn censoring(&mut self, c: Censoring) {
        self.censoring.add(c);
    }

    pub(crate) fn table(&mut self, columns: &[&str], rows: Vec<Vec<f64>>) {
        self.table = Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows };
    }

    pub(crate) fn finish(mut self) -> ExperimentResult {
        let hard = self.checks.iter().filter(|c| c.kind == CheckKind::Hard).all(|c| c.passed);
        let soft = self.checks.iter().filter(|c| c.kind == CheckKind::Soft).all(|c| c.passed);
        self.censoring.breach = self.censoring.fraction() > MAX_CENSORED_FRACTION;
        ExperimentResult {
            name: self.name.to_string(),
            config: self.config,
            kappa: self.kappa,
            statistics: self.statistics,
            series: self.series,
            checks: self.checks,
            verdict: Verdict { hard, soft, pass: hard },
            censoring: self.censoring,
            warnings: self.warnings,
            table: self.table,
        }
    }
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;

    fn summary(&self) -> &'static str;

    fn run(&self, config: &ExperimentConfig) -> Result<ExperimentResult>;
}

static EXPERIMENTS: &[&dyn Experiment] = &[&TheoremMixture, &Corollary, &SingleValley, &Interarrival, &Backtracking, &Tails];

pub fn experiment_names() -> Vec<&'static str> {
    EXPERIMENTS.iter().map(|e| e.name()).collect()
}

pub fn experiments() -> &'static [&'static dyn Experiment] {
    EXPERIMENTS
}

pub fn experiment(name: &str) -> Result<&'static dyn Experiment> {
    EXPERIMENTS
        .iter()
        .copied()
        .find(|e| e.name() == name)
        .ok_or_else(|| Error::Unknown { kind: "experiment", name: name.to_string() })
}

pub fn run(name: &str, config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    experiment(name)?.run(config)
}

/// Small sizes for smoke runs and determinism checks. Statistical checks
/// are not expected to pass at these sizes.
pub fn reduced_config(name: &str, seed: u64) -> Result<ExperimentConfig> {
    experiment(name)?;
    let mut c = ExperimentConfig::new(seed);
    c.constants = SampleSizes { excursions: 5_000, kesten: 20_000, ..SampleSizes::default() };
    match name {
        "theorem-mixture" => {
            c.n = Some(256);
            c.env_replicas = Some(6);
            c.walk_replicas = Some(20);
        }
        "corollary" => {
            c.n = Some(256);
            c.env_replicas = Some(50);
            c.walk_replicas = Some(5);
            c.samples = Some(2_000);
        }
        "single-valley" => {
            c.heights = Some(vec![3.0, 4.0, 5.0]);
            c.env_replicas = Some(3);
            c.walk_replicas = Some(500);
        }
        "interarrival" => {
            c.ladder = Some(vec![100, 300, 1_000]);
            c.env_replicas = Some(4);
        }
        "backtracking" => {
            c.heights = Some(vec![3.0, 4.0]);
            c.samples = Some(20_000);
            c.env_replicas = Some(200);
        }
        _ => {
            c.heights = Some(vec![3.0, 4.0]);
            c.samples = Some(50_000);
            c.env_replicas = Some(20_000);
            c.fit_window = (0.9, 0.99);
            c.constants.kesten = 100_000;
        }
    }
    Ok(c)
}

pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// P^{≥0} window with the given right excursions and a left part reaching
/// height `left_height`.
pub(crate) fn deep_window<R: Rng + ?Sized>(
    law: &OmegaSampler,
    right: &[Excursion],
    left_height: f64,
    rng: &mut R,
) -> Result<Environment> {
    let left = sample_left_excursions(law, 1, left_height, rng)?;
    let edge = sample_edge_omega(law, rng)?;
    glue_excursions(&left, right, edge, Regime::ConditionedNonnegLeft)
}

/// Least-squares slope of y on x.
pub(crate) fn slope(x: &[f64], y: &[f64]) -> f64 {
    crate::numerics::linear_fit(x, y).1
}

fn ladder_or(config: &ExperimentConfig, n: usize) -> Vec<usize> {
    config.ladder.clone().unwrap_or_else(|| vec![(n / 16).max(3), (n / 4).max(3), n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names() {
        assert_eq!(
            experiment_names(),
            vec!["theorem-mixture", "corollary", "single-valley", "interarrival", "backtracking", "tails"]
        );
        assert!(matches!(experiment("nope"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::new(1);
        assert!(c.validate().is_ok());
        c.env_replicas = Some(0);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(1);
        c.fit_window = (0.9999, 0.99);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(1);
        c.spec = EnvSpec::TwoPoint { values: [0.25, 0.75], weights: [0.5, 0.5] };
        assert!(matches!(c.validate(), Err(Error::NotTransient(_))));
    }

    #[test]
    fn decreasing_is_strict() {
        assert!(strictly_decreasing(&[3.0, 2.0, 1.0]));
        assert!(!strictly_decreasing(&[3.0, 3.0, 1.0]));
        assert!(strictly_decreasing(&[1.0]));
    }
}
