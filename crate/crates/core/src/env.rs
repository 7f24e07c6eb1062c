//! Environment laws, finite environment windows and excursion samplers.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CompensatedSum, LogSum};
use crate::specialfn::{digamma_unchecked, ln_beta_unchecked};

/// Law of a single transition probability ω_0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Beta { alpha: f64, beta: f64 },
    TwoPoint { values: [f64; 2], weights: [f64; 2] },
    Tabulated { atoms: Vec<(f64, f64)> },
}

/// Default law of the experiments: κ = 1 and λ = 4.
pub const DEFAULT_SPEC: EnvSpec = EnvSpec::Beta { alpha: 3.0, beta: 2.0 };

pub const MAX_EXCURSION_LEN: usize = 10_000_000;

fn log_rho_of(omega: f64) -> f64 {
    (-omega).ln_1p() - omega.ln()
}

impl EnvSpec {
    pub fn beta(alpha: f64, beta: f64) -> Self {
        EnvSpec::Beta { alpha, beta }
    }

    pub fn single_atom(omega: f64) -> Self {
        EnvSpec::Tabulated { atoms: vec![(omega, 1.0)] }
    }

    fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            EnvSpec::Beta { .. } => None,
            EnvSpec::TwoPoint { values, weights } => {
                Some(vec![(values[0], weights[0]), (values[1], weights[1])])
            }
            EnvSpec::Tabulated { atoms } => Some(atoms.clone()),
        }
    }

    fn check_shape(&self) -> Result<()> {
        match self {
            EnvSpec::Beta { alpha, beta } => {
                if !(*alpha > 0.0 && *beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return Err(Error::InvalidSpec(format!(
                        "Beta parameters must be positive, got ({alpha}, {beta})"
                    )));
                }
            }
            _ => {
                let atoms = self.atoms().unwrap_or_default();
                if atoms.is_empty() {
                    return Err(Error::InvalidSpec("no atoms".into()));
                }
                let mut total = 0.0;
                for &(w, p) in &atoms {
                    if !(w > 0.0 && w < 1.0) {
                        return Err(Error::InvalidSpec(format!("atom {w} not inside (0, 1)")));
                    }
                    if !(p >= 0.0 && p.is_finite()) {
                        return Err(Error::InvalidSpec(format!("negative weight {p}")));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!("weights sum to {total}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// Checks support, transience and the existence of κ in (0, 2).
    pub fn validate(&self) -> Result<f64> {
        self.calibrate_kappa()
    }

    /// Discrete laws put log ρ on a lattice or a finite set; the limit
    /// theorems assume a non-lattice law.
    pub fn is_lattice(&self) -> bool {
        !matches!(self, EnvSpec::Beta { .. })
    }

    pub fn mean_omega(&self) -> f64 {
        match self {
            EnvSpec::Beta { alpha, beta } => alpha / (alpha + beta),
            _ => self.atoms().unwrap_or_default().iter().map(|(w, p)| w * p).sum(),
        }
    }

    /// E[ρ^s].
    pub fn moment_rho(&self, s: f64) -> Result<f64> {
        self.check_shape()?;
        match self {
            EnvSpec::Beta { alpha, beta } => {
                if s >= *alpha || s <= -*beta {
                    return Err(Error::Divergence(format!(
                        "E[rho^{s}] is infinite for Beta({alpha}, {beta})"
                    )));
                }
                Ok((ln_beta_unchecked(alpha - s, beta + s) - ln_beta_unchecked(*alpha, *beta)).exp())
            }
            _ => {
                let mut acc = CompensatedSum::new();
                for (w, p) in self.atoms().unwrap_or_default() {
                    acc.add(p * (s * log_rho_of(w)).exp());
                }
                Ok(acc.value())
            }
        }
    }

    /// E[ρ^s log ρ].
    pub fn moment_rho_log(&self, s: f64) -> Result<f64> {
        match self {
            EnvSpec::Beta { alpha, beta } => {
                let m = self.moment_rho(s)?;
                Ok(m * (digamma_unchecked(beta + s) - digamma_unchecked(alpha - s)))
            }
            _ => {
                self.check_shape()?;
                let mut acc = CompensatedSum::new();
                for (w, p) in self.atoms().unwrap_or_default() {
                    let l = log_rho_of(w);
                    acc.add(p * (s * l).exp() * l);
                }
                Ok(acc.value())
            }
        }
    }

    pub fn mean_log_rho(&self) -> Result<f64> {
        self.moment_rho_log(0.0)
    }

    /// The positive root κ of E[ρ^κ] = 1, located by bracketing on (0, 2].
    pub fn calibrate_kappa(&self) -> Result<f64> {
        self.check_shape()?;
        let drift = self.mean_log_rho()?;
        if !(drift < 0.0) {
            return Err(Error::NotTransient(drift));
        }
        let upper = match self {
            EnvSpec::Beta { alpha, .. } => alpha.min(2.0),
            _ => 2.0,
        };
        let f = |s: f64| self.moment_rho(s).map(|m| m - 1.0);
        // s ↦ E[ρ^s] is convex with value 1 at 0 and negative slope there,
        // so it is below 1 up to κ and above afterwards.
        const GRID: usize = 400;
        let mut lo = 0.0;
        let mut hi = None;
        for k in 1..=GRID {
            let s = upper * k as f64 / GRID as f64;
            let val = f(s).unwrap_or(f64::INFINITY);
            if val > 0.0 {
                hi = Some(s);
                break;
            }
            lo = s;
        }
        let Some(mut hi) = hi else {
            return Err(Error::NoRoot(format!("E[rho^s] <= 1 on (0, {upper}]")));
        };
        if lo == 0.0 {
            lo = hi * 1e-9;
            if f(lo)? >= 0.0 {
                return Err(Error::NoRoot("no sign change near 0".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let val = f(mid).unwrap_or(f64::INFINITY);
            if val > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let flo = f(lo)?.abs();
        let kappa = match f(hi) {
            Ok(fhi) if fhi.abs() < flo => hi,
            _ => lo,
        };
        if !(kappa > 0.0 && kappa < 2.0) {
            return Err(Error::NoRoot(format!("root {kappa} outside (0, 2)")));
        }
        Ok(kappa)
    }

    pub fn sampler(&self) -> Result<OmegaSampler> {
        self.check_shape()?;
        match self {
            EnvSpec::Beta { alpha, beta } => rand_distr::Beta::new(*alpha, *beta)
                .map(OmegaSampler::Beta)
                .map_err(|e| Error::InvalidSpec(e.to_string())),
            _ => {
                let atoms = self.atoms().unwrap_or_default();
                let mut cum = Vec::with_capacity(atoms.len());
                let mut acc = 0.0;
                for &(_, p) in &atoms {
                    acc += p;
                    cum.push(acc);
                }
                let values = atoms.iter().map(|a| a.0).collect();
                Ok(OmegaSampler::Discrete { cum, values })
            }
        }
    }
}

/// Draws i.i.d. copies of ω_0.
#[derive(Debug, Clone)]
pub enum OmegaSampler {
    Beta(rand_distr::Beta<f64>),
    Discrete { cum: Vec<f64>, values: Vec<f64> },
}

impl OmegaSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            OmegaSampler::Beta(d) => loop {
                let w = d.sample(rng);
                if w > 0.0 && w < 1.0 {
                    return w;
                }
            },
            OmegaSampler::Discrete { cum, values } => {
                if values.len() == 1 {
                    return values[0];
                }
                let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
                let k = cum.partition_point(|&c| c <= u).min(values.len() - 1);
                values[k]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    Plain,
    ConditionedNonnegLeft,
    Modified { h: f64 },
}

/// The potential between two consecutive weak descending ladder epochs.
/// `omegas[k]` is the transition probability at site e_p + 1 + k.
#[derive(Debug, Clone, PartialEq)]
pub struct Excursion {
    pub omegas: Vec<f64>,
    pub increments: Vec<f64>,
    pub height: f64,
    pub drop: f64,
}

impl Excursion {
    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

/// Scalar summary of an excursion, sampled without storing the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcursionSummary {
    pub height: f64,
    pub drop: f64,
    pub len: usize,
    /// ln Σ_{0≤x<e_1} e^{V(x)}.
    pub log_sum_exp_v: f64,
}

pub fn sample_excursion<R: Rng + ?Sized>(law: &OmegaSampler, rng: &mut R) -> Result<Excursion> {
    let mut omegas = Vec::new();
    let mut increments = Vec::new();
    let mut v = CompensatedSum::new();
    let mut height = 0.0f64;
    loop {
        let w = law.sample(rng);
        let l = log_rho_of(w);
        omegas.push(w);
        increments.push(l);
        v.add(l);
        let cur = v.value();
        if cur <= 0.0 {
            return Ok(Excursion { omegas, increments, height, drop: cur });
        }
        height = height.max(cur);
        if omegas.len() >= MAX_EXCURSION_LEN {
            return Err(Error::Runaway(omegas.len()));
        }
    }
}

pub fn sample_excursion_summary<R: Rng + ?Sized>(
    law: &OmegaSampler,
    rng: &mut R,
) -> Result<ExcursionSummary> {
    let mut v = CompensatedSum::new();
    let mut height = 0.0f64;
    let mut sum = LogSum::new();
    sum.push(0.0);
    let mut len = 0usize;
    loop {
        let l = log_rho_of(law.sample(rng));
        v.add(l);
        len += 1;
        let cur = v.value();
        if cur <= 0.0 {
            return Ok(ExcursionSummary { height, drop: cur, len, log_sum_exp_v: sum.ln() });
        }
        height = height.max(cur);
        sum.push(cur);
        if len >= MAX_EXCURSION_LEN {
            return Err(Error::Runaway(len));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightCondition {
    AtLeast,
    Below,
}

impl HeightCondition {
    pub fn holds(self, height: f64, h: f64) -> bool {
        match self {
            HeightCondition::AtLeast => height >= h,
            HeightCondition::Below => height < h,
        }
    }
}

/// Rejection sampling of an excursion conditioned on its height.
pub fn sample_excursion_conditioned<R: Rng + ?Sized>(
    law: &OmegaSampler,
    condition: HeightCondition,
    h: f64,
    rng: &mut R,
    budget: u64,
) -> Result<Excursion> {
    if budget == 0 {
        return Err(Error::Parameter("budget must be at least 1".into()));
    }
    if condition == HeightCondition::Below && h <= 0.0 {
        return Err(Error::BudgetExhausted { budget, rate: 0.0 });
    }
    for _ in 0..budget {
        let exc = sample_excursion(law, rng)?;
        if condition.holds(exc.height, h) {
            return Ok(exc);
        }
    }
    Err(Error::BudgetExhausted { budget, rate: 0.0 })
}

/// A finite window of the environment holding the potential V with V(0) = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    offset: i64,
    omegas: Vec<f64>,
    log_rho: Vec<f64>,
    v: Vec<f64>,
    regime: Regime,
}

impl Environment {
    pub fn from_omegas(offset: i64, omegas: Vec<f64>, regime: Regime) -> Result<Self> {
        let right = offset + omegas.len() as i64 - 1;
        if omegas.is_empty() || offset > 0 || right < 0 {
            return Err(Error::Window(format!(
                "window [{offset}, {right}] must contain site 0"
            )));
        }
        if let Some(w) = omegas.iter().find(|w| !(**w > 0.0 && **w < 1.0)) {
            return Err(Error::Window(format!("transition probability {w} not inside (0, 1)")));
        }
        let log_rho: Vec<f64> = omegas.iter().map(|&w| log_rho_of(w)).collect();
        let zero = (-offset) as usize;
        let mut v = vec![0.0; omegas.len()];
        let mut acc = CompensatedSum::new();
        for i in zero + 1..omegas.len() {
            acc.add(log_rho[i]);
            v[i] = acc.value();
        }
        let mut acc = CompensatedSum::new();
        for i in (0..zero).rev() {
            acc.add(-log_rho[i + 1]);
            v[i] = acc.value();
        }
        let env = Self { offset, omegas, log_rho, v, regime };
        if regime == Regime::ConditionedNonnegLeft {
            if let Some(x) = (env.left()..=0).find(|&x| env.v(x) < -1e-9) {
                return Err(Error::Window(format!(
                    "V({x}) = {} < 0 in a window conditioned on V >= 0 left of 0",
                    env.v(x)
                )));
            }
        }
        Ok(env)
    }

    /// Builds the window from log ρ values, ω = 1/(1 + ρ).
    pub fn from_log_rho(offset: i64, log_rho: &[f64], regime: Regime) -> Result<Self> {
        let omegas = log_rho.iter().map(|&l| 1.0 / (1.0 + l.exp())).collect();
        Self::from_omegas(offset, omegas, regime)
    }

    pub fn homogeneous(q: f64, left: i64, right: i64) -> Result<Self> {
        if left > right {
            return Err(Error::Window(format!("empty window [{left}, {right}]")));
        }
        Self::from_omegas(left, vec![q; (right - left + 1) as usize], Regime::Plain)
    }

    pub fn left(&self) -> i64 {
        self.offset
    }

    pub fn right(&self) -> i64 {
        self.offset + self.omegas.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn contains(&self, x: i64) -> bool {
        x >= self.left() && x <= self.right()
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    #[inline]
    fn idx(&self, x: i64) -> usize {
        debug_assert!(self.contains(x), "site {x} outside window");
        (x - self.offset) as usize
    }

    #[inline]
    pub fn omega(&self, x: i64) -> f64 {
        self.omegas[self.idx(x)]
    }

    #[inline]
    pub fn log_rho(&self, x: i64) -> f64 {
        self.log_rho[self.idx(x)]
    }

    #[inline]
    pub fn v(&self, x: i64) -> f64 {
        self.v[self.idx(x)]
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn potential(&self) -> &[f64] {
        &self.v
    }

    pub fn check_site(&self, x: i64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Window(format!(
                "site {x} outside window [{}, {}]",
                self.left(),
                self.right()
            )))
        }
    }

    pub(crate) fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }
}

/// I.i.d. sites on [left, right].
pub fn sample_env<R: Rng + ?Sized>(law: &OmegaSampler, left: i64, right: i64, rng: &mut R) -> Result<Environment> {
    if left > 0 || right < 0 {
        return Err(Error::Window(format!("range [{left}, {right}] must contain 0")));
    }
    let omegas = (left..=right).map(|_| law.sample(rng)).collect();
    Environment::from_omegas(left, omegas, Regime::Plain)
}

/// Glues excursions around 0. `left[0]` ends at site 0, `left[k]` ends at
/// e_{−k}; `right[0]` starts at 0. `edge_omega` is the transition
/// probability at the leftmost site.
pub fn glue_excursions(
    left: &[Excursion],
    right: &[Excursion],
    edge_omega: f64,
    regime: Regime,
) -> Result<Environment> {
    let left_len: usize = left.iter().map(Excursion::len).sum();
    let right_len: usize = right.iter().map(Excursion::len).sum();
    let mut omegas = Vec::with_capacity(left_len + right_len + 1);
    omegas.push(edge_omega);
    for exc in left.iter().rev() {
        omegas.extend_from_slice(&exc.omegas);
    }
    for exc in right {
        omegas.extend_from_slice(&exc.omegas);
    }
    Environment::from_omegas(-(left_len as i64), omegas, regime)
}

/// ω at the left edge of a glued window: the last site of a fresh excursion.
pub fn sample_edge_omega<R: Rng + ?Sized>(law: &OmegaSampler, rng: &mut R) -> Result<f64> {
    let exc = sample_excursion(law, rng)?;
    Ok(*exc.omegas.last().expect("excursions are nonempty"))
}

/// Environment under P^{≥0}: `n_right` excursions to the right of 0 and
/// `n_left` excursions glued to its left.
pub fn sample_env_conditioned<R: Rng + ?Sized>(
    law: &OmegaSampler,
    n_right: usize,
    n_left: usize,
    rng: &mut R,
) -> Result<Environment> {
    if n_right == 0 || n_left == 0 {
        return Err(Error::Parameter("need at least one excursion on each side".into()));
    }
    let right = (0..n_right).map(|_| sample_excursion(law, rng)).collect::<Result<Vec<_>>>()?;
    let left = (0..n_left).map(|_| sample_excursion(law, rng)).collect::<Result<Vec<_>>>()?;
    let edge = sample_edge_omega(law, rng)?;
    glue_excursions(&left, &right, edge, Regime::ConditionedNonnegLeft)
}

/// Left excursions under P^{≥0}, at least `min_count` of them and enough
/// for the leftmost epoch to sit at height ≥ `min_height`.
pub fn sample_left_excursions<R: Rng + ?Sized>(
    law: &OmegaSampler,
    min_count: usize,
    min_height: f64,
    rng: &mut R,
) -> Result<Vec<Excursion>> {
    let mut out = Vec::new();
    let mut level = 0.0;
    while out.len() < min_count || level < min_height {
        let exc = sample_excursion(law, rng)?;
        level -= exc.drop;
        out.push(exc);
        if out.len() > MAX_EXCURSION_LEN {
            return Err(Error::Runaway(out.len()));
        }
    }
    Ok(out)
}

/// P^{≥0} window whose left edge sits at height ≥ `min_left_height`.
pub fn sample_env_conditioned_deep<R: Rng + ?Sized>(
    law: &OmegaSampler,
    n_right: usize,
    min_left_height: f64,
    rng: &mut R,
) -> Result<Environment> {
    if n_right == 0 {
        return Err(Error::Parameter("need at least one right excursion".into()));
    }
    let right = (0..n_right).map(|_| sample_excursion(law, rng)).collect::<Result<Vec<_>>>()?;
    let left = sample_left_excursions(law, 1, min_left_height, rng)?;
    let edge = sample_edge_omega(law, rng)?;
    glue_excursions(&left, &right, edge, Regime::ConditionedNonnegLeft)
}
