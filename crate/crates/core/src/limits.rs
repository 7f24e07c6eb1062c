//! Tail constants, the Poisson point process and limit-law samplers,
//! empirical Wasserstein-1 and tail-exponent fits.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{sample_excursion_summary, EnvSpec};
use crate::error::{Error, Result};
use crate::numerics::{linear_fit, mean_se, quantile_sorted, CompensatedSum};
use crate::rng::{Stream, Streams};
use crate::specialfn::{digamma_unchecked, ln_beta_unchecked, ln_gamma_unchecked};
use crate::valleys::sample_kesten;
use crate::walk::par_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedFormBeta,
    ClosedFormKappa1,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitModel {
    pub kappa: f64,
    pub lambda: f64,
    pub provenance: Provenance,
}

/// λ = 2^{α−β} (Ψ(α) − Ψ(β)) / ((α − β) B(α − β, β)²).
pub fn lambda_beta(alpha: f64, beta: f64) -> Result<f64> {
    let k = alpha - beta;
    if !(beta > 0.0 && k > 0.0 && k < 2.0) {
        return Err(Error::Parameter(format!("Beta closed form needs 0 < alpha − beta < 2, got ({alpha}, {beta})")));
    }
    Ok(2f64.powf(k) * (digamma_unchecked(alpha) - digamma_unchecked(beta)) / (k * (2.0 * ln_beta_unchecked(k, beta)).exp()))
}

/// λ = 2/E[ρ log ρ], valid when κ = 1.
pub fn lambda_kappa1(spec: &EnvSpec) -> Result<f64> {
    Ok(2.0 / spec.moment_rho_log(1.0)?)
}

/// λ = 2^κ κ E[ρ^κ log ρ] C_K².
pub fn lambda_from(kappa: f64, e_rho_log: f64, c_k: f64) -> f64 {
    2f64.powf(kappa) * kappa * e_rho_log * c_k * c_k
}

/// C_K = sqrt(λ / (2^κ κ E[ρ^κ log ρ])).
pub fn c_k_from_lambda(kappa: f64, e_rho_log: f64, lambda: f64) -> f64 {
    (lambda / (2f64.powf(kappa) * kappa * e_rho_log)).sqrt()
}

impl LimitModel {
    pub fn new(kappa: f64, lambda: f64, provenance: Provenance) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 2.0 && lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("limit model needs kappa in (0, 2) and lambda > 0, got ({kappa}, {lambda})")));
        }
        Ok(Self { kappa, lambda, provenance })
    }

    /// Closed-form model when the law admits one.
    pub fn closed_form(spec: &EnvSpec) -> Result<Self> {
        let kappa = spec.calibrate_kappa()?;
        match spec {
            EnvSpec::Beta { alpha, beta } => Self::new(kappa, lambda_beta(*alpha, *beta)?, Provenance::ClosedFormBeta),
            _ if (kappa - 1.0).abs() < 1e-12 => Self::new(kappa, lambda_kappa1(spec)?, Provenance::ClosedFormKappa1),
            _ => Err(Error::Parameter("no closed form for lambda; estimate the constants".into())),
        }
    }

    /// ξ^(p) = λ^{1/κ} Γ_p^{−1/κ} for the first `count` points.
    pub fn poisson_points<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        let scale = self.lambda.powf(1.0 / self.kappa);
        let mut gamma = 0.0;
        (0..count)
            .map(|_| {
                let f: f64 = Exp1.sample(rng);
                gamma += f;
                scale * gamma.powf(-1.0 / self.kappa)
            })
            .collect()
    }

    /// All points above `epsilon_floor`, in decreasing order.
    pub fn poisson_pp_sample<R: Rng + ?Sized>(&self, epsilon_floor: f64, rng: &mut R) -> Result<Vec<f64>> {
        if !(epsilon_floor > 0.0) {
            return Err(Error::Parameter(format!("epsilon floor must be positive, got {epsilon_floor}")));
        }
        let scale = self.lambda.powf(1.0 / self.kappa);
        let mut gamma = 0.0;
        let mut out = Vec::new();
        loop {
            let f: f64 = Exp1.sample(rng);
            gamma += f;
            let xi = scale * gamma.powf(-1.0 / self.kappa);
            if xi < epsilon_floor {
                return Ok(out);
            }
            out.push(xi);
        }
    }

    /// Σ_{p>k} E[(ξ^(p))²] = λ^{2/κ} Γ(k + 1 − s) / ((s − 1) Γ(k)) with s = 2/κ.
    pub fn tail_second_moment(&self, k: usize) -> f64 {
        let s = 2.0 / self.kappa;
        if k == 0 || (k as f64) + 1.0 - s <= 0.0 {
            return f64::INFINITY;
        }
        let kf = k as f64;
        (s * self.lambda.ln() + ln_gamma_unchecked(kf + 1.0 - s) - ln_gamma_unchecked(kf)).exp() / (s - 1.0)
    }

    /// Smallest k whose tail second moment is at most tol².
    pub fn truncation_index(&self, tol: f64) -> usize {
        let target = tol * tol;
        let mut hi = 1usize;
        while self.tail_second_moment(hi) > target {
            hi *= 2;
            if hi > 1 << 40 {
                return hi;
            }
        }
        let mut lo = hi / 2;
        while lo + 1 < hi {
            let mid = (lo + hi) / 2;
            if self.tail_second_moment(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// One draw of Σ_p ξ^(p) ē_p truncated at `truncation_index(tol)`.
    /// With `gaussian_remainder`, the omitted terms are replaced by a
    /// centered normal with their total variance.
    pub fn limit_law_sample<R: Rng + ?Sized>(&self, tol: f64, gaussian_remainder: bool, rng: &mut R) -> f64 {
        let k = self.truncation_index(tol);
        self.limit_law_sample_k(k, gaussian_remainder, rng)
    }

    pub fn limit_law_sample_k<R: Rng + ?Sized>(&self, k: usize, gaussian_remainder: bool, rng: &mut R) -> f64 {
        let scale = self.lambda.powf(1.0 / self.kappa);
        let inv = -1.0 / self.kappa;
        let mut gamma = 0.0;
        let mut acc = CompensatedSum::new();
        for _ in 0..k {
            let f: f64 = Exp1.sample(rng);
            gamma += f;
            let e: f64 = Exp1.sample(rng);
            acc.add(scale * gamma.powf(inv) * (e - 1.0));
        }
        if gaussian_remainder {
            let z: f64 = StandardNormal.sample(rng);
            acc.add(self.tail_second_moment(k).sqrt() * z);
        }
        acc.value()
    }
}

/// Exact W1 distance between two empirical measures.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Parameter("wasserstein1 needs two nonempty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    Ok(wasserstein1_sorted(&x, &y))
}

pub fn wasserstein1_sorted(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = x[0].min(y[0]);
    let mut area = CompensatedSum::new();
    while i < x.len() || j < y.len() {
        let next = match (x.get(i), y.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / n;
        let fb = j as f64 / m;
        area.add((fa - fb).abs() * (next - prev));
        while i < x.len() && x[i] == next {
            i += 1;
        }
        while j < y.len() && y[j] == next {
            j += 1;
        }
        prev = next;
    }
    area.value()
}

/// W1 between a sample and the unit exponential law, by exact integration
/// of |F_n − F| over each step of the empirical CDF.
pub fn wasserstein1_exponential(sample: &[f64]) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    // ∫ |c − F(t)| dt on [l, r] with F(t) = 1 − e^{−t}, split at the crossing.
    let seg = |c: f64, l: f64, r: f64| -> f64 {
        if r <= l {
            return 0.0;
        }
        let int_f = |u: f64, v: f64| (v - u) - ((-u).exp() - (-v).exp());
        let cross = if c >= 1.0 { f64::INFINITY } else { -(-c).ln_1p() };
        if cross <= l {
            int_f(l, r) - c * (r - l)
        } else if cross >= r {
            c * (r - l) - int_f(l, r)
        } else {
            (c * (cross - l) - int_f(l, cross)) + (int_f(cross, r) - c * (r - cross))
        }
    };
    let mut area = CompensatedSum::new();
    let mut prev = 0.0f64;
    for (k, &v) in x.iter().enumerate() {
        let v = v.max(0.0);
        area.add(seg(k as f64 / n, prev, v));
        prev = prev.max(v);
    }
    // Beyond the largest point the empirical CDF is 1.
    area.add((-prev).exp());
    area.value()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub kappa_hat: f64,
    pub amplitude: f64,
    /// Intercept of the same regression with the slope pinned at −κ_ref.
    pub amplitude_at_ref: Option<f64>,
    pub hill: f64,
    pub points: usize,
    pub threshold: f64,
}

pub const MIN_TAIL_POINTS: usize = 500;
pub const DEFAULT_FIT_WINDOW: (f64, f64) = (0.99, 0.9999);
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Least-squares fit of ln P(X ≥ x) = ln A − κ ln x over the order
/// statistics with ranks in [q_lo n, q_hi n]. `top` holds the largest
/// values of a sample of size `n_total`, sorted increasingly.
pub fn fit_sorted_tail(top: &[f64], n_total: usize, q_lo: f64, q_hi: f64, kappa_ref: Option<f64>) -> Result<TailFit> {
    if !(0.5 < q_lo && q_lo < q_hi && q_hi < 1.0) {
        return Err(Error::Parameter(format!("need 0.5 < q_lo < q_hi < 1, got ({q_lo}, {q_hi})")));
    }
    let n = n_total as f64;
    let first_rank = n_total - top.len();
    let lo = (q_lo * n).ceil() as usize;
    let hi = ((q_hi * n).floor() as usize).min(n_total - 1);
    if lo < first_rank {
        return Err(Error::Parameter("stored tail does not reach the q_lo quantile".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rank in lo..=hi {
        let v = top[rank - first_rank];
        if v > 0.0 {
            xs.push(v.ln());
            ys.push(((n - rank as f64) / n).ln());
        }
    }
    if xs.len() < MIN_TAIL_POINTS {
        return Err(Error::TailPoints { have: xs.len(), need: MIN_TAIL_POINTS });
    }
    let (a, b) = linear_fit(&xs, &ys);
    let amplitude_at_ref = kappa_ref.map(|k| {
        let mut acc = CompensatedSum::new();
        for (x, y) in xs.iter().zip(&ys) {
            acc.add(y + k * x);
        }
        (acc.value() / xs.len() as f64).exp()
    });
    let threshold = top[lo - first_rank];
    let k = n_total - lo;
    let mut hill = CompensatedSum::new();
    for &v in &top[lo - first_rank..] {
        hill.add((v / threshold).ln());
    }
    Ok(TailFit { kappa_hat: -b, amplitude: a.exp(), amplitude_at_ref, hill: k as f64 / hill.value(), points: xs.len(), threshold })
}

pub fn tail_fit(samples: &[f64], q_lo: f64, q_hi: f64) -> Result<TailFit> {
    tail_fit_at(samples, q_lo, q_hi, None)
}

pub fn tail_fit_at(samples: &[f64], q_lo: f64, q_hi: f64, kappa_ref: Option<f64>) -> Result<TailFit> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    fit_sorted_tail(&v, v.len(), q_lo, q_hi, kappa_ref)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFitCi {
    pub fit: TailFit,
    pub kappa_ci: Interval,
    pub amplitude_ci: Interval,
    pub amplitude_at_ref_ci: Option<Interval>,
    pub resamples: usize,
}

/// Tail fit with percentile bootstrap intervals (95%). Only the top of the
/// sample is resampled individually; the count falling in it is binomial.
pub fn tail_fit_bootstrap(
    samples: &[f64],
    q_lo: f64,
    q_hi: f64,
    kappa_ref: Option<f64>,
    resamples: usize,
    rng: &mut Stream,
) -> Result<TailFitCi> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let fit = fit_sorted_tail(&v, n, q_lo, q_hi, kappa_ref)?;
    let keep = ((2.0 * (1.0 - q_lo) * n as f64) as usize + 100).min(n);
    let top = &v[n - keep..];
    let p = keep as f64 / n as f64;
    let binom = rand_distr::Binomial::new(n as u64, p).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut kappas = Vec::with_capacity(resamples);
    let mut amps = Vec::with_capacity(resamples);
    let mut refs = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let count = (binom.sample(rng) as usize).min(n);
        let mut draw: Vec<f64> = (0..count).map(|_| top[rng.random_range(0..keep)]).collect();
        draw.sort_by(f64::total_cmp);
        if let Ok(f) = fit_sorted_tail(&draw, n, q_lo, q_hi, kappa_ref) {
            kappas.push(f.kappa_hat);
            amps.push(f.amplitude);
            refs.extend(f.amplitude_at_ref);
        }
    }
    if kappas.len() < resamples / 2 {
        return Err(Error::TailPoints { have: kappas.len(), need: resamples / 2 });
    }
    kappas.sort_by(f64::total_cmp);
    amps.sort_by(f64::total_cmp);
    refs.sort_by(f64::total_cmp);
    let ci = |s: &[f64]| Interval { lo: quantile_sorted(s, 0.025), hi: quantile_sorted(s, 0.975) };
    let amplitude_at_ref_ci = kappa_ref.map(|_| ci(&refs));
    Ok(TailFitCi { fit, kappa_ci: ci(&kappas), amplitude_ci: ci(&amps), amplitude_at_ref_ci, resamples: kappas.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSizes {
    pub excursions: usize,
    pub kesten: usize,
    pub fit_window: (f64, f64),
    pub kesten_rel_tol: f64,
}

impl Default for SampleSizes {
    fn default() -> Self {
        Self { excursions: 100_000, kesten: 1_000_000, fit_window: DEFAULT_FIT_WINDOW, kesten_rel_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub kappa: f64,
    pub e_e1: Estimate,
    pub e_exp_kappa_v: Estimate,
    pub e_rho_log: f64,
    pub a: f64,
    pub a_estimate: Estimate,
    pub a_fallback: bool,
    pub c_i: f64,
    /// C_K entering C_U, λ and C_T: the closed form when one exists.
    pub c_k: f64,
    /// Tail regression on Kesten's series with its bootstrap interval.
    pub c_k_fit: f64,
    pub c_k_ci: Interval,
    pub kesten_kappa_hat: f64,
    pub kesten_kappa_ci: Interval,
    pub c_k_closed_form: Option<f64>,
    pub c_u: f64,
    pub lambda: f64,
    pub lambda_provenance: Provenance,
    pub lambda_estimated: f64,
    pub lambda_kappa1: Option<f64>,
    pub c_t: f64,
    pub sizes: SampleSizes,
}

impl ConstantsReport {
    pub fn model(&self) -> LimitModel {
        LimitModel { kappa: self.kappa, lambda: self.lambda, provenance: self.lambda_provenance }
    }

    /// (C_I, C_U, C_T) recomputed from the stored fields.
    pub fn recompute(&self) -> (f64, f64, f64) {
        let c_i = (1.0 - self.e_exp_kappa_v.value).powi(2) / (self.kappa * self.e_rho_log * self.e_e1.value);
        let c_u = self.e_rho_log * self.e_e1.value * self.c_k * self.c_k;
        let c_t = 2f64.powf(self.kappa) * ln_gamma_unchecked(self.kappa + 1.0).exp() * c_u;
        (c_i, c_u, c_t)
    }
}

const CHUNK: usize = 10_000;

fn chunks(total: usize) -> Vec<(usize, usize)> {
    (0..total.div_ceil(CHUNK)).map(|c| (c, CHUNK.min(total - c * CHUNK))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionStats {
    pub kappa: f64,
    pub e_e1: Estimate,
    pub e_exp_kappa_v: Estimate,
    pub a_estimate: Estimate,
    /// E[−V(e_1)], or 1 when the estimate moves by more than 5% between
    /// the first half of the sample and the whole.
    pub a: f64,
    pub a_fallback: bool,
}

fn estimate(xs: &[f64]) -> Estimate {
    let (m, se) = mean_se(xs);
    Estimate { value: m, se, n: xs.len() }
}

/// Excursion Monte Carlo for E[e_1], E[e^{κV(e_1)}] and A = E[−V(e_1)].
pub fn excursion_stats(spec: &EnvSpec, kappa: f64, count: usize, streams: &Streams, workers: usize) -> Result<ExcursionStats> {
    if count < 2 {
        return Err(Error::Parameter("need at least two excursions".into()));
    }
    let law = spec.sampler()?;
    let plan = chunks(count);
    let parts = par_map(workers, plan.len(), |c| {
        let mut rng = streams.get(&[c as u64]);
        (0..plan[c].1).map(|_| sample_excursion_summary(&law, &mut rng)).collect::<Result<Vec<_>>>()
    });
    let mut lens = Vec::with_capacity(count);
    let mut expv = Vec::with_capacity(count);
    let mut drops = Vec::with_capacity(count);
    for part in parts {
        for s in part? {
            lens.push(s.len as f64);
            expv.push((kappa * s.drop).exp());
            drops.push(-s.drop);
        }
    }
    let a_estimate = estimate(&drops);
    let half = estimate(&drops[..drops.len() / 2]);
    let a_fallback = !(a_estimate.value > 0.0) || ((a_estimate.value - half.value) / a_estimate.value).abs() > 0.05;
    Ok(ExcursionStats {
        kappa,
        e_e1: estimate(&lens),
        e_exp_kappa_v: estimate(&expv),
        a: if a_fallback { 1.0 } else { a_estimate.value },
        a_estimate,
        a_fallback,
    })
}

/// Excursion statistics plus a tail regression on Kesten's series for C_K.
pub fn estimate_constants(spec: &EnvSpec, sizes: SampleSizes, streams: &Streams, workers: usize) -> Result<ConstantsReport> {
    let kappa = spec.calibrate_kappa()?;
    let ex = excursion_stats(spec, kappa, sizes.excursions, &streams.child("excursions"), workers)?;
    let law = spec.sampler()?;
    let e_rho_log = spec.moment_rho_log(kappa)?;
    let c_i = (1.0 - ex.e_exp_kappa_v.value).powi(2) / (kappa * e_rho_log * ex.e_e1.value);

    let k_streams = streams.child("kesten");
    let kplan = chunks(sizes.kesten);
    let kparts = par_map(workers, kplan.len(), |c| {
        let len = kplan[c].1;
        let mut rng = k_streams.get(&[c as u64]);
        (0..len).map(|_| sample_kesten(&law, sizes.kesten_rel_tol, 10_000_000, &mut rng)).collect::<Result<Vec<_>>>()
    });
    let mut kesten = Vec::with_capacity(sizes.kesten);
    for part in kparts {
        kesten.extend(part?);
    }
    let mut boot = streams.child("bootstrap").get(&[]);
    let (q_lo, q_hi) = sizes.fit_window;
    let fit = tail_fit_bootstrap(&kesten, q_lo, q_hi, Some(kappa), BOOTSTRAP_RESAMPLES, &mut boot)?;
    // The free intercept sits at ln t = 0, far from the data, so C_K is
    // read off with the slope pinned at the calibrated κ.
    let c_k_fit = fit.fit.amplitude_at_ref.expect("reference exponent given");
    let c_k_ci = fit.amplitude_at_ref_ci.expect("reference exponent given");

    let (c_k_closed_form, lambda_closed) = match LimitModel::closed_form(spec) {
        Ok(m) => (Some(c_k_from_lambda(kappa, e_rho_log, m.lambda)), Some(m)),
        Err(_) => (None, None),
    };
    let lambda_kappa1 = if (kappa - 1.0).abs() < 1e-12 { Some(lambda_kappa1(spec)?) } else { None };
    let lambda_estimated = lambda_from(kappa, e_rho_log, c_k_fit);
    let (lambda, lambda_provenance, c_k) = match lambda_closed {
        Some(m) => (m.lambda, m.provenance, c_k_closed_form.unwrap_or(c_k_fit)),
        None => (lambda_estimated, Provenance::Estimated, c_k_fit),
    };
    let c_u = e_rho_log * ex.e_e1.value * c_k * c_k;
    let c_t = 2f64.powf(kappa) * ln_gamma_unchecked(kappa + 1.0).exp() * c_u;
    Ok(ConstantsReport {
        kappa,
        e_e1: ex.e_e1,
        e_exp_kappa_v: ex.e_exp_kappa_v,
        e_rho_log,
        a: ex.a,
        a_estimate: ex.a_estimate,
        a_fallback: ex.a_fallback,
        c_i,
        c_k,
        c_k_fit,
        c_k_ci,
        kesten_kappa_hat: fit.fit.kappa_hat,
        kesten_kappa_ci: fit.kappa_ci,
        c_k_closed_form,
        c_u,
        lambda,
        lambda_provenance,
        lambda_estimated,
        lambda_kappa1,
        c_t,
        sizes,
    })
}
