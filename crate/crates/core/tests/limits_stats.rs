use rwre::env::{sample_env_conditioned_deep, EnvSpec};
use rwre::limits::{excursion_stats, lambda_beta, wasserstein1, LimitModel, Provenance};
use rwre::numerics::{chi_square_sf, iqr};
use rwre::quenched::expected_hitting;
use rwre::rng::{stream, Streams};
use rwre::walk::par_map;

fn ln_factorial(k: u64) -> f64 {
    (1..=k).map(|j| (j as f64).ln()).sum()
}

#[test]
fn ppp_counts_are_poisson() {
    let model = LimitModel::new(1.3, 2.5, Provenance::Estimated).unwrap();
    let eps: f64 = 0.5;
    let mean = model.lambda * eps.powf(-model.kappa);
    let reps = 20_000;
    let mut rng = stream(8, "ppp", &[]);
    let counts: Vec<u64> = (0..reps).map(|_| model.poisson_pp_sample(eps, &mut rng).unwrap().len() as u64).collect();
    // Cells 0..=K−1 and a tail cell.
    let k_max = 16u64;
    let mut observed = vec![0f64; k_max as usize + 1];
    for &c in &counts {
        observed[c.min(k_max) as usize] += 1.0;
    }
    let pmf = |k: u64| (k as f64 * mean.ln() - mean - ln_factorial(k)).exp();
    let mut expected: Vec<f64> = (0..k_max).map(|k| reps as f64 * pmf(k)).collect();
    expected.push(reps as f64 - expected.iter().sum::<f64>());
    // Merge sparse cells into their neighbours.
    let (mut stat, mut cells, mut o_acc, mut e_acc) = (0.0, 0usize, 0.0, 0.0);
    for (o, e) in observed.iter().zip(&expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 20.0 {
            stat += (o_acc - e_acc).powi(2) / e_acc;
            cells += 1;
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        stat += (o_acc - e_acc).powi(2) / e_acc;
        cells += 1;
    }
    let p = chi_square_sf(stat, cells - 1);
    assert!(p > 1e-3, "chi-square {stat} on {cells} cells, p = {p}");
}

/// ln E[e^{itX}] for X = Σ ξ_p (e_p − 1), by quadrature of
/// λκ ∫ (E[e^{itu(e−1)}] − 1) u^{−κ−1} du after u = e^s.
fn log_cf(model: &LimitModel, t: f64) -> (f64, f64) {
    let (a, b, steps) = (-40.0, 40.0, 400_000);
    let h = (b - a) / steps as f64;
    let mut re = 0.0;
    let mut im = 0.0;
    for k in 0..=steps {
        let s = a + k as f64 * h;
        let u = s.exp();
        let x = t * u;
        // e^{−ix} / (1 − ix) − 1; the series keeps the tiny-x terms exact.
        let (dr, di) = if x < 1e-4 {
            (-0.5 * x * x, -x * x * x / 3.0)
        } else {
            let d = 1.0 + x * x;
            let (c, sn) = (x.cos(), x.sin());
            ((c + x * sn) / d - 1.0, (x * c - sn) / d)
        };
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        let jac = w * u.powf(-model.kappa);
        re += dr * jac;
        im += di * jac;
    }
    let c = model.lambda * model.kappa * h;
    (c * re, c * im)
}

#[test]
fn limit_law_matches_characteristic_function() {
    for (kappa, lambda) in [(1.0, 4.0), (1.5, 2.0)] {
        let model = LimitModel::new(kappa, lambda, Provenance::Estimated).unwrap();
        let n = 100_000;
        let mut rng = stream(13, "cf", &[]);
        // The remainder past 2000 terms is close to Gaussian at these t.
        let xs: Vec<f64> = (0..n).map(|_| model.limit_law_sample_k(2000, true, &mut rng)).collect();
        for t in [0.05, 0.2, 0.5] {
            let (lr, li) = log_cf(&model, t);
            let (want_re, want_im) = (lr.exp() * li.cos(), lr.exp() * li.sin());
            let re = xs.iter().map(|x| (t * x).cos()).sum::<f64>() / n as f64;
            let im = xs.iter().map(|x| (t * x).sin()).sum::<f64>() / n as f64;
            let tol = 5.0 / (n as f64).sqrt();
            assert!((re - want_re).abs() < tol && (im - want_im).abs() < tol, "κ = {kappa}, t = {t}: ({re}, {im}) vs ({want_re}, {want_im})");
        }
        if kappa > 1.0 {
            let mean = xs.iter().sum::<f64>() / n as f64;
            assert!(mean.abs() < 0.1, "κ = {kappa}: mean {mean}");
        }
    }
}

#[test]
fn top_order_statistics_follow_the_poisson_process() {
    let spec = EnvSpec::beta(3.0, 2.0);
    let law = spec.sampler().unwrap();
    let ex = excursion_stats(&spec, 1.0, 100_000, &Streams::new(2, "order-stats"), 1).unwrap();
    // 2^κ C_U = λ E[e_1].
    let model = LimitModel::new(1.0, lambda_beta(3.0, 2.0).unwrap() * ex.e_e1.value, Provenance::Estimated).unwrap();
    let (n, reps) = (500usize, 2000usize);
    let tops = par_map(1, reps, |r| {
        let mut rng = stream(17, "order-stats", &[r as u64]);
        let mut z: Vec<f64> = (0..n)
            .map(|_| {
                let env = sample_env_conditioned_deep(&law, 1, 40.0, &mut rng).unwrap();
                expected_hitting(&env, 0, env.right()).unwrap() / n as f64
            })
            .collect();
        z.sort_by(|a, b| b.total_cmp(a));
        [z[0], z[1], z[2]]
    });
    let mut rng = stream(19, "order-stats-ppp", &[]);
    let ppp: Vec<Vec<f64>> = (0..20_000).map(|_| model.poisson_points(3, &mut rng)).collect();
    // Log scale: the top point has infinite mean at κ = 1.
    for k in 0..3 {
        let a: Vec<f64> = tops.iter().map(|t| t[k].ln()).collect();
        let b: Vec<f64> = ppp.iter().map(|p| p[k].ln()).collect();
        let w = wasserstein1(&a, &b).unwrap();
        let scale = iqr(&b);
        assert!(w <= 0.1 * scale, "order statistic {}: W1 {w} vs IQR {scale}", k + 1);
    }
}
