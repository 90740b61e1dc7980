use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use selgam::copulas::uniform_open;
use selgam::data::{Dataset, Dependence, ModelSpec, Term};
use selgam::heckman::{gaussian_fiml, two_step};
use selgam::margins::MarginFamily;
use selgam::optimizer::fit;
use selgam::special::norm_inv_cdf;

const SIGMA: f64 = 1.5;

/// Bivariate normal errors with correlation `rho`; `w` only enters selection.
fn heckman_data(n: usize, rho: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut sel, mut out, mut x, mut w) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let xi = norm_inv_cdf(uniform_open(&mut rng));
        let wi = norm_inv_cdf(uniform_open(&mut rng));
        let a = norm_inv_cdf(uniform_open(&mut rng));
        let b = norm_inv_cdf(uniform_open(&mut rng));
        let e1 = a;
        let e2 = rho * a + (1.0 - rho * rho).sqrt() * b;
        let s = 0.3 + 0.8 * wi + 0.5 * xi + e1 > 0.0;
        sel.push(s);
        out.push(if s { 1.0 + 0.7 * xi + SIGMA * e2 } else { f64::NAN });
        x.push(xi);
        w.push(wi);
    }
    Dataset::new(sel, out, vec![("x".into(), x), ("w".into(), w)]).unwrap()
}

fn linear_spec(dep: Dependence) -> ModelSpec {
    ModelSpec::new(vec![Term::linear("x"), Term::linear("w")], vec![Term::linear("x")], MarginFamily::Gaussian, dep)
}

#[test]
fn two_step_satisfies_gamma_identity() {
    let data = heckman_data(2000, 0.6, 11);
    let ts = two_step(&data, &linear_spec(Dependence::Normal)).unwrap();
    assert!(ts.exclusion_restriction);
    assert_eq!(ts.mills.len(), data.n_selected());
    assert!(ts.mills.iter().all(|&m| m > 0.0));
    assert!((ts.gamma - ts.sigma * ts.rho_raw).abs() < 1e-12);
    assert!((ts.sigma - SIGMA).abs() < 0.15, "sigma {}", ts.sigma);
    assert!((ts.rho - 0.6).abs() < 0.25, "rho {}", ts.rho);
}

#[test]
fn two_step_rho_is_centered_at_zero_without_dependence() {
    // spread of the estimates across replications serves as the standard error
    let reps = 20;
    let rhos: Vec<f64> = (0..reps)
        .map(|r| two_step(&heckman_data(5000, 0.0, 100 + r), &linear_spec(Dependence::Normal)).unwrap().rho_raw)
        .collect();
    let mean = rhos.iter().sum::<f64>() / reps as f64;
    let sd = (rhos.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    let se = sd / (reps as f64).sqrt();
    assert!(mean.abs() < 3.0 * se + 1e-12, "mean {mean} se {se}");
}

#[test]
fn fiml_matches_normal_copula_with_gaussian_margin() {
    let data = heckman_data(1500, -0.5, 21);
    let f = gaussian_fiml(&data, &linear_spec(Dependence::Normal)).unwrap();
    let m = fit(&data, &linear_spec(Dependence::Normal)).unwrap();
    assert!(m.convergence.converged);
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(d(&f.beta1, &m.alpha()) < 1e-4, "{:?} {:?}", f.beta1, m.alpha());
    assert!(d(&f.beta2, &m.beta()) < 1e-4, "{:?} {:?}", f.beta2, m.beta());
    assert!((f.sigma - m.aux.unwrap()).abs() < 1e-4);
    assert!((f.rho - m.theta.unwrap()).abs() < 1e-4);
    assert!((f.loglik - m.loglik).abs() < 1e-6 * (1.0 + f.loglik.abs()));
}

#[test]
fn two_step_approaches_fiml_in_large_samples() {
    let data = heckman_data(20000, 0.5, 31);
    let s = linear_spec(Dependence::Normal);
    let ts = two_step(&data, &s).unwrap();
    let f = gaussian_fiml(&data, &s).unwrap();
    for (a, b) in ts.beta2.iter().zip(&f.beta2) {
        assert!((a - b).abs() < 0.05, "{a} {b}");
    }
    assert!((ts.sigma - f.sigma).abs() < 0.05);
    assert!((ts.rho - f.rho).abs() < 0.1);
    assert!((f.rho - 0.5).abs() < 0.06 && (f.sigma - SIGMA).abs() < 0.05);
}

#[test]
fn non_gaussian_margin_is_rejected() {
    let data = heckman_data(200, 0.0, 41);
    let mut s = linear_spec(Dependence::Normal);
    s.margin = MarginFamily::Gamma;
    assert!(two_step(&data, &s).is_err());
    let mut s = linear_spec(Dependence::Normal);
    s.outcome = vec![Term::smooth("x")];
    assert!(two_step(&data, &s).is_err());
}
