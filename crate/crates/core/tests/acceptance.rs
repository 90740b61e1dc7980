//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;

use selgam::copulas::*;
use selgam::data::{Dataset, Dependence, ModelSpec, Term};
use selgam::heckman::gaussian_fiml;
use selgam::likelihood::{cov_identity_check, model_for};
use selgam::margins::{MarginFamily, MarginSpec};
use selgam::optimizer::{fit, fit_outcome_only, fit_selection_only, FitOptions};
use selgam::quad::integrate;
use selgam::simulate::*;
use selgam::special::{norm_cdf, norm_inv_cdf};

const SEED: u64 = 1;
const REPS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Partially selected data with a smooth and a linear covariate in each equation.
fn toy(n: usize, margin: MarginFamily, rho: f64, all_selected: bool, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut sel, mut out, mut x, mut w) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let xi: f64 = rng.random();
        let wi: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let a = norm_inv_cdf(uniform_open(&mut rng));
        let b = norm_inv_cdf(uniform_open(&mut rng));
        let e2 = rho * a + (1.0 - rho * rho).sqrt() * b;
        let s = all_selected || 0.4 + 0.9 * wi + (3.0 * xi).sin() + a > 0.0;
        let eta2 = 0.3 + (2.0 * xi - 1.0).powi(2) - 0.5 * wi;
        let y = match margin {
            MarginFamily::Gaussian => eta2 + 0.7 * e2,
            MarginFamily::Gamma => MarginSpec::gamma(2.5).quantile(eta2, norm_cdf(e2)).unwrap(),
        };
        sel.push(s);
        out.push(if s { y } else { f64::NAN });
        x.push(xi);
        w.push(wi);
    }
    Dataset::new(sel, out, vec![("x".into(), x), ("w".into(), w)]).unwrap()
}

fn smooth_spec(margin: MarginFamily, dep: Dependence) -> ModelSpec {
    let mut s = ModelSpec::new(vec![Term::smooth("x"), Term::linear("w")], vec![Term::smooth("x"), Term::linear("w")], margin, dep);
    s.knots = 5;
    s
}

fn theta_for(kind: CopulaKind, r: f64) -> f64 {
    match kind {
        CopulaKind::Normal => 1.6 * (r - 0.5),
        CopulaKind::Clayton => 0.3 + 4.0 * r,
        CopulaKind::Joe | CopulaKind::Gumbel => 1.1 + 3.0 * r,
        CopulaKind::Frank => if r < 0.5 { -8.0 * r - 0.5 } else { 8.0 * (r - 0.5) + 0.5 },
        CopulaKind::Amh => 1.8 * (r - 0.5),
    }
}

/// Analytic gradient and Hessian against central differences.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    for margin in [MarginFamily::Gaussian, MarginFamily::Gamma] {
        let data = toy(150, margin, 0.4, false, SEED + 10);
        for kind in CopulaKind::ALL {
            let spec = smooth_spec(margin, kind.into());
            let (_, lik) = model_for(&data, &spec).unwrap();
            let lay = lik.layout;
            let zero = vec![0.0; lik.n_penalties()];
            for _ in 0..25 {
                let mut d = DVector::from_fn(lay.len, |_, _| 0.8 * (rng.random::<f64>() - 0.5));
                d[lay.q1] = 0.2;
                d[lay.theta.unwrap()] = kind.theta_to_unconstrained(theta_for(kind, rng.random()));
                d[lay.aux.unwrap()] = 0.5 * (rng.random::<f64>() - 0.5);
                let e = lik.evaluate(&d, &zero).unwrap();
                let h = 1e-5;
                let mut fg = DVector::zeros(lay.len);
                for k in 0..lay.len {
                    let (mut a, mut b) = (d.clone(), d.clone());
                    a[k] += h;
                    b[k] -= h;
                    fg[k] = (lik.loglik(&a).unwrap() - lik.loglik(&b).unwrap()) / (2.0 * h);
                    let ga = lik.evaluate(&a, &zero).unwrap().grad;
                    let gb = lik.evaluate(&b, &zero).unwrap().grad;
                    let col = (ga - gb) / (2.0 * h);
                    let scale = e.hess.amax().max(1.0);
                    worst_h = worst_h.max((col - e.hess.column(k)).amax() / scale);
                }
                worst_g = worst_g.max((&fg - &e.grad).amax() / e.grad.amax().max(1.0));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_g < 1e-5 && worst_h < 1e-4 && secs < 60.0,
        format!("12 copula x margin pairs, 25 points each: max gradient rel err {worst_g:.2e}, max Hessian rel err {worst_h:.2e}, {secs:.1}s"),
    )
}

/// Two routes to the same likelihood agree.
fn criterion_2() -> Outcome {
    let data = toy(1200, MarginFamily::Gaussian, -0.5, false, SEED + 20);
    let mut spec = ModelSpec::new(vec![Term::linear("x"), Term::linear("w")], vec![Term::linear("x"), Term::linear("w")], MarginFamily::Gaussian, Dependence::Normal);
    spec.lambda = Some(vec![]);
    let f = gaussian_fiml(&data, &spec).unwrap();
    let m = fit(&data, &spec).unwrap();
    let fiml_err = max_abs(&f.beta1, m.alpha())
        .max(max_abs(&f.beta2, m.beta()))
        .max((f.sigma - m.aux.unwrap()).abs())
        .max((f.rho - m.theta.unwrap()).abs());

    let mut sep_err = 0.0f64;
    for margin in [MarginFamily::Gaussian, MarginFamily::Gamma] {
        let data = toy(800, margin, 0.0, false, SEED + 21);
        let mut s = smooth_spec(margin, Dependence::Independence);
        s.lambda = Some(vec![2.0, 0.5]);
        let opts = FitOptions::default();
        let joint = fit(&data, &s).unwrap();
        let probit = fit_selection_only(&data, &s, &opts).unwrap();
        let out = fit_outcome_only(&data, &s, &opts).unwrap();
        sep_err = sep_err
            .max(max_abs(joint.alpha(), probit.alpha()))
            .max(max_abs(joint.beta(), out.beta()))
            .max((joint.aux.unwrap() - out.aux.unwrap()).abs());
    }
    outcome(
        fiml_err < 1e-4 && sep_err < 1e-6,
        format!("classical FIML vs normal copula max diff {fiml_err:.2e}; independence joint vs separate fits max diff {sep_err:.2e}"),
    )
}

fn families() -> Vec<CopulaFamily> {
    let mut v = Vec::new();
    for kind in CopulaKind::ALL {
        let (lo, hi) = kind.tau_range();
        for tau in [-0.5, -0.1, 0.1, 0.3, 0.6] {
            if tau > lo && tau < hi.min(0.9) {
                v.push(CopulaFamily::from_tau(kind, tau).unwrap());
            }
        }
    }
    v
}

/// Copula axioms, normalization and Kendall's tau.
fn criterion_3() -> Outcome {
    let mut bound = 0.0f64;
    let mut min_mass = f64::INFINITY;
    let mut dens = 0.0f64;
    let fams = families();
    let grid: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
    for f in &fams {
        let c = |u: f64, v: f64| copula_cdf(f, u, v).unwrap();
        for &t in &grid {
            bound = bound.max(c(t, 0.0).abs()).max(c(0.0, t).abs()).max((c(t, 1.0) - t).abs()).max((c(1.0, t) - t).abs());
        }
        for i in 0..49 {
            for j in 0..49 {
                let m = c(grid[i + 1], grid[j + 1]) - c(grid[i], grid[j + 1]) - c(grid[i + 1], grid[j]) + c(grid[i], grid[j]);
                min_mass = min_mass.min(m);
            }
        }
        let total = integrate(|v| integrate(|u| copula_density(f, u, v), 0.0, 1.0, 1e-9), 0.0, 1.0, 1e-8);
        dens = dens.max((total - 1.0).abs());
    }
    let mut tau_err = 0.0f64;
    for th in [0.2, 0.5, 1.0, 2.0, 4.0, 8.0] {
        let f = CopulaFamily::new(CopulaKind::Clayton, th).unwrap();
        tau_err = tau_err.max((th / (th + 2.0) - kendall_tau_numeric(&f).unwrap()).abs());
    }
    for th in [1.1, 1.5, 2.0, 3.0, 6.0] {
        let f = CopulaFamily::new(CopulaKind::Gumbel, th).unwrap();
        tau_err = tau_err.max((1.0 - 1.0 / th - kendall_tau_numeric(&f).unwrap()).abs());
    }
    outcome(
        bound <= 1e-12 && min_mass >= -1e-12 && dens <= 1e-3 && tau_err <= 1e-6,
        format!(
            "{} families: boundary err {bound:.1e}, min rectangle mass {min_mass:.1e}, density mass err {dens:.1e}, tau err {tau_err:.1e}",
            fams.len()
        ),
    )
}

fn mc_opts() -> McOptions {
    McOptions { threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1), ..McOptions::default() }
}

/// Logged outcome study.
fn criterion_4() -> Outcome {
    let g = mc_study(&DgpSpec::logged(1000, CopulaKind::Clayton, 0.7, SEED).unwrap(), &[Estimator::G], REPS, &mc_opts()).unwrap();
    let l = mc_study(&DgpSpec::logged(1000, CopulaKind::Normal, 0.5, SEED).unwrap(), &[Estimator::L], REPS, &mc_opts()).unwrap();
    let gb = g.estimator(Estimator::G).unwrap().param("beta0").unwrap();
    let lb = l.estimator(Estimator::L).unwrap().param("beta0").unwrap();
    let (g_bias, g_rmse, l_bias) = (gb.rel_bias_pct.unwrap(), gb.rmse.unwrap(), lb.rel_bias_pct.unwrap());
    outcome(
        (-2.0..=3.0).contains(&g_bias) && (g_rmse - 0.045).abs() <= 0.3 * 0.045 && l_bias > 20.0,
        format!(
            "{REPS} reps, n=1000: gamma model beta0 rel bias {g_bias:.2}% rmse {g_rmse:.4} (Clayton tau 0.7); log model beta0 rel bias {l_bias:.1}% (normal tau 0.5); fits ok {}/{} and {}/{}",
            g.estimators[0].successes, REPS, l.estimators[0].successes, REPS
        ),
    )
}

fn consistency_reports() -> Vec<McReport> {
    [500, 1000, 2000]
        .into_iter()
        .map(|n| mc_study(&DgpSpec::consistency(n, SEED), &[Estimator::Gassm, Estimator::Gam], REPS, &mc_opts()).unwrap())
        .collect()
}

/// Consistency study against the unadjusted additive model.
fn criterion_5(reports: &[McReport]) -> Outcome {
    let sd500 = reports[0].estimator(Estimator::Gassm).unwrap().param("beta4").unwrap().sd.unwrap();
    let bias = |r: &McReport, e: Estimator| r.estimator(e).unwrap().param("beta4").unwrap().bias.unwrap().abs();
    let (bs, bg) = (bias(&reports[2], Estimator::Gassm), bias(&reports[2], Estimator::Gam));
    let mise = |r: &McReport, e: Estimator| r.estimator(e).unwrap().metric("mise_s3").unwrap();
    let mises: Vec<(f64, f64)> = reports[1..].iter().map(|r| (mise(r, Estimator::Gassm), mise(r, Estimator::Gam))).collect();
    let ok = (sd500 - 0.0778).abs() <= 0.3 * 0.0778 && bs < bg && mises.iter().all(|(a, b)| a < b);
    let fails: usize = reports.iter().flat_map(|r| &r.estimators).map(|e| e.failures).sum();
    outcome(
        ok,
        format!(
            "{REPS} reps: SD(beta4) n=500 {sd500:.4}; |bias beta4| n=2000 selection model {bs:.4} vs additive {bg:.4}; MISE(s3) n=1000 {:.2e} vs {:.2e}, n=2000 {:.2e} vs {:.2e}; failed fits {fails}",
            mises[0].0, mises[0].1, mises[1].0, mises[1].1
        ),
    )
}

/// The outcome predictor error shrinks with the sample size.
fn criterion_6(reports: &[McReport]) -> Outcome {
    let mse: Vec<f64> = reports.iter().map(|r| r.estimator(Estimator::Gassm).unwrap().metric("mse_eta2").unwrap()).collect();
    outcome(mse.windows(2).all(|w| w[1] < w[0]), format!("MSE(eta2) at n=500, 1000, 2000: {:.3e}, {:.3e}, {:.3e}", mse[0], mse[1], mse[2]))
}

/// Covariance identity by simulation.
fn criterion_7() -> Outcome {
    let cop = CopulaFamily::new(CopulaKind::Gumbel, 3.0).unwrap();
    let c = cov_identity_check(&MarginSpec::gamma(2.0), &cop, 0.3, 0.5, 1_000_000, SEED).unwrap();
    let z = c.z_score();
    outcome(z.abs() <= 3.0, format!("Gumbel theta 3, gamma margin, 1e6 draws: cov {:.5} vs {:.5}, z = {z:.2}", c.lhs, c.rhs))
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_selgam")).args(args).output().map(|o| o.status.success()).unwrap_or(false)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

/// Same seed, same bytes.
fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("spec.json");
    std::fs::write(
        &model,
        r#"{"selection":[{"column":"x1","kind":"linear"},{"column":"x2","kind":"smooth"}],"outcome":[{"column":"x1","kind":"linear"},{"column":"x2","kind":"smooth"}],"margin":"gamma","copula":"clayton"}"#,
    )
    .unwrap();
    let mut all_ok = true;
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let d = dir.to_str().unwrap();
        all_ok &= run_cli(&["simulate", "--study", "logged", "--n", "500", "--seed", "7", "--out-dir", d]);
        let data = dir.join("logged_n500_seed7.csv");
        all_ok &= run_cli(&["fit", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap(), "--out-dir", d]);
        all_ok &= run_cli(&["mc", "--study", "logged", "--n", "300", "--reps", "5", "--seed", "7", "--threads", "1", "--out-dir", d]);
        all_ok &= run_cli(&["report", dir.join("mc_logged.json").to_str().unwrap(), "--out-dir", d]);
    }
    let (a, b) = (files(&tmp.path().join("a")), files(&tmp.path().join("b")));
    let same = a == b;
    outcome(all_ok && same && a.len() >= 8, format!("{} output files from simulate, fit, mc and report compared byte for byte", a.len()))
}

fn main() {
    // `cargo test -- --list` style invocations only enumerate tests
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results = Vec::new();
    let mut report = |k: usize, name: &str, o: Outcome| {
        println!("criterion {k} [{name}]: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push(o.pass);
    };
    report(1, "derivatives", criterion_1());
    report(2, "reductions", criterion_2());
    report(3, "copula suite", criterion_3());
    report(4, "logged study", criterion_4());
    let consistency = consistency_reports();
    report(5, "consistency study", criterion_5(&consistency));
    report(6, "eta2 error decreases", criterion_6(&consistency));
    report(7, "covariance identity", criterion_7());
    report(8, "determinism", criterion_8());
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed} of {} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
