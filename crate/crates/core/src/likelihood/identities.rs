use crate::copulas::{copula_cdf, copula_derivs, copula_sample, generator_deriv, CopulaFamily};
use crate::error::{Error, Result};
use crate::margins::MarginSpec;
use crate::quad::integrate;
use crate::special::norm_cdf;

/// `E(Y2* | Y1 = 1) - E(Y2*)` for an Archimedean copula, by quadrature over
/// the outcome's probability scale.
pub fn selection_bias(m: &MarginSpec, cop: &CopulaFamily, eta1: f64, eta2: f64) -> Result<f64> {
    // generator_deriv rejects non-Archimedean families
    generator_deriv(cop, 0.5)?;
    let u = norm_cdf(-eta1);
    if u <= 0.0 {
        return Ok(0.0);
    }
    if u >= 1.0 {
        return Err(Error::Domain("selection probability is zero".into()));
    }
    let mean = m.mean(eta2);
    // int y f2(y) z(y) dy with z = phi'(v) / phi'(C(u, v)), substituting y = Q(v)
    let integrand = |v: f64| {
        let c = copula_cdf(cop, u, v).unwrap_or(0.0);
        if c <= 0.0 {
            return 0.0;
        }
        let ratio = generator_deriv(cop, v).unwrap() / generator_deriv(cop, c).unwrap();
        let q = m.quantile(eta2, v).unwrap();
        if ratio.is_finite() {
            q * ratio
        } else {
            0.0
        }
    };
    let i = integrate(integrand, 0.0, 1.0, 1e-11);
    Ok((u * mean - i) / (1.0 - u))
}

/// Monte Carlo estimates of both sides of
/// `Cov(Y1, Y2*) = Var(Y2*) / (dmu/deta2) * E(Y1 dz/deta2 / (1 - z))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovIdentity {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
}

impl CovIdentity {
    /// Difference in units of the combined standard error.
    pub fn z_score(&self) -> f64 {
        (self.lhs - self.rhs) / (self.lhs_se.powi(2) + self.rhs_se.powi(2)).sqrt()
    }
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn cov_identity_check(
    m: &MarginSpec,
    cop: &CopulaFamily,
    eta1: f64,
    eta2: f64,
    draws: usize,
    seed: u64,
) -> Result<CovIdentity> {
    if draws < 2 {
        return Err(Error::InvalidParameter("at least two draws are required".into()));
    }
    let u0 = norm_cdf(-eta1);
    let pairs = copula_sample(cop, draws, seed)?;
    let scale = m.variance(eta2) / m.dmean_deta(eta2);
    let mut y1 = Vec::with_capacity(draws);
    let mut y2 = Vec::with_capacity(draws);
    let mut score = Vec::with_capacity(draws);
    for &(u, v) in &pairs {
        let s = u > u0;
        let y = m.quantile(eta2, v)?;
        y1.push(s as u8 as f64);
        y2.push(y);
        let term = if s {
            let d = copula_derivs(cop, u0.clamp(0.0, 1.0), v)?;
            let fe = m.derivs(y, eta2)?.cdf_e;
            let z = d.dv.min(crate::likelihood::Z_MAX);
            scale * d.dvv * fe / (1.0 - z)
        } else {
            0.0
        };
        score.push(term);
    }
    let (m1, _) = mean_se(&y1);
    let (m2, _) = mean_se(&y2);
    let prod: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| (a - m1) * (b - m2)).collect();
    let (lhs, lhs_se) = mean_se(&prod);
    let lhs = lhs * draws as f64 / (draws as f64 - 1.0);
    let (rhs, rhs_se) = mean_se(&score);
    Ok(CovIdentity { lhs, lhs_se, rhs, rhs_se })
}
