//! Marginal distributions of the outcome variable, parameterized by a
//! linear predictor through the family's link, and the standard normal
//! selection margin.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::special::{self, gamma_p_derivs, gamma_quantile, norm_cdf, norm_inv_cdf, norm_pdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginFamily {
    /// Normal with identity link; `aux` is the log standard deviation.
    Gaussian,
    /// Gamma with log link on the mean; `aux` is the log shape.
    Gamma,
}

impl MarginFamily {
    pub fn name(self) -> &'static str {
        match self {
            MarginFamily::Gaussian => "gaussian",
            MarginFamily::Gamma => "gamma",
        }
    }
}

impl std::str::FromStr for MarginFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(MarginFamily::Gaussian),
            "gamma" => Ok(MarginFamily::Gamma),
            other => Err(Error::Parse(format!("unknown margin family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub family: MarginFamily,
    pub aux: f64,
}

/// Value-level evaluation of a margin at one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginEval {
    pub logpdf: f64,
    pub cdf: f64,
    pub dcdf_deta: f64,
    pub d2cdf_deta2: f64,
    pub dlogpdf_deta: f64,
}

/// Log density and CDF with all first and second partials in `(eta, aux)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MarginDerivs {
    pub logpdf: f64,
    pub logpdf_e: f64,
    pub logpdf_a: f64,
    pub logpdf_ee: f64,
    pub logpdf_ea: f64,
    pub logpdf_aa: f64,
    pub cdf: f64,
    pub cdf_e: f64,
    pub cdf_a: f64,
    pub cdf_ee: f64,
    pub cdf_ea: f64,
    pub cdf_aa: f64,
    /// `1 - cdf`, computed without cancellation in the upper tail.
    pub sf: f64,
}

impl MarginSpec {
    pub fn new(family: MarginFamily, aux: f64) -> Self {
        Self { family, aux }
    }

    pub fn gaussian(sd: f64) -> Self {
        Self { family: MarginFamily::Gaussian, aux: sd.ln() }
    }

    pub fn gamma(shape: f64) -> Self {
        Self { family: MarginFamily::Gamma, aux: shape.ln() }
    }

    /// Standard deviation (Gaussian) or shape (gamma).
    pub fn aux_natural(&self) -> f64 {
        self.aux.exp()
    }

    pub fn mean(&self, eta: f64) -> f64 {
        match self.family {
            MarginFamily::Gaussian => eta,
            MarginFamily::Gamma => eta.exp(),
        }
    }

    pub fn variance(&self, eta: f64) -> f64 {
        match self.family {
            MarginFamily::Gaussian => (2.0 * self.aux).exp(),
            MarginFamily::Gamma => (2.0 * eta).exp() / self.aux.exp(),
        }
    }

    /// Derivative of the mean with respect to the linear predictor.
    pub fn dmean_deta(&self, eta: f64) -> f64 {
        match self.family {
            MarginFamily::Gaussian => 1.0,
            MarginFamily::Gamma => eta.exp(),
        }
    }

    fn check(&self, y: f64, eta: f64) -> Result<()> {
        if !eta.is_finite() || !self.aux.is_finite() {
            return Err(Error::Domain(format!("non-finite predictor {eta} or aux {}", self.aux)));
        }
        if !y.is_finite() || (self.family == MarginFamily::Gamma && y <= 0.0) {
            return Err(Error::Domain(format!("y = {y} outside the {} support", self.family.name())));
        }
        Ok(())
    }

    pub fn derivs(&self, y: f64, eta: f64) -> Result<MarginDerivs> {
        self.check(y, eta)?;
        Ok(match self.family {
            MarginFamily::Gaussian => {
                let sigma = self.aux.exp();
                let r = (y - eta) / sigma;
                let phi = norm_pdf(r);
                MarginDerivs {
                    logpdf: -special::LN_SQRT_2PI - self.aux - 0.5 * r * r,
                    logpdf_e: r / sigma,
                    logpdf_a: r * r - 1.0,
                    logpdf_ee: -1.0 / (sigma * sigma),
                    logpdf_ea: -2.0 * r / sigma,
                    logpdf_aa: -2.0 * r * r,
                    cdf: norm_cdf(r),
                    cdf_e: -phi / sigma,
                    cdf_a: -phi * r,
                    cdf_ee: -r * phi / (sigma * sigma),
                    cdf_ea: phi * (1.0 - r * r) / sigma,
                    cdf_aa: phi * r * (1.0 - r * r),
                    sf: norm_cdf(-r),
                }
            }
            MarginFamily::Gamma => {
                let k = self.aux.exp();
                let x = k * y * (-eta).exp();
                let ln_y = y.ln();
                let t = self.aux - eta + 1.0 + ln_y - digamma(k);
                let p = gamma_p_derivs(k, x);
                MarginDerivs {
                    logpdf: k * (self.aux - eta) + (k - 1.0) * ln_y - x - ln_gamma(k),
                    logpdf_e: x - k,
                    logpdf_a: k * t - x,
                    logpdf_ee: -x,
                    logpdf_ea: x - k,
                    logpdf_aa: k * t + k * (1.0 - k * special::trigamma(k)) - x,
                    cdf: p.p,
                    cdf_e: -x * p.dx,
                    cdf_a: k * p.da + x * p.dx,
                    cdf_ee: x * x * p.dxx + x * p.dx,
                    cdf_ea: -x * p.dx - x * k * p.dax - x * x * p.dxx,
                    cdf_aa: k * k * p.daa + 2.0 * k * x * p.dax + x * x * p.dxx + k * p.da + x * p.dx,
                    sf: if x > 0.0 { statrs::function::gamma::gamma_ur(k, x) } else { 1.0 },
                }
            }
        })
    }

    pub fn eval(&self, y: f64, eta: f64) -> Result<MarginEval> {
        let d = self.derivs(y, eta)?;
        Ok(MarginEval {
            logpdf: d.logpdf,
            cdf: d.cdf,
            dcdf_deta: d.cdf_e,
            d2cdf_deta2: d.cdf_ee,
            dlogpdf_deta: d.logpdf_e,
        })
    }

    /// Inverse CDF at `u` for linear predictor `eta`.
    pub fn quantile(&self, eta: f64, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile level {u} outside (0, 1)")));
        }
        Ok(match self.family {
            MarginFamily::Gaussian => eta + self.aux.exp() * norm_inv_cdf(u),
            MarginFamily::Gamma => {
                let k = self.aux.exp();
                eta.exp() / k * gamma_quantile(k, u)
            }
        })
    }
}

pub fn margin_logpdf(m: &MarginSpec, y: f64, eta: f64) -> Result<f64> {
    Ok(m.derivs(y, eta)?.logpdf)
}

pub fn margin_cdf(m: &MarginSpec, y: f64, eta: f64) -> Result<f64> {
    if m.family == MarginFamily::Gamma && y <= 0.0 && eta.is_finite() {
        return Ok(0.0);
    }
    Ok(m.derivs(y, eta)?.cdf)
}

pub fn margin_cdf_deta(m: &MarginSpec, y: f64, eta: f64) -> Result<f64> {
    if m.family == MarginFamily::Gamma && y <= 0.0 && eta.is_finite() {
        return Ok(0.0);
    }
    Ok(m.derivs(y, eta)?.cdf_e)
}

pub fn margin_cdf_d2eta(m: &MarginSpec, y: f64, eta: f64) -> Result<f64> {
    if m.family == MarginFamily::Gamma && y <= 0.0 && eta.is_finite() {
        return Ok(0.0);
    }
    Ok(m.derivs(y, eta)?.cdf_ee)
}

pub fn margin_sample(m: &MarginSpec, eta: f64, u: f64) -> Result<f64> {
    m.quantile(eta, u)
}

/// CDF of the latent selection variable evaluated at zero: `Phi(-eta1)`.
pub fn selection_cdf_at_zero(eta1: f64) -> f64 {
    norm_cdf(-eta1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;

    #[test]
    fn survival_is_accurate_in_the_upper_tail() {
        // shape 1 is the exponential distribution: survival exp(-y e^-eta)
        let m = MarginSpec::gamma(1.0);
        for y in [0.5, 5.0, 20.0, 40.0] {
            let d = m.derivs(y, 0.0).unwrap();
            assert!((d.sf - (-y as f64).exp()).abs() <= 1e-13 * (-y as f64).exp(), "y {y}");
            assert!((d.sf + d.cdf - 1.0).abs() < 1e-15);
        }
        // Phi(-8)
        let d = MarginSpec::gaussian(1.0).derivs(8.0, 0.0).unwrap();
        assert!((d.sf - 6.220_960_574_271_784e-16).abs() < 1e-12 * 6.22e-16);
    }

    fn gamma_density_oracle(shape: f64, rate: f64, y: f64) -> f64 {
        // textbook form, independent of the implementation's parameterization
        rate.powf(shape) * y.powf(shape - 1.0) * (-rate * y).exp() / statrs::function::gamma::gamma(shape)
    }

    #[test]
    fn logpdf_examples() {
        let g = MarginSpec::gaussian(1.0);
        assert!((margin_logpdf(&g, 0.0, 0.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-14);
        assert!((margin_logpdf(&g, 1.0, 1.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-14);
        let m = MarginSpec::gamma(2.0);
        for &eta in &[-1.0, 0.3, 2.0] {
            let mu: f64 = f64::exp(eta);
            let expected = gamma_density_oracle(2.0, 2.0 / mu, mu).ln();
            assert!((margin_logpdf(&m, mu, eta).unwrap() - expected).abs() < 1e-12);
        }
        assert!(matches!(margin_logpdf(&m, -1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(margin_logpdf(&m, 0.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cdf_examples() {
        let g = MarginSpec::gaussian(1.0);
        assert!((margin_cdf(&g, 0.7, 0.7).unwrap() - 0.5).abs() < 1e-15);
        assert!((selection_cdf_at_zero(0.0) - 0.5).abs() < 1e-15);
        let m = MarginSpec::gamma(2.0);
        let mu = 1.7;
        let oracle = integrate(|y| gamma_density_oracle(2.0, 2.0 / mu, y), 0.0, mu, 1e-13);
        assert!((margin_cdf(&m, mu, mu.ln()).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(margin_cdf(&m, 0.0, 0.5).unwrap(), 0.0);
        assert_eq!(margin_cdf_deta(&m, 0.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn cdf_eta_derivative_examples() {
        let g = MarginSpec::gaussian(1.0);
        assert!((margin_cdf_deta(&g, 0.0, 0.0).unwrap() + 0.398_942_280_401_432_7).abs() < 1e-15);
        let m = MarginSpec::gamma(2.0);
        let h = 1e-5;
        for &(y, eta) in &[(0.3, 0.1), (2.5, 0.4), (0.05, -1.0)] {
            let fd = (margin_cdf(&m, y, eta + h).unwrap() - margin_cdf(&m, y, eta - h).unwrap()) / (2.0 * h);
            let an = margin_cdf_deta(&m, y, eta).unwrap();
            assert!((an - fd).abs() <= 1e-6 * an.abs().max(1e-3));
        }
    }

    #[test]
    fn quantile_examples() {
        let g = MarginSpec::gaussian(1.0);
        assert_eq!(margin_sample(&g, 0.0, 0.5).unwrap(), 0.0);
        assert!((margin_sample(&g, 2.0, 0.975).unwrap() - (2.0 + 1.959_963_984_540_054)).abs() < 1e-12);
        assert!(margin_sample(&g, 0.0, 1.0).is_err());
        let m = MarginSpec::gamma(2.0);
        for i in 1..50 {
            let u = i as f64 / 50.0;
            let y = margin_sample(&m, 0.3, u).unwrap();
            assert!((margin_cdf(&m, y, 0.3).unwrap() - u).abs() < 1e-10);
        }
    }

    fn check_all_partials(m: MarginSpec, y: f64, eta: f64) {
        let d = m.derivs(y, eta).unwrap();
        let h = 1e-5;
        let at = |e: f64, a: f64| MarginSpec { aux: a, ..m }.derivs(y, e).unwrap();
        let (pe, me) = (at(eta + h, m.aux), at(eta - h, m.aux));
        let (pa, ma) = (at(eta, m.aux + h), at(eta, m.aux - h));
        let close = |an: f64, fd: f64, what: &str| {
            assert!((an - fd).abs() <= 1e-6 * (1.0 + an.abs()), "{what}: {an} vs {fd} ({m:?}, y={y}, eta={eta})");
        };
        close(d.logpdf_e, (pe.logpdf - me.logpdf) / (2.0 * h), "logpdf_e");
        close(d.logpdf_a, (pa.logpdf - ma.logpdf) / (2.0 * h), "logpdf_a");
        close(d.logpdf_ee, (pe.logpdf_e - me.logpdf_e) / (2.0 * h), "logpdf_ee");
        close(d.logpdf_ea, (pa.logpdf_e - ma.logpdf_e) / (2.0 * h), "logpdf_ea");
        close(d.logpdf_aa, (pa.logpdf_a - ma.logpdf_a) / (2.0 * h), "logpdf_aa");
        close(d.cdf_e, (pe.cdf - me.cdf) / (2.0 * h), "cdf_e");
        close(d.cdf_a, (pa.cdf - ma.cdf) / (2.0 * h), "cdf_a");
        close(d.cdf_ee, (pe.cdf_e - me.cdf_e) / (2.0 * h), "cdf_ee");
        close(d.cdf_ea, (pa.cdf_e - ma.cdf_e) / (2.0 * h), "cdf_ea");
        close(d.cdf_aa, (pa.cdf_a - ma.cdf_a) / (2.0 * h), "cdf_aa");
    }

    #[test]
    fn partials_match_central_differences() {
        for &eta in &[-5.0, -1.2, 0.0, 0.8, 5.0] {
            for &q in &[0.01, 0.2, 0.5, 0.9, 0.999] {
                for m in [MarginSpec::gaussian(1.0), MarginSpec::gaussian(0.6), MarginSpec::gamma(2.0), MarginSpec::gamma(0.7)] {
                    let y = m.quantile(eta, q).unwrap();
                    check_all_partials(m, y, eta);
                }
            }
        }
    }

    #[test]
    fn densities_integrate_to_one_and_cdf_monotone() {
        for &eta in &[-5.0, 0.0, 2.0, 5.0] {
            let g = MarginSpec::gaussian(1.0);
            let mass = integrate(|y| margin_logpdf(&g, y, eta).unwrap().exp(), eta - 40.0, eta + 40.0, 1e-12);
            assert!((mass - 1.0).abs() < 1e-6);
            let m = MarginSpec::gamma(2.0);
            let mu: f64 = f64::exp(eta);
            let mass = integrate(|y| margin_logpdf(&m, y, eta).unwrap().exp(), 0.0, 60.0 * mu, 1e-12);
            assert!((mass - 1.0).abs() < 1e-6);
            let mut prev = 0.0;
            for i in 1..200 {
                let y = mu * i as f64 / 20.0;
                let c = margin_cdf(&m, y, eta).unwrap();
                assert!(c >= prev);
                prev = c;
            }
        }
    }

    #[test]
    fn gaussian_mean_and_variance_by_quadrature() {
        let m = MarginSpec::gaussian(1.0);
        let eta = 0.7;
        let f = |y: f64| margin_logpdf(&m, y, eta).unwrap().exp();
        let mean = integrate(|y| y * f(y), eta - 40.0, eta + 40.0, 1e-12);
        let var = integrate(|y| (y - mean).powi(2) * f(y), eta - 40.0, eta + 40.0, 1e-12);
        // canonical b(eta) = eta^2 / 2: b' = eta, b'' = 1
        assert!((mean - eta).abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
        assert!((m.mean(eta) - mean).abs() < 1e-9 && (m.variance(eta) - var).abs() < 1e-9);
    }
}
