//! Data-generating processes for the two simulation designs and the Monte
//! Carlo harness that compares estimators on them.

mod mc;
mod reference;

pub use mc::{
    derive_seed, log_outcome, mc_study, ContinuousSummary, Estimator, EstimatorSummary, McOptions, McReport, ParamSummary, RepRecord, CSV_HEADER, GRID_POINTS,
};
pub use reference::{compare_reference, reference_values, ReferenceCheck, ReferenceValue, Statistic};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::copulas::{sample_pair, tau_to_theta, uniform_open, CopulaFamily, CopulaKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::margins::MarginSpec;
use crate::special::{norm_cdf, norm_inv_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    /// Additive gamma outcome with Gumbel dependence and smooth covariate effects.
    Consistency,
    /// Linear gamma outcome used to compare the gamma model with a model for the logged outcome.
    Logged,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Consistency => "consistency",
            Study::Logged => "logged",
        }
    }
}

impl std::str::FromStr for Study {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "consistency" => Ok(Study::Consistency),
            "logged" => Ok(Study::Logged),
            other => Err(Error::Parse(format!("unknown study '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub study: Study,
    pub n: usize,
    pub copula: CopulaKind,
    pub theta: f64,
    /// Gamma shape of the outcome.
    pub shape: f64,
    /// Added to the selection predictor; `+inf` selects every row.
    pub selection_shift: f64,
    pub seed: u64,
}

impl DgpSpec {
    /// Gumbel dependence with `theta = 3` and shape 2.
    pub fn consistency(n: usize, seed: u64) -> Self {
        Self { study: Study::Consistency, n, copula: CopulaKind::Gumbel, theta: 3.0, shape: 2.0, selection_shift: 0.0, seed }
    }

    /// Linear design with the copula parameter set from Kendall's tau.
    pub fn logged(n: usize, copula: CopulaKind, tau: f64, seed: u64) -> Result<Self> {
        let theta = tau_to_theta(copula, tau)?;
        Ok(Self { study: Study::Logged, n, copula, theta, shape: 2.0, selection_shift: 0.0, seed })
    }

    pub fn family(&self) -> Result<CopulaFamily> {
        CopulaFamily::new(self.copula, self.theta)
    }

    pub fn tau(&self) -> Result<f64> {
        crate::copulas::kendall_tau(&self.family()?)
    }

    pub fn covariate_names(&self) -> &'static [&'static str] {
        match self.study {
            Study::Consistency => &["x1", "x2", "x3", "x4", "x5"],
            Study::Logged => &["x1", "x2", "x3"],
        }
    }

    pub fn eta1(&self, x: &[f64]) -> f64 {
        self.selection_shift
            + match self.study {
                Study::Consistency => 0.7 + s1(x[0]) + s2(x[1]) + 0.6 * x[3] - 0.4 * x[4],
                Study::Logged => 0.58 + 2.5 * x[0] - x[1] + 0.8 * x[2],
            }
    }

    pub fn eta2(&self, x: &[f64]) -> f64 {
        match self.study {
            Study::Consistency => -1.5 + s3(x[0]) + s4(x[2]) - x[3] + 0.75 * x[4],
            Study::Logged => -0.68 - 1.5 * x[0] + 0.5 * x[1],
        }
    }

    /// True outcome coefficients of the linear terms, by name.
    pub fn outcome_truth(&self) -> Vec<(&'static str, f64)> {
        match self.study {
            Study::Consistency => vec![("beta4", -1.0), ("beta5", 0.75)],
            Study::Logged => vec![("beta0", -0.68), ("beta1", -1.5), ("beta2", 0.5)],
        }
    }

    fn covariates<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.study {
            Study::Consistency => {
                let x1 = 16.0 + 50.0 * uniform_open(rng);
                let x2 = 10.0 + 60.0 * uniform_open(rng);
                let x3 = 20.0 * uniform_open(rng);
                let x4 = if uniform_open(rng) < 0.5 { 0.0 } else { 1.0 };
                let x5 = if uniform_open(rng) < 0.5 { 0.0 } else { 1.0 };
                vec![x1, x2, x3, x4, x5]
            }
            Study::Logged => {
                // equicorrelated trivariate normal (correlation 0.5) via its Cholesky factor
                let e: Vec<f64> = (0..3).map(|_| norm_inv_cdf(uniform_open(rng))).collect();
                let (a, b) = (0.5, 0.75f64.sqrt());
                let c2 = (0.5 - a * a) / b;
                let c3 = (1.0 - a * a - c2 * c2).sqrt();
                let z = [e[0], a * e[0] + b * e[1], a * e[0] + c2 * e[1] + c3 * e[2]];
                let x1 = if norm_cdf(z[0]) > 0.5 { 1.0 } else { 0.0 };
                vec![x1, norm_cdf(z[1]), norm_cdf(z[2])]
            }
        }
    }

    fn rows(&self, full: bool) -> Result<(Dataset, Vec<f64>, Vec<(f64, f64)>)> {
        let fam = self.family()?;
        let margin = MarginSpec::gamma(self.shape);
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let names = self.covariate_names();
        let mut cols = vec![Vec::with_capacity(self.n); names.len()];
        let mut sel = Vec::with_capacity(self.n);
        let mut out = Vec::with_capacity(self.n);
        let mut latent = Vec::with_capacity(self.n);
        let mut pairs = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let x = self.covariates(&mut rng);
            let (u, v) = sample_pair(&fam, &mut rng);
            let v = v.clamp(1e-300, 1.0 - f64::EPSILON / 2.0);
            let y2 = margin.quantile(self.eta2(&x), v)?;
            // latent selection error Phi^-1(u): unselected exactly when u <= Phi(-eta1)
            let s = full || u > norm_cdf(-self.eta1(&x));
            for (c, xv) in cols.iter_mut().zip(&x) {
                c.push(*xv);
            }
            sel.push(s);
            out.push(if s { y2 } else { f64::NAN });
            latent.push(y2);
            pairs.push((u, v));
        }
        let columns = names.iter().map(|s| s.to_string()).zip(cols).collect();
        Ok((Dataset::new(sel, out, columns)?, latent, pairs))
    }

    /// Covariates only, all rows unselected (for prediction grids).
    /// The copula draws `(u, v)` behind each row: `u` is the uniform of the
    /// latent selection error and `v` that of the outcome.
    pub fn latent_uniforms(&self) -> Result<Vec<(f64, f64)>> {
        Ok(self.rows(false)?.2)
    }

    pub fn covariate_sample(&self) -> Result<Dataset> {
        let mut d = self.rows(false)?.0;
        d.sel = vec![false; d.n()];
        d.out = vec![f64::NAN; d.n()];
        Ok(d)
    }
}

pub fn s1(x: f64) -> f64 {
    -0.2 * (std::f64::consts::PI * x / 46.0).sin()
}

pub fn s2(x: f64) -> f64 {
    -0.0004 * (x + 0.01 * x.cbrt())
}

pub fn s3(x: f64) -> f64 {
    0.0006 * (0.1 * x).exp()
}

pub fn s4(x: f64) -> f64 {
    0.03 * x
}

/// Simulated dataset with selection applied.
pub fn generate(spec: &DgpSpec) -> Result<Dataset> {
    Ok(spec.rows(false)?.0)
}

/// Simulated dataset with every outcome observed (selection ignored).
pub fn generate_full(spec: &DgpSpec) -> Result<Dataset> {
    Ok(spec.rows(true)?.0)
}

/// Selected dataset together with the latent outcome of every row.
pub fn generate_with_latent(spec: &DgpSpec) -> Result<(Dataset, Vec<f64>)> {
    let (d, l, _) = spec.rows(false)?;
    Ok((d, l))
}
