//! Published Monte Carlo summaries bundled for comparison with local runs.

use serde::{Deserialize, Serialize};

use super::mc::{Estimator, McReport};
use super::Study;
use crate::copulas::CopulaKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Sd,
    Rmse,
    RelBiasPct,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::Sd => "sd",
            Statistic::Rmse => "rmse",
            Statistic::RelBiasPct => "rel_bias_pct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValue {
    pub study: Study,
    pub n: usize,
    /// Copula and tau identify the row set of the logged study.
    pub copula: CopulaKind,
    pub tau: Option<f64>,
    pub estimator: Estimator,
    pub parameter: String,
    pub statistic: Statistic,
    pub value: f64,
    /// Relative tolerance for spreads, absolute (percentage points) for relative bias.
    pub tolerance: f64,
}

impl ReferenceValue {
    pub fn accepts(&self, observed: f64) -> bool {
        match self.statistic {
            Statistic::RelBiasPct => (observed - self.value).abs() <= self.tolerance,
            _ => (observed - self.value).abs() <= self.tolerance * self.value.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub reference: ReferenceValue,
    pub observed: Option<f64>,
    pub pass: bool,
}

const SPREAD_TOL: f64 = 0.3;
const BIAS_TOL: f64 = 5.0;

/// Standard deviations of the two outcome coefficients in the consistency study.
const CONSISTENCY_SD: [(usize, [f64; 4]); 6] = [
    // n, [gassm beta4, gam beta4, gassm beta5, gam beta5]
    (500, [0.0778, 0.0663, 0.0720, 0.0650]),
    (1000, [0.0538, 0.0492, 0.0469, 0.0395]),
    (1500, [0.0413, 0.0370, 0.0392, 0.0344]),
    (2000, [0.0334, 0.0298, 0.0332, 0.0311]),
    (2500, [0.0335, 0.0293, 0.0296, 0.0298]),
    (3000, [0.0287, 0.0263, 0.0288, 0.0258]),
];

/// Relative bias (%) and RMSE pairs for beta0, beta1, beta2 and tau in the logged study.
const LOGGED: [(CopulaKind, f64, Estimator, [f64; 8]); 18] = [
    (CopulaKind::Normal, 0.1, Estimator::G, [-5.7, 0.129, 3.8, 0.15, 5.3, 0.105, -83.5, 0.249]),
    (CopulaKind::Normal, 0.1, Estimator::L, [23.7, 0.253, 9.7, 0.272, 11.9, 0.141, -227.4, 0.426]),
    (CopulaKind::Normal, 0.5, Estimator::G, [-0.4, 0.069, 0.7, 0.077, 1.9, 0.086, -1.0, 0.13]),
    (CopulaKind::Normal, 0.5, Estimator::L, [30.9, 0.236, 5.3, 0.153, 5.9, 0.111, -19.3, 0.243]),
    (CopulaKind::Normal, 0.7, Estimator::G, [-0.1, 0.06, 0.5, 0.066, 1.9, 0.084, 0.3, 0.104]),
    (CopulaKind::Normal, 0.7, Estimator::L, [32.3, 0.229, 4.2, 0.096, 4.1, 0.098, -7.1, 0.121]),
    (CopulaKind::Frank, 0.1, Estimator::G, [-6.1, 0.13, 3.2, 0.148, 0.5, 0.094, -34.0, 0.245]),
    (CopulaKind::Frank, 0.1, Estimator::L, [39.7, 0.32, -0.4, 0.204, -3.5, 0.12, 18.9, 0.318]),
    (CopulaKind::Frank, 0.5, Estimator::G, [-2.7, 0.085, 1.4, 0.095, -0.3, 0.084, -6.8, 0.18]),
    (CopulaKind::Frank, 0.5, Estimator::L, [33.0, 0.249, 3.2, 0.132, -0.6, 0.102, -5.1, 0.205]),
    (CopulaKind::Frank, 0.7, Estimator::G, [-1.6, 0.07, 0.8, 0.078, -0.3, 0.084, -2.5, 0.149]),
    (CopulaKind::Frank, 0.7, Estimator::L, [30.8, 0.225, 4.2, 0.112, 0.1, 0.098, -5.9, 0.156]),
    (CopulaKind::Clayton, 0.1, Estimator::G, [1.3, 0.058, -0.4, 0.064, 1.9, 0.094, 5.5, 0.071]),
    (CopulaKind::Clayton, 0.1, Estimator::L, [32.3, 0.227, 3.9, 0.086, 4.9, 0.107, -76.5, 0.085]),
    (CopulaKind::Clayton, 0.5, Estimator::G, [0.6, 0.047, 0.0, 0.054, 1.4, 0.086, 1.7, 0.06]),
    (CopulaKind::Clayton, 0.5, Estimator::L, [32.4, 0.229, 4.1, 0.091, 4.7, 0.101, -7.9, 0.093]),
    (CopulaKind::Clayton, 0.7, Estimator::G, [0.4, 0.045, 0.1, 0.05, 1.1, 0.085, 1.4, 0.052]),
    (CopulaKind::Clayton, 0.7, Estimator::L, [33.5, 0.233, 3.6, 0.077, 4.1, 0.097, -1.8, 0.053]),
];

/// All bundled reference values.
pub fn reference_values() -> Vec<ReferenceValue> {
    let mut v = Vec::new();
    for (n, sds) in CONSISTENCY_SD {
        let cells = [(Estimator::Gassm, "beta4", sds[0]), (Estimator::Gam, "beta4", sds[1]), (Estimator::Gassm, "beta5", sds[2]), (Estimator::Gam, "beta5", sds[3])];
        for (estimator, parameter, value) in cells {
            v.push(ReferenceValue {
                study: Study::Consistency,
                n,
                copula: CopulaKind::Gumbel,
                tau: None,
                estimator,
                parameter: parameter.into(),
                statistic: Statistic::Sd,
                value,
                tolerance: SPREAD_TOL,
            });
        }
    }
    for (copula, tau, estimator, vals) in LOGGED {
        for (k, parameter) in ["beta0", "beta1", "beta2", "tau"].into_iter().enumerate() {
            for (statistic, value, tolerance) in
                [(Statistic::RelBiasPct, vals[2 * k], BIAS_TOL), (Statistic::Rmse, vals[2 * k + 1], SPREAD_TOL)]
            {
                v.push(ReferenceValue {
                    study: Study::Logged,
                    n: 1000,
                    copula,
                    tau: Some(tau),
                    estimator,
                    parameter: parameter.into(),
                    statistic,
                    value,
                    tolerance,
                });
            }
        }
    }
    v
}

/// Compare a report with every bundled value that describes the same design.
pub fn compare_reference(report: &McReport) -> Vec<ReferenceCheck> {
    reference_values()
        .into_iter()
        .filter(|r| {
            r.study == report.study
                && r.n == report.n
                && r.copula == report.copula
                && r.tau.is_none_or(|t| (t - report.tau).abs() < 1e-6)
        })
        .filter_map(|r| {
            let est = report.estimator(r.estimator)?;
            let p = est.param(&r.parameter)?;
            let observed = match r.statistic {
                Statistic::Sd => p.sd,
                Statistic::Rmse => p.rmse,
                Statistic::RelBiasPct => p.rel_bias_pct,
            };
            let pass = observed.is_some_and(|o| r.accepts(o));
            Some(ReferenceCheck { reference: r, observed, pass })
        })
        .collect()
}
