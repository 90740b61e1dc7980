use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, generate_full, s3, s4, DgpSpec, Study};
use crate::copulas::CopulaKind;
use crate::data::{format_num, Dataset, Dependence, ModelSpec, Term};
use crate::error::{Error, Result};
use crate::margins::{MarginFamily, MarginSpec};
use crate::optimizer::{fit_outcome_only, fit_with_options, Equation, FitOptions, FittedModel};

const DATA_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
/// Points in the evaluation grids for integrated errors and predictor errors.
pub const GRID_POINTS: usize = 200;

/// Seed for replication `rep` of stream `stream`, mixed with SplitMix64.
pub fn derive_seed(base: u64, stream: u64, rep: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Joint additive selection model with the generating copula family.
    Gassm,
    /// Outcome equation alone on the selected rows.
    Gam,
    /// Joint linear gamma selection model with the generating copula family.
    G,
    /// Normal copula with a Gaussian margin for the logged outcome.
    L,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Gassm => "gassm",
            Estimator::Gam => "gam",
            Estimator::G => "g",
            Estimator::L => "l",
        }
    }

    /// The estimators compared in a study.
    pub fn for_study(study: Study) -> Vec<Estimator> {
        match study {
            Study::Consistency => vec![Estimator::Gassm, Estimator::Gam],
            Study::Logged => vec![Estimator::G, Estimator::L],
        }
    }

    pub fn model_spec(self, dgp: &DgpSpec) -> Result<ModelSpec> {
        match (self, dgp.study) {
            (Estimator::Gassm | Estimator::Gam, Study::Consistency) => Ok(ModelSpec::new(
                vec![Term::smooth("x1"), Term::smooth("x2"), Term::linear("x4"), Term::linear("x5")],
                vec![Term::smooth("x1"), Term::smooth("x3"), Term::linear("x4"), Term::linear("x5")],
                MarginFamily::Gamma,
                Dependence::from(dgp.copula),
            )),
            (Estimator::G, Study::Logged) => Ok(ModelSpec::new(
                vec![Term::linear("x1"), Term::linear("x2"), Term::linear("x3")],
                vec![Term::linear("x1"), Term::linear("x2")],
                MarginFamily::Gamma,
                Dependence::from(dgp.copula),
            )),
            (Estimator::L, Study::Logged) => Ok(ModelSpec::new(
                vec![Term::linear("x1"), Term::linear("x2"), Term::linear("x3")],
                vec![Term::linear("x1"), Term::linear("x2")],
                MarginFamily::Gaussian,
                Dependence::Normal,
            )),
            (e, s) => Err(Error::InvalidParameter(format!("estimator {} is not defined for the {} study", e.name(), s.name()))),
        }
    }

    pub fn fit(self, data: &Dataset, dgp: &DgpSpec, opts: &FitOptions) -> Result<FittedModel> {
        let spec = self.model_spec(dgp)?;
        match self {
            Estimator::Gam => fit_outcome_only(data, &spec, opts),
            Estimator::L => fit_with_options(&log_outcome(data)?, &spec, opts),
            _ => fit_with_options(data, &spec, opts),
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gassm" => Ok(Estimator::Gassm),
            "gam" => Ok(Estimator::Gam),
            "g" => Ok(Estimator::G),
            "l" => Ok(Estimator::L),
            other => Err(Error::Parse(format!("unknown estimator '{other}'"))),
        }
    }
}

/// The dataset with its observed outcomes replaced by their logarithms.
pub fn log_outcome(data: &Dataset) -> Result<Dataset> {
    let mut out = Vec::with_capacity(data.n());
    for (i, (&y, &s)) in data.out.iter().zip(&data.sel).enumerate() {
        if s && !(y > 0.0) {
            return Err(Error::Domain(format!("row {}: outcome {y} is not positive", i + 1)));
        }
        out.push(if s { y.ln() } else { f64::NAN });
    }
    Dataset::new(data.sel.clone(), out, data.columns.clone())
}

/// Outcome coefficient by name: `beta0` is the intercept and `betaK` the
/// linear term of column `xK`.
fn outcome_coefficient(m: &FittedModel, name: &str) -> Option<f64> {
    let basis = m.outcome_basis.as_ref()?;
    let k: usize = name.strip_prefix("beta")?.parse().ok()?;
    let off = m.layout.q1;
    if k == 0 {
        return Some(m.delta[off]);
    }
    let col = format!("x{k}");
    let b = basis.blocks.iter().find(|b| b.term.column == col && b.smooth.is_none())?;
    Some(m.delta[off + b.range.start])
}

fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

fn grid(lo: f64, hi: f64) -> Vec<f64> {
    (0..GRID_POINTS).map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).collect()
}

/// Integrated squared error of a smooth on a grid, both curves centered.
fn ise(m: &FittedModel, column: &str, lo: f64, hi: f64, truth: fn(f64) -> f64) -> Result<f64> {
    let xs = grid(lo, hi);
    let est = centered(&m.smooth_values(Equation::Outcome, column, &xs)?);
    let tru = centered(&xs.iter().map(|&x| truth(x)).collect::<Vec<_>>());
    Ok(est.iter().zip(&tru).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / xs.len() as f64)
}

/// `-2` times the mean log density of fully observed test outcomes.
fn test_error(m: &FittedModel, est: Estimator, test: &Dataset) -> Result<f64> {
    let eta = m.predict(Equation::Outcome, test)?;
    let aux = m.aux.ok_or_else(|| Error::InvalidParameter("model has no outcome margin".into()))?;
    let margin = MarginSpec::new(m.spec.margin, aux.ln());
    let mut total = 0.0;
    for (&y, &e) in test.out.iter().zip(&eta) {
        total += match est {
            Estimator::L => margin.derivs(y.ln(), e)?.logpdf - y.ln(),
            _ => margin.derivs(y, e)?.logpdf,
        };
    }
    Ok(-2.0 * total / test.n() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub estimator: Estimator,
    pub error: Option<String>,
    pub converged: bool,
    pub params: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub parameter: String,
    pub truth: f64,
    pub mean: Option<f64>,
    /// Standard deviation with divisor `R - 1`; undefined for fewer than two replications.
    pub sd: Option<f64>,
    pub bias: Option<f64>,
    pub rel_bias_pct: Option<f64>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSummary {
    pub quantity: String,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub successes: usize,
    pub failures: usize,
    pub nonconverged: usize,
    pub params: Vec<ParamSummary>,
    pub metrics: Vec<ContinuousSummary>,
}

impl EstimatorSummary {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.parameter == name)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.quantity == name)?.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub study: Study,
    pub n: usize,
    pub copula: CopulaKind,
    pub theta: f64,
    pub tau: f64,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<RepRecord>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub threads: usize,
    pub fit: FitOptions,
    pub keep_raw: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { threads: 1, fit: FitOptions::default(), keep_raw: false }
    }
}

fn summarize_param(name: &str, truth: f64, values: &[f64]) -> ParamSummary {
    if values.is_empty() {
        return ParamSummary { parameter: name.into(), truth, mean: None, sd: None, bias: None, rel_bias_pct: None, rmse: None };
    }
    let mean = crate::stats::mean(values);
    let bias = mean - truth;
    let rmse = (values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    ParamSummary {
        parameter: name.into(),
        truth,
        mean: Some(mean),
        sd: crate::stats::sd(values),
        bias: Some(bias),
        rel_bias_pct: (truth != 0.0).then(|| 100.0 * bias / truth),
        rmse: Some(rmse),
    }
}

struct Context {
    eval: Dataset,
    eval_eta2: Vec<f64>,
}

fn run_one(dgp: &DgpSpec, ests: &[Estimator], rep: usize, ctx: &Context, opts: &McOptions) -> Vec<RepRecord> {
    let data_spec = DgpSpec { seed: derive_seed(dgp.seed, DATA_STREAM, rep as u64), ..dgp.clone() };
    let test_spec = DgpSpec { seed: derive_seed(dgp.seed, TEST_STREAM, rep as u64), ..dgp.clone() };
    let data = generate(&data_spec);
    let test = generate_full(&test_spec);
    ests.iter()
        .map(|&e| {
            let res = (|| -> Result<RepRecord> {
                let d = data.as_ref().map_err(|err| Error::InvalidParameter(err.to_string()))?;
                let t = test.as_ref().map_err(|err| Error::InvalidParameter(err.to_string()))?;
                let m = e.fit(d, dgp, &opts.fit)?;
                let mut params = BTreeMap::new();
                for (name, _) in dgp.outcome_truth() {
                    let v = outcome_coefficient(&m, name).ok_or_else(|| Error::InvalidParameter(format!("no coefficient {name}")))?;
                    params.insert(name.to_string(), v);
                }
                if let Some(tau) = m.tau {
                    params.insert("tau".into(), tau);
                }
                let mut metrics = BTreeMap::new();
                if dgp.study == Study::Consistency {
                    metrics.insert("mise_s3".into(), ise(&m, "x1", 16.0, 66.0, s3)?);
                    metrics.insert("mise_s4".into(), ise(&m, "x3", 0.0, 20.0, s4)?);
                }
                if e != Estimator::L {
                    let pred = m.predict(Equation::Outcome, &ctx.eval)?;
                    let mse = pred.iter().zip(&ctx.eval_eta2).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64;
                    metrics.insert("mse_eta2".into(), mse);
                }
                metrics.insert("test_error".into(), test_error(&m, e, t)?);
                Ok(RepRecord { rep, estimator: e, error: None, converged: m.convergence.converged, params, metrics })
            })();
            res.unwrap_or_else(|err| {
                log::warn!("replication {rep} estimator {} failed: {err}", e.name());
                RepRecord { rep, estimator: e, error: Some(err.to_string()), converged: false, params: BTreeMap::new(), metrics: BTreeMap::new() }
            })
        })
        .collect()
}

/// Run `reps` seeded replications, fitting every estimator to the same data.
pub fn mc_study(dgp: &DgpSpec, ests: &[Estimator], reps: usize, opts: &McOptions) -> Result<McReport> {
    if reps == 0 {
        return Err(Error::InvalidParameter("at least one replication is required".into()));
    }
    for &e in ests {
        e.model_spec(dgp)?;
    }
    let eval_spec = DgpSpec { n: GRID_POINTS, seed: derive_seed(dgp.seed, EVAL_STREAM, 0), ..dgp.clone() };
    let eval = eval_spec.covariate_sample()?;
    let names = dgp.covariate_names();
    let eval_eta2 = (0..eval.n())
        .map(|i| {
            let x: Vec<f64> = names.iter().map(|c| eval.column(c).map(|v| v[i])).collect::<Result<_>>()?;
            Ok(dgp.eta2(&x))
        })
        .collect::<Result<Vec<f64>>>()?;
    let ctx = Context { eval, eval_eta2 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let records: Vec<RepRecord> =
        pool.install(|| (0..reps).into_par_iter().map(|r| run_one(dgp, ests, r, &ctx, opts)).collect::<Vec<_>>()).into_iter().flatten().collect();

    let tau_true = dgp.tau()?;
    let truths: Vec<(String, f64)> = dgp.outcome_truth().into_iter().map(|(n, v)| (n.to_string(), v)).collect();
    let mut summaries = Vec::new();
    for &e in ests {
        let recs: Vec<&RepRecord> = records.iter().filter(|r| r.estimator == e).collect();
        let ok: Vec<&&RepRecord> = recs.iter().filter(|r| r.error.is_none()).collect();
        let mut t = truths.clone();
        if e != Estimator::Gam {
            t.push(("tau".into(), tau_true));
        }
        let params = t
            .iter()
            .map(|(name, truth)| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| r.params.get(name).copied()).collect();
                summarize_param(name, *truth, &vals)
            })
            .collect();
        let mut metric_names: Vec<String> = ok.iter().flat_map(|r| r.metrics.keys().cloned()).collect();
        metric_names.sort();
        metric_names.dedup();
        let metrics = metric_names
            .into_iter()
            .map(|q| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| r.metrics.get(&q).copied()).collect();
                ContinuousSummary { mean: (!vals.is_empty()).then(|| crate::stats::mean(&vals)), sd: crate::stats::sd(&vals), quantity: q }
            })
            .collect();
        summaries.push(EstimatorSummary {
            estimator: e,
            successes: ok.len(),
            failures: recs.len() - ok.len(),
            nonconverged: ok.iter().filter(|r| !r.converged).count(),
            params,
            metrics,
        });
    }
    Ok(McReport {
        study: dgp.study,
        n: dgp.n,
        copula: dgp.copula,
        theta: dgp.theta,
        tau: tau_true,
        reps,
        seed: dgp.seed,
        estimators: summaries,
        raw: opts.keep_raw.then_some(records),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(format_num).unwrap_or_default()
}

pub const CSV_HEADER: &str = "study,n,copula,tau,estimator,quantity,truth,mean,sd,bias,rel_bias_pct,rmse,successes,failures";

impl McReport {
    pub fn success_fraction(&self) -> f64 {
        let (s, t) = self.estimators.iter().fold((0, 0), |(s, t), e| (s + e.successes, t + e.successes + e.failures));
        if t == 0 {
            0.0
        } else {
            s as f64 / t as f64
        }
    }

    pub fn estimator(&self, e: Estimator) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == e)
    }

    /// One row per estimator and parameter, then one per estimator and metric.
    pub fn csv_rows(&self) -> Vec<String> {
        let head = format!("{},{},{},{}", self.study.name(), self.n, self.copula.name(), format_num(self.tau));
        let mut rows = Vec::new();
        for e in &self.estimators {
            let tail = format!("{},{}", e.successes, e.failures);
            for p in &e.params {
                rows.push(format!(
                    "{head},{},{},{},{},{},{},{},{},{tail}",
                    e.estimator.name(),
                    p.parameter,
                    format_num(p.truth),
                    opt(p.mean),
                    opt(p.sd),
                    opt(p.bias),
                    opt(p.rel_bias_pct),
                    opt(p.rmse)
                ));
            }
            for m in &e.metrics {
                rows.push(format!("{head},{},{},,{},{},,,,{tail}", e.estimator.name(), m.quantity, opt(m.mean), opt(m.sd)));
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in self.csv_rows() {
            writeln!(w, "{r}")?;
        }
        Ok(())
    }

    /// Per-replication estimates, one row per replication, estimator and quantity.
    pub fn write_raw_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rep,estimator,quantity,value,error")?;
        for r in self.raw.iter().flatten() {
            if let Some(e) = &r.error {
                writeln!(w, "{},{},,,\"{}\"", r.rep, r.estimator.name(), e.replace('"', "'"))?;
            }
            for (k, v) in r.params.iter().chain(&r.metrics) {
                writeln!(w, "{},{},{k},{},", r.rep, r.estimator.name(), format_num(*v))?;
            }
        }
        Ok(())
    }
}
