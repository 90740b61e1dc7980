//! Command-line entry point.
//!
//! Exit codes: 0 on success, 2 on bad input (arguments, CSV, JSON, missing
//! files), 3 when a fit fails or too many Monte Carlo replications fail.
//! Errors are written to stderr as a single JSON object.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::copulas::{tau_to_theta, CopulaKind};
use crate::data::{format_num, Dataset, Dependence, ModelSpec, TermKind};
use crate::error::Error;
use crate::margins::MarginFamily;
use crate::optimizer::{fit_with_options, Equation, FitOptions, Structure};
use crate::simulate::{compare_reference, generate, generate_full, mc_study, DgpSpec, Estimator, McOptions, McReport, Study, CSV_HEADER};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SELGAM_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "selgam-out";
const DEFAULT_SEED: u64 = 20_240_601;
/// Points in each exported smooth curve.
pub const CURVE_POINTS: usize = 100;
/// Minimum share of successful replications for `mc` to exit 0.
pub const MIN_SUCCESS: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(name = "selgam", version, about = "Copula generalized additive sample selection models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV dataset.
    Fit(FitArgs),
    /// Write a simulated dataset.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo study.
    Mc(McArgs),
    /// Summarize Monte Carlo reports and compare them with bundled reference values.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (defaults to $SELGAM_OUT_DIR, then ./selgam-out).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with columns `sel`, `out` and covariates.
    #[arg(long)]
    pub data: PathBuf,
    /// Model specification JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Override the copula (or `independence`).
    #[arg(long)]
    pub copula: Option<Dependence>,
    #[arg(long)]
    pub margin: Option<MarginFamily>,
    /// Starting Kendall's tau; converted to the copula parameter.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Keep the copula parameter fixed at its starting value.
    #[arg(long)]
    pub fix_theta: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub study: Study,
    #[arg(long)]
    pub n: usize,
    /// Copula of the logged design.
    #[arg(long, default_value = "clayton")]
    pub copula: CopulaKind,
    /// Kendall's tau of the logged design.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Observe every outcome (no selection).
    #[arg(long)]
    pub full: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub study: Study,
    /// Sample sizes, comma separated (default: 500,1000,2000 for consistency; 1000 for logged).
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Copulas of the logged design, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "clayton")]
    pub copula: Vec<CopulaKind>,
    /// Kendall's tau values of the logged design, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub tau: Vec<f64>,
    /// Estimators to compare (default: all estimators of the study).
    #[arg(long, value_delimiter = ',')]
    pub estimators: Vec<Estimator>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Monte Carlo report JSON files written by `mc`.
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: &'a str,
    exit_code: i32,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 2, kind: "input", message: message.into() }
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&ErrorJson { error: self.kind, message: &self.message, exit_code: self.code }).unwrap_or_default()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Parse(_) => (2, "parse"),
            Error::Io(_) => (2, "io"),
            Error::Json(_) => (2, "json"),
            Error::Csv(_) => (2, "csv"),
            Error::InvalidParameter(_) | Error::Domain(_) | Error::UnsupportedGenerator(_) => (2, "invalid_parameter"),
            Error::NonFinite { .. } => (3, "non_finite"),
            Error::DegenerateDesign(_) => (3, "degenerate_design"),
            Error::Singular(_) => (3, "singular"),
            Error::NonConvergence { .. } => (3, "non_convergence"),
        };
        Self { code, kind, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn out_dir(flag: &Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    Ok(dir)
}

fn write_file(path: &Path, content: &str) -> CliResult<()> {
    std::fs::write(path, content).map_err(Error::from)?;
    Ok(())
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let err = CliError { code: 2, kind: "usage", message: e.to_string().trim_end().to_string() };
            let _ = writeln!(stderr, "{}", err.to_json());
            return 2;
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a, stdout),
        Command::Simulate(a) => cmd_simulate(&a, stdout),
        Command::Mc(a) => cmd_mc(&a, stdout),
        Command::Report(a) => cmd_report(&a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.to_json());
            e.code
        }
    }
}

/// Apply the command-line overrides to a model specification.
pub fn apply_overrides(spec: &mut ModelSpec, copula: Option<Dependence>, margin: Option<MarginFamily>, tau: Option<f64>, fix_theta: bool) -> crate::Result<()> {
    if let Some(c) = copula {
        spec.copula = c;
    }
    if let Some(m) = margin {
        spec.margin = m;
    }
    if let Some(t) = tau {
        let kind = spec
            .copula
            .copula()
            .ok_or_else(|| Error::InvalidParameter("--tau needs a copula other than independence".into()))?;
        spec.theta_start = Some(tau_to_theta(kind, t)?);
    }
    if fix_theta {
        spec.fix_theta = true;
    }
    spec.validate()
}

fn cmd_fit(a: &FitArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let data = Dataset::read_csv(&a.data).map_err(|e| match e {
        Error::Io(io) => CliError::input(format!("cannot read {}: {io}", a.data.display())),
        other => other.into(),
    })?;
    let mut spec = ModelSpec::from_json(&read_file(&a.model)?)?;
    apply_overrides(&mut spec, a.copula, a.margin, a.tau, a.fix_theta)?;
    let dir = out_dir(&a.common.out_dir)?;
    let model = fit_with_options(&data, &spec, &FitOptions::default())?;
    write_file(&dir.join("model.json"), &(model.to_json()? + "\n"))?;

    let mut pred = String::from("row,sel,eta1,var_eta1,eta2,var_eta2\n");
    let eq_cols = |eq: Equation| -> CliResult<(Vec<f64>, Vec<f64>)> {
        let present = match (model.structure, eq) {
            (Structure::Outcome, Equation::Selection) | (Structure::Selection, Equation::Outcome) => false,
            _ => true,
        };
        if present {
            Ok((model.predict(eq, &data)?, model.predict_variance(eq, &data)?))
        } else {
            Ok((vec![f64::NAN; data.n()], vec![f64::NAN; data.n()]))
        }
    };
    let (e1, v1) = eq_cols(Equation::Selection)?;
    let (e2, v2) = eq_cols(Equation::Outcome)?;
    let cell = |x: f64| if x.is_finite() { format_num(x) } else { String::new() };
    for i in 0..data.n() {
        pred.push_str(&format!("{},{},{},{},{},{}\n", i + 1, u8::from(data.sel[i]), cell(e1[i]), cell(v1[i]), cell(e2[i]), cell(v2[i])));
    }
    write_file(&dir.join("predictions.csv"), &pred)?;

    let mut written = vec!["model.json".to_string(), "predictions.csv".to_string()];
    for (eq, terms) in [(Equation::Selection, &spec.selection), (Equation::Outcome, &spec.outcome)] {
        for t in terms.iter().filter(|t| t.kind == TermKind::Smooth) {
            let Ok(points) = model.curve(eq, &t.column, CURVE_POINTS) else { continue };
            let mut s = String::from("x,estimate,se,lower,upper\n");
            for p in points {
                s.push_str(&format!("{},{},{},{},{}\n", format_num(p.x), format_num(p.estimate), format_num(p.se), format_num(p.lower), format_num(p.upper)));
            }
            let name = format!("curve_{}_{}.csv", eq.name(), t.column);
            write_file(&dir.join(&name), &s)?;
            written.push(name);
        }
    }
    let _ = writeln!(stdout, "loglik {}  edf {}  converged {}", format_num(model.loglik), format_num(model.edf_total), model.convergence.converged);
    if let (Some(th), Some(tau)) = (model.theta, model.tau) {
        let _ = writeln!(stdout, "theta {}  tau {}", format_num(th), format_num(tau));
    }
    let _ = writeln!(stdout, "wrote {} to {}", written.join(", "), dir.display());
    if !model.convergence.converged {
        return Err(CliError {
            code: 3,
            kind: "non_convergence",
            message: format!("fit did not converge; results written to {}: {}", dir.display(), model.convergence.warnings.join("; ")),
        });
    }
    Ok(())
}

fn dgp_for(study: Study, n: usize, copula: CopulaKind, tau: f64, seed: u64) -> crate::Result<DgpSpec> {
    match study {
        Study::Consistency => Ok(DgpSpec::consistency(n, seed)),
        Study::Logged => DgpSpec::logged(n, copula, tau, seed),
    }
}

fn cmd_simulate(a: &SimulateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let dgp = dgp_for(a.study, a.n, a.copula, a.tau, a.common.seed)?;
    let data = if a.full { generate_full(&dgp)? } else { generate(&dgp)? };
    let dir = out_dir(&a.common.out_dir)?;
    let name = format!("{}_n{}_seed{}.csv", a.study.name(), a.n, a.common.seed);
    data.write_csv(dir.join(&name))?;
    let _ = writeln!(stdout, "{} rows, {} selected, wrote {}", data.n(), data.n_selected(), dir.join(name).display());
    Ok(())
}

/// Plot-ready series: one row per design, estimator and quantity.
pub const SERIES_HEADER: &str = "study,n,copula,tau,estimator,quantity,mean,sd,rmse";

fn series_rows(r: &McReport) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(format_num).unwrap_or_default();
    let head = format!("{},{},{},{}", r.study.name(), r.n, r.copula.name(), format_num(r.tau));
    let mut rows = Vec::new();
    for e in &r.estimators {
        for p in &e.params {
            rows.push(format!("{head},{},{},{},{},{}", e.estimator.name(), p.parameter, opt(p.mean), opt(p.sd), opt(p.rmse)));
        }
        for m in &e.metrics {
            rows.push(format!("{head},{},{},{},{},", e.estimator.name(), m.quantity, opt(m.mean), opt(m.sd)));
        }
    }
    rows
}

fn cmd_mc(a: &McArgs, stdout: &mut dyn Write) -> CliResult<()> {
    if a.reps == 0 {
        return Err(CliError::input("--reps must be at least 1"));
    }
    let ns = if a.n.is_empty() {
        match a.study {
            Study::Consistency => vec![500, 1000, 2000],
            Study::Logged => vec![1000],
        }
    } else {
        a.n.clone()
    };
    let ests = if a.estimators.is_empty() { Estimator::for_study(a.study) } else { a.estimators.clone() };
    let designs: Vec<(CopulaKind, f64)> = match a.study {
        Study::Consistency => vec![(CopulaKind::Gumbel, f64::NAN)],
        Study::Logged => a.copula.iter().flat_map(|&c| a.tau.iter().map(move |&t| (c, t))).collect(),
    };
    let opts = McOptions { threads: a.common.threads.max(1), fit: FitOptions::default(), keep_raw: true };
    let mut reports = Vec::new();
    for &n in &ns {
        for &(c, t) in &designs {
            let dgp = dgp_for(a.study, n, c, t, a.common.seed)?;
            let r = mc_study(&dgp, &ests, a.reps, &opts)?;
            let _ = writeln!(stdout, "{} n={} {} tau={}: {:.1}% of fits succeeded", a.study.name(), n, r.copula.name(), format_num(r.tau), 100.0 * r.success_fraction());
            reports.push(r);
        }
    }
    let dir = out_dir(&a.common.out_dir)?;
    let stem = format!("mc_{}", a.study.name());
    let mut summary = format!("{CSV_HEADER}\n");
    let mut series = format!("{SERIES_HEADER}\n");
    let mut raw = String::from("study,n,copula,tau,rep,estimator,quantity,value,error\n");
    for r in &reports {
        for row in r.csv_rows() {
            summary.push_str(&row);
            summary.push('\n');
        }
        for row in series_rows(r) {
            series.push_str(&row);
            series.push('\n');
        }
        let mut buf = Vec::new();
        r.write_raw_csv(&mut buf)?;
        let head = format!("{},{},{},{}", r.study.name(), r.n, r.copula.name(), format_num(r.tau));
        for line in String::from_utf8_lossy(&buf).lines().skip(1) {
            raw.push_str(&format!("{head},{line}\n"));
        }
    }
    let stripped: Vec<McReport> = reports.iter().map(|r| McReport { raw: None, ..r.clone() }).collect();
    write_file(&dir.join(format!("{stem}.json")), &(serde_json::to_string_pretty(&stripped).map_err(Error::from)? + "\n"))?;
    write_file(&dir.join(format!("{stem}.csv")), &summary)?;
    write_file(&dir.join(format!("{stem}_series.csv")), &series)?;
    write_file(&dir.join(format!("{stem}_raw.csv")), &raw)?;
    let (ok, total) = reports.iter().flat_map(|r| &r.estimators).fold((0, 0), |(s, t), e| (s + e.successes, t + e.successes + e.failures));
    let share = if total == 0 { 0.0 } else { ok as f64 / total as f64 };
    let _ = writeln!(stdout, "wrote {stem}.json, {stem}.csv, {stem}_series.csv, {stem}_raw.csv to {}", dir.display());
    if share < MIN_SUCCESS {
        return Err(CliError { code: 3, kind: "replications_failed", message: format!("only {ok} of {total} fits succeeded") });
    }
    Ok(())
}

/// Summary table and reference comparison for a set of reports.
pub fn render_report(reports: &[McReport]) -> (String, String, usize, usize) {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "null".into());
    let mut text = String::new();
    let mut checks_csv = String::from("study,n,copula,tau,estimator,parameter,statistic,reference,tolerance,observed,pass\n");
    let (mut pass, mut total) = (0, 0);
    for study in [Study::Consistency, Study::Logged] {
        let group: Vec<&McReport> = reports.iter().filter(|r| r.study == study).collect();
        if group.is_empty() {
            continue;
        }
        text.push_str(&format!("== {} study ==\n", study.name()));
        for r in group {
            text.push_str(&format!("-- n={} copula={} tau={} reps={} seed={}\n", r.n, r.copula.name(), format_num(r.tau), r.reps, r.seed));
            text.push_str(&format!("{:<6} {:<12} {:>9} {:>10} {:>9} {:>9} {:>10} {:>9}\n", "est", "quantity", "truth", "mean", "sd", "bias", "relbias%", "rmse"));
            for e in &r.estimators {
                for p in &e.params {
                    text.push_str(&format!(
                        "{:<6} {:<12} {:>9.4} {:>10} {:>9} {:>9} {:>10} {:>9}\n",
                        e.estimator.name(),
                        p.parameter,
                        p.truth,
                        opt(p.mean),
                        opt(p.sd),
                        opt(p.bias),
                        opt(p.rel_bias_pct),
                        opt(p.rmse)
                    ));
                }
                for m in &e.metrics {
                    text.push_str(&format!("{:<6} {:<12} {:>9} {:>10} {:>9}\n", e.estimator.name(), m.quantity, "", opt(m.mean), opt(m.sd)));
                }
                text.push_str(&format!("{:<6} successes {} failures {} nonconverged {}\n", e.estimator.name(), e.successes, e.failures, e.nonconverged));
            }
            for c in compare_reference(r) {
                total += 1;
                pass += usize::from(c.pass);
                let rf = &c.reference;
                text.push_str(&format!(
                    "{} {} {} {} reference {} observed {}\n",
                    if c.pass { "PASS" } else { "FAIL" },
                    rf.estimator.name(),
                    rf.parameter,
                    rf.statistic.name(),
                    rf.value,
                    opt(c.observed)
                ));
                checks_csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.study.name(),
                    r.n,
                    r.copula.name(),
                    format_num(r.tau),
                    rf.estimator.name(),
                    rf.parameter,
                    rf.statistic.name(),
                    format_num(rf.value),
                    format_num(rf.tolerance),
                    c.observed.map(format_num).unwrap_or_default(),
                    c.pass
                ));
            }
        }
        text.push('\n');
    }
    text.push_str(&format!("reference checks passed: {pass} of {total}\n"));
    (text, checks_csv, pass, total)
}

fn cmd_report(a: &ReportArgs, stdout: &mut dyn Write) -> CliResult<()> {
    if a.inputs.is_empty() {
        return Err(CliError::input("no report files given"));
    }
    let mut reports = Vec::new();
    for p in &a.inputs {
        let text = read_file(p)?;
        let parsed: Vec<McReport> = match serde_json::from_str::<Vec<McReport>>(&text) {
            Ok(v) => v,
            Err(_) => vec![serde_json::from_str::<McReport>(&text).map_err(Error::from)?],
        };
        reports.extend(parsed);
    }
    if reports.is_empty() {
        return Err(CliError::input("report files contain no studies"));
    }
    let (text, checks, _, _) = render_report(&reports);
    let _ = write!(stdout, "{text}");
    let dir = out_dir(&a.out_dir)?;
    write_file(&dir.join("report.txt"), &text)?;
    write_file(&dir.join("reference_checks.csv"), &checks)?;
    Ok(())
}
