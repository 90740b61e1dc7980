//! Performance iteration: trust-region fits at fixed smoothing parameters
//! alternating with UBRE updates of the smoothing parameters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::copulas::{kendall_tau, CopulaFamily, CopulaKind};
use crate::data::{Dataset, ModelSpec, TermKind};
use crate::error::{Error, Result};
use crate::likelihood::{penalty_blocks, ParamLayout, SelectionLikelihood};
use crate::margins::MarginFamily;
use crate::special::norm_inv_cdf;
use crate::splines::{build_design, DesignBlocks, EquationBasis};

use super::smoothing::{select_lambda, UbreState};
use super::trust_region::{trust_region_maximize, Objective, TrustRegionOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub trust: TrustRegionOptions,
    pub max_outer: usize,
    /// Largest relative change in any smoothing parameter at convergence.
    pub lambda_tol: f64,
    /// Largest change in `delta`, relative to `max(1, |delta|_inf)`, at convergence.
    pub delta_tol: f64,
    /// Ridge per observation used by the separate fits that supply starting values.
    pub start_ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { trust: TrustRegionOptions::default(), max_outer: 30, lambda_tol: 1e-3, delta_tol: 1e-6, start_ridge: 1e-5 }
    }
}

/// `l_p(delta) - ridge |delta|^2 / 2` at fixed smoothing parameters.
struct Penalized<'a> {
    lik: &'a SelectionLikelihood,
    lambda: &'a [f64],
    s: DMatrix<f64>,
    ridge: f64,
}

impl Objective for Penalized<'_> {
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let l = self.lik.loglik(x)?;
        Ok(l - 0.5 * x.dot(&(&self.s * x)) - 0.5 * self.ridge * x.norm_squared())
    }

    fn eval(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let e = self.lik.evaluate(x, self.lambda)?;
        let mut h = e.phess;
        for i in 0..h.nrows() {
            h[(i, i)] -= self.ridge;
        }
        Ok((e.pvalue - 0.5 * self.ridge * x.norm_squared(), e.pgrad - x * self.ridge, h))
    }
}

/// Result of the alternating fit for one likelihood.
#[derive(Debug, Clone)]
pub struct CoreFit {
    pub delta: DVector<f64>,
    pub lambda: Vec<f64>,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub pgrad: DVector<f64>,
    pub phess: DMatrix<f64>,
    /// `diag((I + S)^-1 I)`.
    pub edf_parameters: DVector<f64>,
    pub ubre: Option<f64>,
    pub information_ridge: f64,
    pub clamps: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Starting smoothing parameters scaled to the information of each block.
fn default_lambda(lik: &SelectionLikelihood, delta: &DVector<f64>) -> Vec<f64> {
    let zero = vec![0.0; lik.n_penalties()];
    let hess = lik.evaluate(delta, &zero).ok().map(|e| e.hess);
    lik.penalties
        .iter()
        .map(|blk| {
            let d = blk.s.nrows();
            let info: f64 = hess.as_ref().map_or(1.0, |h| (0..d).map(|i| h[(blk.offset + i, blk.offset + i)].abs()).sum());
            (0.1 * info.max(1e-8) / blk.s.trace().max(1e-300)).clamp(1e-6, 1e6)
        })
        .collect()
}

/// Fit a likelihood from `start`. With `select` the smoothing parameters are
/// chosen by UBRE starting from `lambda0`; otherwise `lambda0` is used as given.
pub fn fit_likelihood(
    lik: &SelectionLikelihood,
    start: &DVector<f64>,
    lambda0: Option<&[f64]>,
    select: bool,
    ridge: f64,
    opts: &FitOptions,
) -> Result<CoreFit> {
    if start.len() != lik.layout.len || !start.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("starting vector is not finite or has the wrong length".into()));
    }
    let mut lambda = match lambda0 {
        Some(l) => l.to_vec(),
        None => default_lambda(lik, start),
    };
    let mut delta = start.clone();
    let mut warnings = Vec::new();
    let mut inner_total = 0;
    let mut outer = 0;
    let mut converged = false;
    for cycle in 0..opts.max_outer.max(1) {
        outer = cycle + 1;
        let obj = Penalized { lik, lambda: &lambda, s: lik.penalty_matrix(&lambda)?, ridge };
        let (x, iters, inner_ok) = match trust_region_maximize(&obj, &delta, &opts.trust) {
            Ok(r) => (r.x, r.iterations, true),
            Err(Error::NonConvergence { iterations, best, .. }) => (DVector::from_vec(best), iterations, false),
            Err(e) => return Err(e),
        };
        inner_total += iters;
        if !inner_ok {
            warnings.push(format!("inner fit stopped without convergence after {iters} iterations in cycle {outer}"));
        }
        let dchange = (&x - &delta).amax() / x.amax().max(1.0);
        delta = x;
        if !select || lambda.is_empty() {
            converged = inner_ok;
            break;
        }
        let e = lik.evaluate(&delta, &lambda)?;
        let state = UbreState::new(&delta, &e.grad, &e.hess, lik.penalties.clone(), lik.n_rows())?;
        let new = select_lambda(&state, &lambda);
        let lchange = new.iter().zip(&lambda).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        let v_old = state.eval(&lambda)?.value;
        let v_new = state.eval(&new)?.value;
        log::debug!(
            "outer cycle={outer} lp={:.10} ubre={v_new:.6} lambda={new:?} dlambda={lchange:.3e} ddelta={dchange:.3e}",
            e.pvalue
        );
        let flat = v_old - v_new <= 1e-9 * (1.0 + v_old.abs());
        if cycle > 0 && inner_ok && dchange < opts.delta_tol && (lchange < opts.lambda_tol || flat) {
            converged = true;
            break;
        }
        lambda = new;
    }
    if !converged && select && !lambda.is_empty() {
        warnings.push(format!("smoothing parameters not converged after {outer} cycles"));
    }
    let e = lik.evaluate(&delta, &lambda)?;
    let state = UbreState::new(&delta, &e.grad, &e.hess, lik.penalties.clone(), lik.n_rows())?;
    let edf_parameters = state.edf_per_parameter(&lambda)?;
    let ubre = if lik.n_penalties() > 0 { Some(state.eval(&lambda)?.value) } else { None };
    let gmax = e.pgrad.amax();
    if ridge == 0.0 && gmax >= 1e-6 * (1.0 + e.pvalue.abs()) {
        warnings.push(format!("penalized gradient {gmax:.3e} above tolerance"));
    }
    Ok(CoreFit {
        loglik: e.value,
        penalized_loglik: e.pvalue,
        grad: e.grad,
        hess: e.hess,
        pgrad: e.pgrad,
        phess: e.phess,
        edf_parameters,
        ubre,
        information_ridge: state.ridge,
        clamps: e.clamps,
        delta,
        lambda,
        outer_iterations: outer,
        inner_iterations: inner_total,
        converged,
        warnings,
    })
}

/// Which equations a fitted model contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Joint,
    Selection,
    Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Selection,
    Outcome,
}

impl Equation {
    pub fn name(self) -> &'static str {
        match self {
            Equation::Selection => "selection",
            Equation::Outcome => "outcome",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEdf {
    pub equation: Equation,
    pub term: String,
    pub kind: TermKind,
    pub lambda: Option<f64>,
    pub edf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// `|G_p|_inf` at the returned estimate.
    pub gradient_max: f64,
    pub clamps: usize,
    pub information_ridge: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub structure: Structure,
    pub spec: ModelSpec,
    pub selection_basis: Option<EquationBasis>,
    pub outcome_basis: Option<EquationBasis>,
    pub layout: ParamLayout,
    pub delta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub theta: Option<f64>,
    pub tau: Option<f64>,
    /// Gaussian standard deviation or gamma shape.
    pub aux: Option<f64>,
    pub edf: Vec<TermEdf>,
    pub edf_total: f64,
    pub ubre: Option<f64>,
    pub n: usize,
    pub n_selected: usize,
    pub penalized_hessian: DMatrix<f64>,
    /// Sandwich covariance `F_p^-1 F F_p^-1` of `delta`.
    pub covariance: DMatrix<f64>,
    pub convergence: ConvergenceReport,
}

/// Inverse of a symmetric matrix through its eigendecomposition, dropping
/// eigenvalues that are not clearly positive.
fn psd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let top = eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|l| if l > 1e-12 * top { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

fn sandwich(phess: &DMatrix<f64>, hess: &DMatrix<f64>) -> DMatrix<f64> {
    let fp_inv = psd_inverse(&(-phess));
    let v = &fp_inv * (-hess) * &fp_inv;
    (&v + v.transpose()) * 0.5
}

/// Term-level edf from per-parameter values; the intercept is reported as a linear term.
fn term_edf(basis: &EquationBasis, eq: Equation, offset: usize, edf: &DVector<f64>, lambda: &mut std::slice::Iter<f64>) -> Vec<TermEdf> {
    let mut out = vec![TermEdf { equation: eq, term: "(intercept)".into(), kind: TermKind::Linear, lambda: None, edf: edf[offset] }];
    for b in &basis.blocks {
        let e: f64 = b.range.clone().map(|j| edf[offset + j]).sum();
        let l = b.smooth.as_ref().and_then(|_| lambda.next().copied());
        out.push(TermEdf { equation: eq, term: b.term.column.clone(), kind: b.term.kind, lambda: l, edf: e });
    }
    out
}

fn selected_outcomes(data: &Dataset) -> Vec<f64> {
    data.selected_indices().iter().map(|&i| data.out[i]).collect()
}

/// Moment estimate of the auxiliary parameter on the unconstrained scale.
fn aux_moments(margin: MarginFamily, y: &[f64]) -> f64 {
    let m = crate::stats::mean(y);
    let sd = crate::stats::sd(y).unwrap_or(1.0).max(1e-8);
    match margin {
        MarginFamily::Gaussian => sd.ln(),
        MarginFamily::Gamma => (m * m / (sd * sd)).max(1e-3).ln(),
    }
}

fn outcome_link_mean(margin: MarginFamily, y: &[f64]) -> f64 {
    let m = crate::stats::mean(y);
    match margin {
        MarginFamily::Gaussian => m,
        MarginFamily::Gamma => m.max(1e-12).ln(),
    }
}

fn selection_likelihood(design: &DesignBlocks, data: &Dataset, spec: &ModelSpec) -> Result<SelectionLikelihood> {
    let q1 = design.selection.x.ncols();
    SelectionLikelihood::new(
        Some(design.selection.x.clone()),
        None,
        &data.sel,
        selected_outcomes(data),
        spec.margin,
        None,
        None,
        None,
        penalty_blocks(Some(&design.selection.basis), None, q1),
    )
}

fn outcome_likelihood(design: &DesignBlocks, data: &Dataset, spec: &ModelSpec) -> Result<SelectionLikelihood> {
    SelectionLikelihood::new(
        None,
        Some(design.outcome.x.clone()),
        &data.sel,
        selected_outcomes(data),
        spec.margin,
        None,
        None,
        spec.fix_aux.map(f64::ln),
        penalty_blocks(None, Some(&design.outcome.basis), 0),
    )
}

fn n_smooth(basis: &EquationBasis) -> usize {
    basis.smooth_blocks().count()
}

fn split_lambda(spec: &ModelSpec, design: &DesignBlocks) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    match &spec.lambda {
        Some(l) => {
            let k = n_smooth(&design.selection.basis);
            (Some(l[..k].to_vec()), Some(l[k..].to_vec()))
        }
        None => (None, None),
    }
}

/// Starting values for the joint model together with the smoothing
/// parameters chosen by the separate fits.
#[derive(Debug, Clone)]
pub struct StartingValues {
    pub delta: DVector<f64>,
    pub lambda: Vec<f64>,
    pub warnings: Vec<String>,
}

fn probit_start(design: &DesignBlocks, data: &Dataset, spec: &ModelSpec, opts: &FitOptions, warnings: &mut Vec<String>) -> (DVector<f64>, Vec<f64>) {
    let q1 = design.selection.x.ncols();
    let p = data.n_selected() as f64 / data.n() as f64;
    let mut fallback = DVector::zeros(q1);
    fallback[0] = norm_inv_cdf(p.clamp(1e-6, 1.0 - 1e-6));
    let (fixed, _) = split_lambda(spec, design);
    let res = selection_likelihood(design, data, spec).and_then(|lik| {
        fit_likelihood(&lik, &fallback, fixed.as_deref(), fixed.is_none(), opts.start_ridge * data.n() as f64, opts)
    });
    match res {
        Ok(f) => (f.delta, f.lambda),
        Err(e) => {
            warnings.push(format!("separate probit fit failed ({e}); using intercept-only start"));
            (fallback, fixed.unwrap_or_else(|| vec![1.0; n_smooth(&design.selection.basis)]))
        }
    }
}

fn outcome_start(
    design: &DesignBlocks,
    data: &Dataset,
    spec: &ModelSpec,
    opts: &FitOptions,
    warnings: &mut Vec<String>,
) -> (DVector<f64>, f64, Vec<f64>) {
    let y = selected_outcomes(data);
    let q2 = design.outcome.x.ncols();
    let aux0 = spec.fix_aux.map_or_else(|| aux_moments(spec.margin, &y), f64::ln);
    let mut fallback = DVector::zeros(q2 + usize::from(spec.fix_aux.is_none()));
    fallback[0] = outcome_link_mean(spec.margin, &y);
    if spec.fix_aux.is_none() {
        fallback[q2] = aux0;
    }
    let (_, fixed) = split_lambda(spec, design);
    let res = outcome_likelihood(design, data, spec).and_then(|lik| {
        let f = fit_likelihood(&lik, &fallback, fixed.as_deref(), fixed.is_none(), opts.start_ridge * y.len() as f64, opts)?;
        Ok((f.delta.rows(0, q2).into_owned(), lik.aux(&f.delta), f.lambda))
    });
    match res {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("separate outcome fit failed ({e}); using intercept-only start"));
            (fallback.rows(0, q2).into_owned(), aux0, fixed.unwrap_or_else(|| vec![1.0; n_smooth(&design.outcome.basis)]))
        }
    }
}

/// Starting copula parameter on the unconstrained scale.
fn theta_start(kind: CopulaKind, spec: &ModelSpec) -> f64 {
    spec.theta_start.map_or_else(|| kind.independence_unconstrained(), |t| kind.theta_to_unconstrained(t))
}

/// Starting values for the joint model: coefficients from separately fitted
/// penalized probit and outcome models, the copula parameter near
/// independence unless given, and the auxiliary parameter from the outcome fit.
pub fn starting_values(data: &Dataset, spec: &ModelSpec, design: &DesignBlocks, opts: &FitOptions) -> Result<StartingValues> {
    let lik = SelectionLikelihood::from_design(design, data, spec)?;
    let mut warnings = Vec::new();
    let (alpha, l1) = probit_start(design, data, spec, opts, &mut warnings);
    let (beta, aux, l2) = outcome_start(design, data, spec, opts, &mut warnings);
    let mut v: Vec<f64> = alpha.iter().chain(beta.iter()).copied().collect();
    if lik.layout.theta.is_some() {
        v.push(theta_start(spec.copula.copula().unwrap(), spec));
    }
    if lik.layout.aux.is_some() {
        v.push(aux);
    }
    let lambda = spec.lambda.clone().unwrap_or_else(|| l1.into_iter().chain(l2).collect());
    Ok(StartingValues { delta: DVector::from_vec(v), lambda, warnings })
}

pub fn fit(data: &Dataset, spec: &ModelSpec) -> Result<FittedModel> {
    fit_with_options(data, spec, &FitOptions::default())
}

pub fn fit_with_options(data: &Dataset, spec: &ModelSpec, opts: &FitOptions) -> Result<FittedModel> {
    let design = build_design(data, spec)?;
    let lik = SelectionLikelihood::from_design(&design, data, spec)?;
    let start = starting_values(data, spec, &design, opts)?;
    let core = fit_likelihood(&lik, &start.delta, Some(&start.lambda), spec.lambda.is_none(), 0.0, opts)?;
    let mut model = assemble(Structure::Joint, data, spec, &design, &lik, core)?;
    let mut w = start.warnings;
    w.append(&mut model.convergence.warnings);
    model.convergence.warnings = w;
    Ok(model)
}

/// Outcome equation alone on the selected rows, ignoring selection.
pub fn fit_outcome_only(data: &Dataset, spec: &ModelSpec, opts: &FitOptions) -> Result<FittedModel> {
    let design = build_design(data, spec)?;
    let lik = outcome_likelihood(&design, data, spec)?;
    let y = selected_outcomes(data);
    let q2 = design.outcome.x.ncols();
    let mut start = DVector::zeros(lik.layout.len);
    start[0] = outcome_link_mean(spec.margin, &y);
    if let Some(i) = lik.layout.aux {
        start[i] = aux_moments(spec.margin, &y);
    }
    debug_assert_eq!(lik.layout.q2, q2);
    let (_, fixed) = split_lambda(spec, &design);
    let core = fit_likelihood(&lik, &start, fixed.as_deref(), fixed.is_none(), 0.0, opts)?;
    assemble(Structure::Outcome, data, spec, &design, &lik, core)
}

/// Selection equation alone (penalized probit).
pub fn fit_selection_only(data: &Dataset, spec: &ModelSpec, opts: &FitOptions) -> Result<FittedModel> {
    let design = build_design(data, spec)?;
    let lik = selection_likelihood(&design, data, spec)?;
    let p = data.n_selected() as f64 / data.n() as f64;
    let mut start = DVector::zeros(lik.layout.len);
    start[0] = norm_inv_cdf(p.clamp(1e-6, 1.0 - 1e-6));
    let (fixed, _) = split_lambda(spec, &design);
    let core = fit_likelihood(&lik, &start, fixed.as_deref(), fixed.is_none(), 0.0, opts)?;
    assemble(Structure::Selection, data, spec, &design, &lik, core)
}

fn assemble(
    structure: Structure,
    data: &Dataset,
    spec: &ModelSpec,
    design: &DesignBlocks,
    lik: &SelectionLikelihood,
    core: CoreFit,
) -> Result<FittedModel> {
    let layout = lik.layout;
    let mut lam = core.lambda.iter();
    let mut edf = Vec::new();
    if lik.has_selection() {
        edf.extend(term_edf(&design.selection.basis, Equation::Selection, 0, &core.edf_parameters, &mut lam));
    }
    if lik.has_outcome() {
        edf.extend(term_edf(&design.outcome.basis, Equation::Outcome, layout.q1, &core.edf_parameters, &mut lam));
    }
    let (theta, tau) = match (lik.copula, lik.theta_unconstrained(&core.delta)) {
        (Some(kind), Some(t)) => {
            let fam = CopulaFamily::from_unconstrained(kind, t);
            (Some(fam.theta), Some(kendall_tau(&fam)?))
        }
        _ => (None, None),
    };
    let aux = lik.has_outcome().then(|| lik.aux(&core.delta).exp());
    Ok(FittedModel {
        structure,
        spec: spec.clone(),
        selection_basis: lik.has_selection().then(|| design.selection.basis.clone()),
        outcome_basis: lik.has_outcome().then(|| design.outcome.basis.clone()),
        layout,
        delta: core.delta.as_slice().to_vec(),
        lambda: core.lambda.clone(),
        loglik: core.loglik,
        penalized_loglik: core.penalized_loglik,
        theta,
        tau,
        aux,
        edf_total: core.edf_parameters.sum(),
        edf,
        ubre: core.ubre,
        n: data.n(),
        n_selected: data.n_selected(),
        covariance: sandwich(&core.phess, &core.hess),
        penalized_hessian: core.phess,
        convergence: ConvergenceReport {
            converged: core.converged,
            outer_iterations: core.outer_iterations,
            inner_iterations: core.inner_iterations,
            gradient_max: core.pgrad.amax(),
            clamps: core.clamps,
            information_ridge: core.information_ridge,
            warnings: core.warnings,
        },
    })
}

impl FittedModel {
    pub fn alpha(&self) -> &[f64] {
        &self.delta[self.layout.alpha()]
    }

    pub fn beta(&self) -> &[f64] {
        &self.delta[self.layout.beta()]
    }

    fn basis(&self, eq: Equation) -> Result<(&EquationBasis, usize)> {
        let b = match eq {
            Equation::Selection => self.selection_basis.as_ref().map(|b| (b, 0)),
            Equation::Outcome => self.outcome_basis.as_ref().map(|b| (b, self.layout.q1)),
        };
        b.ok_or_else(|| Error::InvalidParameter(format!("model has no {} equation", eq.name())))
    }

    /// Design matrix of one equation for every row of `data`, using the stored covariate maps.
    pub fn design_matrix(&self, eq: Equation, data: &Dataset) -> Result<DMatrix<f64>> {
        let (b, _) = self.basis(eq)?;
        b.matrix(data, &(0..data.n()).collect::<Vec<_>>())
    }

    /// Linear predictor of one equation for every row of `data`.
    pub fn predict(&self, eq: Equation, data: &Dataset) -> Result<Vec<f64>> {
        let (b, off) = self.basis(eq)?;
        let x = self.design_matrix(eq, data)?;
        let coef = DVector::from_column_slice(&self.delta[off..off + b.width]);
        Ok((x * coef).as_slice().to_vec())
    }

    /// Approximate variance of the linear predictor, `diag(X V X^T)`.
    pub fn predict_variance(&self, eq: Equation, data: &Dataset) -> Result<Vec<f64>> {
        let (b, off) = self.basis(eq)?;
        let x = self.design_matrix(eq, data)?;
        let v = self.covariance.view((off, off), (b.width, b.width));
        let xv = &x * v;
        Ok((0..x.nrows()).map(|i| xv.row(i).dot(&x.row(i)).max(0.0)).collect())
    }

    fn smooth_block(&self, eq: Equation, column: &str) -> Result<(usize, usize)> {
        let (b, off) = self.basis(eq)?;
        let idx = b
            .blocks
            .iter()
            .position(|t| t.term.column == column && t.smooth.is_some())
            .ok_or_else(|| Error::InvalidParameter(format!("no smooth of '{column}' in the {} equation", eq.name())))?;
        Ok((idx, off))
    }

    /// Estimated smooth function (sum-to-zero constrained) at raw covariate values.
    pub fn smooth_values(&self, eq: Equation, column: &str, xs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.curve_at(eq, column, xs)?.into_iter().map(|p| p.estimate).collect())
    }

    pub fn curve_at(&self, eq: Equation, column: &str, xs: &[f64]) -> Result<Vec<CurvePoint>> {
        let (idx, off) = self.smooth_block(eq, column)?;
        let (b, _) = self.basis(eq)?;
        let range = b.blocks[idx].range.clone();
        let m = b.term_matrix(idx, xs);
        let start = off + range.start;
        let d = range.len();
        let coef = DVector::from_column_slice(&self.delta[start..start + d]);
        let v = self.covariance.view((start, start), (d, d));
        let est = &m * coef;
        let mv = &m * v;
        Ok((0..xs.len())
            .map(|i| {
                let se = mv.row(i).dot(&m.row(i)).max(0.0).sqrt();
                CurvePoint { x: xs[i], estimate: est[i], se, lower: est[i] - 1.959_963_984_540_054 * se, upper: est[i] + 1.959_963_984_540_054 * se }
            })
            .collect())
    }

    /// Curve with approximate 95% band on an equally spaced grid over the covariate range.
    pub fn curve(&self, eq: Equation, column: &str, points: usize) -> Result<Vec<CurvePoint>> {
        let (idx, _) = self.smooth_block(eq, column)?;
        let (b, _) = self.basis(eq)?;
        let s = b.blocks[idx].smooth.as_ref().unwrap();
        let k = points.max(2);
        let xs: Vec<f64> = (0..k).map(|i| s.min + (s.max - s.min) * i as f64 / (k - 1) as f64).collect();
        self.curve_at(eq, column, &xs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
