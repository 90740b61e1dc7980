//! Classical Gaussian sample selection: the two-step estimator and full
//! information maximum likelihood with bivariate normal errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelSpec, TermKind};
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::likelihood::SelectionLikelihood;
use crate::margins::MarginFamily;
use crate::optimizer::{fit_likelihood, trust_region_maximize, FitOptions, Objective, TrustRegionOptions};
use crate::special::{mills, norm_inv_cdf};

/// Intercept plus the raw columns of linear terms.
fn linear_design(data: &Dataset, spec_terms: &[crate::data::Term], rows: &[usize]) -> Result<DMatrix<f64>> {
    if let Some(t) = spec_terms.iter().find(|t| t.kind != TermKind::Linear) {
        return Err(Error::InvalidParameter(format!("term '{}' is not linear", t.column)));
    }
    let cols: Vec<&[f64]> = spec_terms.iter().map(|t| data.column(&t.column)).collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows.len(), cols.len() + 1, |r, c| if c == 0 { 1.0 } else { cols[c - 1][rows[r]] }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepFit {
    /// Probit coefficients (intercept first).
    pub beta1: Vec<f64>,
    /// Inverse Mills ratios of the selected rows.
    pub mills: Vec<f64>,
    pub beta2: Vec<f64>,
    pub gamma: f64,
    pub sigma: f64,
    /// `gamma / sigma` as computed.
    pub rho_raw: f64,
    /// `rho_raw` clamped to `[-1, 1]`.
    pub rho: f64,
    pub n_selected: usize,
    /// Whether some selection covariate is absent from the outcome equation.
    pub exclusion_restriction: bool,
}

fn check_spec(spec: &ModelSpec) -> Result<()> {
    if spec.margin != MarginFamily::Gaussian {
        return Err(Error::InvalidParameter("the classical selection model needs a Gaussian outcome".into()));
    }
    Ok(())
}

fn has_exclusion(spec: &ModelSpec) -> bool {
    spec.selection.iter().any(|t| !spec.outcome.iter().any(|o| o.column == t.column))
}

/// Probit maximum likelihood for the selection equation.
fn probit(data: &Dataset, x1: &DMatrix<f64>) -> Result<DVector<f64>> {
    let y: Vec<f64> = data.selected_indices().iter().map(|&i| data.out[i]).collect();
    let lik = SelectionLikelihood::new(Some(x1.clone()), None, &data.sel, y, MarginFamily::Gaussian, None, None, None, vec![])?;
    let mut start = DVector::zeros(x1.ncols());
    let p = data.n_selected() as f64 / data.n() as f64;
    start[0] = norm_inv_cdf(p.clamp(1e-6, 1.0 - 1e-6));
    let f = fit_likelihood(&lik, &start, Some(&[]), false, 0.0, &FitOptions::default())?;
    if !f.converged {
        return Err(Error::NonConvergence { iterations: f.inner_iterations, best_value: f.loglik, best: f.delta.as_slice().to_vec() });
    }
    Ok(f.delta)
}

/// Least squares through a QR factorization; errors on a rank-deficient design.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = x.clone().qr();
    let r = qr.r();
    let dmax = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * dmax.max(1e-300)) {
        return Err(Error::Singular("second-stage design is rank deficient".into()));
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty).ok_or_else(|| Error::Singular("second-stage design is rank deficient".into()))
}

/// Heckman's two-step estimator on linear terms.
pub fn two_step(data: &Dataset, spec: &ModelSpec) -> Result<TwoStepFit> {
    check_spec(spec)?;
    let all: Vec<usize> = (0..data.n()).collect();
    let sel = data.selected_indices();
    if sel.is_empty() || sel.len() == data.n() {
        return Err(Error::DegenerateDesign("selection indicator does not vary".into()));
    }
    let exclusion = has_exclusion(spec);
    if !exclusion {
        log::warn!("no exclusion restriction: identification relies on the nonlinearity of the Mills ratio");
    }
    let x1 = linear_design(data, &spec.selection, &all)?;
    let beta1 = probit(data, &x1)?;
    let eta1 = &x1 * &beta1;
    let xi: Vec<f64> = sel.iter().map(|&i| mills(eta1[i])).collect();
    let x2 = linear_design(data, &spec.outcome, &sel)?;
    let q = x2.ncols();
    let mut xa = x2.clone().insert_column(q, 0.0);
    for (r, &m) in xi.iter().enumerate() {
        xa[(r, q)] = m;
    }
    let y = DVector::from_iterator(sel.len(), sel.iter().map(|&i| data.out[i]));
    let coef = least_squares(&xa, &y)?;
    let resid = &y - &xa * &coef;
    let gamma = coef[q];
    let ns = sel.len() as f64;
    let delta_mean = sel.iter().zip(&xi).map(|(&i, &m)| m * (m + eta1[i])).sum::<f64>() / ns;
    let sigma = (resid.norm_squared() / ns + gamma * gamma * delta_mean).sqrt();
    let rho_raw = gamma / sigma;
    Ok(TwoStepFit {
        beta1: beta1.as_slice().to_vec(),
        mills: xi,
        beta2: coef.rows(0, q).iter().copied().collect(),
        gamma,
        sigma,
        rho_raw,
        rho: rho_raw.clamp(-1.0, 1.0),
        n_selected: sel.len(),
        exclusion_restriction: exclusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FimlFit {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub sigma: f64,
    pub rho: f64,
    pub loglik: f64,
    pub iterations: usize,
    /// Parameter vector `(beta1, beta2, log sigma, atanh rho)`.
    pub unconstrained: Vec<f64>,
}

/// The bivariate normal selection log-likelihood in `(beta1, beta2, log sigma, atanh rho)`.
pub struct FimlObjective {
    x1: DMatrix<f64>,
    x2: DMatrix<f64>,
    sel: Vec<bool>,
    /// Row of `x2` and outcome for each selected row.
    out_row: Vec<Option<usize>>,
    y: Vec<f64>,
}

impl FimlObjective {
    pub fn new(data: &Dataset, spec: &ModelSpec) -> Result<Self> {
        check_spec(spec)?;
        let all: Vec<usize> = (0..data.n()).collect();
        let sel_idx = data.selected_indices();
        let x1 = linear_design(data, &spec.selection, &all)?;
        let x2 = linear_design(data, &spec.outcome, &sel_idx)?;
        let mut out_row = vec![None; data.n()];
        for (j, &i) in sel_idx.iter().enumerate() {
            out_row[i] = Some(j);
        }
        let y = sel_idx.iter().map(|&i| data.out[i]).collect();
        Ok(Self { x1, x2, sel: data.sel.clone(), out_row, y })
    }

    pub fn dim(&self) -> usize {
        self.x1.ncols() + self.x2.ncols() + 2
    }

    fn row<const N: usize>(&self, i: usize, p: &DVector<f64>) -> Jet<N> {
        let q1 = self.x1.ncols();
        let eta1 = Jet::<N>::seed(self.x1.row(i).dot(&p.rows(0, q1).transpose()), 0);
        if !self.sel[i] {
            return (-eta1).ln_norm_cdf();
        }
        let j = self.out_row[i].unwrap();
        let q2 = self.x2.ncols();
        let eta2 = Jet::<N>::seed(self.x2.row(j).dot(&p.rows(q1, q2).transpose()), 1);
        let ls = Jet::<N>::seed(p[q1 + q2], 2);
        let rho = Jet::<N>::seed(p[q1 + q2 + 1], 3).tanh();
        let sigma = ls.exp();
        let r = (-eta2 + self.y[j]) / sigma;
        let arg = (eta1 + rho * r) / (-(rho * rho) + 1.0).sqrt();
        arg.ln_norm_cdf() - r * r * 0.5 - crate::special::LN_SQRT_2PI - ls
    }

    /// Rows of the Jacobian from the four row variables to the parameters.
    fn jacobian(&self, i: usize) -> Vec<(usize, Vec<(usize, f64)>)> {
        let q1 = self.x1.ncols();
        let q2 = self.x2.ncols();
        let mut rows = vec![(0, (0..q1).map(|c| (c, self.x1[(i, c)])).collect())];
        if let Some(j) = self.out_row[i] {
            rows.push((1, (0..q2).map(|c| (q1 + c, self.x2[(j, c)])).collect()));
            rows.push((2, vec![(q1 + q2, 1.0)]));
            rows.push((3, vec![(q1 + q2 + 1, 1.0)]));
        }
        rows
    }
}

impl Objective for FimlObjective {
    fn value(&self, p: &DVector<f64>) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.sel.len() {
            let l = self.row::<0>(i, p);
            if !l.v.is_finite() {
                return Err(Error::NonFinite { row: i + 1 });
            }
            total += l.v;
        }
        Ok(total)
    }

    fn eval(&self, p: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let m = self.dim();
        let mut g = DVector::zeros(m);
        let mut h = DMatrix::zeros(m, m);
        let mut total = 0.0;
        for i in 0..self.sel.len() {
            let l = self.row::<4>(i, p);
            if !l.v.is_finite() {
                return Err(Error::NonFinite { row: i + 1 });
            }
            total += l.v;
            let jac = self.jacobian(i);
            for (a, ra) in &jac {
                for &(ca, va) in ra {
                    g[ca] += l.g[*a] * va;
                    for (b, rb) in &jac {
                        for &(cb, vb) in rb {
                            h[(ca, cb)] += l.h[*a][*b] * va * vb;
                        }
                    }
                }
            }
        }
        Ok((total, g, h))
    }
}

/// Full-information maximum likelihood, started from the two-step estimates.
pub fn gaussian_fiml(data: &Dataset, spec: &ModelSpec) -> Result<FimlFit> {
    let obj = FimlObjective::new(data, spec)?;
    let q1 = obj.x1.ncols();
    let q2 = obj.x2.ncols();
    let mut start = DVector::zeros(obj.dim());
    match two_step(data, spec) {
        Ok(ts) => {
            start.rows_mut(0, q1).copy_from_slice(&ts.beta1);
            start.rows_mut(q1, q2).copy_from_slice(&ts.beta2);
            start[q1 + q2] = ts.sigma.max(1e-3).ln();
            start[q1 + q2 + 1] = ts.rho.clamp(-0.9, 0.9).atanh();
        }
        Err(e) => {
            log::warn!("two-step start failed ({e}); starting at zero");
            let sd = crate::stats::sd(&obj.y).unwrap_or(1.0).max(1e-3);
            start[q1] = crate::stats::mean(&obj.y);
            start[q1 + q2] = sd.ln();
        }
    }
    let opts = TrustRegionOptions::default();
    let r = trust_region_maximize(&obj, &start, &opts)?;
    Ok(FimlFit {
        beta1: r.x.rows(0, q1).iter().copied().collect(),
        beta2: r.x.rows(q1, q2).iter().copied().collect(),
        sigma: r.x[q1 + q2].exp(),
        rho: r.x[q1 + q2 + 1].tanh(),
        loglik: r.value,
        iterations: r.iterations,
        unconstrained: r.x.as_slice().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dependence, Term};

    #[test]
    fn mills_at_zero() {
        assert!((mills(0.0) - 0.797_884_560_802_865_4).abs() < 1e-15);
    }

    #[test]
    fn fiml_derivatives_match_differences() {
        let n = 80;
        let sel: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
        let out: Vec<f64> = (0..n).map(|i| 0.5 + x[i] + 0.3 * ((i * 7) % 5) as f64).collect();
        let data = Dataset::new(sel, out, vec![("x".into(), x), ("w".into(), w)]).unwrap();
        let spec = ModelSpec::new(vec![Term::linear("x"), Term::linear("w")], vec![Term::linear("x")], MarginFamily::Gaussian, Dependence::Normal);
        let obj = FimlObjective::new(&data, &spec).unwrap();
        let p = DVector::from_vec(vec![0.2, 0.5, -0.3, 0.4, 0.8, -0.2, 0.6]);
        let (f, g, h) = obj.eval(&p).unwrap();
        assert!((f - obj.value(&p).unwrap()).abs() < 1e-12);
        let e = 1e-5;
        for k in 0..p.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a[k] += e;
            b[k] -= e;
            let fd = (obj.value(&a).unwrap() - obj.value(&b).unwrap()) / (2.0 * e);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "grad {k}");
            let gd = (obj.eval(&a).unwrap().1 - obj.eval(&b).unwrap().1) / (2.0 * e);
            for j in 0..p.len() {
                assert!((gd[j] - h[(j, k)]).abs() < 1e-5 * (1.0 + gd[j].abs()), "hess {j},{k}");
            }
        }
    }
}
