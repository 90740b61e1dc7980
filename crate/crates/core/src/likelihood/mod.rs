//! The copula sample-selection log-likelihood with its penalized form,
//! gradient and Hessian.
//!
//! Each observation contributes `log Phi(-eta1)` when unselected and
//! `log f2(y) + log(1 - z)` when selected, where
//! `z = dC(Phi(-eta1), F2(y)) / dv`. Per-row contributions are evaluated as
//! second-order jets in `(eta1, eta2, theta~, aux)` and assembled into the
//! parameter-space gradient and Hessian through the design matrices.

mod identities;

pub use identities::{cov_identity_check, selection_bias, CovIdentity};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::copulas::{conditional_jet, CopulaFamily, CopulaKind, PROB_EPS};
use crate::data::{Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::margins::{MarginDerivs, MarginFamily, MarginSpec};
use crate::special::norm_cdf;
use crate::splines::{build_design, DesignBlocks, EquationBasis};

/// Upper clamp for `z`, keeping `log(1 - z)` finite.
pub const Z_MAX: f64 = 1.0 - 1e-12;

/// Positions of the parameter groups inside the flat vector
/// `delta = (alpha, beta, theta~, aux)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub q1: usize,
    pub q2: usize,
    pub theta: Option<usize>,
    pub aux: Option<usize>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(q1: usize, q2: usize, has_theta: bool, has_aux: bool) -> Self {
        let mut len = q1 + q2;
        let theta = has_theta.then(|| {
            len += 1;
            len - 1
        });
        let aux = has_aux.then(|| {
            len += 1;
            len - 1
        });
        Self { q1, q2, theta, aux, len }
    }

    pub fn alpha(&self) -> std::ops::Range<usize> {
        0..self.q1
    }

    pub fn beta(&self) -> std::ops::Range<usize> {
        self.q1..self.q1 + self.q2
    }
}

/// Structured view of a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub theta_unconstrained: Option<f64>,
    pub aux: Option<f64>,
}

impl ParamVector {
    pub fn from_vector(layout: &ParamLayout, d: &DVector<f64>) -> Self {
        Self {
            alpha: d.as_slice()[layout.alpha()].to_vec(),
            beta: d.as_slice()[layout.beta()].to_vec(),
            theta_unconstrained: layout.theta.map(|i| d[i]),
            aux: layout.aux.map(|i| d[i]),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = self.alpha.clone();
        v.extend(&self.beta);
        v.extend(self.theta_unconstrained);
        v.extend(self.aux);
        DVector::from_vec(v)
    }
}

/// One smooth term's penalty, `lambda_j * S_j`, placed at `offset` in `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyBlock {
    pub offset: usize,
    pub s: DMatrix<f64>,
}

/// Penalty blocks of both equations, selection terms first.
pub fn penalty_blocks(sel: Option<&EquationBasis>, out: Option<&EquationBasis>, q1: usize) -> Vec<PenaltyBlock> {
    let mut v = Vec::new();
    for (basis, shift) in [(sel, 0), (out, q1)] {
        if let Some(b) = basis {
            for blk in b.smooth_blocks() {
                let s = blk.smooth.as_ref().unwrap();
                v.push(PenaltyBlock { offset: shift + blk.range.start, s: s.penalty.clone() });
            }
        }
    }
    v
}

/// Result of one likelihood evaluation.
#[derive(Debug, Clone)]
pub struct LikeEval {
    pub value: f64,
    pub pvalue: f64,
    pub grad: DVector<f64>,
    pub pgrad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub phess: DMatrix<f64>,
    /// `z` for each selected row (empty without a selection equation).
    pub z: Vec<f64>,
    pub clamps: usize,
}

/// Which pieces of the joint model are present.
#[derive(Debug, Clone)]
pub struct SelectionLikelihood {
    /// Selection design over all rows.
    x1: Option<DMatrix<f64>>,
    /// Selection design restricted to the selected rows.
    x1_sel: Option<DMatrix<f64>>,
    /// Outcome design over the selected rows.
    x2: Option<DMatrix<f64>>,
    sel: Vec<bool>,
    out_index: Vec<Option<usize>>,
    y: Vec<f64>,
    pub margin: MarginFamily,
    pub copula: Option<CopulaKind>,
    pub theta_fixed: Option<f64>,
    pub aux_fixed: Option<f64>,
    pub layout: ParamLayout,
    pub penalties: Vec<PenaltyBlock>,
}

fn clamp_jet<const N: usize>(j: Jet<N>) -> (Jet<N>, bool) {
    if j.v < PROB_EPS {
        (Jet::constant(PROB_EPS), true)
    } else if j.v > 1.0 - PROB_EPS {
        (Jet::constant(1.0 - PROB_EPS), true)
    } else {
        (j, false)
    }
}

fn set2<const N: usize>(j: &mut Jet<N>, i: usize, k: usize, g_i: f64, h_ik: f64) {
    if i < N && k < N {
        j.g[i] = g_i;
        j.h[i][k] = h_ik;
        j.h[k][i] = h_ik;
    }
}

/// Log density and CDF of the outcome margin as jets in variables 1 (`eta2`) and 3 (`aux`).
fn margin_jets<const N: usize>(d: &MarginDerivs) -> (Jet<N>, Jet<N>) {
    let mut lp = Jet::constant(d.logpdf);
    let mut cdf = Jet::constant(d.cdf);
    if N >= 4 {
        set2(&mut lp, 1, 1, d.logpdf_e, d.logpdf_ee);
        set2(&mut lp, 3, 3, d.logpdf_a, d.logpdf_aa);
        set2(&mut lp, 1, 3, d.logpdf_e, d.logpdf_ea);
        set2(&mut cdf, 1, 1, d.cdf_e, d.cdf_ee);
        set2(&mut cdf, 3, 3, d.cdf_a, d.cdf_aa);
        set2(&mut cdf, 1, 3, d.cdf_e, d.cdf_ea);
    }
    (lp, cdf)
}

struct RowOut<const N: usize> {
    l: Jet<N>,
    z: f64,
    clamped: bool,
}

impl SelectionLikelihood {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x1: Option<DMatrix<f64>>,
        x2: Option<DMatrix<f64>>,
        sel: &[bool],
        y: Vec<f64>,
        margin: MarginFamily,
        copula: Option<CopulaKind>,
        theta_fixed: Option<f64>,
        aux_fixed: Option<f64>,
        penalties: Vec<PenaltyBlock>,
    ) -> Result<Self> {
        if x1.is_none() && x2.is_none() {
            return Err(Error::InvalidParameter("at least one equation is required".into()));
        }
        if copula.is_some() && (x1.is_none() || x2.is_none()) {
            return Err(Error::InvalidParameter("a copula needs both equations".into()));
        }
        let mut out_index = vec![None; sel.len()];
        let mut j = 0;
        for (i, &s) in sel.iter().enumerate() {
            if s {
                out_index[i] = Some(j);
                j += 1;
            }
        }
        if let Some(x) = &x1 {
            if x.nrows() != sel.len() {
                return Err(Error::InvalidParameter("selection design rows differ from data rows".into()));
            }
        }
        let ns = if x1.is_some() { j } else { y.len() };
        if y.len() != ns || x2.as_ref().is_some_and(|x| x.nrows() != ns) {
            return Err(Error::InvalidParameter("outcome rows differ from the selected count".into()));
        }
        if margin == MarginFamily::Gamma && x2.is_some() {
            if let Some(k) = y.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Domain(format!("gamma outcome {} at selected row {} is not positive", y[k], k + 1)));
            }
        }
        let x1_sel = x1.as_ref().map(|x| {
            let rows: Vec<usize> = (0..sel.len()).filter(|&i| sel[i]).collect();
            x.select_rows(rows.iter())
        });
        let q1 = x1.as_ref().map_or(0, |x| x.ncols());
        let q2 = x2.as_ref().map_or(0, |x| x.ncols());
        let layout = ParamLayout::new(
            q1,
            q2,
            copula.is_some() && theta_fixed.is_none(),
            x2.is_some() && aux_fixed.is_none(),
        );
        Ok(Self { x1, x1_sel, x2, sel: sel.to_vec(), out_index, y, margin, copula, theta_fixed, aux_fixed, layout, penalties })
    }

    /// Joint model described by a spec, on an already built design.
    pub fn from_design(design: &DesignBlocks, data: &Dataset, spec: &ModelSpec) -> Result<Self> {
        let kind = spec.copula.copula();
        let theta_fixed = if spec.fix_theta {
            let k = kind.ok_or_else(|| Error::InvalidParameter("fix_theta without a copula".into()))?;
            Some(k.theta_to_unconstrained(spec.theta_start.unwrap()))
        } else {
            None
        };
        let q1 = design.selection.x.ncols();
        let y: Vec<f64> = data.selected_indices().iter().map(|&i| data.out[i]).collect();
        Self::new(
            Some(design.selection.x.clone()),
            Some(design.outcome.x.clone()),
            &data.sel,
            y,
            spec.margin,
            kind,
            theta_fixed,
            spec.fix_aux.map(f64::ln),
            penalty_blocks(Some(&design.selection.basis), Some(&design.outcome.basis), q1),
        )
    }

    pub fn n_rows(&self) -> usize {
        if self.x1.is_some() {
            self.sel.len()
        } else {
            self.y.len()
        }
    }

    pub fn n_penalties(&self) -> usize {
        self.penalties.len()
    }

    pub fn has_selection(&self) -> bool {
        self.x1.is_some()
    }

    pub fn has_outcome(&self) -> bool {
        self.x2.is_some()
    }

    pub fn selection_design(&self) -> Option<&DMatrix<f64>> {
        self.x1.as_ref()
    }

    pub fn outcome_design(&self) -> Option<&DMatrix<f64>> {
        self.x2.as_ref()
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn theta_unconstrained(&self, delta: &DVector<f64>) -> Option<f64> {
        self.copula?;
        Some(self.layout.theta.map_or_else(|| self.theta_fixed.unwrap(), |i| delta[i]))
    }

    pub fn aux(&self, delta: &DVector<f64>) -> f64 {
        self.layout.aux.map_or_else(|| self.aux_fixed.unwrap_or(0.0), |i| delta[i])
    }

    /// Linear predictors `(eta1 over all rows, eta2 over selected rows)`.
    pub fn predictors(&self, delta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let a = delta.rows(0, self.layout.q1);
        let b = delta.rows(self.layout.q1, self.layout.q2);
        let e1 = self.x1.as_ref().map_or_else(|| DVector::zeros(0), |x| x * a);
        let e2 = self.x2.as_ref().map_or_else(|| DVector::zeros(0), |x| x * b);
        (e1, e2)
    }

    /// `S(lambda) = blockdiag(lambda_j S_j)` in the full parameter space.
    pub fn penalty_matrix(&self, lambda: &[f64]) -> Result<DMatrix<f64>> {
        if lambda.len() != self.penalties.len() {
            return Err(Error::InvalidParameter(format!(
                "{} smoothing parameters for {} penalties",
                lambda.len(),
                self.penalties.len()
            )));
        }
        let m = self.layout.len;
        let mut s = DMatrix::zeros(m, m);
        for (blk, &l) in self.penalties.iter().zip(lambda) {
            if !(l >= 0.0) {
                return Err(Error::InvalidParameter(format!("negative smoothing parameter {l}")));
            }
            let d = blk.s.nrows();
            let mut view = s.view_mut((blk.offset, blk.offset), (d, d));
            view += &blk.s * l;
        }
        Ok(s)
    }

    fn row<const N: usize>(&self, selected: bool, y: f64, eta1: f64, eta2: f64, th: f64, aux: f64) -> Result<RowOut<N>> {
        let e1 = Jet::<N>::seed(eta1, 0);
        if !selected {
            return Ok(RowOut { l: (-e1).ln_norm_cdf(), z: 0.0, clamped: false });
        }
        let (lp, cdf, sf) = if self.x2.is_some() {
            let m = MarginSpec::new(self.margin, aux);
            let d = m.derivs(y, eta2)?;
            let (lp, cdf) = margin_jets::<N>(&d);
            (lp, cdf, d.sf)
        } else {
            (Jet::constant(0.0), Jet::constant(0.0), 1.0)
        };
        if self.x1.is_none() {
            return Ok(RowOut { l: lp, z: 0.0, clamped: false });
        }
        let Some(kind) = self.copula else {
            return Ok(RowOut { l: lp + e1.ln_norm_cdf(), z: norm_cdf(-eta1), clamped: false });
        };
        let t = Jet::<N>::seed(th, 2);
        if kind == CopulaKind::Normal {
            // 1 - z = Phi((eta1 + rho q_v) / sqrt(1 - rho^2)) with q_v = Phi^{-1}(F2(y))
            let (qv, clamped) = if self.margin == MarginFamily::Gaussian {
                let e2 = Jet::<N>::seed(eta2, 1);
                let a = Jet::<N>::seed(aux, 3);
                ((y - e2) * (-a).exp(), false)
            } else if cdf.v > 0.5 {
                // upper tail: take the quantile of the survival function to avoid cancellation in 1 - F2
                let mut upper = -cdf;
                upper.v = sf;
                let (s, c) = clamp_jet(upper);
                (-s.norm_inv_cdf(), c)
            } else {
                let (v, c) = clamp_jet(cdf);
                (v.norm_inv_cdf(), c)
            };
            let rho = t.tanh();
            let arg = (e1 + rho * qv) / (1.0 - rho * rho).sqrt();
            return Ok(RowOut { l: lp + arg.ln_norm_cdf(), z: norm_cdf(-arg.v), clamped });
        }
        let (u, cu) = clamp_jet((-e1).norm_cdf());
        let (v, cv) = clamp_jet(cdf);
        let theta = kind.link_jet(t);
        let z = conditional_jet(kind, u, v, theta);
        if !(z.v <= Z_MAX) {
            let l = lp + Jet::constant((1.0 - Z_MAX).ln());
            return Ok(RowOut { l, z: Z_MAX, clamped: true });
        }
        let zc = z.v.max(0.0);
        Ok(RowOut { l: lp + (-z).ln_1p(), z: zc, clamped: cu || cv })
    }

    fn row_inputs(&self, delta: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64, f64) {
        let (e1, e2) = self.predictors(delta);
        let th = self.theta_unconstrained(delta).unwrap_or(0.0);
        (e1, e2, th, self.aux(delta))
    }

    fn check_finite<const N: usize>(l: &Jet<N>, row: usize) -> Result<()> {
        if l.v.is_finite() && l.g.iter().all(|g| g.is_finite()) && l.h.iter().flatten().all(|h| h.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { row })
        }
    }

    /// Log-likelihood value only.
    pub fn loglik(&self, delta: &DVector<f64>) -> Result<f64> {
        let (e1, e2, th, aux) = self.row_inputs(delta);
        let mut total = 0.0;
        if self.x1.is_some() {
            for i in 0..self.sel.len() {
                let (y, eta2) = match self.out_index[i] {
                    Some(j) => (self.y[j], if self.x2.is_some() { e2[j] } else { 0.0 }),
                    None => (0.0, 0.0),
                };
                let r = self
                    .row::<0>(self.sel[i], y, e1[i], eta2, th, aux)
                    .map_err(|_| Error::NonFinite { row: i + 1 })?;
                Self::check_finite(&r.l, i + 1)?;
                total += r.l.v;
            }
        } else {
            for j in 0..self.y.len() {
                let r = self.row::<0>(true, self.y[j], 0.0, e2[j], th, aux).map_err(|_| Error::NonFinite { row: j + 1 })?;
                Self::check_finite(&r.l, j + 1)?;
                total += r.l.v;
            }
        }
        Ok(total)
    }

    pub fn penalized_loglik(&self, delta: &DVector<f64>, lambda: &[f64]) -> Result<f64> {
        let s = self.penalty_matrix(lambda)?;
        Ok(self.loglik(delta)? - 0.5 * delta.dot(&(&s * delta)))
    }

    /// Full evaluation with gradient and Hessian.
    pub fn evaluate(&self, delta: &DVector<f64>, lambda: &[f64]) -> Result<LikeEval> {
        let s = self.penalty_matrix(lambda)?;
        let lay = self.layout;
        let (e1, e2, th, aux) = self.row_inputs(delta);
        let n1 = if self.x1.is_some() { self.sel.len() } else { 0 };
        let n2 = self.y.len();

        let mut value = 0.0;
        let mut clamps = 0;
        let mut zs = Vec::with_capacity(if self.x1.is_some() { n2 } else { 0 });
        // per-row derivative weights
        let mut g1 = DVector::zeros(n1);
        let mut h11 = DVector::zeros(n1);
        let mut g2 = DVector::zeros(n2);
        let mut h22 = DVector::zeros(n2);
        let mut h12 = DVector::zeros(n2);
        let mut h1t = DVector::zeros(n1);
        let mut h1a = DVector::zeros(n1);
        let mut h2t = DVector::zeros(n2);
        let mut h2a = DVector::zeros(n2);
        let (mut gt, mut ga, mut htt, mut hta, mut haa) = (0.0, 0.0, 0.0, 0.0, 0.0);

        let mut absorb = |l: &Jet<4>, i1: Option<usize>, i2: Option<usize>| {
            value += l.v;
            if let Some(i) = i1 {
                g1[i] = l.g[0];
                h11[i] = l.h[0][0];
                h1t[i] = l.h[0][2];
                h1a[i] = l.h[0][3];
            }
            if let Some(j) = i2 {
                g2[j] = l.g[1];
                h22[j] = l.h[1][1];
                h12[j] = l.h[0][1];
                h2t[j] = l.h[1][2];
                h2a[j] = l.h[1][3];
            }
            gt += l.g[2];
            ga += l.g[3];
            htt += l.h[2][2];
            hta += l.h[2][3];
            haa += l.h[3][3];
        };

        if self.x1.is_some() {
            for i in 0..n1 {
                let j = self.out_index[i];
                let (y, eta2) = match j {
                    Some(j) => (self.y[j], if self.x2.is_some() { e2[j] } else { 0.0 }),
                    None => (0.0, 0.0),
                };
                let r = self.row::<4>(self.sel[i], y, e1[i], eta2, th, aux).map_err(|_| Error::NonFinite { row: i + 1 })?;
                Self::check_finite(&r.l, i + 1)?;
                if self.sel[i] {
                    zs.push(r.z);
                }
                clamps += r.clamped as usize;
                absorb(&r.l, Some(i), j.filter(|_| self.x2.is_some()));
            }
        } else {
            for j in 0..n2 {
                let r = self.row::<4>(true, self.y[j], 0.0, e2[j], th, aux).map_err(|_| Error::NonFinite { row: j + 1 })?;
                Self::check_finite(&r.l, j + 1)?;
                absorb(&r.l, None, Some(j));
            }
        }

        let m = lay.len;
        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        let (a, b) = (lay.alpha(), lay.beta());
        if let Some(x1) = &self.x1 {
            grad.rows_mut(a.start, lay.q1).copy_from(&x1.tr_mul(&g1));
            let mut wx = x1.clone();
            for (i, mut r) in wx.row_iter_mut().enumerate() {
                r *= h11[i];
            }
            hess.view_mut((a.start, a.start), (lay.q1, lay.q1)).copy_from(&x1.tr_mul(&wx));
        }
        if let Some(x2) = &self.x2 {
            grad.rows_mut(b.start, lay.q2).copy_from(&x2.tr_mul(&g2));
            let mut wx = x2.clone();
            for (j, mut r) in wx.row_iter_mut().enumerate() {
                r *= h22[j];
            }
            hess.view_mut((b.start, b.start), (lay.q2, lay.q2)).copy_from(&x2.tr_mul(&wx));
            if let Some(x1s) = &self.x1_sel {
                let mut wx = x2.clone();
                for (j, mut r) in wx.row_iter_mut().enumerate() {
                    r *= h12[j];
                }
                let hab = x1s.tr_mul(&wx);
                hess.view_mut((a.start, b.start), (lay.q1, lay.q2)).copy_from(&hab);
                hess.view_mut((b.start, a.start), (lay.q2, lay.q1)).copy_from(&hab.transpose());
            }
        }
        let mut cross = |idx: usize, w1: &DVector<f64>, w2: &DVector<f64>| {
            if let Some(x1) = &self.x1 {
                let c = x1.tr_mul(w1);
                hess.view_mut((a.start, idx), (lay.q1, 1)).copy_from(&c);
                hess.view_mut((idx, a.start), (1, lay.q1)).copy_from(&c.transpose());
            }
            if let Some(x2) = &self.x2 {
                let c = x2.tr_mul(w2);
                hess.view_mut((b.start, idx), (lay.q2, 1)).copy_from(&c);
                hess.view_mut((idx, b.start), (1, lay.q2)).copy_from(&c.transpose());
            }
        };
        if let Some(t) = lay.theta {
            cross(t, &h1t, &h2t);
        }
        if let Some(k) = lay.aux {
            cross(k, &h1a, &h2a);
        }
        if let Some(t) = lay.theta {
            grad[t] = gt;
            hess[(t, t)] = htt;
        }
        if let Some(k) = lay.aux {
            grad[k] = ga;
            hess[(k, k)] = haa;
        }
        if let (Some(t), Some(k)) = (lay.theta, lay.aux) {
            hess[(t, k)] = hta;
            hess[(k, t)] = hta;
        }

        let hess = (&hess + hess.transpose()) * 0.5;
        let sd = &s * delta;
        let pvalue = value - 0.5 * delta.dot(&sd);
        let pgrad = &grad - sd;
        let phess = &hess - &s;
        Ok(LikeEval { value, pvalue, grad, pgrad, hess, phess, z: zs, clamps })
    }
}

/// The selection-correction term `z = dC(Phi(-eta1), v)/dv` at `v = F2(y2)`,
/// clamped to `[0, Z_MAX]`.
pub fn z_fn(y2: f64, eta1: f64, eta2: f64, cop: &CopulaFamily, m: &MarginSpec) -> Result<f64> {
    let v = crate::margins::margin_cdf(m, y2, eta2)?;
    let u = norm_cdf(-eta1);
    if u <= 0.0 {
        return Ok(0.0);
    }
    if u >= 1.0 {
        return Ok(Z_MAX);
    }
    Ok(crate::copulas::copula_conditional(cop, u, v).clamp(0.0, Z_MAX))
}

/// Build the joint likelihood for a dataset and spec (design included).
pub fn model_for(data: &Dataset, spec: &ModelSpec) -> Result<(DesignBlocks, SelectionLikelihood)> {
    let design = build_design(data, spec)?;
    let lik = SelectionLikelihood::from_design(&design, data, spec)?;
    Ok((design, lik))
}

pub fn loglik(p: &ParamVector, data: &Dataset, spec: &ModelSpec) -> Result<f64> {
    let (_, lik) = model_for(data, spec)?;
    lik.loglik(&p.to_vector())
}

pub fn penalized_loglik(p: &ParamVector, data: &Dataset, spec: &ModelSpec, lambda: &[f64]) -> Result<f64> {
    let (_, lik) = model_for(data, spec)?;
    lik.penalized_loglik(&p.to_vector(), lambda)
}

pub fn gradient(p: &ParamVector, data: &Dataset, spec: &ModelSpec, lambda: &[f64]) -> Result<DVector<f64>> {
    let (_, lik) = model_for(data, spec)?;
    Ok(lik.evaluate(&p.to_vector(), lambda)?.pgrad)
}

pub fn hessian(p: &ParamVector, data: &Dataset, spec: &ModelSpec, lambda: &[f64]) -> Result<DMatrix<f64>> {
    let (_, lik) = model_for(data, spec)?;
    Ok(lik.evaluate(&p.to_vector(), lambda)?.phess)
}
