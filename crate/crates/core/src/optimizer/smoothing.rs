//! Smoothing-parameter selection by the Un-Biased Risk Estimator.
//!
//! At a fitted `delta` with unpenalized gradient `G` and Hessian `H`, the
//! penalized Newton step is a ridge regression of the working response
//! `z = sqrt(I) delta + sqrt(I)^+ G` (with `I = -H`) on `sqrt(I)`, so the
//! influence matrix is `A = sqrt(I) (I + S)^-1 sqrt(I)` and
//! `V = |z - A z|^2 - n' + 2 tr(A)`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::PenaltyBlock;

pub const LOG_LAMBDA_MIN: f64 = -18.420_680_743_952_367; // ln 1e-8
pub const LOG_LAMBDA_MAX: f64 = 18.420_680_743_952_367; // ln 1e8

/// Quantities fixed while the smoothing parameters vary.
#[derive(Debug, Clone)]
pub struct UbreState {
    pub info: DMatrix<f64>,
    pub root: DMatrix<f64>,
    pub z: DVector<f64>,
    pub penalties: Vec<PenaltyBlock>,
    pub n_obs: usize,
    /// Amount added to the diagonal of `I` to make it positive semidefinite.
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UbreEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub edf: f64,
}

impl UbreState {
    /// Prepare the working quantities from the unpenalized gradient and
    /// Hessian at `delta`.
    pub fn new(delta: &DVector<f64>, grad: &DVector<f64>, hess: &DMatrix<f64>, penalties: Vec<PenaltyBlock>, n_obs: usize) -> Result<Self> {
        let m = delta.len();
        let info = -hess;
        let info = (&info + info.transpose()) * 0.5;
        if !info.iter().all(|v| v.is_finite()) {
            return Err(Error::Singular("information matrix is not finite".into()));
        }
        let eig = SymmetricEigen::new(info.clone());
        let lmin = eig.eigenvalues.min();
        let lmax = eig.eigenvalues.amax().max(1e-300);
        let ridge = if lmin < 0.0 { -lmin } else { 0.0 };
        if ridge > 0.0 {
            log::debug!("information ridge-repaired by {ridge:.3e}");
        }
        let vals = eig.eigenvalues.map(|l| (l + ridge).max(0.0));
        let tol = 1e-12 * lmax;
        let sq = vals.map(f64::sqrt);
        let isq = vals.map(|l| if l > tol { 1.0 / l.sqrt() } else { 0.0 });
        let q = &eig.eigenvectors;
        let root = q * DMatrix::from_diagonal(&sq) * q.transpose();
        let root_pinv = q * DMatrix::from_diagonal(&isq) * q.transpose();
        let info_rep = q * DMatrix::from_diagonal(&vals) * q.transpose();
        let z = &root * delta + root_pinv * grad;
        debug_assert_eq!(z.len(), m);
        Ok(Self { info: (&info_rep + info_rep.transpose()) * 0.5, root, z, penalties, n_obs, ridge })
    }

    pub fn n_lambda(&self) -> usize {
        self.penalties.len()
    }

    fn penalty(&self, lambda: &[f64]) -> DMatrix<f64> {
        let m = self.info.nrows();
        let mut s = DMatrix::zeros(m, m);
        for (blk, &l) in self.penalties.iter().zip(lambda) {
            let d = blk.s.nrows();
            let mut v = s.view_mut((blk.offset, blk.offset), (d, d));
            v += &blk.s * l;
        }
        s
    }

    /// `(I + S)^-1`, with a small diagonal jitter if the sum is numerically singular.
    fn inverse(&self, lambda: &[f64]) -> Result<DMatrix<f64>> {
        let base = &self.info + self.penalty(lambda);
        let scale = base.diagonal().amax().max(1.0);
        let mut jitter = 0.0;
        for _ in 0..8 {
            let mut m = base.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(c) = Cholesky::new(m) {
                return Ok(c.inverse());
            }
            jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 100.0 };
        }
        Err(Error::Singular("I + S is not positive definite".into()))
    }

    /// Influence matrix `A = sqrt(I) (I + S)^-1 sqrt(I)`.
    pub fn influence(&self, lambda: &[f64]) -> Result<DMatrix<f64>> {
        let b = self.inverse(lambda)?;
        Ok(&self.root * b * &self.root)
    }

    /// Effective degrees of freedom per parameter, `diag((I + S)^-1 I)`.
    pub fn edf_per_parameter(&self, lambda: &[f64]) -> Result<DVector<f64>> {
        let b = self.inverse(lambda)?;
        Ok((b * &self.info).diagonal())
    }

    pub fn eval(&self, lambda: &[f64]) -> Result<UbreEval> {
        let b = self.inverse(lambda)?;
        let bi = &b * &self.info;
        let edf = bi.trace();
        let rz = &self.root * &self.z;
        let brz = &b * &rz;
        let az = &self.root * &brz;
        let w = &self.z - &az;
        let value = w.norm_squared() - 3.0 * self.n_obs as f64 + 2.0 * edf;
        let brw = &b * (&self.root * &w);
        let bib = &bi * &b;
        let gradient = self
            .penalties
            .iter()
            .zip(lambda)
            .map(|(blk, &l)| {
                let d = blk.s.nrows();
                let o = blk.offset;
                let x = brw.rows(o, d);
                let y = brz.rows(o, d);
                let quad = x.dot(&(&blk.s * y));
                let tr = (&blk.s * bib.view((o, o), (d, d))).trace();
                2.0 * l * quad - 2.0 * l * tr
            })
            .collect();
        Ok(UbreEval { value, gradient, edf })
    }

    fn value_rho(&self, rho: &[f64]) -> f64 {
        let l: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
        self.eval(&l).map_or(f64::INFINITY, |e| e.value)
    }
}

fn project(rho: &mut [f64]) {
    for r in rho.iter_mut() {
        *r = r.clamp(LOG_LAMBDA_MIN, LOG_LAMBDA_MAX);
    }
}

/// Projected BFGS on log-lambda. Returns `None` if the search breaks down.
pub fn search_bfgs(state: &UbreState, rho0: &[f64]) -> Option<Vec<f64>> {
    let k = rho0.len();
    let mut rho = rho0.to_vec();
    project(&mut rho);
    let ev = |r: &[f64]| -> Option<(f64, DVector<f64>)> {
        let l: Vec<f64> = r.iter().map(|v| v.exp()).collect();
        let e = state.eval(&l).ok()?;
        e.value.is_finite().then(|| (e.value, DVector::from_vec(e.gradient)))
    };
    let (mut f, mut g) = ev(&rho)?;
    let mut hinv = DMatrix::<f64>::identity(k, k);
    for _ in 0..200 {
        // free variables: not pinned at a bound by the gradient
        let free: Vec<bool> = (0..k)
            .map(|i| !((rho[i] <= LOG_LAMBDA_MIN && g[i] > 0.0) || (rho[i] >= LOG_LAMBDA_MAX && g[i] < 0.0)))
            .collect();
        let pg = DVector::from_fn(k, |i, _| if free[i] { g[i] } else { 0.0 });
        if pg.amax() < 1e-7 * (1.0 + f.abs()) {
            return Some(rho);
        }
        let mut dir = -(&hinv * &pg);
        for i in 0..k {
            if !free[i] {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&pg) >= 0.0 {
            hinv = DMatrix::identity(k, k);
            dir = -pg.clone();
        }
        let dmax = dir.amax();
        if dmax > 5.0 {
            dir *= 5.0 / dmax;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = (0..k).map(|i| rho[i] + t * dir[i]).collect();
            project(&mut trial);
            if let Some((ft, gt)) = ev(&trial) {
                let step: f64 = (0..k).map(|i| (trial[i] - rho[i]) * g[i]).sum();
                if ft <= f + 1e-4 * step.min(0.0) {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let (trial, ft, gt) = accepted?;
        let s = DVector::from_fn(k, |i, _| trial[i] - rho[i]);
        let y = &gt - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * ((sy + yhy) / (sy * sy)) - (&hy * s.transpose() + &s * hy.transpose()) / sy;
        }
        let done = s.amax() < 1e-7 && (f - ft).abs() < 1e-12 * (1.0 + f.abs());
        rho = trial;
        f = ft;
        g = gt;
        if done {
            return Some(rho);
        }
    }
    Some(rho)
}

fn golden<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Cyclic coordinate search: grid bracketing then golden-section refinement
/// in each log-lambda coordinate.
pub fn search_coordinate(state: &UbreState, rho0: &[f64]) -> Vec<f64> {
    let k = rho0.len();
    let mut rho = rho0.to_vec();
    project(&mut rho);
    let grid = 25;
    let step = (LOG_LAMBDA_MAX - LOG_LAMBDA_MIN) / (grid - 1) as f64;
    for _cycle in 0..20 {
        let before = rho.clone();
        for j in 0..k {
            let fj = |x: f64| {
                let mut r = rho.clone();
                r[j] = x;
                state.value_rho(&r)
            };
            let (mut best_x, mut best_f) = (rho[j], fj(rho[j]));
            for i in 0..grid {
                let x = LOG_LAMBDA_MIN + step * i as f64;
                let v = fj(x);
                if v < best_f {
                    best_x = x;
                    best_f = v;
                }
            }
            let lo = (best_x - step).max(LOG_LAMBDA_MIN);
            let hi = (best_x + step).min(LOG_LAMBDA_MAX);
            let (x, v) = golden(&fj, lo, hi, 1e-6);
            rho[j] = if v < best_f { x } else { best_x };
        }
        let change = rho.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change < 1e-5 {
            break;
        }
    }
    rho
}

/// Minimize the UBRE over log-lambda within `[1e-8, 1e8]`: quasi-Newton first,
/// falling back to coordinate search if it fails or ends worse than the start.
pub fn select_lambda(state: &UbreState, lambda0: &[f64]) -> Vec<f64> {
    if state.n_lambda() == 0 {
        return Vec::new();
    }
    let rho0: Vec<f64> = lambda0.iter().map(|l| l.max(1e-300).ln()).collect();
    let f0 = state.value_rho(&rho0);
    let rho = match search_bfgs(state, &rho0) {
        Some(r) if state.value_rho(&r) <= f0 + 1e-12 * (1.0 + f0.abs()) => r,
        _ => {
            log::debug!("quasi-Newton UBRE search failed; using coordinate search");
            search_coordinate(state, &rho0)
        }
    };
    rho.iter().map(|r| r.exp()).collect()
}

/// UBRE value for the given smoothing parameters (convenience wrapper).
pub fn ubre(state: &UbreState, lambda: &[f64]) -> Result<f64> {
    Ok(state.eval(lambda)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splines::difference_penalty;

    fn ridge_problem(noise: bool) -> UbreState {
        ridge_data(noise).3
    }

    fn ridge_data(noise: bool) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, UbreState) {
        // Gaussian regression y = X b + e with unit variance: I = X^T X, G = X^T (y - X delta)
        let n = 200;
        let dim = 8;
        let mut x = DMatrix::zeros(n, dim + 1);
        let mut y = DVector::zeros(n);
        let mut state = 12345u64;
        let mut unif = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
        };
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            x[(i, 0)] = 1.0;
            for j in 0..dim {
                let c = j as f64 / (dim - 1) as f64;
                x[(i, j + 1)] = (-(t - c).powi(2) / 0.02).exp();
            }
            let e = crate::special::norm_inv_cdf(unif());
            y[i] = if noise { e } else { (6.0 * t).sin() * 2.0 + 0.3 * e };
        }
        let info = x.transpose() * &x;
        let delta = info.clone().cholesky().unwrap().solve(&(x.transpose() * &y));
        let grad = x.transpose() * (&y - &x * &delta);
        let s = difference_penalty(2, dim).unwrap();
        let mut full = DMatrix::zeros(dim + 1, dim + 1);
        full.view_mut((1, 1), (dim, dim)).copy_from(&s);
        let pen = vec![PenaltyBlock { offset: 1, s }];
        let st = UbreState::new(&delta, &grad, &(-info), pen, n).unwrap();
        (x, y, full, st)
    }

    #[test]
    fn matches_direct_gaussian_risk_up_to_a_constant() {
        // with unit scale, UBRE = |y - X b_lambda|^2 - n + 2 tr(A) differs from V by a constant
        for noise in [false, true] {
            let (x, y, s, st) = ridge_data(noise);
            let xtx = x.transpose() * &x;
            let mut offsets = Vec::new();
            for &l in &[1e-4, 0.1, 3.0, 100.0, 1e5] {
                let m = (&xtx + &s * l).cholesky().unwrap();
                let b = m.solve(&(x.transpose() * &y));
                let tr = (m.inverse() * &xtx).trace();
                let direct = (&y - &x * b).norm_squared() - y.len() as f64 + 2.0 * tr;
                offsets.push(st.eval(&[l]).unwrap().value - direct);
            }
            let spread = offsets.iter().fold(f64::MIN, |a, &b| a.max(b)) - offsets.iter().fold(f64::MAX, |a, &b| a.min(b));
            assert!(spread < 1e-8, "{offsets:?}");
        }
    }

    #[test]
    fn trace_limits_and_eigenvalues() {
        let s = ridge_problem(false);
        let m = s.info.nrows() as f64;
        assert!((s.eval(&[0.0]).unwrap().edf - m).abs() < 1e-8);
        // unpenalized intercept plus the two-dimensional null space of the penalty
        assert!((s.eval(&[1e12]).unwrap().edf - 3.0).abs() < 1e-3);
        let a = s.influence(&[3.0]).unwrap();
        let eig = SymmetricEigen::new(a.clone());
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-10 && v < 1.0 + 1e-10));
        assert!((&a - a.transpose()).amax() < 1e-12);
    }

    #[test]
    fn gradient_matches_differences() {
        let s = ridge_problem(false);
        for &l in &[0.01, 1.0, 50.0] {
            let e = s.eval(&[l]).unwrap();
            let h = 1e-6;
            let fd = (s.value_rho(&[l.ln() + h]) - s.value_rho(&[l.ln() - h])) / (2.0 * h);
            assert!((e.gradient[0] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{} vs {fd}", e.gradient[0]);
        }
    }

    #[test]
    fn searches_agree_and_noise_oversmooths() {
        let s = ridge_problem(false);
        let a = search_bfgs(&s, &[0.0]).unwrap();
        let b = search_coordinate(&s, &[0.0]);
        let ea = s.eval(&[a[0].exp()]).unwrap().edf;
        let eb = s.eval(&[b[0].exp()]).unwrap().edf;
        assert!((ea - eb).abs() < 0.01 * eb, "{ea} vs {eb}");
        assert!(ea > 3.5);
        let noise = ridge_problem(true);
        let l = select_lambda(&noise, &[1.0]);
        let e = noise.eval(&l).unwrap().edf;
        assert!(e < ea - 1.0, "edf {e} at lambda {l:?}");
        let c = search_coordinate(&noise, &[0.0]);
        assert!(noise.value_rho(&[l[0].ln()]) <= noise.value_rho(&c) + 1e-8);
    }

    #[test]
    fn edf_decreases_in_lambda() {
        let s = ridge_problem(false);
        let mut prev = f64::INFINITY;
        for i in -8..8 {
            let e = s.eval(&[10f64.powi(i)]).unwrap().edf;
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }
}
