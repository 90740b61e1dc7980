//! Trust-region maximization with an exact subproblem solver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::brent;

/// A twice-differentiable function to be maximized.
pub trait Objective {
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    /// Value, gradient and Hessian.
    fn eval(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub initial_radius: f64,
    pub max_radius: f64,
}

impl Default for TrustRegionOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6, rel_tol: 1e-9, initial_radius: 1.0, max_radius: 100.0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrustRegionResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub iterations: usize,
    pub accepted: usize,
}

/// Minimize `-g^T p + p^T B p / 2` subject to `|p| <= r`, with `B = -H` symmetric.
/// Returns the step and whether it lies on the boundary.
pub fn solve_subproblem(g: &DVector<f64>, b: &DMatrix<f64>, r: f64) -> (DVector<f64>, bool) {
    let eig = SymmetricEigen::new(b.clone());
    let lam = &eig.eigenvalues;
    let q = &eig.eigenvectors;
    let gh = q.tr_mul(g);
    let n = g.len();
    let lmin = lam.min();
    let scale = lam.amax().max(1.0);
    let step_norm = |mu: f64| -> f64 { (0..n).map(|i| (gh[i] / (lam[i] + mu)).powi(2)).sum::<f64>().sqrt() };
    let step = |mu: f64| -> DVector<f64> {
        let c = DVector::from_fn(n, |i, _| gh[i] / (lam[i] + mu));
        q * c
    };
    if lmin > 1e-12 * scale && step_norm(0.0) <= r {
        return (step(0.0), false);
    }
    let lo = (-lmin).max(0.0);
    // components orthogonal to the smallest eigenspace
    let tol_hard = 1e-10 * scale;
    let hard_idx: Vec<usize> = (0..n).filter(|&i| lam[i] - lmin <= tol_hard).collect();
    let g_hard: f64 = hard_idx.iter().map(|&i| gh[i] * gh[i]).sum::<f64>().sqrt();
    if g_hard <= 1e-12 * gh.norm().max(1e-300) {
        // possible hard case: step at mu = lo restricted to the other eigen-directions
        let c = DVector::from_fn(n, |i, _| if hard_idx.contains(&i) { 0.0 } else { gh[i] / (lam[i] + lo) });
        let pn = c.norm();
        if pn <= r {
            let mut p = q * c;
            let tau = (r * r - pn * pn).max(0.0).sqrt();
            p += q.column(hard_idx[0]) * tau;
            return (p, true);
        }
    }
    let gn = gh.norm();
    let mut hi = lo + gn / r + 1e-12 * scale;
    while step_norm(hi) > r {
        hi = 2.0 * hi + 1e-12;
    }
    let mut a = lo + 1e-14 * scale.max(1.0);
    while step_norm(a) < r && a > lo {
        // the secular root lies below `a`; move toward the pole
        a = lo + (a - lo) * 1e-3;
        if a - lo < 1e-300 {
            break;
        }
    }
    let phi = |mu: f64| 1.0 / step_norm(mu) - 1.0 / r;
    let mu = if phi(a) * phi(hi) < 0.0 { brent(phi, a, hi, 1e-14 * hi.max(1.0)).unwrap_or(hi) } else { hi };
    (step(mu), true)
}

pub fn trust_region_maximize<O: Objective + ?Sized>(
    obj: &O,
    x0: &DVector<f64>,
    opts: &TrustRegionOptions,
) -> Result<TrustRegionResult> {
    let mut x = x0.clone();
    let (mut f, mut g, mut h) = obj.eval(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite { row: 0 });
    }
    let mut r = opts.initial_radius;
    let mut accepted = 0;
    for it in 0..opts.max_iter {
        let b = -&h;
        let (p, boundary) = solve_subproblem(&g, &b, r);
        let pred = g.dot(&p) + 0.5 * p.dot(&(&h * &p));
        let gscale = 1.0 + f.abs();
        let small_grad = g.amax() < opts.grad_tol * gscale;
        if small_grad && !boundary && pred < opts.rel_tol * gscale {
            // take the final interior Newton step when it does not lose ground
            let xn = &x + &p;
            if let Ok((fe, ge, he)) = obj.eval(&xn) {
                if fe.is_finite() && fe >= f && ge.amax() <= g.amax() {
                    return Ok(TrustRegionResult { x: xn, value: fe, grad: ge, hess: he, iterations: it + 1, accepted: accepted + 1 });
                }
            }
            return Ok(TrustRegionResult { x, value: f, grad: g, hess: h, iterations: it, accepted });
        }
        if pred <= 1e-15 * gscale {
            // the local model predicts no further increase
            if g.amax() < 1e2 * opts.grad_tol * gscale {
                return Ok(TrustRegionResult { x, value: f, grad: g, hess: h, iterations: it, accepted });
            }
            return Err(Error::NonConvergence { iterations: it, best_value: f, best: x.as_slice().to_vec() });
        }
        let xn = &x + &p;
        let pn = p.norm();
        let fnew = obj.value(&xn).ok().filter(|v| v.is_finite());
        let ratio = fnew.map(|fv| (fv - f) / pred);
        let evaluated = match ratio {
            Some(rt) if rt > 1e-4 => obj.eval(&xn).ok().filter(|e| e.0.is_finite()),
            _ => None,
        };
        match evaluated {
            Some((fe, ge, he)) => {
                let rt = ratio.unwrap();
                log::trace!("trust region iter={it} lp={fe:.10} radius={r:.3e} ratio={rt:.3}");
                let rel = (fe - f).abs() / gscale;
                x = xn;
                f = fe;
                g = ge;
                h = he;
                accepted += 1;
                if rt < 0.25 {
                    r = pn / 4.0;
                } else if rt > 0.75 && pn >= 0.99 * r {
                    r = (2.0 * r).min(opts.max_radius);
                }
                if rel < 1e-3 * opts.rel_tol && g.amax() < opts.grad_tol * (1.0 + f.abs()) {
                    return Ok(TrustRegionResult { x, value: f, grad: g, hess: h, iterations: it + 1, accepted });
                }
            }
            None => r = pn / 4.0,
        }
        if r < 1e-12 * (1.0 + x.amax()) {
            // no further progress is possible at machine precision
            if g.amax() < opts.grad_tol * gscale * 1e2 {
                return Ok(TrustRegionResult { x, value: f, grad: g, hess: h, iterations: it + 1, accepted });
            }
            return Err(Error::NonConvergence { iterations: it + 1, best_value: f, best: x.as_slice().to_vec() });
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, best_value: f, best: x.as_slice().to_vec() })
}
