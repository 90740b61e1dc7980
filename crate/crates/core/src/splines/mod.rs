//! Penalized B-spline bases on the unit interval: knot construction, the
//! Cox-de Boor recursion, difference penalties, and per-equation design
//! matrices with sum-to-zero constraints.

mod design;

pub use design::{build_design, build_equation, DesignBlocks, EquationBasis, EquationDesign, SmoothBasis, TermBlock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    pub k: usize,
    pub p: usize,
    pub knots: Vec<f64>,
}

impl KnotVector {
    /// Number of basis functions, `K + p`.
    pub fn dim(&self) -> usize {
        self.k + self.p
    }
}

/// `K` equidistant intervals on [0, 1] with `p + 1` coincident knots at each end.
pub fn make_knots(k: usize, p: usize) -> Result<KnotVector> {
    if k < 1 {
        return Err(Error::InvalidParameter("at least one interior interval is required".into()));
    }
    let mut knots = vec![0.0; p + 1];
    knots.extend((1..k).map(|i| i as f64 / k as f64));
    knots.extend(std::iter::repeat_n(1.0, p + 1));
    Ok(KnotVector { k, p, knots })
}

/// Values of all `K + p` basis functions at `x`.
pub fn bspline_row(x: f64, kv: &KnotVector) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("spline argument {x} outside [0, 1]")));
    }
    let t = &kv.knots;
    let dim = kv.dim();
    // degree 0
    let mut b: Vec<f64> = (0..t.len() - 1).map(|i| if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 }).collect();
    if x == 1.0 {
        // right end belongs to the last non-empty interval
        let last = (0..t.len() - 1).rev().find(|&i| t[i] < t[i + 1]).unwrap();
        b[last] = 1.0;
    }
    for d in 1..=kv.p {
        for i in 0..t.len() - 1 - d {
            let left = if t[i + d] > t[i] { (x - t[i]) / (t[i + d] - t[i]) * b[i] } else { 0.0 };
            let right = if t[i + d + 1] > t[i + 1] {
                (t[i + d + 1] - x) / (t[i + d + 1] - t[i + 1]) * b[i + 1]
            } else {
                0.0
            };
            b[i] = left + right;
        }
    }
    b.truncate(dim);
    Ok(b)
}

/// `D_m^T D_m` for the `m`-th order difference matrix on `dim` coefficients.
pub fn difference_penalty(m: usize, dim: usize) -> Result<DMatrix<f64>> {
    if m < 1 || m >= dim {
        return Err(Error::InvalidParameter(format!("difference order {m} must lie in [1, {dim})")));
    }
    let mut d = DMatrix::<f64>::identity(dim, dim);
    for _ in 0..m {
        let r = d.nrows();
        d = DMatrix::from_fn(r - 1, dim, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    Ok(d.transpose() * d)
}
