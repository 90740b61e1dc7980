use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{bspline_row, difference_penalty, make_knots, KnotVector};
use crate::data::{Dataset, ModelSpec, Term, TermKind};
use crate::error::{Error, Result};

/// Constrained B-spline basis for one smooth term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothBasis {
    pub knots: KnotVector,
    /// Min-max map of the raw covariate onto [0, 1].
    pub min: f64,
    pub max: f64,
    /// Basis change absorbing the sum-to-zero constraint, `(K + p) x (K + p - 1)`.
    pub z: DMatrix<f64>,
    /// Penalty in the constrained coordinates, `Z^T D^T D Z`.
    pub penalty: DMatrix<f64>,
    pub order: usize,
}

impl SmoothBasis {
    pub fn rescale(&self, x: f64) -> f64 {
        ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    /// Unconstrained B-spline values at a raw covariate value.
    pub fn raw_row(&self, x: f64) -> Vec<f64> {
        bspline_row(self.rescale(x), &self.knots).expect("rescaled argument lies in [0, 1]")
    }

    /// Constrained basis row at a raw covariate value.
    pub fn row(&self, x: f64) -> DVector<f64> {
        let b = DVector::from_vec(self.raw_row(x));
        self.z.tr_mul(&b)
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermBlock {
    pub term: Term,
    pub range: Range<usize>,
    pub smooth: Option<SmoothBasis>,
}

/// Column layout of one equation: an intercept in column 0 followed by one
/// block per term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationBasis {
    pub blocks: Vec<TermBlock>,
    pub width: usize,
}

impl EquationBasis {
    pub fn row_into(&self, data: &Dataset, i: usize, out: &mut [f64]) -> Result<()> {
        out[0] = 1.0;
        for b in &self.blocks {
            let x = data.column(&b.term.column)?[i];
            match &b.smooth {
                None => out[b.range.start] = x,
                Some(s) => {
                    let r = s.row(x);
                    out[b.range.clone()].copy_from_slice(r.as_slice());
                }
            }
        }
        Ok(())
    }

    /// Design matrix for the given rows of a dataset, using the stored maps.
    pub fn matrix(&self, data: &Dataset, rows: &[usize]) -> Result<DMatrix<f64>> {
        let mut x = DMatrix::zeros(rows.len(), self.width);
        let mut buf = vec![0.0; self.width];
        for (r, &i) in rows.iter().enumerate() {
            self.row_into(data, i, &mut buf)?;
            for j in 0..self.width {
                x[(r, j)] = buf[j];
            }
        }
        Ok(x)
    }

    pub fn smooth_blocks(&self) -> impl Iterator<Item = &TermBlock> {
        self.blocks.iter().filter(|b| b.smooth.is_some())
    }

    /// Design columns of one smooth term evaluated at raw covariate values.
    pub fn term_matrix(&self, block: usize, xs: &[f64]) -> DMatrix<f64> {
        let s = self.blocks[block].smooth.as_ref().expect("smooth term");
        let mut m = DMatrix::zeros(xs.len(), s.dim());
        for (r, &x) in xs.iter().enumerate() {
            m.set_row(r, &s.row(x).transpose());
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquationDesign {
    pub x: DMatrix<f64>,
    pub basis: EquationBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignBlocks {
    /// Selection equation over all rows.
    pub selection: EquationDesign,
    /// Outcome equation over the selected rows only.
    pub outcome: EquationDesign,
}

/// Orthonormal basis of the complement of `c` from a Householder reflection.
fn constraint_null_space(c: &DVector<f64>) -> DMatrix<f64> {
    let n = c.len();
    let norm = c.norm();
    let mut w = c.clone();
    w[0] += if c[0] >= 0.0 { norm } else { -norm };
    let ww = w.norm_squared();
    let h = DMatrix::<f64>::identity(n, n) - (&w * w.transpose()) * (2.0 / ww);
    h.columns(1, n - 1).into_owned()
}

/// Build one equation's design on `rows`; smooth covariates are rescaled by
/// their range over the full dataset and constrained to sum to zero over `rows`.
pub fn build_equation(
    data: &Dataset,
    terms: &[Term],
    rows: &[usize],
    k: usize,
    p: usize,
    m: usize,
) -> Result<EquationDesign> {
    let kv = make_knots(k, p)?;
    let mut blocks = Vec::with_capacity(terms.len());
    let mut width = 1;
    for t in terms {
        let col = data.column(&t.column)?;
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (slo, shi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(col[i]), b.max(col[i])));
        if !(hi > lo) || !(shi > slo) {
            return Err(Error::DegenerateDesign(format!("covariate '{}' is constant", t.column)));
        }
        match t.kind {
            TermKind::Linear => {
                blocks.push(TermBlock { term: t.clone(), range: width..width + 1, smooth: None });
                width += 1;
            }
            TermKind::Smooth => {
                let dim = kv.dim();
                let rescale = |x: f64| ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
                let mut sums = DVector::zeros(dim);
                for &i in rows {
                    let r = bspline_row(rescale(col[i]), &kv)?;
                    for j in 0..dim {
                        sums[j] += r[j];
                    }
                }
                let z = constraint_null_space(&sums);
                let penalty = z.transpose() * difference_penalty(m, dim)? * &z;
                let penalty = (&penalty + penalty.transpose()) * 0.5;
                let sb = SmoothBasis { knots: kv.clone(), min: lo, max: hi, z, penalty, order: m };
                let d = sb.dim();
                blocks.push(TermBlock { term: t.clone(), range: width..width + d, smooth: Some(sb) });
                width += d;
            }
        }
    }
    let basis = EquationBasis { blocks, width };
    let x = basis.matrix(data, rows)?;
    if rows.len() < width {
        return Err(Error::DegenerateDesign(format!("{} rows for {width} columns", rows.len())));
    }
    Ok(EquationDesign { x, basis })
}

pub fn build_design(data: &Dataset, spec: &ModelSpec) -> Result<DesignBlocks> {
    spec.validate()?;
    let all: Vec<usize> = (0..data.n()).collect();
    let sel = data.selected_indices();
    Ok(DesignBlocks {
        selection: build_equation(data, &spec.selection, &all, spec.knots, spec.degree, spec.penalty_order)?,
        outcome: build_equation(data, &spec.outcome, &sel, spec.knots, spec.degree, spec.penalty_order)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let x: Vec<f64> = (0..40).map(|i| 10.0 + i as f64 * 0.7).collect();
        let w: Vec<f64> = (0..40).map(|i| ((i * 7) % 5) as f64).collect();
        let sel = (0..40).map(|i| i % 3 != 0).collect();
        let out = (0..40).map(|i| i as f64).collect();
        Dataset::new(sel, out, vec![("x".into(), x), ("w".into(), w), ("c".into(), vec![2.0; 40])]).unwrap()
    }

    #[test]
    fn smooth_columns_sum_to_zero_and_penalty_keeps_linear_null_space() {
        let d = toy();
        let rows: Vec<usize> = (0..40).collect();
        let e = build_equation(&d, &[Term::smooth("x"), Term::linear("w")], &rows, 8, 3, 2).unwrap();
        assert_eq!(e.basis.width, 1 + 10 + 1);
        for j in 1..11 {
            assert!(e.x.column(j).sum().abs() < 1e-12);
        }
        assert_eq!(e.x.column(11).as_slice(), d.column("w").unwrap());
        let s = e.basis.blocks[0].smooth.as_ref().unwrap();
        let eig = nalgebra::SymmetricEigen::new(s.penalty.clone());
        let zero = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-10).count();
        assert_eq!(zero, 1);
        // Z spans the complement of the column sums and is orthonormal
        assert!((s.z.transpose() * &s.z - DMatrix::identity(10, 10)).norm() < 1e-12);
    }

    #[test]
    fn constant_covariate_is_rejected() {
        let d = toy();
        let rows: Vec<usize> = (0..40).collect();
        assert!(matches!(
            build_equation(&d, &[Term::smooth("c")], &rows, 8, 3, 2),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn stored_maps_reproduce_the_design() {
        let d = toy();
        let rows = d.selected_indices();
        let e = build_equation(&d, &[Term::smooth("x")], &rows, 5, 3, 2).unwrap();
        let again = e.basis.matrix(&d, &rows).unwrap();
        assert_eq!(again, e.x);
        let json = serde_json::to_string(&e.basis).unwrap();
        let back: EquationBasis = serde_json::from_str(&json).unwrap();
        assert_eq!(back.matrix(&d, &rows).unwrap(), e.x);
    }
}
