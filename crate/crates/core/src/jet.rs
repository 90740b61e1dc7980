//! Second-order forward-mode automatic differentiation.
//!
//! A `Jet<N>` carries a value together with its gradient and Hessian with
//! respect to `N` seed variables. `Jet<0>` degenerates to a plain scalar, so
//! closed-form expressions written once over `Jet<N>` serve both plain
//! evaluation and exact derivative evaluation.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::special;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, g: [0.0; N], h: [[0.0; N]; N] }
    }

    pub fn variable(v: f64, i: usize) -> Self {
        let mut j = Self::constant(v);
        j.g[i] = 1.0;
        j
    }

    /// Seed variable `i`, or a constant when the jet tracks fewer variables.
    pub fn seed(v: f64, i: usize) -> Self {
        if i < N {
            Self::variable(v, i)
        } else {
            Self::constant(v)
        }
    }

    /// Apply a scalar function given its value and first two derivatives at `self.v`.
    #[inline]
    pub fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self::constant(f0);
        for i in 0..N {
            out.g[i] = f1 * self.g[i];
            for k in 0..N {
                out.h[i][k] = f1 * self.h[i][k] + f2 * self.g[i] * self.g[k];
            }
        }
        out
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(self.v.ln(), r, -r * r)
    }

    pub fn ln_1p(self) -> Self {
        let r = 1.0 / (1.0 + self.v);
        self.chain(self.v.ln_1p(), r, -r * r)
    }

    pub fn exp_m1(self) -> Self {
        let e = self.v.exp();
        self.chain(self.v.exp_m1(), e, e)
    }

    /// `expm1(x) / x`, smooth through zero.
    pub fn exprel(self) -> Self {
        let x = self.v;
        if x.abs() < 1e-3 {
            let f0 = 1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0 + x.powi(4) / 120.0;
            let f1 = 0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0;
            let f2 = 1.0 / 3.0 + x / 4.0 + x * x / 10.0;
            self.chain(f0, f1, f2)
        } else {
            let em1 = x.exp_m1();
            let e = x.exp();
            let f0 = em1 / x;
            let f1 = (x * e - em1) / (x * x);
            let f2 = (e * (x * x - 2.0 * x + 2.0) - 2.0) / (x * x * x);
            self.chain(f0, f1, f2)
        }
    }

    pub fn powf(self, p: f64) -> Self {
        let x = self.v;
        let f0 = x.powf(p);
        let f1 = p * x.powf(p - 1.0);
        let f2 = p * (p - 1.0) * x.powf(p - 2.0);
        self.chain(f0, f1, f2)
    }

    /// `self ^ p` for a positive base and a differentiable exponent.
    pub fn powj(self, p: Self) -> Self {
        (p * self.ln()).exp()
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn tanh(self) -> Self {
        let t = self.v.tanh();
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }

    pub fn norm_cdf(self) -> Self {
        let d = special::norm_pdf(self.v);
        self.chain(special::norm_cdf(self.v), d, -self.v * d)
    }

    pub fn ln_norm_cdf(self) -> Self {
        let m = special::mills(self.v);
        self.chain(special::ln_norm_cdf(self.v), m, -m * (self.v + m))
    }

    pub fn norm_inv_cdf(self) -> Self {
        let q = special::norm_inv_cdf(self.v);
        let r = 1.0 / special::norm_pdf(q);
        self.chain(q, r, q * r * r)
    }

    pub fn max_v(self, other: Self) -> Self {
        if self.v >= other.v {
            self
        } else {
            other
        }
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for i in 0..N {
            self.g[i] += o.g[i];
            for k in 0..N {
                self.h[i][k] += o.h[i][k];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for i in 0..N {
            self.g[i] = -self.g[i];
            for k in 0..N {
                self.h[i][k] = -self.h[i][k];
            }
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut out = Self::constant(self.v * o.v);
        for i in 0..N {
            out.g[i] = self.v * o.g[i] + o.v * self.g[i];
            for k in 0..N {
                out.h[i][k] = self.v * o.h[i][k]
                    + o.v * self.h[i][k]
                    + self.g[i] * o.g[k]
                    + o.g[i] * self.g[k];
            }
        }
        out
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, c: f64) -> Self {
        self.v += c;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, c: f64) -> Self {
        self.v -= c;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, c: f64) -> Self {
        self.v *= c;
        for i in 0..N {
            self.g[i] *= c;
            for k in 0..N {
                self.h[i][k] *= c;
            }
        }
        self
    }
}

impl<const N: usize> Div<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        self * (1.0 / c)
    }
}

impl<const N: usize> Add<Jet<N>> for f64 {
    type Output = Jet<N>;
    fn add(self, j: Jet<N>) -> Jet<N> {
        j + self
    }
}

impl<const N: usize> Sub<Jet<N>> for f64 {
    type Output = Jet<N>;
    fn sub(self, j: Jet<N>) -> Jet<N> {
        (-j) + self
    }
}

impl<const N: usize> Mul<Jet<N>> for f64 {
    type Output = Jet<N>;
    fn mul(self, j: Jet<N>) -> Jet<N> {
        j * self
    }
}

impl<const N: usize> Div<Jet<N>> for f64 {
    type Output = Jet<N>;
    fn div(self, j: Jet<N>) -> Jet<N> {
        j.recip() * self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<const N: usize>(x: Jet<N>, y: Jet<N>) -> Jet<N> {
        (x * y).exp() / (1.0 + x * x) + y.powf(2.5) * x.ln_1p() - (x / y).norm_cdf()
    }

    #[test]
    fn jet_matches_finite_differences() {
        let (x0, y0) = (0.4, 1.3);
        let j = f(Jet::<2>::variable(x0, 0), Jet::<2>::variable(y0, 1));
        let plain = |x: f64, y: f64| f(Jet::<0>::constant(x), Jet::<0>::constant(y)).v;
        assert_eq!(j.v, plain(x0, y0));
        let h = 1e-5;
        let gx = (plain(x0 + h, y0) - plain(x0 - h, y0)) / (2.0 * h);
        let gy = (plain(x0, y0 + h) - plain(x0, y0 - h)) / (2.0 * h);
        assert!((j.g[0] - gx).abs() < 1e-8);
        assert!((j.g[1] - gy).abs() < 1e-8);
        let h = 1e-4;
        let hxy = (plain(x0 + h, y0 + h) - plain(x0 + h, y0 - h) - plain(x0 - h, y0 + h)
            + plain(x0 - h, y0 - h))
            / (4.0 * h * h);
        assert!((j.h[0][1] - hxy).abs() < 1e-6);
        assert_eq!(j.h[0][1], j.h[1][0]);
    }

    #[test]
    fn exprel_is_smooth_at_switch() {
        // series branch against the direct formula just inside the switch
        let x = 0.999e-3;
        let a = Jet::<1>::variable(x, 0).exprel();
        let e = x.exp();
        let em1 = x.exp_m1();
        assert!((a.v - em1 / x).abs() < 1e-14);
        assert!((a.g[0] - (x * e - em1) / (x * x)).abs() < 1e-9);
        assert!((a.h[0][0] - (e * (x * x - 2.0 * x + 2.0) - 2.0) / (x * x * x)).abs() < 1e-5);
    }
}
