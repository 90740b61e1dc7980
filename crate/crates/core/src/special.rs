//! Scalar special functions shared across the crate: standard normal
//! helpers, polygamma and the regularized lower incomplete gamma function
//! together with its derivatives in both arguments.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{digamma, gamma_lr, gamma_ur, ln_gamma};

use crate::jet::Jet;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn norm_inv_cdf(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// `phi(x) / Phi(x)`, accurate far into the left tail.
pub fn mills(x: f64) -> f64 {
    if x > -30.0 {
        norm_pdf(x) / norm_cdf(x)
    } else {
        // Laplace continued fraction for Phi(x) / phi(x) at negative x.
        mills_cf(x)
    }
}

fn mills_cf(x: f64) -> f64 {
    let t = -x;
    let mut acc = t;
    for k in (1..=60).rev() {
        acc = t + k as f64 / acc;
    }
    acc
}

pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        -0.5 * x * x - LN_SQRT_2PI - mills(x).ln()
    }
}

/// Derivative of `mills` with respect to its argument.
pub fn mills_deriv(x: f64) -> f64 {
    let m = mills(x);
    -m * (x + m)
}

pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + x2 / x * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// Regularized lower incomplete gamma `P(a, x)` with first and second
/// partial derivatives in the shape `a` and the argument `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPDerivs {
    pub p: f64,
    pub da: f64,
    pub dx: f64,
    pub daa: f64,
    pub dax: f64,
    pub dxx: f64,
}

pub fn gamma_p_derivs(a: f64, x: f64) -> GammaPDerivs {
    if x <= 0.0 {
        return GammaPDerivs { p: 0.0, da: 0.0, dx: 0.0, daa: 0.0, dax: 0.0, dxx: 0.0 };
    }
    let p = gamma_lr(a, x);
    let ln_x = x.ln();
    let dens = ((a - 1.0) * ln_x - x - ln_gamma(a)).exp();
    let dx = dens;
    let dxx = dens * ((a - 1.0) / x - 1.0);
    let dax = dens * (ln_x - digamma(a));

    if x > a + 1.0 {
        // upper tail: differentiate Q = 1 - P directly so the small result keeps its relative precision
        let q = gamma_q_shape_jet(a, x);
        return GammaPDerivs { p, da: -q.g[0], dx, daa: -q.h[0][0], dax, dxx };
    }

    // P(a, x) = sum_n exp((a + n) ln x - x - lnGamma(a + n + 1)); differentiate termwise.
    let (mut da, mut daa) = (0.0, 0.0);
    if x < 5000.0 {
        let mut ln_t = a * ln_x - x - ln_gamma(a + 1.0);
        let mut psi = digamma(a) + 1.0 / a;
        let mut psi1 = trigamma(a) - 1.0 / (a * a);
        let mut sum = 0.0;
        let mut n = 0usize;
        loop {
            let t = ln_t.exp();
            let d = ln_x - psi;
            sum += t;
            da += t * d;
            daa += t * (d * d - psi1);
            n += 1;
            let an = a + n as f64;
            ln_t += ln_x - an.ln();
            psi += 1.0 / an;
            psi1 -= 1.0 / (an * an);
            if (an > x && ln_t.exp() * (1.0 + d.abs() + d * d + psi1) < 1e-17 * sum.max(1e-300))
                || n > 20_000
            {
                break;
            }
        }
    }
    GammaPDerivs { p, da, dx, daa, dax, dxx }
}

/// Upper regularized gamma `Q(a, x)` as a jet in `a`, from the Legendre continued
/// fraction evaluated by the modified Lentz method. Converges quickly for `x > a + 1`.
fn gamma_q_shape_jet(a: f64, x: f64) -> Jet<1> {
    const TINY: f64 = 1e-300;
    let guard = |j: Jet<1>| if j.v.abs() < TINY { Jet::constant(TINY) } else { j };
    let aj = Jet::<1>::variable(a, 0);
    let ln_x = x.ln();
    let prefactor = aj.chain(a * ln_x - x - ln_gamma(a), ln_x - digamma(a), -trigamma(a)).exp();
    let mut b = Jet::constant(x + 1.0) - aj;
    let mut c = Jet::constant(1.0 / TINY);
    let mut d = guard(b).recip();
    let mut h = d;
    for i in 1..1000 {
        let i = i as f64;
        let an = (aj - i) * i;
        b = b + 2.0;
        d = guard(an * d + b).recip();
        c = guard(b + an / c);
        let del = d * c;
        h = h * del;
        if (del.v - 1.0).abs() < 1e-16 && del.g[0].abs() < 1e-16 && del.h[0][0].abs() < 1e-16 {
            break;
        }
    }
    prefactor * h
}

/// Quantile of the Gamma(shape, 1) distribution by safeguarded Newton iteration.
pub fn gamma_quantile(shape: f64, u: f64) -> f64 {
    debug_assert!(u > 0.0 && u < 1.0);
    let upper = u > 0.5;
    let target = if upper { 1.0 - u } else { u };
    // Wilson-Hilferty start.
    let z = norm_inv_cdf(u);
    let c = 1.0 / (9.0 * shape);
    let mut x = shape * (1.0 - c + z * c.sqrt()).powi(3);
    if !(x.is_finite() && x > 0.0) {
        x = if upper { shape + 10.0 * shape.sqrt() } else { (u * (shape * ln_gamma(shape).exp())).powf(1.0 / shape) };
    }
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let f = if upper { target - gamma_ur(shape, x) } else { gamma_lr(shape, x) - target };
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dens = ((shape - 1.0) * x.ln() - x - ln_gamma(shape)).exp();
        let mut next = x - f / dens;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x.max(1e-300) };
        }
        if (next - x).abs() <= 1e-15 * x {
            return next;
        }
        x = next;
    }
    x
}
