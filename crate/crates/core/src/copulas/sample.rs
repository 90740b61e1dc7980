use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{copula_conditional, CopulaFamily, CopulaKind};
use crate::error::Result;
use crate::roots::brent;
use crate::special::{norm_cdf, norm_inv_cdf};

/// Uniform draw on the open interval (0, 1) with 53 bits of resolution.
pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -uniform_open(rng).ln()
}

/// Positive stable variate with Laplace transform `exp(-s^alpha)` (Kanter).
fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = std::f64::consts::PI * uniform_open(rng);
    let e = exp1(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).sin() / e).powf((1.0 - alpha) / alpha);
    a * b
}

/// Draw one pair `(u, v)` from the copula.
pub fn sample_pair<R: Rng + ?Sized>(f: &CopulaFamily, rng: &mut R) -> (f64, f64) {
    let th = f.theta;
    if f.kind == CopulaKind::Gumbel {
        let e1 = exp1(rng);
        let e2 = exp1(rng);
        if th == 1.0 {
            return ((-e1).exp(), (-e2).exp());
        }
        let alpha = 1.0 / th;
        let s = positive_stable(alpha, rng);
        let u = (-(e1 / s).powf(alpha)).exp();
        let v = (-(e2 / s).powf(alpha)).exp();
        return (u, v);
    }
    let v = uniform_open(rng);
    let w = uniform_open(rng);
    let u = match f.kind {
        CopulaKind::Clayton => {
            let t = (w.powf(-th / (1.0 + th)) - 1.0) * v.powf(-th) + 1.0;
            t.powf(-1.0 / th)
        }
        CopulaKind::Frank => {
            let bm1 = (-th * v).exp_m1();
            let a = w * (-th).exp_m1() / (bm1 + 1.0 - w * bm1);
            -a.ln_1p() / th
        }
        CopulaKind::Normal => norm_cdf(th * norm_inv_cdf(v) + (1.0 - th * th).sqrt() * norm_inv_cdf(w)),
        _ => brent(|u| copula_conditional(f, u, v) - w, 0.0, 1.0, 1e-15).unwrap_or(w),
    };
    (u.clamp(f64::MIN_POSITIVE, 1.0), v)
}

/// Draw `n` pairs from the copula using a seeded ChaCha stream.
pub fn copula_sample(f: &CopulaFamily, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    f.kind.validate(f.theta)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sample_pair(f, &mut rng)).collect())
}
