//! Bivariate copula families: CDFs, conditional distributions and their
//! mixed partial derivatives, Archimedean generators, Kendall's tau, and
//! pair sampling.
//!
//! Every family's conditional distribution `h(u, v) = dC/dv` is written once
//! in closed form over [`Jet`] numbers, so the same expression yields plain
//! values and exact partial derivatives in `(u, v, theta)`.

mod sample;

pub use sample::{copula_sample, sample_pair, uniform_open};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::quad::integrate;
use crate::roots::brent;
use crate::special::{norm_cdf, norm_inv_cdf};

/// Inputs to copula derivative evaluation are clamped into `[EPS, 1 - EPS]`.
pub const PROB_EPS: f64 = 1e-14;
/// Smallest magnitude allowed for the Frank parameter when mapped from the
/// unconstrained scale.
pub const FRANK_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaKind {
    Normal,
    Clayton,
    Joe,
    Frank,
    Gumbel,
    Amh,
}

impl CopulaKind {
    pub const ALL: [CopulaKind; 6] = [
        CopulaKind::Normal,
        CopulaKind::Clayton,
        CopulaKind::Joe,
        CopulaKind::Frank,
        CopulaKind::Gumbel,
        CopulaKind::Amh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CopulaKind::Normal => "normal",
            CopulaKind::Clayton => "clayton",
            CopulaKind::Joe => "joe",
            CopulaKind::Frank => "frank",
            CopulaKind::Gumbel => "gumbel",
            CopulaKind::Amh => "amh",
        }
    }

    pub fn is_archimedean(self) -> bool {
        self != CopulaKind::Normal
    }

    pub fn validate(self, theta: f64) -> Result<()> {
        let ok = theta.is_finite()
            && match self {
                CopulaKind::Normal => theta > -1.0 && theta < 1.0,
                CopulaKind::Clayton => theta > 0.0,
                CopulaKind::Joe => theta > 1.0,
                CopulaKind::Frank => theta != 0.0,
                CopulaKind::Gumbel => theta >= 1.0,
                CopulaKind::Amh => (-1.0..=1.0).contains(&theta),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("theta = {theta} outside the {} parameter space", self.name())))
        }
    }

    /// Map from the unconstrained scale used by the optimizer.
    pub fn theta_from_unconstrained(self, t: f64) -> f64 {
        self.link_jet(Jet::<0>::constant(t)).v
    }

    pub fn theta_to_unconstrained(self, theta: f64) -> f64 {
        match self {
            CopulaKind::Clayton => theta.ln(),
            CopulaKind::Joe | CopulaKind::Gumbel => (theta - 1.0).ln(),
            CopulaKind::Frank => {
                if theta.abs() < FRANK_GUARD {
                    FRANK_GUARD.copysign(if theta == 0.0 { 1.0 } else { theta })
                } else {
                    theta
                }
            }
            CopulaKind::Amh | CopulaKind::Normal => theta.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh(),
        }
    }

    /// The unconstrained-to-natural link applied to a jet.
    pub fn link_jet<const N: usize>(self, t: Jet<N>) -> Jet<N> {
        match self {
            CopulaKind::Clayton => t.exp(),
            CopulaKind::Joe | CopulaKind::Gumbel => t.exp() + 1.0,
            CopulaKind::Frank => {
                if t.v.abs() < FRANK_GUARD {
                    Jet::constant(FRANK_GUARD.copysign(if t.v == 0.0 { 1.0 } else { t.v }))
                } else {
                    t
                }
            }
            CopulaKind::Amh | CopulaKind::Normal => t.tanh(),
        }
    }

    /// Parameter value at (or nearest to) independence on the unconstrained scale.
    pub fn independence_unconstrained(self) -> f64 {
        match self {
            CopulaKind::Frank => FRANK_GUARD,
            CopulaKind::Amh | CopulaKind::Normal => 0.0,
            // boundary families: start at tau = 0.1
            _ => self.theta_to_unconstrained(tau_to_theta(self, 0.1).unwrap_or(1.5)),
        }
    }

    /// Range of Kendall's tau attainable by the family.
    pub fn tau_range(self) -> (f64, f64) {
        match self {
            CopulaKind::Normal | CopulaKind::Frank => (-1.0, 1.0),
            CopulaKind::Clayton | CopulaKind::Joe | CopulaKind::Gumbel => (0.0, 1.0),
            CopulaKind::Amh => (AMH_TAU_MIN, 1.0 / 3.0),
        }
    }
}

const AMH_TAU_MIN: f64 = -0.181_725_815_240_008_6;

impl std::str::FromStr for CopulaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CopulaKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Parse(format!("unknown copula family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaFamily {
    pub kind: CopulaKind,
    pub theta: f64,
}

impl CopulaFamily {
    pub fn new(kind: CopulaKind, theta: f64) -> Result<Self> {
        kind.validate(theta)?;
        Ok(Self { kind, theta })
    }

    pub fn from_unconstrained(kind: CopulaKind, t: f64) -> Self {
        Self { kind, theta: kind.theta_from_unconstrained(t) }
    }

    pub fn from_tau(kind: CopulaKind, tau: f64) -> Result<Self> {
        Ok(Self { kind, theta: tau_to_theta(kind, tau)? })
    }

    pub fn theta_unconstrained(&self) -> f64 {
        self.kind.theta_to_unconstrained(self.theta)
    }
}

/// All partials of `C` needed by the likelihood: first and second partials
/// of the conditional distribution `C_v` in `(u, v, theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaDerivs {
    pub c: f64,
    pub dv: f64,
    pub duv: f64,
    pub dvv: f64,
    pub du2dv: f64,
    pub duvv: f64,
    pub dvvv: f64,
    pub dtheta_dv: f64,
    pub dtheta_duv: f64,
    pub dtheta_dvv: f64,
    pub dtheta2_dv: f64,
    /// Set when an input had to be clamped into `[PROB_EPS, 1 - PROB_EPS]`.
    pub clamped: bool,
}

/// `log(exp(a) + exp(b) - exp(c))` without overflow when `a` or `b` is large.
fn log_sum_exp_minus<const N: usize>(a: Jet<N>, b: Jet<N>, c: Jet<N>) -> Jet<N> {
    let m = a.max_v(b);
    m + ((a - m).exp() + (b - m).exp() - (c - m).exp()).ln()
}

/// Conditional distribution `h(u, v) = dC(u, v)/dv = P(U <= u | V = v)`.
pub fn conditional_jet<const N: usize>(kind: CopulaKind, u: Jet<N>, v: Jet<N>, theta: Jet<N>) -> Jet<N> {
    match kind {
        CopulaKind::Clayton => {
            let lv = v.ln();
            let lw = log_sum_exp_minus(-(theta * u.ln()), -(theta * lv), Jet::constant(0.0));
            (lv * (-(theta + 1.0)) - lw * (theta.recip() + 1.0)).exp()
        }
        CopulaKind::Gumbel => {
            let lu = (-u.ln()).ln();
            let lnv = -v.ln();
            let lv = lnv.ln();
            let la = theta * lu;
            let lb = theta * lv;
            let m = la.max_v(lb);
            let ls = m + ((la - m).exp() + (lb - m).exp()).ln();
            let s_pow = (ls / theta).exp();
            (-s_pow + ls * (theta.recip() - 1.0) + lv * (theta - 1.0) + lnv).exp()
        }
        CopulaKind::Frank => {
            let a = -(u * (-(theta * u)).exprel());
            let b = (-(theta * v)).exp_m1();
            let c = -(-theta).exprel();
            (b + 1.0) * a / (c + a * b)
        }
        CopulaKind::Joe => {
            let lub = (-u).ln_1p();
            let lvb = (-v).ln_1p();
            let oa = -(theta * lub).exp_m1();
            let ob = -(theta * lvb).exp_m1();
            let ls = (-(oa * ob)).ln_1p();
            (ls * (theta.recip() - 1.0) + lvb * (theta - 1.0) + oa.ln()).exp()
        }
        CopulaKind::Amh => {
            let ub = 1.0 - u;
            let d = 1.0 - theta * ub * (1.0 - v);
            u * (1.0 - theta * ub) / (d * d)
        }
        CopulaKind::Normal => {
            let x = u.norm_inv_cdf();
            let y = v.norm_inv_cdf();
            let s = (1.0 - theta * theta).sqrt();
            ((x - theta * y) / s).norm_cdf()
        }
    }
}

fn clamp_prob(x: f64) -> (f64, bool) {
    let c = x.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (c, c != x)
}

fn check_unit(u: f64, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("copula arguments ({u}, {v}) outside [0, 1]^2")));
    }
    Ok(())
}

/// Copula CDF `C_theta(u, v)`.
pub fn copula_cdf(f: &CopulaFamily, u: f64, v: f64) -> Result<f64> {
    check_unit(u, v)?;
    if u == 0.0 || v == 0.0 {
        return Ok(0.0);
    }
    if u == 1.0 {
        return Ok(v);
    }
    if v == 1.0 {
        return Ok(u);
    }
    let th = f.theta;
    let c = match f.kind {
        CopulaKind::Clayton => {
            let lw = log_sum_exp_minus(
                Jet::<0>::constant(-th * u.ln()),
                Jet::constant(-th * v.ln()),
                Jet::constant(0.0),
            );
            (-lw.v / th).exp()
        }
        CopulaKind::Gumbel => {
            let s = (-u.ln()).powf(th) + (-v.ln()).powf(th);
            (-s.powf(1.0 / th)).exp()
        }
        CopulaKind::Frank => {
            let a = -u * Jet::<0>::constant(-th * u).exprel().v;
            let b = (-th * v).exp_m1();
            let c = -Jet::<0>::constant(-th).exprel().v;
            -(a * b / c).ln_1p() / th
        }
        CopulaKind::Joe => {
            let oa = -(th * (-u).ln_1p()).exp_m1();
            let ob = -(th * (-v).ln_1p()).exp_m1();
            -((-(oa * ob)).ln_1p() / th).exp_m1()
        }
        CopulaKind::Amh => u * v / (1.0 - th * (1.0 - u) * (1.0 - v)),
        CopulaKind::Normal => {
            // C(u, v) = int_0^v h(u, s) ds
            let x = norm_inv_cdf(u);
            let s = (1.0 - th * th).sqrt();
            integrate(|t| norm_cdf((x - th * norm_inv_cdf(t)) / s), 0.0, v, 1e-15)
        }
    };
    Ok(c.clamp(0.0, u.min(v)))
}

/// Conditional distribution value `dC/dv` at clamped arguments, rounded into `[0, 1]`.
pub fn copula_conditional(f: &CopulaFamily, u: f64, v: f64) -> f64 {
    let (u, _) = clamp_prob(u);
    let (v, _) = clamp_prob(v);
    conditional_jet(f.kind, Jet::<0>::constant(u), Jet::constant(v), Jet::constant(f.theta)).v.clamp(0.0, 1.0)
}

/// Copula density `d2C/dudv`.
pub fn copula_density(f: &CopulaFamily, u: f64, v: f64) -> f64 {
    let (u, _) = clamp_prob(u);
    let (v, _) = clamp_prob(v);
    conditional_jet(f.kind, Jet::<1>::variable(u, 0), Jet::constant(v), Jet::constant(f.theta)).g[0]
}

pub fn copula_derivs(f: &CopulaFamily, u: f64, v: f64) -> Result<CopulaDerivs> {
    check_unit(u, v)?;
    let (uc, cu) = clamp_prob(u);
    let (vc, cv) = clamp_prob(v);
    let h = conditional_jet(
        f.kind,
        Jet::<3>::variable(uc, 0),
        Jet::variable(vc, 1),
        Jet::variable(f.theta, 2),
    );
    Ok(CopulaDerivs {
        c: copula_cdf(f, u, v)?,
        dv: h.v,
        duv: h.g[0],
        dvv: h.g[1],
        du2dv: h.h[0][0],
        duvv: h.h[0][1],
        dvvv: h.h[1][1],
        dtheta_dv: h.g[2],
        dtheta_duv: h.h[0][2],
        dtheta_dvv: h.h[1][2],
        dtheta2_dv: h.h[2][2],
        clamped: cu || cv,
    })
}

fn require_archimedean(f: &CopulaFamily) -> Result<()> {
    if f.kind.is_archimedean() {
        Ok(())
    } else {
        Err(Error::UnsupportedGenerator(f.kind.name()))
    }
}

fn check_generator_arg(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("generator argument {t} outside (0, 1]")))
    }
}

/// Archimedean generator `phi(t)` with `phi(C(u, v)) = phi(u) + phi(v)`.
pub fn generator(f: &CopulaFamily, t: f64) -> Result<f64> {
    require_archimedean(f)?;
    check_generator_arg(t)?;
    let th = f.theta;
    Ok(match f.kind {
        CopulaKind::Clayton => (t.powf(-th) - 1.0) / th,
        CopulaKind::Joe => -(-(1.0 - t).powf(th)).ln_1p(),
        CopulaKind::Frank => -((-th * t).exp_m1() / (-th).exp_m1()).ln(),
        CopulaKind::Gumbel => (-t.ln()).powf(th),
        CopulaKind::Amh => ((1.0 - th * (1.0 - t)) / t).ln(),
        CopulaKind::Normal => unreachable!(),
    })
}

pub fn generator_deriv(f: &CopulaFamily, t: f64) -> Result<f64> {
    require_archimedean(f)?;
    check_generator_arg(t)?;
    let th = f.theta;
    Ok(match f.kind {
        CopulaKind::Clayton => -t.powf(-th - 1.0),
        CopulaKind::Joe => {
            let a = (1.0 - t).powf(th);
            -th * (1.0 - t).powf(th - 1.0) / (1.0 - a)
        }
        CopulaKind::Frank => th * (-th * t).exp() / (-th * t).exp_m1(),
        CopulaKind::Gumbel => -th * (-t.ln()).powf(th - 1.0) / t,
        CopulaKind::Amh => th / (1.0 - th * (1.0 - t)) - 1.0 / t,
        CopulaKind::Normal => unreachable!(),
    })
}

pub fn generator_inverse(f: &CopulaFamily, s: f64) -> Result<f64> {
    require_archimedean(f)?;
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("generator inverse argument {s} must be >= 0")));
    }
    let th = f.theta;
    Ok(match f.kind {
        CopulaKind::Clayton => (1.0 + th * s).powf(-1.0 / th),
        CopulaKind::Joe => 1.0 - (-(-s).exp_m1()).powf(1.0 / th),
        CopulaKind::Frank => -((-s).exp() * (-th).exp_m1()).ln_1p() / th,
        CopulaKind::Gumbel => (-s.powf(1.0 / th)).exp(),
        CopulaKind::Amh => (1.0 - th) / (s.exp() - th),
        CopulaKind::Normal => unreachable!(),
    })
}

/// Kendall's tau from the generator integral `1 + 4 int_0^1 phi / phi' dt`.
pub fn kendall_tau_numeric(f: &CopulaFamily) -> Result<f64> {
    require_archimedean(f)?;
    let ratio = |t: f64| {
        let d = generator_deriv(f, t).unwrap_or(f64::NAN);
        let r = generator(f, t).unwrap_or(f64::NAN) / d;
        if r.is_finite() {
            r
        } else {
            0.0
        }
    };
    Ok(1.0 + 4.0 * integrate(ratio, 0.0, 1.0, 1e-13))
}

fn debye1(x: f64) -> f64 {
    let f = |t: f64| if t == 0.0 { 1.0 } else { t / t.exp_m1() };
    integrate(f, 0.0, x, 1e-14) / x
}

/// Kendall's tau implied by the family and its parameter.
pub fn kendall_tau(f: &CopulaFamily) -> Result<f64> {
    f.kind.validate(f.theta)?;
    let th = f.theta;
    Ok(match f.kind {
        CopulaKind::Normal => 2.0 / std::f64::consts::PI * th.asin(),
        CopulaKind::Clayton => th / (th + 2.0),
        CopulaKind::Gumbel => 1.0 - 1.0 / th,
        CopulaKind::Frank => {
            if th.abs() < 1e-4 {
                th / 9.0
            } else {
                1.0 - 4.0 / th * (1.0 - debye1(th))
            }
        }
        CopulaKind::Amh => {
            if th.abs() < 1e-6 {
                2.0 * th / 9.0
            } else if th == 1.0 {
                1.0 / 3.0
            } else {
                1.0 - 2.0 * (th + (1.0 - th).powi(2) * (-th).ln_1p()) / (3.0 * th * th)
            }
        }
        CopulaKind::Joe => kendall_tau_numeric(f)?,
    })
}

/// Invert Kendall's tau to the family parameter.
pub fn tau_to_theta(kind: CopulaKind, tau: f64) -> Result<f64> {
    let (lo, hi) = kind.tau_range();
    let inside = match kind {
        CopulaKind::Amh => tau >= lo && tau < hi,
        CopulaKind::Gumbel => tau >= lo && tau < hi,
        _ => tau > lo && tau < hi,
    };
    if !inside || (kind == CopulaKind::Frank && tau == 0.0) {
        return Err(Error::Domain(format!("tau = {tau} not attainable by the {} copula", kind.name())));
    }
    match kind {
        CopulaKind::Normal => return Ok((std::f64::consts::FRAC_PI_2 * tau).sin()),
        CopulaKind::Clayton => return Ok(2.0 * tau / (1.0 - tau)),
        CopulaKind::Gumbel => return Ok(1.0 / (1.0 - tau)),
        _ => {}
    }
    let tau_of = |theta: f64| kendall_tau(&CopulaFamily { kind, theta }).unwrap_or(f64::NAN) - tau;
    match kind {
        CopulaKind::Amh => brent(tau_of, -1.0, 1.0 - 1e-12, 1e-12),
        CopulaKind::Frank => {
            let (a, b) = if tau > 0.0 { (1e-8, 5000.0) } else { (-5000.0, -1e-8) };
            brent(tau_of, a, b, 1e-10)
        }
        CopulaKind::Joe => {
            // search on log(theta - 1) for conditioning
            let t = brent(|s: f64| tau_of(1.0 + s.exp()), -30.0, 8.0, 1e-12)?;
            Ok(1.0 + t.exp())
        }
        _ => unreachable!(),
    }
}
