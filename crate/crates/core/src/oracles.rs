//! Closed-form references: lemon slice effective coefficients and
//! finite-offset Kramers-Moyal moments of the Ornstein-Uhlenbeck process.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "subdivision limit reached on [{a}, {b}] (residual {delta:e})"
        )));
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Integrate with a relative tolerance: a coarse pass fixes the scale.
fn integrate_rel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    // composite Simpson on 64 panels for the scale estimate
    let n = 64;
    let h = (b - a) / n as f64;
    let scale: f64 = (0..n)
        .map(|i| {
            let x0 = a + i as f64 * h;
            h / 6.0 * (f(x0).abs() + 4.0 * f(x0 + 0.5 * h).abs() + f(x0 + h).abs())
        })
        .sum();
    if scale == 0.0 {
        return Ok(0.0);
    }
    adaptive_simpson(f, a, b, rel_tol * scale)
}

/// Radial integration range used for the lemon slice constants.
pub const LEMON_RADIAL_RANGE: (f64, f64) = (1e-8, 8.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemonSliceConstants {
    pub c1: f64,
    pub c2: f64,
    pub interval: (f64, f64),
    pub rel_tol: f64,
}

impl LemonSliceConstants {
    pub fn ratio(&self) -> f64 {
        self.c1 / self.c2
    }
}

#[inline]
fn radial_weight(r: f64) -> f64 {
    let e = -10.0 * (r - 1.0) * (r - 1.0) - 1.0 / r;
    if e < -690.0 {
        0.0
    } else {
        e.exp()
    }
}

pub fn c1_integrand(r: f64) -> f64 {
    radial_weight(r) / r
}

pub fn c2_integrand(r: f64) -> f64 {
    r * radial_weight(r)
}

/// Radial constants `C1 = int exp(-10(r-1)^2 - 1/r) / r dr` and
/// `C2 = int r exp(-10(r-1)^2 - 1/r) dr` at inverse temperature 1.
pub fn lemon_slice_constants(rel_tol: f64) -> Result<LemonSliceConstants> {
    if !(1e-14..=1e-6).contains(&rel_tol) {
        return Err(Error::invalid(format!("rel_tol {rel_tol:e} outside [1e-14, 1e-6]")));
    }
    let (a, b) = LEMON_RADIAL_RANGE;
    let c1 = integrate_rel(&c1_integrand, a, b, rel_tol)?;
    let c2 = integrate_rel(&c2_integrand, a, b, rel_tol)?;
    Ok(LemonSliceConstants {
        c1,
        c2,
        interval: (a, b),
        rel_tol,
    })
}

/// Exact effective `(drift, diffusion)` of the lemon slice on the polar angle.
pub fn lemon_slice_effective(z: f64, consts: &LemonSliceConstants) -> (f64, f64) {
    let ratio = consts.ratio();
    (7.0 * ratio * (7.0 * z).sin(), ratio)
}

/// Normalized angular marginal of the lemon slice, `exp(-beta cos 7z) / Z`.
#[derive(Clone, Debug)]
pub struct LemonMarginal {
    pub beta: f64,
    norm: f64,
}

impl LemonMarginal {
    pub fn new(beta: f64) -> Result<Self> {
        let f = |z: f64| (-beta * (7.0 * z).cos()).exp();
        let norm = integrate_rel(&f, -PI, PI, 1e-12)?;
        Ok(Self { beta, norm })
    }

    pub fn density(&self, z: f64) -> f64 {
        (-self.beta * (7.0 * z).cos()).exp() / self.norm
    }

    /// Mass of the arc `[lo, hi]`, which may extend past the seam.
    pub fn mass(&self, lo: f64, hi: f64) -> Result<f64> {
        let f = |z: f64| self.density(z);
        integrate_rel(&f, lo, hi, 1e-12)
    }

    /// `nu`-weighted average of `g` over `[lo, hi]`.
    pub fn average<G: Fn(f64) -> f64>(&self, g: G, lo: f64, hi: f64) -> Result<f64> {
        let num = adaptive_simpson(&|z: f64| g(z) * self.density(z), lo, hi, 1e-13)?;
        Ok(num / self.mass(lo, hi)?)
    }
}

/// Centers of the seven lemon slice minima, `-pi + 2 pi k / 7`.
pub fn lemon_minima() -> Vec<f64> {
    (0..7).map(|k| -PI + 2.0 * PI * k as f64 / 7.0).collect()
}

/// Finite-offset Kramers-Moyal `(drift, diffusion)` of `dX = -theta X dt + sqrt(2/beta) dB`
/// conditioned on `X_0 = z`.
pub fn ou_km_reference(theta: f64, beta: f64, s: f64, z: f64) -> (f64, f64) {
    let decay = (-theta * s).exp();
    let drift = (decay - 1.0) * z / s;
    let var = -(-2.0 * theta * s).exp_m1() / (beta * theta);
    let diffusion = beta / (2.0 * s) * ((decay - 1.0).powi(2) * z * z + var);
    (drift, diffusion)
}

/// As [`ou_km_reference`], averaged over starting points with the given
/// first two moments; exact because the moments are polynomial in `z`.
pub fn ou_km_reference_moments(theta: f64, beta: f64, s: f64, mean_z: f64, mean_z2: f64) -> (f64, f64) {
    let decay = (-theta * s).exp();
    let drift = (decay - 1.0) * mean_z / s;
    let var = -(-2.0 * theta * s).exp_m1() / (beta * theta);
    let diffusion = beta / (2.0 * s) * ((decay - 1.0).powi(2) * mean_z2 + var);
    (drift, diffusion)
}
