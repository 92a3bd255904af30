//! Benchmark potential energy surfaces with exact gradients.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest radius at which the lemon slice potential is evaluated.
pub const LEMON_R_MIN: f64 = 1e-8;

/// A potential selected by name, in dimensionless model units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum PotentialSpec {
    /// `cos(7 phi) + 10 (r - 1)^2 + 1/r + 0.05` in polar coordinates of the plane.
    LemonSlice,
    /// Tilted double well in `x`, harmonic in `y`.
    #[serde(rename = "double-well-2d")]
    DoubleWell2D,
    /// `stiffness * x^2 / 2`.
    #[serde(rename = "harmonic-1d")]
    Harmonic1D { stiffness: f64 },
}

impl PotentialSpec {
    pub fn harmonic(stiffness: f64) -> Result<Self> {
        let spec = PotentialSpec::Harmonic1D { stiffness };
        spec.validate()?;
        Ok(spec)
    }

    /// Build from a name and a parameter map, as written in experiment configs.
    pub fn from_parts(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let spec = match name {
            "lemon-slice" => PotentialSpec::LemonSlice,
            "double-well-2d" => PotentialSpec::DoubleWell2D,
            "harmonic-1d" => PotentialSpec::Harmonic1D {
                stiffness: *params
                    .get("stiffness")
                    .ok_or_else(|| Error::invalid("harmonic-1d needs parameter `stiffness`"))?,
            },
            other => return Err(Error::invalid(format!("unknown potential `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            PotentialSpec::LemonSlice => "lemon-slice",
            PotentialSpec::DoubleWell2D => "double-well-2d",
            PotentialSpec::Harmonic1D { .. } => "harmonic-1d",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PotentialSpec::Harmonic1D { stiffness } = self {
            if !(*stiffness > 0.0 && stiffness.is_finite()) {
                return Err(Error::invalid(format!(
                    "harmonic stiffness must be positive, got {stiffness}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            PotentialSpec::LemonSlice | PotentialSpec::DoubleWell2D => 2,
            PotentialSpec::Harmonic1D { .. } => 1,
        }
    }

    fn check_dim(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::invalid(format!(
                "{} expects a {}-dimensional point, got {}",
                self.name(),
                self.dim(),
                point.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, point: &[f64]) -> Result<f64> {
        self.check_dim(point)?;
        match *self {
            PotentialSpec::LemonSlice => {
                let (r, phi) = polar(point[0], point[1])?;
                Ok(lemon_polar(r, phi))
            }
            PotentialSpec::DoubleWell2D => Ok(double_well(point[0], point[1])),
            PotentialSpec::Harmonic1D { stiffness } => Ok(0.5 * stiffness * point[0] * point[0]),
        }
    }

    pub fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(point, &mut out)?;
        Ok(out)
    }

    /// Gradient written into `out` (length `dim`); allocation free.
    #[inline]
    pub fn gradient_into(&self, point: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(point)?;
        match *self {
            PotentialSpec::LemonSlice => {
                let (x, y) = (point[0], point[1]);
                let r = x.hypot(y);
                if r <= LEMON_R_MIN {
                    return Err(Error::Domain(format!("lemon slice evaluated at radius {r:e}")));
                }
                let (c, s) = (x / r, y / r);
                let phi = y.atan2(x);
                let dv_dr = 20.0 * (r - 1.0) - 1.0 / (r * r);
                let dv_dphi = -7.0 * (7.0 * phi).sin();
                out[0] = c * dv_dr - s / r * dv_dphi;
                out[1] = s * dv_dr + c / r * dv_dphi;
            }
            PotentialSpec::DoubleWell2D => {
                let u = point[0] - 2.0;
                out[0] = 6.0 * u * u * u - 17.0 * u + 3.0;
                out[1] = point[1] - 2.0;
            }
            PotentialSpec::Harmonic1D { stiffness } => out[0] = stiffness * point[0],
        }
        Ok(())
    }
}

/// Cartesian to polar, with `phi` in `(-pi, pi]`.
pub fn polar(x: f64, y: f64) -> Result<(f64, f64)> {
    let r = x.hypot(y);
    if r <= LEMON_R_MIN {
        return Err(Error::Domain(format!("radius {r:e} below {LEMON_R_MIN:e}")));
    }
    let mut phi = y.atan2(x);
    if phi <= -PI {
        phi = PI;
    }
    Ok((r, phi))
}

/// Lemon slice potential in polar coordinates.
#[inline]
pub fn lemon_polar(r: f64, phi: f64) -> f64 {
    (7.0 * phi).cos() + 10.0 * (r - 1.0) * (r - 1.0) + 1.0 / r + 0.05
}

#[inline]
fn double_well(x: f64, y: f64) -> f64 {
    let u = x - 2.0;
    let u2 = u * u;
    1.5 * u2 * u2 - 9.0 * u2 + 3.0 * x + 0.5 * u2 + 0.5 * (y - 2.0) * (y - 2.0)
}
