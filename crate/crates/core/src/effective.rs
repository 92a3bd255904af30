//! Euler-Maruyama integration of the effective dynamics on reaction-coordinate
//! space, driven by an interpolated coefficient field.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::km::{CoefficientField, A_FLOOR};
use crate::rng::Stream;
use crate::trajectory::{TrajKind, TrajMeta, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSimConfig {
    pub beta: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub initial_z: Vec<f64>,
    /// Leading steps that are integrated but not recorded.
    #[serde(default)]
    pub burn_in: usize,
}

impl EffectiveSimConfig {
    pub fn new(beta: f64, dt: f64, n_steps: usize, seed: u64, initial_z: Vec<f64>) -> Self {
        Self {
            beta,
            dt,
            n_steps,
            seed,
            initial_z,
            burn_in: 0,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    fn validate(&self, field: &CoefficientField) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if (self.beta - field.beta()).abs() > 1e-12 * field.beta().abs() {
            return Err(Error::invalid(format!(
                "beta {} differs from the field's beta {}",
                self.beta,
                field.beta()
            )));
        }
        if self.n_steps <= self.burn_in {
            return Err(Error::invalid("n_steps must exceed burn_in"));
        }
        if self.initial_z.len() != field.m() {
            return Err(Error::invalid(format!(
                "initial_z has {} components, field has {}",
                self.initial_z.len(),
                field.m()
            )));
        }
        for (k, &z) in self.initial_z.iter().enumerate() {
            if !z.is_finite() {
                return Err(Error::invalid("initial_z must be finite"));
            }
            if let Some((lo, hi)) = field.bounds[k] {
                if z < lo || z > hi {
                    return Err(Error::invalid(format!(
                        "initial_z[{k}] = {z} lies outside the field domain [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Symmetric positive semi-definite square root of a row-major `m x m` matrix.
///
/// Eigenvalues at or below the diffusion floor count as zero, so a field
/// whose diffusion was floored from zero produces no noise.
pub fn psd_sqrt(a: &[f64], m: usize, out: &mut [f64]) {
    match m {
        1 => out[0] = if a[0] <= A_FLOOR { 0.0 } else { a[0].sqrt() },
        2 if a[0] + a[3] <= 2.0 * A_FLOOR => out.iter_mut().for_each(|v| *v = 0.0),
        2 => {
            // sqrt(A) = (A + sqrt(det A) I) / sqrt(tr A + 2 sqrt(det A)) for 2x2 PSD A
            let off = 0.5 * (a[1] + a[2]);
            let det = (a[0] * a[3] - off * off).max(0.0);
            let sd = det.sqrt();
            let t = (a[0] + a[3] + 2.0 * sd).max(0.0).sqrt();
            if t == 0.0 {
                out.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            out[0] = (a[0] + sd) / t;
            out[1] = off / t;
            out[2] = off / t;
            out[3] = (a[3] + sd) / t;
        }
        _ => {
            let mat = DMatrix::from_row_slice(m, m, a);
            let eig = SymmetricEigen::new(0.5 * (&mat + mat.transpose()));
            let vals = eig.eigenvalues.map(|v| if v <= A_FLOOR { 0.0 } else { v.sqrt() });
            let root = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            for l in 0..m {
                for r in 0..m {
                    out[l * m + r] = root[(l, r)];
                }
            }
        }
    }
}

/// Map `z` into `(lower, lower + period]`.
#[inline]
fn wrap_into(z: f64, lower: f64, period: f64) -> f64 {
    let u = (z - lower).rem_euclid(period);
    if u == 0.0 {
        lower + period
    } else {
        lower + u
    }
}

/// Reflect about the violated edge of `[lo, hi]`, clamping if still outside.
#[inline]
fn reflect(z: f64, lo: f64, hi: f64) -> f64 {
    let r = if z < lo {
        2.0 * lo - z
    } else if z > hi {
        2.0 * hi - z
    } else {
        return z;
    };
    r.clamp(lo, hi)
}

/// `Z_{k+1} = Z_k + b(Z_k) dt + sqrt(2 dt / beta) sigma(Z_k) G_k` with
/// `sigma = a^{1/2}`; periodic components wrapped each step and
/// non-periodic components reflected at the sampled domain edges.
pub fn simulate_effective(field: &CoefficientField, cfg: &EffectiveSimConfig) -> Result<Trajectory> {
    cfg.validate(field)?;
    let m = field.m();
    let noise = (2.0 * cfg.dt / cfg.beta).sqrt();
    let mut rng = Stream::new(cfg.seed);
    let mut z = cfg.initial_z.clone();
    for (k, zk) in z.iter_mut().enumerate() {
        if let Some(p) = field.period(k) {
            *zk = wrap_into(*zk, field.lower(k), p);
        }
    }
    let mut b = vec![0.0; m];
    let mut a = vec![0.0; m * m];
    let mut sigma = vec![0.0; m * m];
    let mut g = vec![0.0; m];
    let mut data = Vec::with_capacity((cfg.n_steps - cfg.burn_in) * m);

    for step in 0..cfg.n_steps {
        if step >= cfg.burn_in {
            data.extend_from_slice(&z);
        }
        field.eval_into(&z, &mut b, &mut a).map_err(|e| Error::DomainAtStep {
            step,
            message: e.to_string(),
        })?;
        psd_sqrt(&a, m, &mut sigma);
        rng.fill_normal(&mut g);
        for l in 0..m {
            let mut kick = 0.0;
            for r in 0..m {
                kick += sigma[l * m + r] * g[r];
            }
            let next = z[l] + b[l] * cfg.dt + noise * kick;
            if !next.is_finite() {
                return Err(Error::Diverged { step: step + 1 });
            }
            z[l] = match (field.period(l), field.bounds[l]) {
                (Some(p), _) => wrap_into(next, field.lower(l), p),
                (None, Some((lo, hi))) => reflect(next, lo, hi),
                (None, None) => next,
            };
        }
    }
    let meta = TrajMeta {
        beta: Some(cfg.beta),
        seed: Some(cfg.seed),
        offset: Some(field.source.offset),
        ..TrajMeta::default()
    };
    Ok(Trajectory::new(data, m, cfg.dt, TrajKind::Effective)?.with_meta(meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::km::{interpolate_coefficients, BinnedCoefficients};
    use crate::projection::{GridAxis, RCGrid};
    use std::f64::consts::PI;

    fn field_1d(grid: RCGrid, drift: impl Fn(f64) -> f64, diffusion: impl Fn(f64) -> f64) -> CoefficientField {
        let n = grid.n_bins();
        let centers: Vec<f64> = (0..n).map(|b| grid.center(b)[0]).collect();
        let binned = BinnedCoefficients {
            grid,
            offset: 1e-3,
            beta: 1.0,
            m: 1,
            drift: centers.iter().map(|&c| drift(c)).collect(),
            diffusion: centers.iter().map(|&c| diffusion(c)).collect(),
            counts: vec![1000; n],
            valid: vec![true; n],
        };
        interpolate_coefficients(&binned).unwrap()
    }

    #[test]
    fn zero_field_is_constant() {
        let f = field_1d(RCGrid::uniform(-1.0, 0.5, 4).unwrap(), |_| 0.0, |_| 0.0);
        let t = simulate_effective(&f, &EffectiveSimConfig::new(1.0, 1e-3, 1000, 3, vec![0.3])).unwrap();
        assert!(t.column(0).iter().all(|&z| z == 0.3));
    }

    #[test]
    fn equal_seeds_equal_paths() {
        let f = field_1d(RCGrid::lemon_angle(), |z| (7.0 * z).sin(), |_| 1.0);
        let cfg = EffectiveSimConfig::new(1.0, 1e-3, 5000, 11, vec![0.0]);
        assert_eq!(
            simulate_effective(&f, &cfg).unwrap(),
            simulate_effective(&f, &cfg).unwrap()
        );
    }

    #[test]
    fn periodic_state_stays_in_fundamental_domain() {
        let f = field_1d(RCGrid::lemon_angle(), |_| 50.0, |_| 4.0);
        let t = simulate_effective(&f, &EffectiveSimConfig::new(1.0, 1e-3, 100_000, 2, vec![PI])).unwrap();
        assert!(t.column(0).iter().all(|&z| z > -PI && z <= PI));
    }

    #[test]
    fn reflection_keeps_state_in_domain() {
        let f = field_1d(RCGrid::uniform(0.0, 0.1, 10).unwrap(), |_| 5.0, |_| 1.0);
        let t = simulate_effective(&f, &EffectiveSimConfig::new(1.0, 1e-3, 50_000, 4, vec![0.5])).unwrap();
        assert!(t.column(0).iter().all(|&z| (0.0..=1.0).contains(&z)));
    }

    #[test]
    fn config_checks() {
        let f = field_1d(RCGrid::uniform(0.0, 0.1, 10).unwrap(), |_| 0.0, |_| 1.0);
        assert!(simulate_effective(&f, &EffectiveSimConfig::new(2.0, 1e-3, 10, 1, vec![0.5])).is_err());
        assert!(simulate_effective(&f, &EffectiveSimConfig::new(1.0, 1e-3, 10, 1, vec![1.5])).is_err());
        assert!(simulate_effective(&f, &EffectiveSimConfig::new(1.0, 0.0, 10, 1, vec![0.5])).is_err());
    }

    #[test]
    fn ou_stationary_variance() {
        let grid = RCGrid::new(vec![GridAxis::new(-8.0, 0.1, 160)]).unwrap();
        let f = field_1d(grid, |z| -z, |_| 1.0);
        let t = simulate_effective(&f, &EffectiveSimConfig::new(1.0, 1e-3, 10_000_000, 1, vec![0.0])).unwrap();
        let xs = t.column(0);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = [2.0, 0.5, 0.5, 1.0];
        let mut s = [0.0; 4];
        psd_sqrt(&a, 2, &mut s);
        let sq = [
            s[0] * s[0] + s[1] * s[2],
            s[0] * s[1] + s[1] * s[3],
            s[2] * s[0] + s[3] * s[2],
            s[2] * s[1] + s[3] * s[3],
        ];
        for (x, y) in sq.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
        let a3 = [4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0];
        let mut s3 = [0.0; 9];
        psd_sqrt(&a3, 3, &mut s3);
        let m = DMatrix::from_row_slice(3, 3, &s3);
        let back = &m * &m;
        for l in 0..3 {
            for r in 0..3 {
                assert!((back[(l, r)] - a3[l * 3 + r]).abs() < 1e-10);
            }
        }
    }
}
