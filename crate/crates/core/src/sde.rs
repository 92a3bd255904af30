//! Euler-Maruyama integration of overdamped and underdamped Langevin dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::PotentialSpec;
use crate::rng::Stream;
use crate::trajectory::{TrajKind, TrajMeta, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub beta: f64,
    pub gamma: f64,
    pub dt: f64,
    /// Total number of integration steps, burn-in included.
    pub n_steps: usize,
    pub seed: u64,
    pub initial_state: Vec<f64>,
    /// Leading steps that are integrated but not recorded.
    pub burn_in: usize,
}

impl SimConfig {
    /// Configuration with the default burn-in of 1% of `n_steps`.
    pub fn new(beta: f64, gamma: f64, dt: f64, n_steps: usize, seed: u64, initial_state: Vec<f64>) -> Self {
        Self {
            beta,
            gamma,
            dt,
            n_steps,
            seed,
            initial_state,
            burn_in: n_steps / 100,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_steps <= self.burn_in {
            return Err(Error::invalid(format!(
                "n_steps ({}) must exceed burn_in ({})",
                self.n_steps, self.burn_in
            )));
        }
        Ok(())
    }

    fn meta(&self, spec: &PotentialSpec) -> TrajMeta {
        TrajMeta {
            potential: Some(spec.name().to_string()),
            beta: Some(self.beta),
            gamma: Some(self.gamma),
            seed: Some(self.seed),
            ..TrajMeta::default()
        }
    }
}

fn step_error(step: usize, err: Error) -> Error {
    match err {
        Error::Domain(message) => Error::DomainAtStep { step, message },
        other => other,
    }
}

/// Overdamped Langevin dynamics `dX = -grad V / gamma dt + sqrt(2 / (beta gamma)) dB`.
///
/// Frames `burn_in..n_steps` are recorded, frame `k` being the state after
/// `k` steps.
pub fn simulate_overdamped(spec: &PotentialSpec, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let d = spec.dim();
    if cfg.initial_state.len() != d {
        return Err(Error::invalid(format!(
            "initial state has length {}, potential needs {d}",
            cfg.initial_state.len()
        )));
    }
    spec.value(&cfg.initial_state)?;

    let drift_scale = cfg.dt / cfg.gamma;
    let noise = (2.0 * cfg.dt / (cfg.beta * cfg.gamma)).sqrt();
    let mut rng = Stream::new(cfg.seed);
    let mut x = cfg.initial_state.clone();
    let mut grad = vec![0.0; d];
    let mut data = Vec::with_capacity((cfg.n_steps - cfg.burn_in) * d);

    for k in 0..cfg.n_steps {
        if k >= cfg.burn_in {
            data.extend_from_slice(&x);
        }
        spec.gradient_into(&x, &mut grad).map_err(|e| step_error(k, e))?;
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi += -drift_scale * gi + noise * rng.normal();
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: k + 1 });
        }
    }
    Ok(Trajectory::new(data, d, cfg.dt, TrajKind::Overdamped)?.with_meta(cfg.meta(spec)))
}

/// Underdamped Langevin dynamics; rows hold `(q, p)`.
pub fn simulate_langevin(spec: &PotentialSpec, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let n = spec.dim();
    if cfg.initial_state.len() != 2 * n {
        return Err(Error::invalid(format!(
            "initial state must hold {n} positions and {n} momenta, got {} values",
            cfg.initial_state.len()
        )));
    }
    spec.value(&cfg.initial_state[..n])?;

    let dt = cfg.dt;
    let friction = cfg.gamma * dt;
    let noise = (2.0 * cfg.gamma * dt / cfg.beta).sqrt();
    let mut rng = Stream::new(cfg.seed);
    let mut state = cfg.initial_state.clone();
    let mut grad = vec![0.0; n];
    let mut data = Vec::with_capacity((cfg.n_steps - cfg.burn_in) * 2 * n);

    for k in 0..cfg.n_steps {
        if k >= cfg.burn_in {
            data.extend_from_slice(&state);
        }
        let (q, p) = state.split_at_mut(n);
        spec.gradient_into(q, &mut grad).map_err(|e| step_error(k, e))?;
        for i in 0..n {
            let p_old = p[i];
            q[i] += p_old * dt;
            p[i] = p_old - grad[i] * dt - friction * p_old + noise * rng.normal();
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: k + 1 });
        }
    }
    Ok(Trajectory::new(data, 2 * n, dt, TrajKind::Langevin)?.with_meta(cfg.meta(spec)))
}
