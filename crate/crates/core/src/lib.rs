//! Effective dynamics of diffusion processes on reaction coordinates.
//!
//! The crate simulates overdamped and underdamped Langevin dynamics, projects
//! trajectories onto a reaction coordinate, estimates effective drift and
//! diffusion with finite-offset Kramers-Moyal formulae, re-simulates the
//! effective SDE, and compares slow spectral properties (implied timescales,
//! metastable set probabilities) against full-space Markov state models and
//! finite-difference discretizations of the generator.

pub mod chart;
pub mod config;
pub mod effective;
pub mod error;
pub mod experiment;
pub mod generator;
pub mod io;
pub mod km;
pub mod linalg;
pub mod msm;
pub mod oracles;
pub mod par;
pub mod pcca;
pub mod potentials;
pub mod projection;
pub mod rng;
pub mod sde;
pub mod trajectory;

pub use error::{Error, Result};
pub use km::{BinnedCoefficients, CoefficientField};
pub use par::Exec;
pub use potentials::PotentialSpec;
pub use projection::{GridAxis, MarginalHistogram, RCGrid, ReactionCoordinate};
pub use sde::{simulate_langevin, simulate_overdamped, SimConfig};
pub use trajectory::{TrajKind, TrajMeta, Trajectory};
