//! Experiment configuration: a single JSON document with nested sections,
//! plus the named presets reproducing the lemon slice, Langevin toy and
//! bound-check studies.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generator::NodeLayout;
use crate::km::{offset_steps, DEFAULT_MIN_COUNT};
use crate::oracles::lemon_minima;
use crate::potentials::PotentialSpec;
use crate::projection::{GridAxis, RCGrid, ReactionCoordinate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LemonSlice,
    LangevinToy,
    BoundCheck,
    Custom,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LemonSlice => "lemon-slice",
            ExperimentKind::LangevinToy => "langevin-toy",
            ExperimentKind::BoundCheck => "bound-check",
            ExperimentKind::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "lemon-slice" => ExperimentKind::LemonSlice,
            "langevin-toy" => ExperimentKind::LangevinToy,
            "bound-check" => ExperimentKind::BoundCheck,
            "custom" => ExperimentKind::Custom,
            other => return Err(Error::Config(format!("unknown experiment `{other}`"))),
        })
    }
}

/// Problem size preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Step counts as in the original studies.
    Full,
    /// Step counts divided by ten for quick runs.
    Ci,
}

impl Scale {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Scale::Full),
            "ci" => Ok(Scale::Ci),
            other => Err(Error::Config(format!("unknown scale `{other}` (expected full or ci)"))),
        }
    }

    fn steps(self, n: usize) -> usize {
        match self {
            Scale::Full => n,
            Scale::Ci => n / 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dynamics {
    Overdamped,
    Langevin,
}

impl Dynamics {
    pub fn label(self) -> &'static str {
        match self {
            Dynamics::Overdamped => "overdamped",
            Dynamics::Langevin => "langevin",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    pub dt: f64,
    pub n_steps: usize,
    /// Defaults to 1% of `n_steps`.
    #[serde(default)]
    pub burn_in: Option<usize>,
    /// Positions; Langevin runs start at rest.
    pub initial_state: Vec<f64>,
    /// Full-space data sources; the first one provides the reference model.
    pub sources: Vec<Dynamics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveSettings {
    pub dt: f64,
    pub n_steps: usize,
    /// Defaults to the center of the most populated valid bin.
    #[serde(default)]
    pub initial_z: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsmSettings {
    /// Lag times; the first is the primary lag used for set probabilities.
    pub lags: Vec<f64>,
    /// Number of eigenvalues, the stationary one included.
    pub n_eigen: usize,
    /// Discretization of the full-space reference model; defaults to the
    /// reaction-coordinate binning.
    #[serde(default)]
    pub reference_rc: Option<ReactionCoordinate>,
    #[serde(default)]
    pub reference_grid: Option<RCGrid>,
    pub bootstrap_blocks: usize,
    pub bootstrap_replicas: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicas: usize,
    /// Block length in pairs (time steps).
    pub block_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSettings {
    pub layout: NodeLayout,
    /// Eigenpairs to compute.
    pub n_eigen: usize,
    /// `M` for the eigenvalue bound; zero skips the bound.
    #[serde(default)]
    pub bound_sets: usize,
    /// Defaults to `1 / gamma`.
    #[serde(default)]
    pub eta1: Option<f64>,
    /// Layout axis whose node slices form the level sets of the bound.
    pub level_set_axis: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LargeOffsetSettings {
    /// Number of metastable sets `M`.
    pub sets: usize,
    /// The offset is `factor * t_(M+1)`, rounded to a multiple of `dt`.
    pub factor: f64,
    /// Independent trajectories of the first source pooled into the
    /// estimate, the pipeline's own trajectory included. Escapes from small
    /// metastable sets are rare events, so one trajectory can leave the
    /// estimate dominated by sampling noise.
    #[serde(default = "one")]
    pub trajectories: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub potential: PotentialSpec,
    pub beta: f64,
    /// Friction of the Langevin dynamics; the overdamped dynamics and the
    /// generator use it as the time scale `1 / gamma`.
    pub gamma: f64,
    #[serde(default)]
    pub simulation: Option<SimulationSettings>,
    pub reaction_coordinate: ReactionCoordinate,
    pub grid: RCGrid,
    /// Kramers-Moyal offsets, ascending multiples of `dt`.
    #[serde(default)]
    pub offsets: Vec<f64>,
    #[serde(default = "default_min_count")]
    pub min_count: u64,
    #[serde(default)]
    pub effective: Option<EffectiveSettings>,
    #[serde(default)]
    pub msm: Option<MsmSettings>,
    /// Number of PCCA+ sets; zero skips PCCA+.
    #[serde(default)]
    pub pcca_sets: usize,
    pub bootstrap: BootstrapConfig,
    /// Reaction-coordinate intervals whose probabilities are tabulated.
    #[serde(default)]
    pub intervals: Vec<(f64, f64)>,
    #[serde(default)]
    pub generator: Option<GeneratorSettings>,
    #[serde(default)]
    pub large_offset: Option<LargeOffsetSettings>,
    /// Also write the full-space trajectories (large at full scale).
    #[serde(default)]
    pub save_trajectories: bool,
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_min_count() -> u64 {
    DEFAULT_MIN_COUNT
}

fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidInput(m) | Error::Config(m) => Error::Config(m),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON serialization without `output_dir`, hex encoded.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        // where the results land does not change what is computed
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Named preset at the given scale.
    pub fn preset(kind: ExperimentKind, scale: Scale) -> Result<Self> {
        match kind {
            ExperimentKind::LemonSlice => Ok(lemon_slice(scale)),
            ExperimentKind::LangevinToy => Ok(langevin_toy(scale)),
            ExperimentKind::BoundCheck => Ok(bound_check()),
            ExperimentKind::Custom => Err(Error::Config("the custom experiment needs a config file".into())),
        }
    }

    /// Reject configurations that cannot run; errors are config errors.
    pub fn validate(&self) -> Result<()> {
        self.potential.validate().map_err(config_err)?;
        self.reaction_coordinate.validate().map_err(config_err)?;
        if !(self.beta > 0.0 && self.beta.is_finite() && self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("beta and gamma must be positive".into()));
        }
        if !self.intervals.is_empty() && self.grid.dim() != 1 {
            return Err(Error::Config("intervals need a one-dimensional grid".into()));
        }
        if self.intervals.iter().any(|&(lo, hi)| !(hi > lo)) {
            return Err(Error::Config("intervals must have lo < hi".into()));
        }
        RCGrid::new(self.grid.axes.clone()).map_err(config_err)?;
        if self.grid.dim() != self.reaction_coordinate.m() {
            return Err(Error::Config(format!(
                "grid has {} axes, reaction coordinate has {} components",
                self.grid.dim(),
                self.reaction_coordinate.m()
            )));
        }
        if self.offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("offsets must be strictly ascending".into()));
        }
        if let Some(sim) = &self.simulation {
            if sim.sources.is_empty() {
                return Err(Error::Config("simulation needs at least one source".into()));
            }
            if sim.initial_state.len() != self.potential.dim() {
                return Err(Error::Config(format!(
                    "initial_state has {} values, potential needs {}",
                    sim.initial_state.len(),
                    self.potential.dim()
                )));
            }
            for &s in &self.offsets {
                offset_steps(s, sim.dt).map_err(config_err)?;
            }
            if !self.offsets.is_empty() && self.effective.is_none() {
                return Err(Error::Config("offsets need an `effective` section".into()));
            }
            if self.msm.is_none() {
                return Err(Error::Config("simulations need an `msm` section".into()));
            }
        } else if !self.offsets.is_empty() {
            return Err(Error::Config("offsets need a `simulation` section".into()));
        }
        if let Some(msm) = &self.msm {
            if msm.lags.is_empty() || msm.n_eigen < 2 {
                return Err(Error::Config("msm needs at least one lag and n_eigen >= 2".into()));
            }
            if self.pcca_sets > msm.n_eigen {
                return Err(Error::Config("pcca_sets exceeds msm.n_eigen".into()));
            }
            if msm.reference_rc.is_some() != msm.reference_grid.is_some() {
                return Err(Error::Config("reference_rc and reference_grid go together".into()));
            }
        }
        if let Some(eff) = &self.effective {
            for lag in self.msm.iter().flat_map(|m| &m.lags) {
                offset_steps(*lag, eff.dt).map_err(config_err)?;
            }
        }
        if self.bootstrap.replicas < 2 || self.bootstrap.block_len == 0 {
            return Err(Error::Config(
                "bootstrap needs >= 2 replicas and a positive block length".into(),
            ));
        }
        if let Some(g) = &self.generator {
            if g.bound_sets > g.n_eigen {
                return Err(Error::Config("generator.bound_sets exceeds n_eigen".into()));
            }
        }
        if let Some(lo) = &self.large_offset {
            let n_eigen = self.generator.as_ref().map_or(0, |g| g.n_eigen);
            if self.simulation.is_none() || lo.sets + 1 > n_eigen || lo.trajectories == 0 {
                return Err(Error::Config(
                    "large_offset needs a simulation and a generator with more than `sets` eigenpairs".into(),
                ));
            }
        }
        Ok(())
    }
}

fn lemon_slice(scale: Scale) -> ExperimentConfig {
    let minima = lemon_minima();
    ExperimentConfig {
        experiment: ExperimentKind::LemonSlice,
        potential: PotentialSpec::LemonSlice,
        beta: 1.0,
        gamma: 1.0,
        simulation: Some(SimulationSettings {
            dt: 1e-3,
            n_steps: scale.steps(10_000_000),
            burn_in: None,
            initial_state: vec![1.0, 0.0],
            sources: vec![Dynamics::Overdamped],
        }),
        reaction_coordinate: ReactionCoordinate::polar_angle(),
        grid: RCGrid::lemon_angle(),
        offsets: vec![1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1, 0.2, 0.5, 1.0],
        min_count: DEFAULT_MIN_COUNT,
        effective: Some(EffectiveSettings {
            dt: 1e-3,
            n_steps: scale.steps(10_000_000),
            initial_z: Some(vec![minima[0]]),
        }),
        msm: Some(MsmSettings {
            lags: vec![0.1],
            n_eigen: 8,
            reference_rc: Some(ReactionCoordinate::select(vec![0, 1])),
            reference_grid: Some(
                RCGrid::new(vec![GridAxis::new(-2.6, 0.1, 52), GridAxis::new(-2.6, 0.1, 52)]).expect("valid grid"),
            ),
            bootstrap_blocks: 20,
            bootstrap_replicas: 50,
        }),
        pcca_sets: 7,
        bootstrap: BootstrapConfig {
            replicas: 100,
            block_len: 2000,
        },
        intervals: minima.iter().map(|z| (z - 0.25, z + 0.25)).collect(),
        generator: None,
        large_offset: None,
        save_trajectories: false,
        output_dir: PathBuf::from("results/lemon-slice"),
        seed: 20180601,
    }
}

fn langevin_toy(scale: Scale) -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::LangevinToy,
        potential: PotentialSpec::DoubleWell2D,
        beta: 0.4,
        gamma: 10.0,
        simulation: Some(SimulationSettings {
            dt: 1e-2,
            n_steps: scale.steps(10_000_000),
            burn_in: None,
            initial_state: vec![0.3, 2.0],
            sources: vec![Dynamics::Overdamped, Dynamics::Langevin],
        }),
        reaction_coordinate: ReactionCoordinate::select(vec![0]),
        grid: RCGrid::uniform(-0.4, 0.2, 24).expect("valid grid"),
        offsets: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
        min_count: DEFAULT_MIN_COUNT,
        effective: Some(EffectiveSettings {
            dt: 1e-2,
            n_steps: scale.steps(10_000_000),
            initial_z: Some(vec![0.3]),
        }),
        msm: Some(MsmSettings {
            lags: vec![1.0],
            n_eigen: 3,
            reference_rc: None,
            reference_grid: None,
            bootstrap_blocks: 20,
            bootstrap_replicas: 50,
        }),
        pcca_sets: 2,
        bootstrap: BootstrapConfig {
            replicas: 100,
            block_len: 6000,
        },
        intervals: Vec::new(),
        generator: Some(GeneratorSettings {
            layout: NodeLayout::double_well(120, 120),
            n_eigen: 4,
            bound_sets: 0,
            eta1: None,
            level_set_axis: 0,
        }),
        large_offset: Some(LargeOffsetSettings {
            sets: 2,
            factor: 10.0,
            trajectories: 5,
        }),
        save_trajectories: false,
        output_dir: PathBuf::from("results/langevin-toy"),
        seed: 20180602,
    }
}

fn bound_check() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::BoundCheck,
        potential: PotentialSpec::LemonSlice,
        beta: 1.0,
        gamma: 1.0,
        simulation: None,
        reaction_coordinate: ReactionCoordinate::polar_angle(),
        grid: RCGrid::lemon_angle(),
        offsets: Vec::new(),
        min_count: DEFAULT_MIN_COUNT,
        effective: None,
        msm: None,
        pcca_sets: 0,
        bootstrap: BootstrapConfig {
            replicas: 100,
            block_len: 1000,
        },
        intervals: Vec::new(),
        generator: Some(GeneratorSettings {
            layout: NodeLayout::lemon_slice(200),
            n_eigen: 9,
            bound_sets: 7,
            eta1: None,
            level_set_axis: 1,
        }),
        large_offset: None,
        save_trajectories: false,
        output_dir: PathBuf::from("results/bound-check"),
        seed: 20180603,
    }
}
