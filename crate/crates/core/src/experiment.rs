//! End-to-end experiment pipeline.
//!
//! Stages, in order:
//!
//! 1. full-space simulation of every configured data source;
//! 2. reference Markov state models (implied timescales, PCCA+ sets,
//!    interval occupancies) from the full trajectories;
//! 3. optional generator discretization: eigenpairs and the eigenvalue bound;
//! 4. per source and offset: Kramers-Moyal estimate with block bootstrap,
//!    effective re-simulation, Markov state model of the effective trajectory;
//! 5. optional large-offset comparison against the spectral asymptotics;
//! 6. tables, charts, `report.json` and finally `manifest.json`.
//!
//! A failing stage for one offset is recorded and its downstream stages are
//! skipped; the other offsets proceed. Every random stream is derived from
//! the master seed by [`split_seed`], so equal configurations give equal
//! output files.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::chart::{write_line_chart, ChartMeta, Series};
use crate::config::{Dynamics, ExperimentConfig, ExperimentKind};
use crate::effective::{simulate_effective, EffectiveSimConfig};
use crate::error::{Error, Result};
use crate::generator::{
    build_generator, large_offset_predict, verify_bound, BoundReport, EigenSolution, GeneratorGrid, LevelSets,
    MetastableSpectralData,
};
use crate::io::{write_trajectory, FORMAT_VERSION};
use crate::km::{
    bootstrap_from_samples, estimate_from_samples, estimate_from_sums, interpolate_coefficients, offset_steps,
    total_sums, BinnedCoefficients, BootstrapResult, BootstrapSettings, KmSamples,
};
use crate::msm::{assign_states, bootstrap_timescales, estimate_msm, interval_occupancy, DiscreteTrajectory};
use crate::oracles::LemonMarginal;
use crate::par::Exec;
use crate::pcca::pcca;
use crate::potentials::PotentialSpec;
use crate::projection::{RCGrid, RcKind, ReactionCoordinate};
use crate::rng::split_seed;
use crate::sde::{simulate_langevin, simulate_overdamped, SimConfig};
use crate::trajectory::Trajectory;

/// Stream families below the master seed.
const STREAM_FULL_SIM: u64 = 1;
const STREAM_REFERENCE_BOOTSTRAP: u64 = 2;
const STREAM_KM_BOOTSTRAP: u64 = 3;
const STREAM_EFFECTIVE_SIM: u64 = 4;
const STREAM_EFFECTIVE_BOOTSTRAP: u64 = 5;

/// Seed of stream `(family, a, b)` under `master`.
pub fn stream_seed(master: u64, family: u64, a: u64, b: u64) -> u64 {
    split_seed(split_seed(split_seed(master, family), a), b)
}

/// Timescales of one Markov state model at each configured lag.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LagTimescales {
    pub lag: f64,
    /// Implied timescales, the stationary (infinite) one first.
    pub timescales: Vec<f64>,
    /// Bootstrap standard deviations; NaN where unavailable.
    pub std: Vec<f64>,
}

/// Crisp PCCA+ sets in canonical order (ascending mean reaction coordinate).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SetSummary {
    pub probabilities: Vec<f64>,
    /// Stationary mean of the first reaction-coordinate component per set
    /// (circular mean on a periodic axis).
    pub centers: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReferenceResult {
    pub source: Dynamics,
    pub lags: Vec<LagTimescales>,
    pub sets: Option<SetSummary>,
    /// Fraction of full-trajectory samples in each configured interval.
    pub interval_occupancy: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OffsetResult {
    pub source: Dynamics,
    pub offset: f64,
    pub coefficients: Option<BinnedCoefficients>,
    pub bootstrap: Option<BootstrapResult>,
    pub lags: Vec<LagTimescales>,
    pub sets: Option<SetSummary>,
    pub interval_occupancy: Option<Vec<f64>>,
    /// Fraction of effective samples outside the grid.
    pub outside_fraction: Option<f64>,
    /// Messages of failed stages; empty when all stages ran.
    pub errors: Vec<String>,
}

impl OffsetResult {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }

    /// Timescale `index` (0 is the stationary one) at the primary lag.
    pub fn timescale(&self, index: usize) -> f64 {
        self.lags
            .first()
            .and_then(|l| l.timescales.get(index))
            .copied()
            .unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorResult {
    pub timescales: Vec<f64>,
    pub bound: Option<BoundReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsymptoticRow {
    pub bin: usize,
    pub center: Vec<f64>,
    pub set: usize,
    pub km_drift: Vec<f64>,
    pub km_diffusion: Vec<f64>,
    pub predicted_drift: Vec<f64>,
    pub predicted_diffusion: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsymptoticResult {
    pub source: Dynamics,
    pub offset: f64,
    /// Independent trajectories pooled into the estimate.
    pub trajectories: usize,
    pub sets: usize,
    pub set_probabilities: Vec<f64>,
    pub rows: Vec<AsymptoticRow>,
    /// `||km - predicted|| / ||predicted||` over all plateau bins and components.
    pub drift_rel_l2: f64,
    pub diffusion_rel_l2: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalReference {
    pub method: String,
    pub intervals: Vec<(f64, f64)>,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageFailure {
    pub stage: String,
    pub source: Option<Dynamics>,
    pub offset: Option<f64>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub references: Vec<ReferenceResult>,
    pub interval_reference: Option<IntervalReference>,
    pub generator: Option<GeneratorResult>,
    pub offsets: Vec<OffsetResult>,
    pub asymptotics: Option<AsymptoticResult>,
    pub failures: Vec<StageFailure>,
}

impl ExperimentReport {
    pub fn reference(&self, source: Dynamics) -> Option<&ReferenceResult> {
        self.references.iter().find(|r| r.source == source)
    }

    /// Offset results of one source, ascending in the offset.
    pub fn offsets_for(&self, source: Dynamics) -> Vec<&OffsetResult> {
        self.offsets.iter().filter(|o| o.source == source).collect()
    }

    pub fn offset(&self, source: Dynamics, s: f64) -> Option<&OffsetResult> {
        self.offsets
            .iter()
            .find(|o| o.source == source && (o.offset - s).abs() <= 1e-9 * s.abs().max(1.0))
    }
}

#[derive(Serialize)]
struct SeedRecord {
    stage: &'static str,
    source: Option<&'static str>,
    offset: Option<f64>,
    lag: Option<f64>,
    seed: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    crate_version: &'static str,
    trajectory_format_version: u32,
    experiment: &'static str,
    config_hash: &'a str,
    parallel: bool,
    master_seed: u64,
    seeds: Vec<SeedRecord>,
    artifacts: Vec<String>,
    failures: &'a [StageFailure],
}

/// Writes files under the output directory and remembers their names.
struct Artifacts {
    dir: PathBuf,
    names: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    fn chart(&mut self, name: &str, series: Vec<Series>, meta: &ChartMeta) -> Result<()> {
        let series: Vec<Series> = series
            .into_iter()
            .filter_map(|s| finite_points(s, meta.log_x))
            .collect();
        if series.is_empty() {
            return Ok(());
        }
        let path = self.path(name);
        write_line_chart(&series, meta, &path)
    }
}

/// Drop points that cannot be drawn; `None` when nothing is left.
fn finite_points(s: Series, log_x: bool) -> Option<Series> {
    let keep: Vec<usize> = (0..s.x.len())
        .filter(|&i| {
            s.x[i].is_finite()
                && (!log_x || s.x[i] > 0.0)
                && s.y[i].is_finite()
                && s.err.as_ref().map_or(true, |e| e[i].is_finite())
        })
        .collect();
    if keep.is_empty() {
        return None;
    }
    let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let mut out = Series::new(s.name.clone(), pick(&s.x), pick(&s.y));
    if let Some(e) = &s.err {
        out = out.with_errors(pick(e));
    }
    Some(out)
}

/// Compact label for offsets and lags in file names.
fn label(v: f64) -> String {
    v.to_string()
}

fn fmt(v: f64) -> String {
    v.to_string()
}

/// Stationary mean of `z(state)` per crisp set, circular on a periodic axis.
fn set_centers(
    crisp: &[usize],
    states: &[usize],
    pi: &[f64],
    n_sets: usize,
    period: Option<f64>,
    z: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let mut acc = vec![(0.0, 0.0, 0.0); n_sets];
    for (k, &state) in states.iter().enumerate() {
        let v = z(state);
        let a = &mut acc[crisp[k]];
        match period {
            Some(p) => {
                let th = 2.0 * PI * v / p;
                a.0 += pi[k] * th.cos();
                a.1 += pi[k] * th.sin();
            }
            None => a.0 += pi[k] * v,
        }
        a.2 += pi[k];
    }
    acc.iter()
        .map(|&(c, s, w)| match period {
            Some(p) => s.atan2(c) * p / (2.0 * PI),
            None if w > 0.0 => c / w,
            None => f64::NAN,
        })
        .collect()
}

/// PCCA+ on `model`, sets reordered by ascending center.
fn canonical_sets(
    model: &crate::msm::SpectralModel,
    n_sets: usize,
    period: Option<f64>,
    z: impl Fn(usize) -> f64,
) -> Result<SetSummary> {
    let part = pcca(model, n_sets)?;
    let centers = set_centers(&part.crisp, &model.states, &model.stationary, n_sets, period, z);
    let mut order: Vec<usize> = (0..n_sets).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]));
    Ok(SetSummary {
        probabilities: order.iter().map(|&i| part.set_probabilities[i]).collect(),
        centers: order.iter().map(|&i| centers[i]).collect(),
    })
}

/// Timescales and bootstrap spread at every lag.
fn msm_timescales(
    exec: Exec,
    dtraj: &DiscreteTrajectory,
    lags: &[f64],
    k: usize,
    blocks: usize,
    replicas: usize,
    seed: impl Fn(usize) -> u64,
) -> Result<(Vec<LagTimescales>, Option<crate::msm::SpectralModel>)> {
    let mut out = Vec::with_capacity(lags.len());
    let mut primary = None;
    for (i, &lag) in lags.iter().enumerate() {
        let steps = offset_steps(lag, dtraj.dt)?;
        let model = estimate_msm(dtraj, steps, k, true)?;
        let mut timescales = model.timescales.clone();
        timescales.resize(k, f64::NAN);
        let std = match bootstrap_timescales(exec, dtraj, steps, k, blocks, replicas, seed(i)) {
            Ok(b) => b
                .std
                .iter()
                .map(|&s| {
                    if timescales[0].is_infinite() && s == 0.0 {
                        0.0
                    } else {
                        s
                    }
                })
                .collect(),
            Err(e) => {
                log::warn!("timescale bootstrap at lag {lag}: {e}");
                vec![f64::NAN; k]
            }
        };
        out.push(LagTimescales { lag, timescales, std });
        if i == 0 {
            primary = Some(model);
        }
    }
    Ok((out, primary))
}

/// Replica `replica` of the full-space simulation of source `index`.
fn simulate_source(cfg: &ExperimentConfig, source: Dynamics, index: usize, replica: usize) -> Result<Trajectory> {
    let sim = cfg.simulation.as_ref().expect("validated");
    let seed = stream_seed(cfg.seed, STREAM_FULL_SIM, index as u64, replica as u64);
    let mut init = sim.initial_state.clone();
    if source == Dynamics::Langevin {
        // start at rest
        init.extend(std::iter::repeat(0.0).take(sim.initial_state.len()));
    }
    let mut sc = SimConfig::new(cfg.beta, cfg.gamma, sim.dt, sim.n_steps, seed, init);
    if let Some(b) = sim.burn_in {
        sc = sc.with_burn_in(b);
    }
    match source {
        Dynamics::Overdamped => simulate_overdamped(&cfg.potential, &sc),
        Dynamics::Langevin => simulate_langevin(&cfg.potential, &sc),
    }
}

/// The reference discretization: its coordinate, grid and a map from state
/// to the first reaction-coordinate component.
fn reference_discretization(cfg: &ExperimentConfig) -> (ReactionCoordinate, RCGrid) {
    let msm = cfg.msm.as_ref().expect("validated");
    match (&msm.reference_rc, &msm.reference_grid) {
        (Some(rc), Some(grid)) => (rc.clone(), grid.clone()),
        _ => (cfg.reaction_coordinate.clone(), cfg.grid.clone()),
    }
}

fn reference_state_z(cfg: &ExperimentConfig, ref_rc: &ReactionCoordinate, ref_grid: &RCGrid, state: usize) -> f64 {
    let c = ref_grid.center(state);
    let is_full_space = matches!(&ref_rc.kind, RcKind::CoordinateSelect { indices } if indices.len() == cfg.potential.dim()
        && indices.iter().enumerate().all(|(i, &j)| i == j));
    if is_full_space {
        cfg.reaction_coordinate.apply(&c).map(|z| z[0]).unwrap_or(f64::NAN)
    } else {
        c[0]
    }
}

fn reference_stage(
    cfg: &ExperimentConfig,
    exec: Exec,
    source: Dynamics,
    index: usize,
    traj: &Trajectory,
    seeds: &mut Vec<SeedRecord>,
) -> Result<ReferenceResult> {
    let msm = cfg.msm.as_ref().expect("validated");
    let (ref_rc, ref_grid) = reference_discretization(cfg);
    let dtraj = assign_states(traj, &ref_rc, &ref_grid)?;
    let seed = |l: usize| stream_seed(cfg.seed, STREAM_REFERENCE_BOOTSTRAP, index as u64, l as u64);
    for (l, &lag) in msm.lags.iter().enumerate() {
        seeds.push(SeedRecord {
            stage: "reference-bootstrap",
            source: Some(source.label()),
            offset: None,
            lag: Some(lag),
            seed: seed(l),
        });
    }
    let (lags, model) = msm_timescales(
        exec,
        &dtraj,
        &msm.lags,
        msm.n_eigen,
        msm.bootstrap_blocks,
        msm.bootstrap_replicas,
        seed,
    )?;
    let period = cfg.grid.axes[0].period;
    let sets = match (cfg.pcca_sets, model) {
        (0, _) | (_, None) => None,
        (n, Some(model)) => Some(canonical_sets(&model, n, period, |s| {
            reference_state_z(cfg, &ref_rc, &ref_grid, s)
        })?),
    };
    let interval_occupancy = if cfg.intervals.is_empty() {
        None
    } else {
        let z = cfg.reaction_coordinate.apply_trajectory(traj)?;
        Some(interval_occupancy(&z, period, &cfg.intervals))
    };
    Ok(ReferenceResult {
        source,
        lags,
        sets,
        interval_occupancy,
    })
}

/// Quadrature of the angular marginal for the lemon slice; otherwise the
/// occupancy of the first source.
fn interval_reference(cfg: &ExperimentConfig, references: &[ReferenceResult]) -> Result<Option<IntervalReference>> {
    if cfg.intervals.is_empty() {
        return Ok(None);
    }
    if cfg.potential == PotentialSpec::LemonSlice && cfg.reaction_coordinate == ReactionCoordinate::polar_angle() {
        let marginal = LemonMarginal::new(cfg.beta)?;
        let probabilities = cfg
            .intervals
            .iter()
            .map(|&(lo, hi)| marginal.mass(lo, hi))
            .collect::<Result<Vec<f64>>>()?;
        return Ok(Some(IntervalReference {
            method: "quadrature".into(),
            intervals: cfg.intervals.clone(),
            probabilities,
        }));
    }
    Ok(references
        .first()
        .and_then(|r| r.interval_occupancy.clone())
        .map(|probabilities| IntervalReference {
            method: "full-trajectory occupancy".into(),
            intervals: cfg.intervals.clone(),
            probabilities,
        }))
}

fn generator_stage(cfg: &ExperimentConfig) -> Result<Option<(GeneratorGrid, EigenSolution, GeneratorResult)>> {
    let Some(g) = &cfg.generator else {
        return Ok(None);
    };
    let gen = build_generator(&cfg.potential, &g.layout, cfg.beta, cfg.gamma)?;
    let eig = gen.eigenpairs(g.n_eigen)?;
    let bound = if g.bound_sets >= 2 {
        let grid = g.layout.slice_grid(g.level_set_axis)?;
        let sets = LevelSets::new(&gen, &cfg.reaction_coordinate, &grid)?;
        let eta1 = g.eta1.unwrap_or(1.0 / cfg.gamma);
        Some(verify_bound(&gen, &eig, &sets, g.bound_sets, eta1)?)
    } else {
        None
    };
    let result = GeneratorResult {
        timescales: eig.timescales(),
        bound,
    };
    Ok(Some((gen, eig, result)))
}

/// Everything downstream of the full trajectory for one offset.
fn offset_job(
    cfg: &ExperimentConfig,
    exec: Exec,
    traj: &Trajectory,
    source: Dynamics,
    source_index: usize,
    offset_index: usize,
) -> OffsetResult {
    let s = cfg.offsets[offset_index];
    let mut out = OffsetResult {
        source,
        offset: s,
        coefficients: None,
        bootstrap: None,
        lags: Vec::new(),
        sets: None,
        interval_occupancy: None,
        outside_fraction: None,
        errors: Vec::new(),
    };
    let job = (source_index * cfg.offsets.len() + offset_index) as u64;
    let run = |out: &mut OffsetResult| -> std::result::Result<(), String> {
        fn stage(name: &'static str) -> impl Fn(Error) -> String {
            move |e| format!("{name}: {e}")
        }
        let samples = KmSamples::collect(traj, &cfg.reaction_coordinate, &cfg.grid, s).map_err(stage("km"))?;
        let coefficients =
            estimate_from_samples(exec, &samples, &cfg.grid, cfg.beta, cfg.min_count).map_err(stage("km"))?;
        let settings = BootstrapSettings {
            replicas: cfg.bootstrap.replicas,
            block_len: cfg.bootstrap.block_len,
            seed: stream_seed(cfg.seed, STREAM_KM_BOOTSTRAP, job, 0),
        };
        out.bootstrap =
            Some(bootstrap_from_samples(exec, &samples, cfg.beta, settings).map_err(stage("km-bootstrap"))?);
        drop(samples);
        out.coefficients = Some(coefficients.clone());

        let eff = cfg.effective.as_ref().expect("validated");
        let field = interpolate_coefficients(&coefficients).map_err(stage("interpolation"))?;
        let initial_z = eff.initial_z.clone().unwrap_or_else(|| {
            let best = coefficients
                .valid_bins()
                .max_by_key(|&b| coefficients.counts[b])
                .unwrap_or(0);
            cfg.grid.center(best)
        });
        let sim_cfg = EffectiveSimConfig::new(
            cfg.beta,
            eff.dt,
            eff.n_steps,
            stream_seed(cfg.seed, STREAM_EFFECTIVE_SIM, job, 0),
            initial_z,
        );
        let ztraj = simulate_effective(&field, &sim_cfg).map_err(stage("effective-simulation"))?;
        let m = cfg.reaction_coordinate.m();
        let identity = ReactionCoordinate::select((0..m).collect());
        let dtraj = assign_states(&ztraj, &identity, &cfg.grid).map_err(stage("effective-msm"))?;
        let outside = (0..dtraj.len()).filter(|&t| dtraj.get(t).is_none()).count();
        out.outside_fraction = Some(outside as f64 / dtraj.len().max(1) as f64);
        if !cfg.intervals.is_empty() {
            out.interval_occupancy = Some(interval_occupancy(
                ztraj.as_flat(),
                cfg.grid.axes[0].period,
                &cfg.intervals,
            ));
        }
        drop(ztraj);

        let msm = cfg.msm.as_ref().expect("validated");
        let (lags, model) = msm_timescales(
            exec,
            &dtraj,
            &msm.lags,
            msm.n_eigen,
            msm.bootstrap_blocks,
            msm.bootstrap_replicas,
            |l| stream_seed(cfg.seed, STREAM_EFFECTIVE_BOOTSTRAP, job, l as u64),
        )
        .map_err(stage("effective-msm"))?;
        out.lags = lags;
        if let (n @ 1.., Some(model)) = (cfg.pcca_sets, model) {
            out.sets = Some(
                canonical_sets(&model, n, cfg.grid.axes[0].period, |b| cfg.grid.center(b)[0]).map_err(stage("pcca"))?,
            );
        }
        Ok(())
    };
    if let Err(e) = run(&mut out) {
        out.errors.push(e);
    }
    out
}

fn asymptotic_stage(
    cfg: &ExperimentConfig,
    exec: Exec,
    traj: &Trajectory,
    source: Dynamics,
    gen: &GeneratorGrid,
    eig: &EigenSolution,
) -> Result<AsymptoticResult> {
    let lo = cfg.large_offset.as_ref().expect("validated");
    let sim = cfg.simulation.as_ref().expect("validated");
    let data = MetastableSpectralData::from_grid(gen, eig, &cfg.reaction_coordinate, lo.sets)?;
    let t_next = 1.0 / eig.rates[lo.sets];
    let s = ((lo.factor * t_next / sim.dt).round().max(1.0)) * sim.dt;
    let mut sums = total_sums(exec, &KmSamples::collect(traj, &cfg.reaction_coordinate, &cfg.grid, s)?);
    for r in 1..lo.trajectories {
        let extra = simulate_source(cfg, source, 0, r)?;
        sums.merge(&total_sums(
            exec,
            &KmSamples::collect(&extra, &cfg.reaction_coordinate, &cfg.grid, s)?,
        ));
    }
    let km = estimate_from_sums(&cfg.grid, &sums, s, cfg.beta, cfg.min_count)?;
    let plateau = data.plateau_bins(gen, eig, &cfg.reaction_coordinate, &cfg.grid)?;
    let mut warnings = data.plateau_warnings();
    let mut rows = Vec::new();
    let (mut dn, mut dd, mut an, mut ad) = (0.0, 0.0, 0.0, 0.0);
    for b in km.valid_bins() {
        let Some(set) = plateau[b] else { continue };
        let center = cfg.grid.center(b);
        let p = large_offset_predict(&data, s, &center, set, cfg.beta)?;
        if let Some(w) = p.warning {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        for (k, pd) in km.drift_at(b).iter().zip(&p.drift) {
            dn += (k - pd) * (k - pd);
            dd += pd * pd;
        }
        for (k, pa) in km.diffusion_at(b).iter().zip(&p.diffusion) {
            an += (k - pa) * (k - pa);
            ad += pa * pa;
        }
        rows.push(AsymptoticRow {
            bin: b,
            center,
            set,
            km_drift: km.drift_at(b).to_vec(),
            km_diffusion: km.diffusion_at(b).to_vec(),
            predicted_drift: p.drift,
            predicted_diffusion: p.diffusion,
        });
    }
    if rows.is_empty() {
        return Err(Error::EstimationFailed("no valid bin lies on a plateau".into()));
    }
    Ok(AsymptoticResult {
        source,
        offset: s,
        trajectories: lo.trajectories,
        sets: lo.sets,
        set_probabilities: data.set_probabilities.clone(),
        rows,
        drift_rel_l2: (dn / dd).sqrt(),
        diffusion_rel_l2: (an / ad).sqrt(),
        warnings,
    })
}

fn failure(stage: &str, source: Option<Dynamics>, offset: Option<f64>, e: impl ToString) -> StageFailure {
    let f = StageFailure {
        stage: stage.into(),
        source,
        offset,
        message: e.to_string(),
    };
    log::error!("stage {stage} failed: {}", f.message);
    f
}

/// Run the configured pipeline, writing all artifacts to `cfg.output_dir`.
///
/// Configuration and output-directory problems are returned as errors;
/// numerical stage failures are recorded in the report and the manifest.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Exec) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut art = Artifacts::new(&cfg.output_dir)?;
    art.write("config.json", &cfg.to_json())?;
    let mut seeds = Vec::new();
    let mut failures = Vec::new();

    // Stage 1: full-space simulations.
    let sources: Vec<Dynamics> = cfg.simulation.as_ref().map(|s| s.sources.clone()).unwrap_or_default();
    log::info!("simulating {} full-space source(s)", sources.len());
    let trajectories: Vec<Option<Trajectory>> = exec
        .map(sources.len(), |k| simulate_source(cfg, sources[k], k, 0))
        .into_iter()
        .zip(&sources)
        .enumerate()
        .map(|(k, (r, &src))| {
            seeds.push(SeedRecord {
                stage: "full-simulation",
                source: Some(src.label()),
                offset: None,
                lag: None,
                seed: stream_seed(cfg.seed, STREAM_FULL_SIM, k as u64, 0),
            });
            r.map_err(|e| failures.push(failure("full-simulation", Some(src), None, e)))
                .ok()
        })
        .collect();
    if cfg.save_trajectories {
        for (traj, src) in trajectories.iter().zip(&sources) {
            if let Some(t) = traj {
                let path = art.path(&format!("trajectory_{}.efdy", src.label()));
                write_trajectory(t, &path)?;
                art.names.push(format!("trajectory_{}.efdy.meta.json", src.label()));
            }
        }
    }

    // Stage 2: reference models.
    let mut references = Vec::new();
    for (k, (traj, &src)) in trajectories.iter().zip(&sources).enumerate() {
        let Some(traj) = traj else { continue };
        log::info!("reference model for the {} source", src.label());
        match reference_stage(cfg, exec, src, k, traj, &mut seeds) {
            Ok(r) => references.push(r),
            Err(e) => failures.push(failure("reference-msm", Some(src), None, e)),
        }
    }
    let interval_ref = match interval_reference(cfg, &references) {
        Ok(r) => r,
        Err(e) => {
            failures.push(failure("interval-reference", None, None, e));
            None
        }
    };

    // Stage 3: generator.
    log::info!("generator stage");
    let generator = match generator_stage(cfg) {
        Ok(g) => g,
        Err(e) => {
            failures.push(failure("generator", None, None, e));
            None
        }
    };

    // Stage 4: per-offset estimation and re-simulation.
    let jobs: Vec<(usize, usize)> = (0..sources.len())
        .filter(|&k| trajectories[k].is_some())
        .flat_map(|k| (0..cfg.offsets.len()).map(move |j| (k, j)))
        .collect();
    log::info!("{} offset job(s)", jobs.len());
    let offsets: Vec<OffsetResult> = exec.map_slice(&jobs, |&(k, j)| {
        let r = offset_job(cfg, exec, trajectories[k].as_ref().expect("filtered"), sources[k], k, j);
        log::info!(
            "{} s = {}: t2 = {:.4} {}",
            sources[k].label(),
            r.offset,
            r.timescale(1),
            if r.ok() { "" } else { "(failed)" }
        );
        r
    });
    for &(k, j) in &jobs {
        let job = (k * cfg.offsets.len() + j) as u64;
        let (src, s) = (Some(sources[k].label()), Some(cfg.offsets[j]));
        seeds.push(SeedRecord {
            stage: "km-bootstrap",
            source: src,
            offset: s,
            lag: None,
            seed: stream_seed(cfg.seed, STREAM_KM_BOOTSTRAP, job, 0),
        });
        seeds.push(SeedRecord {
            stage: "effective-simulation",
            source: src,
            offset: s,
            lag: None,
            seed: stream_seed(cfg.seed, STREAM_EFFECTIVE_SIM, job, 0),
        });
        for (l, &lag) in cfg.msm.iter().flat_map(|m| m.lags.iter()).enumerate() {
            seeds.push(SeedRecord {
                stage: "effective-bootstrap",
                source: src,
                offset: s,
                lag: Some(lag),
                seed: stream_seed(cfg.seed, STREAM_EFFECTIVE_BOOTSTRAP, job, l as u64),
            });
        }
    }
    for o in &offsets {
        for e in &o.errors {
            let (stage, msg) = e.split_once(": ").unwrap_or(("offset", e.as_str()));
            failures.push(failure(stage, Some(o.source), Some(o.offset), msg));
        }
    }

    // Stage 5: large-offset asymptotics.
    if let (Some(lo), Some(&src)) = (&cfg.large_offset, sources.first()) {
        for r in 1..lo.trajectories {
            seeds.push(SeedRecord {
                stage: "large-offset-simulation",
                source: Some(src.label()),
                offset: None,
                lag: None,
                seed: stream_seed(cfg.seed, STREAM_FULL_SIM, 0, r as u64),
            });
        }
    }
    let asymptotics = match (&cfg.large_offset, &generator, trajectories.first()) {
        (Some(_), Some((gen, eig, _)), Some(Some(traj))) => {
            log::info!("large-offset comparison");
            match asymptotic_stage(cfg, exec, traj, sources[0], gen, eig) {
                Ok(a) => Some(a),
                Err(e) => {
                    failures.push(failure("large-offset", Some(sources[0]), None, e));
                    None
                }
            }
        }
        (Some(_), _, _) => {
            failures.push(failure("large-offset", None, None, "missing generator or trajectory"));
            None
        }
        _ => None,
    };
    drop(trajectories);

    let report = ExperimentReport {
        experiment: cfg.experiment,
        config_hash: cfg.hash(),
        references,
        interval_reference: interval_ref,
        generator: generator.map(|g| g.2),
        offsets,
        asymptotics,
        failures,
    };

    // Stage 6: outputs.
    write_tables(cfg, &report, &sources, &mut art)?;
    write_charts(cfg, &report, &sources, &mut art)?;
    art.write("report.json", &serde_json::to_string_pretty(&report)?)?;
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION"),
        trajectory_format_version: FORMAT_VERSION,
        experiment: cfg.experiment.name(),
        config_hash: &report.config_hash,
        parallel: exec == Exec::Parallel && cfg!(feature = "parallel"),
        master_seed: cfg.seed,
        seeds,
        artifacts: art.names.clone(),
        failures: &report.failures,
    };
    let path = cfg.output_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path, e))?;
    Ok(report)
}

fn csv_row(cells: impl IntoIterator<Item = String>) -> String {
    let mut s = cells.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

fn write_tables(
    cfg: &ExperimentConfig,
    report: &ExperimentReport,
    sources: &[Dynamics],
    art: &mut Artifacts,
) -> Result<()> {
    let lags: Vec<f64> = cfg.msm.as_ref().map(|m| m.lags.clone()).unwrap_or_default();
    let k = cfg.msm.as_ref().map_or(0, |m| m.n_eigen);

    for r in &report.references {
        let mut t = String::from("lag,index,timescale,std\n");
        for l in &r.lags {
            for (i, (ts, sd)) in l.timescales.iter().zip(&l.std).enumerate() {
                t += &csv_row([fmt(l.lag), (i + 1).to_string(), fmt(*ts), fmt(*sd)]);
            }
        }
        art.write(&format!("reference_timescales_{}.csv", r.source.label()), &t)?;
        if let Some(sets) = &r.sets {
            let mut t = String::from("set,center,probability\n");
            for (i, (c, p)) in sets.centers.iter().zip(&sets.probabilities).enumerate() {
                t += &csv_row([(i + 1).to_string(), fmt(*c), fmt(*p)]);
            }
            art.write(&format!("reference_sets_{}.csv", r.source.label()), &t)?;
        }
    }
    if let Some(ir) = &report.interval_reference {
        let mut t = String::from("lo,hi,probability,method\n");
        for (&(lo, hi), p) in ir.intervals.iter().zip(&ir.probabilities) {
            t += &csv_row([fmt(lo), fmt(hi), fmt(*p), ir.method.clone()]);
        }
        art.write("reference_intervals.csv", &t)?;
    }
    if let Some(g) = &report.generator {
        let mut t = String::from("index,timescale\n");
        for (i, ts) in g.timescales.iter().enumerate() {
            t += &csv_row([(i + 1).to_string(), fmt(*ts)]);
        }
        art.write("generator_timescales.csv", &t)?;
        if let Some(b) = &g.bound {
            art.write("bound.csv", &b.to_csv())?;
        }
    }

    for &src in sources {
        let rows = report.offsets_for(src);
        if rows.is_empty() {
            continue;
        }
        for o in &rows {
            if let Some(c) = &o.coefficients {
                art.write(
                    &format!("km_{}_s{}.csv", src.label(), label(o.offset)),
                    &c.to_csv(o.bootstrap.as_ref()),
                )?;
            }
        }
        for (li, &lag) in lags.iter().enumerate() {
            let mut header = vec!["offset".to_string(), "status".to_string()];
            header.extend((2..=k).map(|i| format!("t{i}")));
            header.extend((2..=k).map(|i| format!("std{i}")));
            let mut t = csv_row(header);
            for o in &rows {
                let l = o.lags.get(li);
                let mut row = vec![fmt(o.offset), status(o)];
                row.extend((1..k).map(|i| fmt(l.map_or(f64::NAN, |l| l.timescales[i]))));
                row.extend((1..k).map(|i| fmt(l.map_or(f64::NAN, |l| l.std[i]))));
                t += &csv_row(row);
            }
            art.write(&format!("timescales_{}_lag{}.csv", src.label(), label(lag)), &t)?;
        }
        if cfg.pcca_sets > 0 {
            let n = cfg.pcca_sets;
            let mut header = vec!["offset".to_string(), "status".to_string()];
            header.extend((1..=n).map(|i| format!("p{i}")));
            header.extend((1..=n).map(|i| format!("center{i}")));
            let mut t = csv_row(header);
            for o in &rows {
                let mut row = vec![fmt(o.offset), status(o)];
                row.extend((0..n).map(|i| fmt(o.sets.as_ref().map_or(f64::NAN, |s| s.probabilities[i]))));
                row.extend((0..n).map(|i| fmt(o.sets.as_ref().map_or(f64::NAN, |s| s.centers[i]))));
                t += &csv_row(row);
            }
            art.write(&format!("set_probabilities_{}.csv", src.label()), &t)?;
        }
        if !cfg.intervals.is_empty() {
            let mut header = vec!["offset".to_string(), "status".to_string(), "outside".to_string()];
            header.extend((1..=cfg.intervals.len()).map(|i| format!("q{i}")));
            let mut t = csv_row(header);
            for o in &rows {
                let mut row = vec![fmt(o.offset), status(o), fmt(o.outside_fraction.unwrap_or(f64::NAN))];
                row.extend(
                    (0..cfg.intervals.len()).map(|i| fmt(o.interval_occupancy.as_ref().map_or(f64::NAN, |q| q[i]))),
                );
                t += &csv_row(row);
            }
            art.write(&format!("intervals_{}.csv", src.label()), &t)?;
        }
    }

    if let Some(a) = &report.asymptotics {
        let m = cfg.reaction_coordinate.m();
        let mut header: Vec<String> = (1..=m).map(|l| format!("center{l}")).collect();
        header.push("set".into());
        for name in ["km_drift", "predicted_drift"] {
            header.extend((1..=m).map(|l| format!("{name}{l}")));
        }
        for name in ["km_diffusion", "predicted_diffusion"] {
            for l in 1..=m {
                header.extend((1..=m).map(|r| format!("{name}{l}{r}")));
            }
        }
        let mut t = csv_row(header);
        for row in &a.rows {
            let mut cells: Vec<String> = row.center.iter().map(|v| fmt(*v)).collect();
            cells.push((row.set + 1).to_string());
            for v in [
                &row.km_drift,
                &row.predicted_drift,
                &row.km_diffusion,
                &row.predicted_diffusion,
            ] {
                cells.extend(v.iter().map(|x| fmt(*x)));
            }
            t += &csv_row(cells);
        }
        let _ = writeln!(
            t,
            "# offset {} drift_rel_l2 {} diffusion_rel_l2 {}",
            a.offset, a.drift_rel_l2, a.diffusion_rel_l2
        );
        art.write("asymptotics.csv", &t)?;
    }
    Ok(())
}

fn status(o: &OffsetResult) -> String {
    if o.ok() {
        "ok".into()
    } else {
        "failed".into()
    }
}

fn write_charts(
    cfg: &ExperimentConfig,
    report: &ExperimentReport,
    sources: &[Dynamics],
    art: &mut Artifacts,
) -> Result<()> {
    let k = cfg.msm.as_ref().map_or(0, |m| m.n_eigen);
    for &src in sources {
        let rows = report.offsets_for(src);
        if rows.is_empty() {
            continue;
        }
        let x: Vec<f64> = rows.iter().map(|o| o.offset).collect();
        let reference = report.reference(src);

        let mut series = Vec::new();
        let mut reference_lines = Vec::new();
        for i in 1..k {
            let y = rows.iter().map(|o| o.timescale(i)).collect();
            let e = rows
                .iter()
                .map(|o| o.lags.first().map_or(f64::NAN, |l| l.std[i]))
                .collect();
            series.push(Series::new(format!("t{}", i + 1), x.clone(), y).with_errors(e));
            if let Some(t) = reference.and_then(|r| r.lags.first()).and_then(|l| l.timescales.get(i)) {
                reference_lines.push((format!("ref t{}", i + 1), *t));
            }
        }
        if let Some(g) = &report.generator {
            for i in 1..k.min(g.timescales.len()) {
                reference_lines.push((format!("gen t{}", i + 1), g.timescales[i]));
            }
        }
        art.chart(
            &format!("timescales_{}.svg", src.label()),
            series,
            &ChartMeta {
                title: format!("Implied timescales of effective dynamics ({})", src.label()),
                x_label: "offset s".into(),
                y_label: "timescale".into(),
                log_x: true,
                reference_lines,
            },
        )?;

        if cfg.pcca_sets > 0 {
            let series = (0..cfg.pcca_sets)
                .map(|i| {
                    let y = rows
                        .iter()
                        .map(|o| o.sets.as_ref().map_or(f64::NAN, |s| s.probabilities[i]))
                        .collect();
                    Series::new(format!("set {}", i + 1), x.clone(), y)
                })
                .collect();
            let reference_lines = reference
                .and_then(|r| r.sets.as_ref())
                .map(|s| {
                    s.probabilities
                        .iter()
                        .enumerate()
                        .map(|(i, p)| (format!("ref set {}", i + 1), *p))
                        .collect()
                })
                .unwrap_or_default();
            art.chart(
                &format!("set_probabilities_{}.svg", src.label()),
                series,
                &ChartMeta {
                    title: format!("Metastable set probabilities ({})", src.label()),
                    x_label: "offset s".into(),
                    y_label: "probability".into(),
                    log_x: true,
                    reference_lines,
                },
            )?;
        }

        if let Some(ir) = &report.interval_reference {
            let series = (0..cfg.intervals.len())
                .map(|i| {
                    let y = rows
                        .iter()
                        .map(|o| o.interval_occupancy.as_ref().map_or(f64::NAN, |q| q[i]))
                        .collect();
                    Series::new(format!("interval {}", i + 1), x.clone(), y)
                })
                .collect();
            let mean_ref = ir.probabilities.iter().sum::<f64>() / ir.probabilities.len() as f64;
            art.chart(
                &format!("intervals_{}.svg", src.label()),
                series,
                &ChartMeta {
                    title: format!("Interval probabilities ({})", src.label()),
                    x_label: "offset s".into(),
                    y_label: "probability".into(),
                    log_x: true,
                    reference_lines: vec![(format!("{} mean", ir.method), mean_ref)],
                },
            )?;
        }

        if cfg.reaction_coordinate.m() == 1 {
            for (name, pick) in [("drift", 0usize), ("diffusion", 1)] {
                let series = rows
                    .iter()
                    .filter_map(|o| {
                        let c = o.coefficients.as_ref()?;
                        let bins: Vec<usize> = c.valid_bins().collect();
                        let z = bins.iter().map(|&b| cfg.grid.center(b)[0]).collect();
                        let y = bins
                            .iter()
                            .map(|&b| if pick == 0 { c.drift[b] } else { c.diffusion[b] })
                            .collect();
                        let mut s = Series::new(format!("s = {}", o.offset), z, y);
                        if let Some(bs) = &o.bootstrap {
                            let se = if pick == 0 { &bs.drift_se } else { &bs.diffusion_se };
                            s = s.with_errors(bins.iter().map(|&b| se[b]).collect());
                        }
                        Some(s)
                    })
                    .collect();
                art.chart(
                    &format!("{name}_{}.svg", src.label()),
                    series,
                    &ChartMeta {
                        title: format!("Effective {name} ({})", src.label()),
                        x_label: "z".into(),
                        y_label: name.into(),
                        log_x: false,
                        reference_lines: Vec::new(),
                    },
                )?;
            }
        }
    }

    if let Some(a) = &report.asymptotics {
        if cfg.reaction_coordinate.m() == 1 {
            let z: Vec<f64> = a.rows.iter().map(|r| r.center[0]).collect();
            let col = |f: fn(&AsymptoticRow) -> f64| a.rows.iter().map(f).collect::<Vec<f64>>();
            let series = vec![
                Series::new("KM drift", z.clone(), col(|r| r.km_drift[0])),
                Series::new("predicted drift", z.clone(), col(|r| r.predicted_drift[0])),
                Series::new("KM diffusion", z.clone(), col(|r| r.km_diffusion[0])),
                Series::new("predicted diffusion", z, col(|r| r.predicted_diffusion[0])),
            ];
            art.chart(
                "asymptotics.svg",
                series,
                &ChartMeta {
                    title: format!("Large-offset coefficients at s = {}", a.offset),
                    x_label: "z".into(),
                    y_label: "coefficient".into(),
                    log_x: false,
                    reference_lines: Vec::new(),
                },
            )?;
        }
    }
    Ok(())
}

/// Summary lines for the command line.
pub fn summarize(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "experiment {} (config {})",
        report.experiment.name(),
        &report.config_hash[..12]
    );
    for r in &report.references {
        if let Some(l) = r.lags.first() {
            let ts: Vec<String> = l.timescales.iter().skip(1).map(|t| format!("{t:.4}")).collect();
            let _ = writeln!(out, "reference {} lag {}: {}", r.source.label(), l.lag, ts.join(" "));
        }
        if let Some(s) = &r.sets {
            let _ = writeln!(out, "reference {} sets: {:?}", r.source.label(), s.probabilities);
        }
    }
    if let Some(g) = &report.generator {
        let ts: Vec<String> = g.timescales.iter().skip(1).map(|t| format!("{t:.4}")).collect();
        let _ = writeln!(out, "generator timescales: {}", ts.join(" "));
        if let Some(b) = &g.bound {
            let _ = writeln!(
                out,
                "bound M={}: lhs {:.4e} rhs {:.4e} epsilon {:.4} -> {}",
                b.m,
                b.lhs,
                b.rhs,
                b.epsilon,
                if b.passes { "holds" } else { "violated" }
            );
        }
    }
    let mut by_source: BTreeMap<&str, Vec<&OffsetResult>> = BTreeMap::new();
    for o in &report.offsets {
        by_source.entry(o.source.label()).or_default().push(o);
    }
    for (src, rows) in by_source {
        for o in rows {
            let _ = writeln!(
                out,
                "{src} s = {}: t2 = {:.4} {}",
                o.offset,
                o.timescale(1),
                if o.ok() { "" } else { "FAILED" }
            );
        }
    }
    if let Some(a) = &report.asymptotics {
        let _ = writeln!(
            out,
            "large offset s = {}: drift rel L2 {:.4}, diffusion rel L2 {:.4}",
            a.offset, a.drift_rel_l2, a.diffusion_rel_l2
        );
    }
    for f in &report.failures {
        let _ = writeln!(out, "failure in {}: {}", f.stage, f.message);
    }
    out
}
