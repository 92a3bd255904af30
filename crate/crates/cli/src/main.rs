//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a pipeline stage fails, 2 for invalid
//! configuration or arguments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use effdyn::chart::{write_line_chart, ChartMeta, Series};
use effdyn::config::{Dynamics, ExperimentConfig, ExperimentKind, Scale};
use effdyn::effective::{simulate_effective, EffectiveSimConfig};
use effdyn::experiment::{run_experiment, summarize};
use effdyn::generator::{build_generator, verify_bound, LevelSets, NodeLayout};
use effdyn::io::{read_trajectory, read_trajectory_csv, write_trajectory, write_trajectory_csv};
use effdyn::km::{
    bootstrap_from_samples, estimate_from_samples, interpolate_coefficients, offset_steps, BinnedCoefficients,
    BootstrapSettings, KmSamples,
};
use effdyn::msm::{assign_states, estimate_msm};
use effdyn::pcca::pcca;
use effdyn::{
    simulate_langevin, simulate_overdamped, Error, Exec, GridAxis, PotentialSpec, RCGrid, ReactionCoordinate,
    SimConfig, TrajKind, Trajectory,
};

#[derive(Parser)]
#[command(name = "effdyn", version, about = "Effective dynamics on reaction coordinates")]
struct Cli {
    /// Run data-parallel loops sequentially.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate full-space overdamped or Langevin dynamics.
    Simulate(SimulateArgs),
    /// Estimate binned effective drift and diffusion from a trajectory.
    Estimate(EstimateArgs),
    /// Simulate the effective SDE from estimated coefficients.
    Resimulate(ResimulateArgs),
    /// Build a Markov state model and report implied timescales.
    Msm(MsmArgs),
    /// Metastable sets by PCCA+ on a Markov state model.
    Pcca(PccaArgs),
    /// Check the eigenvalue bound on a generator discretization.
    BoundCheck(BoundArgs),
    /// Run a named or custom experiment pipeline.
    Experiment(ExperimentArgs),
    /// Draw an SVG line chart from CSV columns.
    Plot(PlotArgs),
}

/// Options shared by commands that read a configuration file.
#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<Option<ExperimentConfig>> {
        self.config
            .as_deref()
            .map(ExperimentConfig::load)
            .transpose()
            .map_err(Into::into)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// lemon-slice, double-well-2d or harmonic-1d:<stiffness>.
    #[arg(long)]
    potential: Option<String>,
    #[arg(long)]
    dynamics: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initial position, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
    /// Output path; `.csv` selects the text format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiscretizationArgs {
    /// polar-angle or select:<i>,<j>,...
    #[arg(long)]
    rc: Option<String>,
    /// Axes separated by `;`, each lower:width:count[:period].
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    traj: PathBuf,
    #[command(flatten)]
    disc: DiscretizationArgs,
    #[arg(long)]
    offset: f64,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    min_count: Option<u64>,
    /// Bootstrap replicas; zero disables the bootstrap.
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    block_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Coefficient file (JSON); a CSV table is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ResimulateArgs {
    /// Coefficient file written by `estimate`.
    #[arg(long)]
    coefficients: PathBuf,
    #[arg(long)]
    dt: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial reaction-coordinate value, comma separated; defaults to the
    /// most populated bin.
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MsmArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    traj: PathBuf,
    #[command(flatten)]
    disc: DiscretizationArgs,
    #[arg(long)]
    lag: f64,
    /// Eigenvalues to compute, the stationary one included.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Output directory for timescales.csv and stationary.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PccaArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    traj: PathBuf,
    #[command(flatten)]
    disc: DiscretizationArgs,
    #[arg(long)]
    lag: f64,
    #[arg(long)]
    sets: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Nodes per axis of the lemon slice polar layout.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    sets: Option<usize>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// lemon-slice, langevin-toy, bound-check or custom.
    name: String,
    #[command(flatten)]
    config: ConfigArg,
    /// full or ci (ten times fewer steps).
    #[arg(long, default_value = "full")]
    scale: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    x: String,
    /// Columns to draw, comma separated.
    #[arg(long)]
    y: String,
    /// Error-bar columns matching `--y`, comma separated.
    #[arg(long)]
    err: Option<String>,
    #[arg(long)]
    log_x: bool,
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long)]
    out: PathBuf,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| config_error(format!("`{v}`: {e}"))))
        .collect()
}

fn parse_potential(text: &str) -> Result<PotentialSpec> {
    let (name, arg) = text.split_once(':').unwrap_or((text, ""));
    let mut params = BTreeMap::new();
    if !arg.is_empty() {
        params.insert("stiffness".to_string(), parse_list(arg)?[0]);
    }
    PotentialSpec::from_parts(name, &params).map_err(|e| config_error(e.to_string()))
}

fn parse_dynamics(text: &str) -> Result<Dynamics> {
    match text {
        "overdamped" => Ok(Dynamics::Overdamped),
        "langevin" => Ok(Dynamics::Langevin),
        other => Err(config_error(format!("unknown dynamics `{other}`"))),
    }
}

fn parse_rc(text: &str) -> Result<ReactionCoordinate> {
    if text == "polar-angle" {
        return Ok(ReactionCoordinate::polar_angle());
    }
    let indices = text
        .strip_prefix("select:")
        .ok_or_else(|| config_error(format!("unknown reaction coordinate `{text}`")))?
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| config_error(format!("`{v}`: {e}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(ReactionCoordinate::select(indices))
}

fn parse_grid(text: &str) -> Result<RCGrid> {
    let axes = text
        .split(';')
        .map(|axis| {
            let v: Vec<&str> = axis.split(':').collect();
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| config_error(format!("`{s}`: {e}")));
            let count = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| config_error(format!("`{s}`: {e}")))
            };
            match v.as_slice() {
                [lo, w, n] => Ok(GridAxis::new(num(lo)?, num(w)?, count(n)?)),
                [lo, w, n, p] => Ok(GridAxis::periodic(num(lo)?, num(w)?, count(n)?, num(p)?)),
                _ => Err(config_error(format!(
                    "grid axis `{axis}` is not lower:width:count[:period]"
                ))),
            }
        })
        .collect::<Result<Vec<GridAxis>>>()?;
    RCGrid::new(axes).map_err(|e| config_error(e.to_string()))
}

fn require<T>(flag: Option<T>, from_config: Option<T>, name: &str) -> Result<T> {
    flag.or(from_config)
        .ok_or_else(|| config_error(format!("missing --{name} (no config value either)")))
}

fn discretization(disc: &DiscretizationArgs, cfg: Option<&ExperimentConfig>) -> Result<(ReactionCoordinate, RCGrid)> {
    let rc = require(
        disc.rc.as_deref().map(parse_rc).transpose()?,
        cfg.map(|c| c.reaction_coordinate.clone()),
        "rc",
    )?;
    let grid = require(
        disc.grid.as_deref().map(parse_grid).transpose()?,
        cfg.map(|c| c.grid.clone()),
        "grid",
    )?;
    rc.validate().map_err(|e| config_error(e.to_string()))?;
    if grid.dim() != rc.m() {
        return Err(config_error("grid and reaction coordinate dimensions differ"));
    }
    Ok((rc, grid))
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let traj = if path.extension().is_some_and(|e| e == "csv") {
        read_trajectory_csv(path, TrajKind::Overdamped, None)?
    } else {
        read_trajectory(path)?
    };
    Ok(traj)
}

fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "csv") {
        write_trajectory_csv(traj, path)?;
    } else {
        write_trajectory(traj, path)?;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let sim = cfg.as_ref().and_then(|c| c.simulation.as_ref());
    let potential = require(
        a.potential.as_deref().map(parse_potential).transpose()?,
        cfg.as_ref().map(|c| c.potential.clone()),
        "potential",
    )?;
    let dynamics = require(
        a.dynamics.as_deref().map(parse_dynamics).transpose()?,
        sim.and_then(|s| s.sources.first().copied()),
        "dynamics",
    )?;
    let beta = require(a.beta, cfg.as_ref().map(|c| c.beta), "beta")?;
    let gamma = require(a.gamma, cfg.as_ref().map(|c| c.gamma), "gamma")?;
    let dt = require(a.dt, sim.map(|s| s.dt), "dt")?;
    let steps = require(a.steps, sim.map(|s| s.n_steps), "steps")?;
    let seed = require(a.seed, cfg.as_ref().map(|c| c.seed), "seed")?;
    let init = require(
        a.init.as_deref().map(parse_list).transpose()?,
        sim.map(|s| s.initial_state.clone()),
        "init",
    )?;
    let mut sc = SimConfig::new(beta, gamma, dt, steps, seed, init);
    if let Some(b) = a.burn_in.or(sim.and_then(|s| s.burn_in)) {
        sc = sc.with_burn_in(b);
    }
    sc.validate().map_err(|e| config_error(e.to_string()))?;
    let traj = match dynamics {
        Dynamics::Overdamped => simulate_overdamped(&potential, &sc)?,
        Dynamics::Langevin => simulate_langevin(&potential, &sc)?,
    };
    save_trajectory(&traj, &a.out)?;
    println!("wrote {} frames to {}", traj.len(), a.out.display());
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs, exec: Exec) -> Result<()> {
    let cfg = a.config.load()?;
    let (rc, grid) = discretization(&a.disc, cfg.as_ref())?;
    let traj = load_trajectory(&a.traj)?;
    let beta = require(a.beta.or(traj.meta.beta), cfg.as_ref().map(|c| c.beta), "beta")?;
    let min_count = a
        .min_count
        .or(cfg.as_ref().map(|c| c.min_count))
        .unwrap_or(effdyn::km::DEFAULT_MIN_COUNT);
    let as_config = |e: Error| match e {
        Error::InvalidInput(m) => Error::Config(m),
        other => other,
    };
    let samples = KmSamples::collect(&traj, &rc, &grid, a.offset).map_err(as_config)?;
    let coefficients = estimate_from_samples(exec, &samples, &grid, beta, min_count)?;
    let replicas = a.replicas.or(cfg.as_ref().map(|c| c.bootstrap.replicas)).unwrap_or(0);
    let se = if replicas >= 2 {
        let block_len = require(a.block_len, cfg.as_ref().map(|c| c.bootstrap.block_len), "block-len")?;
        let seed = a.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
        let settings = BootstrapSettings {
            replicas,
            block_len,
            seed,
        };
        Some(bootstrap_from_samples(exec, &samples, beta, settings).map_err(as_config)?)
    } else {
        None
    };
    std::fs::write(&a.out, serde_json::to_string_pretty(&coefficients)?)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let table = a.out.with_extension("csv");
    coefficients.write_csv(&table, se.as_ref())?;
    println!(
        "{} of {} bins valid; wrote {} and {}",
        coefficients.valid_bins().count(),
        coefficients.n_bins(),
        a.out.display(),
        table.display()
    );
    Ok(())
}

fn cmd_resimulate(a: &ResimulateArgs) -> Result<()> {
    let text =
        std::fs::read_to_string(&a.coefficients).with_context(|| format!("reading {}", a.coefficients.display()))?;
    let coefficients: BinnedCoefficients =
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", a.coefficients.display())))?;
    let field = interpolate_coefficients(&coefficients)?;
    let init = match &a.init {
        Some(s) => parse_list(s)?,
        None => {
            let best = coefficients
                .valid_bins()
                .max_by_key(|&b| coefficients.counts[b])
                .ok_or_else(|| config_error("no valid bins"))?;
            coefficients.grid.center(best)
        }
    };
    let sc = EffectiveSimConfig::new(coefficients.beta, a.dt, a.steps, a.seed, init);
    let mut traj = simulate_effective(&field, &sc)?;
    traj.meta.source = Some(a.coefficients.display().to_string());
    save_trajectory(&traj, &a.out)?;
    println!("wrote {} frames to {}", traj.len(), a.out.display());
    Ok(())
}

fn build_model(
    cfg: &ConfigArg,
    traj: &Path,
    disc: &DiscretizationArgs,
    lag: f64,
    k: usize,
) -> Result<effdyn::msm::SpectralModel> {
    let cfg = cfg.load()?;
    let (rc, grid) = discretization(disc, cfg.as_ref())?;
    let traj = load_trajectory(traj)?;
    let steps = offset_steps(lag, traj.dt).map_err(|e| config_error(e.to_string()))?;
    let dtraj = assign_states(&traj, &rc, &grid)?;
    Ok(estimate_msm(&dtraj, steps, k, true)?)
}

fn cmd_msm(a: &MsmArgs) -> Result<()> {
    let model = build_model(&a.config, &a.traj, &a.disc, a.lag, a.k)?;
    create_dir(&a.out)?;
    std::fs::write(a.out.join("timescales.csv"), model.timescales_csv())?;
    std::fs::write(a.out.join("stationary.csv"), model.stationary_csv())?;
    for d in &model.diagnostics {
        eprintln!("note: {d}");
    }
    let ts: Vec<String> = model.timescales.iter().skip(1).map(|t| format!("{t:.5}")).collect();
    println!("implied timescales: {}", ts.join(" "));
    Ok(())
}

fn cmd_pcca(a: &PccaArgs) -> Result<()> {
    let model = build_model(&a.config, &a.traj, &a.disc, a.lag, a.sets)?;
    let part = pcca(&model, a.sets)?;
    std::fs::write(&a.out, part.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    println!("set probabilities: {:?}", part.set_probabilities);
    Ok(())
}

fn cmd_bound(a: &BoundArgs) -> Result<()> {
    let mut cfg = match a.config.load()? {
        Some(c) => c,
        None => ExperimentConfig::preset(ExperimentKind::BoundCheck, Scale::Full)?,
    };
    let g = cfg
        .generator
        .as_mut()
        .ok_or_else(|| config_error("config has no generator section"))?;
    if let Some(n) = a.nodes {
        g.layout = NodeLayout::lemon_slice(n);
    }
    if let Some(m) = a.sets {
        g.bound_sets = m;
        g.n_eigen = g.n_eigen.max(m + 2);
    }
    if a.eta1.is_some() {
        g.eta1 = a.eta1;
    }
    let g = g.clone();
    cfg.validate()?;
    let gen = build_generator(&cfg.potential, &g.layout, cfg.beta, cfg.gamma)?;
    let eig = gen.eigenpairs(g.n_eigen)?;
    let grid = g.layout.slice_grid(g.level_set_axis)?;
    let sets = LevelSets::new(&gen, &cfg.reaction_coordinate, &grid)?;
    let report = verify_bound(&gen, &eig, &sets, g.bound_sets, g.eta1.unwrap_or(1.0 / cfg.gamma))?;
    create_dir(&a.out)?;
    std::fs::write(a.out.join("bound.csv"), report.to_csv())?;
    std::fs::write(a.out.join("bound.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "lhs {:.4e} rhs {:.4e} epsilon {:.4}: {}",
        report.lhs,
        report.rhs,
        report.epsilon,
        if report.passes { "holds" } else { "violated" }
    );
    if report.passes {
        Ok(())
    } else {
        Err(Error::EstimationFailed("bound violated".into()).into())
    }
}

/// Returns whether every stage succeeded.
fn cmd_experiment(a: &ExperimentArgs, exec: Exec) -> Result<bool> {
    let kind = ExperimentKind::parse(&a.name)?;
    let scale = Scale::parse(&a.scale)?;
    let mut cfg = match (a.config.load()?, kind) {
        (Some(c), _) => {
            if c.experiment != kind {
                return Err(config_error(format!(
                    "config describes `{}`, command line asks for `{}`",
                    c.experiment.name(),
                    kind.name()
                )));
            }
            c
        }
        (None, kind) => ExperimentConfig::preset(kind, scale)?,
    };
    if a.config.config.is_some() && scale == Scale::Ci {
        for steps in [
            cfg.simulation.as_mut().map(|s| &mut s.n_steps),
            cfg.effective.as_mut().map(|e| &mut e.n_steps),
        ]
        .into_iter()
        .flatten()
        {
            *steps /= 10;
        }
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &a.out {
        cfg.output_dir = out.clone();
    }
    let report = run_experiment(&cfg, exec)?;
    print!("{}", summarize(&report));
    println!("results in {}", cfg.output_dir.display());
    Ok(report.failures.is_empty())
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&a.csv).with_context(|| format!("reading {}", a.csv.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| config_error(format!("no column `{name}` in {}", a.csv.display())))
    };
    let x_col = col(&a.x)?;
    let y_names: Vec<&str> = a.y.split(',').collect();
    let y_cols = y_names.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
    let err_cols = match &a.err {
        Some(e) => {
            let cols = e.split(',').map(col).collect::<Result<Vec<_>>>()?;
            if cols.len() != y_cols.len() {
                return Err(config_error("--err needs one column per --y column"));
            }
            Some(cols)
        }
        None => None,
    };
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .filter_map(|r| r.ok())
        .filter(|r| !r.get(0).is_some_and(|c| c.starts_with('#')))
        .collect();
    let value = |r: &csv::StringRecord, c: usize| r.get(c).and_then(|v| v.trim().parse::<f64>().ok());
    let mut series = Vec::new();
    for (k, (&yc, name)) in y_cols.iter().zip(&y_names).enumerate() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut e = Vec::new();
        for r in &rows {
            let (Some(xv), Some(yv)) = (value(r, x_col), value(r, yc)) else {
                continue;
            };
            let ev = err_cols
                .as_ref()
                .map(|c| value(r, c[k]).unwrap_or(f64::NAN))
                .unwrap_or(0.0);
            if xv.is_finite() && yv.is_finite() && ev.is_finite() && (!a.log_x || xv > 0.0) {
                x.push(xv);
                y.push(yv);
                e.push(ev);
            }
        }
        if x.is_empty() {
            continue;
        }
        let mut s = Series::new(*name, x, y);
        if err_cols.is_some() {
            s = s.with_errors(e);
        }
        series.push(s);
    }
    if series.is_empty() {
        return Err(config_error("no drawable data points"));
    }
    let meta = ChartMeta {
        title: a.title.clone(),
        x_label: a.x.clone(),
        y_label: a.y.clone(),
        log_x: a.log_x,
        reference_lines: Vec::new(),
    };
    write_line_chart(&series, &meta, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Configuration and argument problems exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) | Some(Error::InvalidInput(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|_| true),
        Command::Estimate(a) => cmd_estimate(a, exec).map(|_| true),
        Command::Resimulate(a) => cmd_resimulate(a).map(|_| true),
        Command::Msm(a) => cmd_msm(a).map(|_| true),
        Command::Pcca(a) => cmd_pcca(a).map(|_| true),
        Command::BoundCheck(a) => cmd_bound(a).map(|_| true),
        Command::Experiment(a) => cmd_experiment(a, exec),
        Command::Plot(a) => cmd_plot(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more pipeline stages failed (see manifest.json)");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
