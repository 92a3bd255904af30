//! End-to-end pipeline behavior on a small harmonic system.

use std::fs;
use std::path::Path;

use effdyn::config::{
    BootstrapConfig, Dynamics, EffectiveSettings, ExperimentConfig, ExperimentKind, GeneratorSettings, MsmSettings,
    SimulationSettings,
};
use effdyn::experiment::run_experiment;
use effdyn::generator::NodeLayout;
use effdyn::{Error, Exec, PotentialSpec, RCGrid, ReactionCoordinate};

fn harmonic_config(dir: &Path, offsets: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Custom,
        potential: PotentialSpec::harmonic(1.0).unwrap(),
        beta: 1.0,
        gamma: 1.0,
        simulation: Some(SimulationSettings {
            dt: 1e-2,
            n_steps: 200_000,
            burn_in: None,
            initial_state: vec![0.0],
            sources: vec![Dynamics::Overdamped, Dynamics::Langevin],
        }),
        reaction_coordinate: ReactionCoordinate::select(vec![0]),
        grid: RCGrid::uniform(-3.0, 0.25, 24).unwrap(),
        offsets,
        min_count: 50,
        effective: Some(EffectiveSettings {
            dt: 1e-2,
            n_steps: 100_000,
            initial_z: None,
        }),
        msm: Some(MsmSettings {
            lags: vec![0.5, 1.0],
            n_eigen: 3,
            reference_rc: None,
            reference_grid: None,
            bootstrap_blocks: 10,
            bootstrap_replicas: 10,
        }),
        pcca_sets: 2,
        bootstrap: BootstrapConfig {
            replicas: 10,
            block_len: 200,
        },
        intervals: vec![(-0.5, 0.5), (0.5, 1.5)],
        generator: Some(GeneratorSettings {
            layout: NodeLayout::cartesian(vec![-7.0], vec![7.0], vec![400]),
            n_eigen: 4,
            bound_sets: 0,
            eta1: None,
            level_set_axis: 0,
        }),
        large_offset: None,
        save_trajectories: false,
        output_dir: dir.to_path_buf(),
        seed: 11,
    }
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn identical_configs_give_identical_files() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    let ra = run_experiment(&harmonic_config(&a, vec![0.01, 0.1]), Exec::Parallel).unwrap();
    let rb = run_experiment(&harmonic_config(&b, vec![0.01, 0.1]), Exec::Sequential).unwrap();
    assert!(ra.failures.is_empty(), "{:?}", ra.failures);
    assert_eq!(ra.offsets, rb.offsets);
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "config.json" && n != "manifest.json")
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n.ends_with(".csv")));
    assert!(names.iter().any(|n| n.ends_with(".svg")));
    for name in &names {
        if name == "config.json" || name == "manifest.json" {
            continue;
        }
        assert_eq!(read(&a, name), read(&b, name), "{name} differs");
    }
}

#[test]
fn offsets_appear_once_in_ascending_order() {
    let dir = tempfile::tempdir().unwrap();
    let offsets = vec![0.01, 0.05, 0.2];
    run_experiment(&harmonic_config(dir.path(), offsets.clone()), Exec::default()).unwrap();
    for table in [
        "timescales_overdamped_lag0.5.csv",
        "timescales_langevin_lag1.csv",
        "set_probabilities_overdamped.csv",
        "intervals_langevin.csv",
    ] {
        let text = String::from_utf8(read(dir.path(), table)).unwrap();
        let column: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(column, offsets, "{table}");
    }
}

#[test]
fn manifest_is_written_last_and_lists_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = harmonic_config(dir.path(), vec![0.1]);
    let report = run_experiment(&cfg, Exec::default()).unwrap();
    let manifest: serde_json::Value = serde_json::from_slice(&read(dir.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["experiment"], "custom");
    let modified = |p: &Path| fs::metadata(p).unwrap().modified().unwrap();
    let manifest_time = modified(&dir.path().join("manifest.json"));
    for entry in fs::read_dir(dir.path()).unwrap() {
        assert!(modified(&entry.unwrap().path()) <= manifest_time);
    }
    for name in manifest["artifacts"].as_array().unwrap() {
        assert!(dir.path().join(name.as_str().unwrap()).exists(), "{name}");
    }
    let seeds = manifest["seeds"].as_array().unwrap();
    assert!(seeds.iter().any(|s| s["stage"] == "effective-simulation"));
    assert_eq!(report.config_hash, cfg.hash());
}

#[test]
fn failing_offset_is_recorded_and_others_proceed() {
    let dir = tempfile::tempdir().unwrap();
    // 5000 time units exceed the 2000-unit trajectory
    let cfg = harmonic_config(dir.path(), vec![0.1, 5000.0]);
    let report = run_experiment(&cfg, Exec::default()).unwrap();
    let ok = report.offset(Dynamics::Overdamped, 0.1).unwrap();
    let bad = report.offset(Dynamics::Overdamped, 5000.0).unwrap();
    assert!(ok.ok());
    assert!(!bad.ok() && bad.coefficients.is_none() && bad.lags.is_empty());
    assert!(report
        .failures
        .iter()
        .any(|f| f.stage == "km" && f.offset == Some(5000.0)));
    let manifest: serde_json::Value = serde_json::from_slice(&read(dir.path(), "manifest.json")).unwrap();
    assert!(!manifest["failures"].as_array().unwrap().is_empty());
    let table = String::from_utf8(read(dir.path(), "timescales_overdamped_lag0.5.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("5000,failed")));
}

#[test]
fn harmonic_timescales_agree_with_generator() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&harmonic_config(dir.path(), vec![0.01]), Exec::default()).unwrap();
    let gen = report.generator.as_ref().unwrap();
    assert!((gen.timescales[1] - 1.0).abs() < 0.01, "{:?}", gen.timescales);
    let eff = report.offset(Dynamics::Overdamped, 0.01).unwrap().timescale(1);
    assert!((eff - 1.0).abs() < 0.15, "effective t2 = {eff}");
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = harmonic_config(dir.path(), vec![0.1, 0.01]);
    assert!(matches!(run_experiment(&cfg, Exec::default()), Err(Error::Config(_))));
    cfg.offsets = vec![0.015];
    assert!(matches!(run_experiment(&cfg, Exec::default()), Err(Error::Config(_))));
    assert!(!dir.path().join("manifest.json").exists());
}
