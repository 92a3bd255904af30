//! Invariants checked over randomly generated inputs.

use std::f64::consts::PI;

use proptest::prelude::*;

use effdyn::config::{ExperimentConfig, ExperimentKind, Scale};
use effdyn::effective::psd_sqrt;
use effdyn::io::{decode_trajectory, encode_trajectory};
use effdyn::km::{estimate_from_samples, floor_symmetric, KmSamples};
use effdyn::msm::{count_matrix, estimate_msm, interval_probabilities, DiscreteTrajectory};
use effdyn::projection::wrap_symmetric;
use effdyn::{
    simulate_overdamped, Exec, GridAxis, PotentialSpec, RCGrid, ReactionCoordinate, SimConfig, TrajKind, Trajectory,
};

fn sym2() -> impl Strategy<Value = [f64; 4]> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| [a, b, b, c])
}

fn eigen2(a: &[f64]) -> (f64, f64) {
    let mean = 0.5 * (a[0] + a[3]);
    let rad = (0.25 * (a[0] - a[3]).powi(2) + a[1] * a[1]).sqrt();
    (mean - rad, mean + rad)
}

proptest! {
    #[test]
    fn wrapped_difference_is_short_and_congruent(d in -100.0..100.0f64, p in 0.5..10.0f64) {
        let w = wrap_symmetric(d, p);
        prop_assert!(w.abs() <= 0.5 * p + 1e-12);
        let turns = (d - w) / p;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn bin_centers_map_back_to_their_bin(lower in -5.0..5.0f64, width in 0.01..2.0f64, count in 1usize..60, i in 0usize..60) {
        let axis = GridAxis::new(lower, width, count);
        let i = i % count;
        prop_assert_eq!(axis.index(axis.center(i)), Some(i));
        let (lo, hi) = axis.edges(i);
        prop_assert!(lo < hi);
        prop_assert_eq!(axis.index(lo - 1e-9 * width.max(1.0) - width * count as f64), None);
    }

    #[test]
    fn periodic_index_ignores_whole_turns(z in -PI..PI, k in -5i32..5) {
        let grid = RCGrid::lemon_angle();
        let axis = &grid.axes[0];
        let shifted = z + 2.0 * PI * k as f64;
        let (a, b) = (axis.index(z).unwrap(), axis.index(shifted).unwrap());
        // rounding may move a point sitting on an edge into the neighbor
        let gap = a.abs_diff(b);
        prop_assert!(gap == 0 || gap == 1 || gap == axis.count - 1);
    }

    #[test]
    fn binary_trajectory_round_trips(rows in 1usize..50, dim in 1usize..4, dt in 1e-4..1.0f64, seed in any::<u64>()) {
        let data: Vec<f64> = (0..rows * dim).map(|k| ((seed as f64) * 1e-12 + k as f64).sin()).collect();
        let traj = Trajectory::new(data, dim, dt, TrajKind::Langevin).unwrap();
        let back = decode_trajectory(&encode_trajectory(&traj)).unwrap();
        prop_assert_eq!(back, traj);
    }

    #[test]
    fn floored_matrices_respect_the_floor(a in sym2(), floor in 1e-6..0.5f64) {
        let mut b = a;
        floor_symmetric(&mut b, 2, floor);
        let (lo, _) = eigen2(&b);
        prop_assert!(lo >= floor - 1e-9);
        prop_assert!((b[1] - b[2]).abs() < 1e-12);
        let (alo, _) = eigen2(&a);
        if alo >= floor {
            for k in 0..4 {
                prop_assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
        let mut again = b;
        floor_symmetric(&mut again, 2, floor);
        for k in 0..4 {
            prop_assert!((again[k] - b[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn psd_square_root_squares_back(l in 0.01..4.0f64, g in -2.0..2.0f64, h in 0.01..4.0f64) {
        // a = L L^T with L lower triangular is positive definite
        let a = [l * l, l * g, l * g, g * g + h * h];
        let mut r = [0.0; 4];
        psd_sqrt(&a, 2, &mut r);
        let sq = [
            r[0] * r[0] + r[1] * r[2],
            r[0] * r[1] + r[1] * r[3],
            r[2] * r[0] + r[3] * r[2],
            r[2] * r[1] + r[3] * r[3],
        ];
        for k in 0..4 {
            prop_assert!((sq[k] - a[k]).abs() < 1e-9 * (1.0 + a[k].abs()));
        }
        prop_assert!((r[1] - r[2]).abs() < 1e-12);
    }

    #[test]
    fn interval_probabilities_are_additive(masses in prop::collection::vec(0.0..1.0f64, 10), cut in 0.0..10.0f64, lo in 0.0..5.0f64, len in 0.0..5.0f64) {
        prop_assume!(masses.iter().sum::<f64>() > 1e-3);
        let axis = GridAxis::new(0.0, 1.0, 10);
        let whole = interval_probabilities(&axis, &masses, &[(0.0, 10.0)]).unwrap();
        prop_assert!((whole[0] - 1.0).abs() < 1e-12);
        let parts = interval_probabilities(&axis, &masses, &[(lo, lo + len), (0.0, cut), (cut, 10.0)]).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&parts[0]));
        prop_assert!((parts[1] + parts[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_intervals_wrap_across_the_seam(masses in prop::collection::vec(0.01..1.0f64, 8), a in 0.0..1.0f64) {
        let axis = GridAxis::periodic(-4.0, 1.0, 8, 8.0);
        let wrapped = interval_probabilities(&axis, &masses, &[(4.0 - a, 4.0 + a)]).unwrap()[0];
        let split = interval_probabilities(&axis, &masses, &[(4.0 - a, 4.0), (-4.0, -4.0 + a)]).unwrap();
        prop_assert!((wrapped - split[0] - split[1]).abs() < 1e-12);
    }

    #[test]
    fn transition_rows_are_stochastic(states in prop::collection::vec(0usize..4, 200..400), lag in 1usize..5) {
        let dtraj = DiscreteTrajectory::new(states.into_iter().map(Some).collect(), 4, 0.1).unwrap();
        if let Ok(model) = estimate_msm(&dtraj, lag, 2, true) {
            let n = model.transition.nrows();
            for i in 0..n {
                let row = model.transition.row(i);
                prop_assert!((row.sum() - 1.0).abs() < 1e-10);
                prop_assert!(row.iter().all(|&v| v >= -1e-12));
            }
            prop_assert!(model.stationarity_residual() < 1e-10);
            prop_assert!((model.stationary.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn count_matrices_do_not_depend_on_execution(states in prop::collection::vec(prop::option::weighted(0.9, 0usize..6), 1..3000), lag in 1usize..20) {
        let dtraj = DiscreteTrajectory::new(states, 6, 1.0).unwrap();
        let seq = count_matrix(Exec::Sequential, &dtraj, lag);
        let par = count_matrix(Exec::Parallel, &dtraj, lag);
        match (seq, par) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.counts, b.counts),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn presets_survive_a_json_round_trip(seed in any::<u64>(), beta in 0.1..5.0f64, which in 0usize..3) {
        let kind = [ExperimentKind::LemonSlice, ExperimentKind::LangevinToy, ExperimentKind::BoundCheck][which];
        let mut cfg = ExperimentConfig::preset(kind, Scale::Ci).unwrap();
        cfg.seed = seed;
        cfg.beta = beta;
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), cfg.to_json());
        prop_assert_eq!(back.hash(), cfg.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn km_estimates_do_not_depend_on_execution(seed in any::<u64>(), s_steps in 1usize..30) {
        let cfg = SimConfig::new(1.0, 1.0, 1e-2, 50_000, seed, vec![0.0]);
        let traj = simulate_overdamped(&PotentialSpec::harmonic(1.0).unwrap(), &cfg).unwrap();
        let rc = ReactionCoordinate::select(vec![0]);
        let grid = RCGrid::uniform(-3.0, 0.5, 12).unwrap();
        let samples = KmSamples::collect(&traj, &rc, &grid, s_steps as f64 * 1e-2).unwrap();
        let a = estimate_from_samples(Exec::Sequential, &samples, &grid, 1.0, 10).unwrap();
        let b = estimate_from_samples(Exec::Parallel, &samples, &grid, 1.0, 10).unwrap();
        prop_assert_eq!(a.counts, b.counts);
        prop_assert_eq!(a.drift, b.drift);
        prop_assert_eq!(a.diffusion, b.diffusion);
    }
}
