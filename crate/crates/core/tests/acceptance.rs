//! Acceptance criteria A1 to A10 at full scale.
//!
//! Runs the three preset experiments and the oracle checks, then prints one
//! `PASS` or `FAIL` line per criterion. A failing criterion does not fail the
//! target unless `ACCEPTANCE_STRICT=1` is set; errors that prevent a
//! criterion from being evaluated always do.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use effdyn::config::{Dynamics, ExperimentConfig, ExperimentKind, Scale};
use effdyn::experiment::{run_experiment, ExperimentReport};
use effdyn::generator::{build_generator, LevelSets, NodeLayout};
use effdyn::io::{decode_trajectory, encode_trajectory, read_trajectory_csv, write_trajectory_csv};
use effdyn::km::{estimate_from_samples, estimate_km, KmSamples};
use effdyn::oracles::{lemon_slice_constants, lemon_slice_effective, ou_km_reference_moments, LemonMarginal};
use effdyn::{simulate_overdamped, Exec, PotentialSpec, RCGrid, ReactionCoordinate, SimConfig, TrajKind};

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Relative difference of a pair with respect to its mean.
fn pair_rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (0.5 * (a + b))
}

/// Largest pairwise relative spread, `(max - min) / mean`.
fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min) / (values.iter().sum::<f64>() / values.len() as f64)
}

fn out_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn run_preset(kind: ExperimentKind) -> (ExperimentReport, f64) {
    let mut cfg = ExperimentConfig::preset(kind, Scale::Full).expect("preset");
    cfg.output_dir = out_dir(kind.name());
    let t = Instant::now();
    let report = run_experiment(&cfg, Exec::default()).expect("pipeline");
    (report, t.elapsed().as_secs_f64())
}

fn a1(reference_only: &ExperimentReport, elapsed: f64, full: &ExperimentReport) -> Verdict {
    let r = reference_only.reference(Dynamics::Overdamped).expect("lemon reference");
    let t = &r.lags[0].timescales;
    let mut pass = elapsed < 300.0;
    let mut parts = Vec::new();
    for (k, target) in [(1, 1.70), (3, 0.49), (5, 0.29)] {
        let (a, b) = (t[k], t[k + 1]);
        let ok = rel(a, target) <= 0.15 && rel(b, target) <= 0.15 && pair_rel(a, b) <= 0.05;
        pass &= ok;
        parts.push(format!(
            "t{}/t{} = {a:.4}/{b:.4} (vs {target}: {:.1}%/{:.1}%, pair {:.2}%)",
            k + 1,
            k + 2,
            100.0 * rel(a, target),
            100.0 * rel(b, target),
            100.0 * pair_rel(a, b)
        ));
    }
    // the pipeline must report the same reference as the standalone run
    let same = full
        .reference(Dynamics::Overdamped)
        .map(|f| f.lags == r.lags)
        .unwrap_or(false);
    pass &= same;
    parts.push(format!(
        "reference stage {elapsed:.0} s, pipeline reference identical: {same}"
    ));
    verdict("A1", pass, parts.join("; "))
}

fn a2(report: &ExperimentReport) -> Verdict {
    let o = report.offset(Dynamics::Overdamped, 1e-3).expect("s = 1e-3");
    let (Some(c), Some(se)) = (&o.coefficients, &o.bootstrap) else {
        return verdict("A2", false, format!("estimation failed: {:?}", o.errors));
    };
    let consts = lemon_slice_constants(1e-12).expect("constants");
    let nu = LemonMarginal::new(1.0).expect("marginal");
    let axis = &c.grid.axes[0];
    let (mut n, mut drift_in, mut diff_in, mut zsum) = (0usize, 0usize, 0usize, 0.0);
    for b in c.valid_bins() {
        let (lo, hi) = axis.edges(b);
        // the oracle averaged over the bin with the stationary marginal
        let drift_ref = nu
            .average(|z| lemon_slice_effective(z, &consts).0, lo, hi)
            .expect("quadrature");
        let diff_ref = consts.ratio();
        n += 1;
        drift_in += usize::from((c.drift_at(b)[0] - drift_ref).abs() <= 3.0 * se.drift_se[b]);
        diff_in += usize::from((c.diffusion_at(b)[0] - diff_ref).abs() <= 3.0 * se.diffusion_se[b]);
        zsum += (c.diffusion_at(b)[0] - diff_ref) / se.diffusion_se[b];
    }
    let (fd, fa) = (drift_in as f64 / n as f64, diff_in as f64 / n as f64);
    verdict(
        "A2",
        fd >= 0.9 && fa >= 0.9,
        format!(
            "{n} valid bins; within 3 sigma: drift {:.1}%, diffusion {:.1}% (mean diffusion z-score {:+.2})",
            100.0 * fd,
            100.0 * fa,
            zsum / n as f64
        ),
    )
}

fn a3(report: &ExperimentReport) -> Verdict {
    let r = report.reference(Dynamics::Overdamped).expect("reference");
    let t_ref = &r.lags[0].timescales;
    let mut pass = true;
    let mut worst = Vec::new();
    for o in report.offsets_for(Dynamics::Overdamped) {
        if o.offset > 0.1 + 1e-12 {
            continue;
        }
        let devs: Vec<f64> = (1..=4).map(|i| rel(o.timescale(i), t_ref[i])).collect();
        let max = devs.iter().copied().fold(0.0, f64::max);
        pass &= o.ok() && max <= 0.15;
        worst.push(format!("s={}: {:.1}%", o.offset, 100.0 * max));
    }
    verdict(
        "A3",
        pass,
        format!("max |t2..t5 deviation| per offset: {}", worst.join(", ")),
    )
}

fn a4(report: &ExperimentReport) -> Verdict {
    let reference = report.interval_reference.as_ref().expect("interval reference");
    let mut pass = true;
    let mut parts = Vec::new();
    for o in report.offsets_for(Dynamics::Overdamped) {
        if o.offset > 0.1 + 1e-12 {
            continue;
        }
        let Some(occ) = &o.interval_occupancy else {
            pass = false;
            parts.push(format!("s={}: missing", o.offset));
            continue;
        };
        let dev = occ
            .iter()
            .zip(&reference.probabilities)
            .map(|(a, b)| rel(*a, *b))
            .fold(0.0, f64::max);
        let sp = spread(occ);
        pass &= dev <= 0.10 && sp <= 0.05;
        parts.push(format!("s={}: {:.1}%/{:.1}%", o.offset, 100.0 * dev, 100.0 * sp));
    }
    verdict(
        "A4",
        pass,
        format!(
            "max deviation from {} / spread of the seven: {}",
            reference.method,
            parts.join(", ")
        ),
    )
}

fn max_abs(values: &[f64], valid: &[bool]) -> f64 {
    values
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(x, _)| x.abs())
        .fold(0.0, f64::max)
}

fn a5(report: &ExperimentReport) -> Verdict {
    let get = |src, s| {
        report
            .offset(src, s)
            .and_then(|o| Some((o.coefficients.as_ref()?, o.bootstrap.as_ref()?)))
    };
    let (Some((l_small, _)), Some((l1, l1_se)), Some((o1, o1_se))) = (
        get(Dynamics::Langevin, 0.01),
        get(Dynamics::Langevin, 1.0),
        get(Dynamics::Overdamped, 1.0),
    ) else {
        return verdict("A5", false, "estimates missing".into());
    };
    let drift_ratio = max_abs(&l_small.drift, &l_small.valid) / max_abs(&l1.drift, &l1.valid);
    let diff_ratio = max_abs(&l_small.diffusion, &l_small.valid) / max_abs(&l1.diffusion, &l1.valid);
    let (mut n, mut drift_in, mut diff_in) = (0, 0, 0);
    for b in 0..l1.n_bins() {
        if !(l1.valid[b] && o1.valid[b]) {
            continue;
        }
        n += 1;
        let sd = l1_se.drift_se[b].hypot(o1_se.drift_se[b]);
        let sa = l1_se.diffusion_se[b].hypot(o1_se.diffusion_se[b]);
        drift_in += usize::from((l1.drift[b] - o1.drift[b]).abs() <= 3.0 * sd);
        diff_in += usize::from((l1.diffusion[b] - o1.diffusion[b]).abs() <= 3.0 * sa);
    }
    let pass = drift_ratio < 0.1 && diff_ratio < 0.1 && drift_in == n && diff_in == n;
    verdict(
        "A5",
        pass,
        format!(
            "s=0.01 / s=1 magnitude: drift {:.3}, diffusion {:.3}; s=1 Langevin vs overdamped within 3 combined sigma: drift {drift_in}/{n}, diffusion {diff_in}/{n}",
            drift_ratio, diff_ratio
        ),
    )
}

fn a6(report: &ExperimentReport) -> Verdict {
    let reference = report
        .reference(Dynamics::Overdamped)
        .and_then(|r| r.sets.as_ref())
        .expect("reference sets");
    let mut pass = true;
    let mut parts = Vec::new();
    for o in &report.offsets {
        if o.offset < 1.0 - 1e-12 {
            continue;
        }
        let t2 = o.timescale(1);
        let probs = o.sets.as_ref().map(|s| s.probabilities.clone()).unwrap_or_default();
        let dev = if probs.len() == reference.probabilities.len() {
            probs
                .iter()
                .zip(&reference.probabilities)
                .map(|(a, b)| rel(*a, *b))
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        pass &= rel(t2, 75.0) <= 0.20 && dev <= 0.10;
        parts.push(format!(
            "{} s={}: t2 {:.1}, sets {:.0}%",
            o.source.label(),
            o.offset,
            t2,
            100.0 * dev
        ));
    }
    verdict(
        "A6",
        pass,
        format!("reference sets {:?}; {}", reference.probabilities, parts.join(", ")),
    )
}

fn a7(report: &ExperimentReport) -> Verdict {
    let Some(b) = report.generator.as_ref().and_then(|g| g.bound.as_ref()) else {
        return verdict("A7", false, format!("bound missing: {:?}", report.failures));
    };
    let ordered = b.omegas.iter().zip(&b.kappas).all(|(w, k)| *w >= k - 1e-6);
    verdict(
        "A7",
        b.passes && b.lhs <= b.rhs && ordered && b.m == 7,
        format!(
            "M={} eps={:.4} LHS={:.4} RHS={:.4}, omega >= kappa: {ordered}",
            b.m, b.epsilon, b.lhs, b.rhs
        ),
    )
}

fn a8() -> Verdict {
    // no reduction on the lemon slice grid
    let gen = build_generator(&PotentialSpec::LemonSlice, &NodeLayout::lemon_slice(200), 1.0, 1.0).expect("grid");
    let eig = gen.eigenpairs(8).expect("eigenpairs");
    let omega = LevelSets::identity(gen.n()).effective_rates(&gen, 8).expect("rates");
    let identity_err = omega
        .iter()
        .zip(&eig.rates)
        .map(|(w, k)| (w - k).abs())
        .fold(0.0, f64::max);

    // the toy potential separates, so psi_2 is a function of x alone
    let layout = NodeLayout::double_well(120, 120);
    let gen = build_generator(&PotentialSpec::DoubleWell2D, &layout, 0.4, 10.0).expect("grid");
    let eig = gen.eigenpairs(4).expect("eigenpairs");
    let grid = layout.slice_grid(0).expect("slice grid");
    let sets = LevelSets::new(&gen, &ReactionCoordinate::select(vec![0]), &grid).expect("level sets");
    let omega = sets.effective_rates(&gen, 4).expect("rates");
    let psi = eig.vector(1);
    let h1 = gen.h1_error(&psi, &sets.project(&gen, &psi));
    let kept = omega
        .iter()
        .map(|w| (w - eig.rates[1]).abs())
        .fold(f64::INFINITY, f64::min);
    verdict(
        "A8",
        identity_err <= 1e-8 && h1 < 1e-8 && kept <= 1e-6,
        format!(
            "identity: max |omega - kappa| = {identity_err:.2e}; level-set constant psi_2 (H1 residual {h1:.1e}): |omega - kappa_2| = {kept:.2e}"
        ),
    )
}

fn a9(report: &ExperimentReport) -> Verdict {
    let Some(a) = &report.asymptotics else {
        return verdict("A9", false, format!("asymptotics missing: {:?}", report.failures));
    };
    verdict(
        "A9",
        a.drift_rel_l2 <= 0.15 && a.diffusion_rel_l2 <= 0.15,
        format!(
            "s={} ({} pooled trajectories, {} plateau bins): relative L2 drift {:.4}, diffusion {:.4}",
            a.offset,
            a.trajectories,
            a.rows.len(),
            a.drift_rel_l2,
            a.diffusion_rel_l2
        ),
    )
}

/// Count-weighted relative L2 distance.
fn weighted_rel_l2(pairs: &[(f64, f64, f64)]) -> f64 {
    let num: f64 = pairs.iter().map(|(e, r, w)| w * (e - r).powi(2)).sum();
    let den: f64 = pairs.iter().map(|(_, r, w)| w * r * r).sum();
    (num / den).sqrt()
}

fn a10() -> Verdict {
    let (theta, beta, dt) = (1.0, 1.0, 1e-2);
    let spec = PotentialSpec::harmonic(theta).expect("potential");
    let cfg = SimConfig::new(beta, 1.0, dt, 10_000_000, 20180604, vec![0.0]);
    let traj = simulate_overdamped(&spec, &cfg).expect("simulation");
    let rc = ReactionCoordinate::select(vec![0]);
    let grid = RCGrid::uniform(-3.0, 0.25, 24).expect("grid");
    let z = traj.column(0);
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [0.01, 0.1, 0.5] {
        let est = estimate_km(&traj, &rc, &grid, s, 200, beta).expect("estimate");
        let k = (s / dt).round() as usize;
        let nb = grid.n_bins();
        let (mut m1, mut m2, mut cnt) = (vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]);
        for &x in &z[..z.len() - k] {
            if let Some(b) = grid.bin_index(&[x]) {
                m1[b] += x;
                m2[b] += x * x;
                cnt[b] += 1.0;
            }
        }
        let (mut drift, mut diff) = (Vec::new(), Vec::new());
        for b in est.valid_bins() {
            let (rb, ra) = ou_km_reference_moments(theta, beta, s, m1[b] / cnt[b], m2[b] / cnt[b]);
            let w = est.counts[b] as f64;
            drift.push((est.drift_at(b)[0], rb, w));
            diff.push((est.diffusion_at(b)[0], ra, w));
        }
        let (db, da) = (weighted_rel_l2(&drift), weighted_rel_l2(&diff));
        pass &= db < 0.01 && da < 0.01;
        parts.push(format!("s={s}: drift {:.2}%, diffusion {:.2}%", 100.0 * db, 100.0 * da));
    }

    let (theta_g, gamma) = (1.5, 2.0);
    let layout = NodeLayout::cartesian(vec![-7.0], vec![7.0], vec![600]);
    let eig = build_generator(
        &PotentialSpec::harmonic(theta_g).expect("potential"),
        &layout,
        1.0,
        gamma,
    )
    .and_then(|g| g.eigenpairs(4))
    .expect("eigenpairs");
    let rate_err = (1..4)
        .map(|n| rel(eig.rates[n], n as f64 * theta_g / gamma))
        .fold(0.0, f64::max);
    pass &= rate_err < 0.01;
    parts.push(format!("grid rates max error {:.3}%", 100.0 * rate_err));

    // determinism and round trips
    let small = SimConfig::new(beta, 1.0, dt, 100_000, 5, vec![0.0]);
    let (x, y) = (
        simulate_overdamped(&spec, &small).expect("sim"),
        simulate_overdamped(&spec, &small).expect("sim"),
    );
    let mut exact = x == y;
    // metadata travels in the sidecar, not in the binary payload
    exact &= decode_trajectory(&encode_trajectory(&x))
        .map(|t| t.as_flat() == x.as_flat() && t.dt == x.dt && t.kind == x.kind)
        .unwrap_or(false);
    let path = out_dir("roundtrip").join("ou.csv");
    std::fs::create_dir_all(path.parent().expect("parent")).expect("mkdir");
    write_trajectory_csv(&x, &path).expect("csv");
    exact &= read_trajectory_csv(&path, TrajKind::Overdamped, Some(dt))
        .map(|t| t.as_flat() == x.as_flat())
        .unwrap_or(false);
    let samples = KmSamples::collect(&x, &rc, &grid, 0.1).expect("samples");
    let seq = estimate_from_samples(Exec::Sequential, &samples, &grid, beta, 10).expect("estimate");
    let par = estimate_from_samples(Exec::Parallel, &samples, &grid, beta, 10).expect("estimate");
    exact &= seq == par;
    for kind in [
        ExperimentKind::LemonSlice,
        ExperimentKind::LangevinToy,
        ExperimentKind::BoundCheck,
    ] {
        let cfg = ExperimentConfig::preset(kind, Scale::Full).expect("preset");
        exact &= ExperimentConfig::from_json(&cfg.to_json())
            .map(|c| c.hash() == cfg.hash())
            .unwrap_or(false);
    }
    pass &= exact;
    parts.push(format!("bit-exact invariants: {exact}"));
    verdict("A10", pass, parts.join("; "))
}

fn main() -> ExitCode {
    // libtest arguments such as --nocapture are accepted and ignored
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut verdicts = Vec::new();

    let mut cfg = ExperimentConfig::preset(ExperimentKind::LemonSlice, Scale::Full).expect("preset");
    cfg.offsets.clear();
    cfg.effective = None;
    cfg.output_dir = out_dir("lemon-reference");
    let t = Instant::now();
    let reference_only = run_experiment(&cfg, Exec::default()).expect("reference");
    let reference_secs = t.elapsed().as_secs_f64();

    let (lemon, lemon_secs) = run_preset(ExperimentKind::LemonSlice);
    verdicts.push(a1(&reference_only, reference_secs, &lemon));
    verdicts.push(a2(&lemon));
    verdicts.push(a3(&lemon));
    verdicts.push(a4(&lemon));
    let (toy, toy_secs) = run_preset(ExperimentKind::LangevinToy);
    verdicts.push(a5(&toy));
    verdicts.push(a6(&toy));
    let (bound, bound_secs) = run_preset(ExperimentKind::BoundCheck);
    verdicts.push(a7(&bound));
    verdicts.push(a8());
    verdicts.push(a9(&toy));
    verdicts.push(a10());

    println!(
        "acceptance runs: lemon-slice {lemon_secs:.0} s, langevin-toy {toy_secs:.0} s, bound-check {bound_secs:.0} s"
    );
    for v in &verdicts {
        println!("{} {}: {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("acceptance: {passed}/{} criteria pass", verdicts.len());
    if strict && passed < verdicts.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
