//! Binned Kramers-Moyal estimation of effective drift and diffusion at a
//! finite offset, block-bootstrap uncertainties, and interpolation of the
//! binned values to a continuous coefficient field.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::projection::{RCGrid, ReactionCoordinate};
use crate::rng::{split_seed, Stream};
use crate::trajectory::Trajectory;

/// Bins with fewer samples than this are invalid by default.
pub const DEFAULT_MIN_COUNT: u64 = 50;

/// Floor on diffusion eigenvalues.
pub const A_FLOOR: f64 = 1e-12;

const NO_BIN: u32 = u32::MAX;

/// Offset as a whole number of time steps.
pub fn offset_steps(s: f64, dt: f64) -> Result<usize> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("offset must be positive, got {s}")));
    }
    let k = (s / dt).round();
    if k < 1.0 || (k * dt - s).abs() > 1e-9 * s.max(dt) {
        return Err(Error::invalid(format!("offset {s} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize)
}

/// Per-pair bin assignment and reaction-coordinate increment at one offset.
#[derive(Clone, Debug)]
pub struct KmSamples {
    pub m: usize,
    pub n_bins: usize,
    pub offset: f64,
    bins: Vec<u32>,
    deltas: Vec<f64>,
}

impl KmSamples {
    pub fn collect(traj: &Trajectory, rc: &ReactionCoordinate, grid: &RCGrid, s: f64) -> Result<Self> {
        rc.validate()?;
        if grid.dim() != rc.m() {
            return Err(Error::invalid(format!(
                "grid has {} axes but the reaction coordinate has {} components",
                grid.dim(),
                rc.m()
            )));
        }
        let lag = offset_steps(s, traj.dt)?;
        if traj.len() <= lag {
            return Err(Error::invalid(format!(
                "trajectory of {} frames is too short for an offset of {lag} steps",
                traj.len()
            )));
        }
        let m = rc.m();
        let z = rc.apply_trajectory(traj)?;
        let n = traj.len() - lag;
        let mut bins = Vec::with_capacity(n);
        let mut deltas = vec![0.0; n * m];
        for t in 0..n {
            let zt = &z[t * m..(t + 1) * m];
            bins.push(grid.bin_index(zt).map_or(NO_BIN, |b| b as u32));
            rc.wrap_difference_into(
                &z[(t + lag) * m..(t + lag + 1) * m],
                zt,
                &mut deltas[t * m..(t + 1) * m],
            );
        }
        Ok(Self {
            m,
            n_bins: grid.n_bins(),
            offset: s,
            bins,
            deltas,
        })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    #[inline]
    fn add(&self, t: usize, sums: &mut KmSums) {
        let b = self.bins[t];
        if b != NO_BIN {
            sums.add(b as usize, &self.deltas[t * self.m..(t + 1) * self.m]);
        }
    }

    /// Sufficient statistics of pairs `range`.
    pub fn sums(&self, range: std::ops::Range<usize>) -> KmSums {
        let mut sums = KmSums::new(self.n_bins, self.m);
        for t in range {
            self.add(t, &mut sums);
        }
        sums
    }
}

/// Per-bin count, first and second moment sums of the increments.
#[derive(Clone, Debug, PartialEq)]
pub struct KmSums {
    m: usize,
    pub counts: Vec<u64>,
    sum1: Vec<f64>,
    sum2: Vec<f64>,
}

impl KmSums {
    pub fn new(n_bins: usize, m: usize) -> Self {
        Self {
            m,
            counts: vec![0; n_bins],
            sum1: vec![0.0; n_bins * m],
            sum2: vec![0.0; n_bins * m * m],
        }
    }

    #[inline]
    fn add(&mut self, b: usize, delta: &[f64]) {
        let m = self.m;
        self.counts[b] += 1;
        for l in 0..m {
            self.sum1[b * m + l] += delta[l];
            for r in 0..m {
                self.sum2[(b * m + l) * m + r] += delta[l] * delta[r];
            }
        }
    }

    pub fn merge(&mut self, other: &KmSums) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.sum1.iter_mut().zip(&other.sum1) {
            *a += b;
        }
        for (a, b) in self.sum2.iter_mut().zip(&other.sum2) {
            *a += b;
        }
    }

    /// Raw (unfloored) drift and diffusion per bin; empty bins give zeros.
    fn moments(&self, s: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
        let m = self.m;
        let mut drift = vec![0.0; self.sum1.len()];
        let mut diffusion = vec![0.0; self.sum2.len()];
        for (b, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let n = c as f64;
            for l in 0..m {
                drift[b * m + l] = self.sum1[b * m + l] / (n * s);
                for r in 0..m {
                    diffusion[(b * m + l) * m + r] = 0.5 * beta * self.sum2[(b * m + l) * m + r] / (n * s);
                }
            }
        }
        (drift, diffusion)
    }
}

/// Project a symmetric matrix (row-major, `m x m`) onto eigenvalues `>= floor`.
pub fn floor_symmetric(a: &mut [f64], m: usize, floor: f64) {
    match m {
        1 => a[0] = a[0].max(floor),
        _ => {
            let mat = DMatrix::from_row_slice(m, m, a);
            let sym = 0.5 * (&mat + mat.transpose());
            let eig = SymmetricEigen::new(sym);
            if eig.eigenvalues.iter().all(|&v| v >= floor) {
                return;
            }
            let vals = eig.eigenvalues.map(|v| v.max(floor));
            let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            for l in 0..m {
                for r in 0..m {
                    a[l * m + r] = 0.5 * (rebuilt[(l, r)] + rebuilt[(r, l)]);
                }
            }
        }
    }
}

/// Binned effective drift and diffusion at offset `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedCoefficients {
    pub grid: RCGrid,
    pub offset: f64,
    pub beta: f64,
    pub m: usize,
    /// `n_bins x m`, row-major.
    pub drift: Vec<f64>,
    /// `n_bins x m x m`, row-major, symmetric per bin.
    pub diffusion: Vec<f64>,
    pub counts: Vec<u64>,
    pub valid: Vec<bool>,
}

impl BinnedCoefficients {
    fn from_sums(grid: &RCGrid, sums: &KmSums, s: f64, beta: f64, min_count: u64) -> Result<Self> {
        let m = sums.m;
        let (drift, mut diffusion) = sums.moments(s, beta);
        let valid: Vec<bool> = sums.counts.iter().map(|&c| c >= min_count.max(1)).collect();
        if !valid.iter().any(|&v| v) {
            return Err(Error::EstimationFailed(format!(
                "no bin reached {min_count} samples at offset {s}"
            )));
        }
        for b in 0..valid.len() {
            if valid[b] {
                floor_symmetric(&mut diffusion[b * m * m..(b + 1) * m * m], m, A_FLOOR);
            }
        }
        Ok(Self {
            grid: grid.clone(),
            offset: s,
            beta,
            m,
            drift,
            diffusion,
            counts: sums.counts.clone(),
            valid,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn drift_at(&self, b: usize) -> &[f64] {
        &self.drift[b * self.m..(b + 1) * self.m]
    }

    pub fn diffusion_at(&self, b: usize) -> &[f64] {
        &self.diffusion[b * self.m * self.m..(b + 1) * self.m * self.m]
    }

    pub fn valid_bins(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_bins()).filter(|&b| self.valid[b])
    }

    /// CSV with bin centers, counts, drift and diffusion components, optional
    /// bootstrap standard errors, offset and inverse temperature.
    pub fn to_csv(&self, se: Option<&BootstrapResult>) -> String {
        let m = self.m;
        let mut header: Vec<String> = (1..=m).map(|l| format!("center{l}")).collect();
        header.push("count".into());
        header.push("valid".into());
        header.extend((1..=m).map(|l| format!("drift{l}")));
        for l in 1..=m {
            for r in 1..=m {
                header.push(format!("diffusion{l}{r}"));
            }
        }
        if se.is_some() {
            header.extend((1..=m).map(|l| format!("drift_se{l}")));
            for l in 1..=m {
                for r in 1..=m {
                    header.push(format!("diffusion_se{l}{r}"));
                }
            }
        }
        header.push("offset".into());
        header.push("beta".into());
        let mut out = header.join(",");
        out.push('\n');
        for b in 0..self.n_bins() {
            let mut row: Vec<String> = self.grid.center(b).iter().map(|v| v.to_string()).collect();
            row.push(self.counts[b].to_string());
            row.push((self.valid[b] as u8).to_string());
            row.extend(self.drift_at(b).iter().map(|v| v.to_string()));
            row.extend(self.diffusion_at(b).iter().map(|v| v.to_string()));
            if let Some(se) = se {
                row.extend(se.drift_se[b * m..(b + 1) * m].iter().map(|v| v.to_string()));
                row.extend(
                    se.diffusion_se[b * m * m..(b + 1) * m * m]
                        .iter()
                        .map(|v| v.to_string()),
                );
            }
            row.push(self.offset.to_string());
            row.push(self.beta.to_string());
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: &Path, se: Option<&BootstrapResult>) -> Result<()> {
        std::fs::write(path, self.to_csv(se)).map_err(|e| Error::io(path, e))
    }
}

/// Kramers-Moyal estimate over all pairs `(X_t, X_{t+s})` with `xi(X_t)` in each bin.
pub fn estimate_km(
    traj: &Trajectory,
    rc: &ReactionCoordinate,
    grid: &RCGrid,
    s: f64,
    min_count: u64,
    beta: f64,
) -> Result<BinnedCoefficients> {
    let samples = KmSamples::collect(traj, rc, grid, s)?;
    estimate_from_samples(Exec::default(), &samples, grid, beta, min_count)
}

/// Estimate from sufficient statistics, for instance merged over several
/// independent trajectories at the same offset `s`.
pub fn estimate_from_sums(
    grid: &RCGrid,
    sums: &KmSums,
    s: f64,
    beta: f64,
    min_count: u64,
) -> Result<BinnedCoefficients> {
    if sums.counts.len() != grid.n_bins() {
        return Err(Error::invalid(format!(
            "sums cover {} bins, grid has {}",
            sums.counts.len(),
            grid.n_bins()
        )));
    }
    BinnedCoefficients::from_sums(grid, sums, s, beta, min_count)
}

/// Sufficient statistics of all pairs, accumulated in shards under `exec`.
pub fn total_sums(exec: Exec, samples: &KmSamples) -> KmSums {
    const SHARD: usize = 1 << 18;
    let n = samples.len();
    let parts = exec.map(n.div_ceil(SHARD), |k| samples.sums(k * SHARD..((k + 1) * SHARD).min(n)));
    let mut total = KmSums::new(samples.n_bins, samples.m);
    for p in &parts {
        total.merge(p);
    }
    total
}

/// Estimate from precollected samples, accumulating shards under `exec`.
pub fn estimate_from_samples(
    exec: Exec,
    samples: &KmSamples,
    grid: &RCGrid,
    beta: f64,
    min_count: u64,
) -> Result<BinnedCoefficients> {
    BinnedCoefficients::from_sums(grid, &total_sums(exec, samples), samples.offset, beta, min_count)
}

/// Per-bin bootstrap standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub drift_se: Vec<f64>,
    pub diffusion_se: Vec<f64>,
    pub replicas: usize,
    pub block_len: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BootstrapSettings {
    pub replicas: usize,
    pub block_len: usize,
    pub seed: u64,
}

/// One circular block bootstrap resample of the pair sequence.
///
/// Blocks of `block_len` consecutive pairs start at uniform positions and
/// wrap around the end; blocks are drawn until the resample has the
/// original length. With `block_len >= n` the only distinct resample is the
/// original sequence.
fn resample_sums(samples: &KmSamples, block_len: usize, seed: u64) -> KmSums {
    let n = samples.len();
    if block_len >= n {
        return samples.sums(0..n);
    }
    let mut rng = Stream::new(seed);
    let mut sums = KmSums::new(samples.n_bins, samples.m);
    let mut taken = 0;
    while taken < n {
        let start = rng.below(n);
        let len = block_len.min(n - taken);
        let first = len.min(n - start);
        for t in start..start + first {
            samples.add(t, &mut sums);
        }
        for t in 0..len - first {
            samples.add(t, &mut sums);
        }
        taken += len;
    }
    sums
}

pub fn bootstrap_km(
    traj: &Trajectory,
    rc: &ReactionCoordinate,
    grid: &RCGrid,
    s: f64,
    beta: f64,
    settings: BootstrapSettings,
) -> Result<BootstrapResult> {
    let samples = KmSamples::collect(traj, rc, grid, s)?;
    bootstrap_from_samples(Exec::default(), &samples, beta, settings)
}

/// Standard deviation over replicas of the re-estimated coefficients.
/// A bin contributes only replicas in which it received samples.
pub fn bootstrap_from_samples(
    exec: Exec,
    samples: &KmSamples,
    beta: f64,
    settings: BootstrapSettings,
) -> Result<BootstrapResult> {
    if settings.replicas < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 replicas"));
    }
    if settings.block_len == 0 {
        return Err(Error::invalid("block length must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::EstimationFailed("no sample pairs".into()));
    }
    let s = samples.offset;
    let reps = exec.map(settings.replicas, |i| {
        let sums = resample_sums(samples, settings.block_len, split_seed(settings.seed, i as u64));
        let (drift, diffusion) = sums.moments(s, beta);
        (sums.counts, drift, diffusion)
    });
    let m = samples.m;
    let nb = samples.n_bins;
    let mut drift_se = vec![0.0; nb * m];
    let mut diffusion_se = vec![0.0; nb * m * m];
    for b in 0..nb {
        let used: Vec<&(Vec<u64>, Vec<f64>, Vec<f64>)> = reps.iter().filter(|r| r.0[b] > 0).collect();
        if used.len() < 2 {
            continue;
        }
        for l in 0..m {
            drift_se[b * m + l] = std_dev(used.iter().map(|r| r.1[b * m + l]));
        }
        for k in 0..m * m {
            diffusion_se[b * m * m + k] = std_dev(used.iter().map(|r| r.2[b * m * m + k]));
        }
    }
    Ok(BootstrapResult {
        drift_se,
        diffusion_se,
        replicas: settings.replicas,
        block_len: settings.block_len,
    })
}

fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// One axis of node positions used by the interpolant.
#[derive(Clone, Debug, PartialEq)]
struct NodeAxis {
    centers: Vec<f64>,
    period: Option<f64>,
    lower: f64,
}

impl NodeAxis {
    /// Bracketing node indices and the weight of the upper node.
    #[inline]
    fn locate(&self, z: f64) -> (usize, usize, f64) {
        let c = &self.centers;
        let k = c.len();
        if k == 1 {
            return (0, 0, 0.0);
        }
        match self.period {
            Some(p) => {
                let u = self.lower + (z - self.lower).rem_euclid(p);
                if u < c[0] || u >= c[k - 1] {
                    // across the seam
                    let lo = c[k - 1];
                    let hi = c[0] + p;
                    let u = if u < c[0] { u + p } else { u };
                    (k - 1, 0, (u - lo) / (hi - lo))
                } else {
                    let j = c.partition_point(|&v| v <= u) - 1;
                    (j, j + 1, (u - c[j]) / (c[j + 1] - c[j]))
                }
            }
            None => {
                if z <= c[0] {
                    (0, 0, 0.0)
                } else if z >= c[k - 1] {
                    (k - 1, k - 1, 0.0)
                } else {
                    let j = c.partition_point(|&v| v <= z) - 1;
                    (j, j + 1, (z - c[j]) / (c[j + 1] - c[j]))
                }
            }
        }
    }
}

/// Piecewise-linear effective drift and diffusion on reaction-coordinate space.
///
/// In one dimension the nodes are the valid bin centers. In more dimensions
/// the nodes are all bin centers of the tensor grid, with invalid bins
/// filled from the nearest valid bin, and the interpolant is multilinear.
/// Outside the outermost nodes of a non-periodic axis values are clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub source: BinnedCoefficients,
    axes: Vec<NodeAxis>,
    /// Node values: drift (`m`) then diffusion (`m * m`) per node.
    values: Vec<f64>,
    /// Per axis: sampled range `(lo, hi)` of non-periodic axes.
    pub bounds: Vec<Option<(f64, f64)>>,
}

impl CoefficientField {
    pub fn m(&self) -> usize {
        self.source.m
    }

    pub fn beta(&self) -> f64 {
        self.source.beta
    }

    pub fn period(&self, axis: usize) -> Option<f64> {
        self.axes[axis].period
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.axes[axis].lower
    }

    /// Evaluate drift (`m`) and diffusion (`m x m`) at `z`.
    pub fn eval_into(&self, z: &[f64], drift: &mut [f64], diffusion: &mut [f64]) -> Result<()> {
        let m = self.m();
        let width = m + m * m;
        if z.len() != m {
            return Err(Error::invalid(format!(
                "field expects {m} coordinates, got {}",
                z.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite field query"));
        }
        drift.iter_mut().for_each(|v| *v = 0.0);
        diffusion.iter_mut().for_each(|v| *v = 0.0);
        let located: Vec<(usize, usize, f64)> = self.axes.iter().zip(z).map(|(a, &zl)| a.locate(zl)).collect();
        let dims: Vec<usize> = self.axes.iter().map(|a| a.centers.len()).collect();
        // 2^m corners
        for corner in 0..(1usize << m) {
            let mut w = 1.0;
            let mut flat = 0;
            for (k, &(lo, hi, t)) in located.iter().enumerate() {
                let upper = (corner >> k) & 1 == 1;
                w *= if upper { t } else { 1.0 - t };
                flat = flat * dims[k] + if upper { hi } else { lo };
            }
            if w == 0.0 {
                continue;
            }
            let node = &self.values[flat * width..(flat + 1) * width];
            for l in 0..m {
                drift[l] += w * node[l];
            }
            for k in 0..m * m {
                diffusion[k] += w * node[m + k];
            }
        }
        floor_symmetric(diffusion, m, A_FLOOR);
        Ok(())
    }

    pub fn eval(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.m();
        let mut b = vec![0.0; m];
        let mut a = vec![0.0; m * m];
        self.eval_into(z, &mut b, &mut a)?;
        Ok((b, a))
    }
}

pub fn interpolate_coefficients(binned: &BinnedCoefficients) -> Result<CoefficientField> {
    let m = binned.m;
    let grid = &binned.grid;
    let width = m + m * m;
    let node_values = |b: usize| -> Vec<f64> {
        let mut v = binned.drift_at(b).to_vec();
        v.extend_from_slice(binned.diffusion_at(b));
        v
    };
    let bounds_of = |axis: usize, used: &[usize]| -> Option<(f64, f64)> {
        let a = &grid.axes[axis];
        if a.period.is_some() {
            return None;
        }
        let lo = used.iter().copied().min().map(|i| a.edges(i).0)?;
        let hi = used.iter().copied().max().map(|i| a.edges(i).1)?;
        Some((lo, hi))
    };

    if m == 1 {
        let valid: Vec<usize> = binned.valid_bins().collect();
        if valid.len() < 2 {
            return Err(Error::EstimationFailed(format!(
                "{} valid bins, interpolation needs at least 2",
                valid.len()
            )));
        }
        let a = &grid.axes[0];
        let axis = NodeAxis {
            centers: valid.iter().map(|&b| a.center(b)).collect(),
            period: a.period,
            lower: a.lower,
        };
        let values = valid.iter().flat_map(|&b| node_values(b)).collect();
        return Ok(CoefficientField {
            source: binned.clone(),
            axes: vec![axis],
            values,
            bounds: vec![bounds_of(0, &valid)],
        });
    }

    // tensor grid: every axis needs two distinct valid indices
    let valid: Vec<usize> = binned.valid_bins().collect();
    let per_axis: Vec<Vec<usize>> = (0..m)
        .map(|k| {
            let mut idx: Vec<usize> = valid.iter().map(|&b| grid.unflatten(b)[k]).collect();
            idx.sort_unstable();
            idx.dedup();
            idx
        })
        .collect();
    if per_axis.iter().any(|v| v.len() < 2) {
        return Err(Error::EstimationFailed(
            "fewer than 2 valid bins along some axis".into(),
        ));
    }
    let centers: Vec<Vec<f64>> = (0..grid.n_bins()).map(|b| grid.center(b)).collect();
    let dist2 = |p: &[f64], q: &[f64]| -> f64 {
        p.iter()
            .zip(q)
            .zip(&grid.axes)
            .map(|((a, b), ax)| {
                let d = match ax.period {
                    Some(per) => crate::projection::wrap_symmetric(a - b, per),
                    None => a - b,
                };
                d * d
            })
            .sum()
    };
    let mut values = Vec::with_capacity(grid.n_bins() * width);
    for b in 0..grid.n_bins() {
        let src = if binned.valid[b] {
            b
        } else {
            *valid
                .iter()
                .min_by(|&&x, &&y| {
                    dist2(&centers[b], &centers[x])
                        .partial_cmp(&dist2(&centers[b], &centers[y]))
                        .unwrap()
                        .then(x.cmp(&y))
                })
                .expect("non-empty")
        };
        values.extend(node_values(src));
    }
    let axes = grid
        .axes
        .iter()
        .map(|a| NodeAxis {
            centers: (0..a.count).map(|i| a.center(i)).collect(),
            period: a.period,
            lower: a.lower,
        })
        .collect();
    let bounds = (0..m).map(|k| bounds_of(k, &per_axis[k])).collect();
    Ok(CoefficientField {
        source: binned.clone(),
        axes,
        values,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::GridAxis;
    use crate::trajectory::TrajKind;
    use std::f64::consts::PI;

    fn synthetic(grid: RCGrid, drift: Vec<f64>, diffusion: Vec<f64>, valid: Vec<bool>) -> BinnedCoefficients {
        let n = valid.len();
        BinnedCoefficients {
            grid,
            offset: 0.1,
            beta: 1.0,
            m: 1,
            drift,
            diffusion,
            counts: vec![100; n],
            valid,
        }
    }

    #[test]
    fn offset_must_be_multiple_of_dt() {
        assert_eq!(offset_steps(0.01, 1e-3).unwrap(), 10);
        assert_eq!(offset_steps(1e-3, 1e-3).unwrap(), 1);
        assert!(offset_steps(0.0015, 1e-3).is_err());
        assert!(offset_steps(-1.0, 1e-3).is_err());
    }

    #[test]
    fn linear_ramp_increments() {
        // x_t = 0.01 t: every pair at lag 5 has delta 0.05
        let data: Vec<f64> = (0..1000).map(|t| 0.01 * t as f64).collect();
        let traj = Trajectory::new(data, 1, 0.5, TrajKind::Other).unwrap();
        let rc = ReactionCoordinate::select(vec![0]);
        let grid = RCGrid::uniform(0.0, 1.0, 10).unwrap();
        let est = estimate_km(&traj, &rc, &grid, 2.5, 10, 2.0).unwrap();
        for b in est.valid_bins() {
            assert!((est.drift_at(b)[0] - 0.05 / 2.5).abs() < 1e-12);
            assert!((est.diffusion_at(b)[0] - 0.5 * 2.0 * 0.05 * 0.05 / 2.5).abs() < 1e-12);
        }
        assert_eq!(est.counts.iter().sum::<u64>(), 995);
    }

    #[test]
    fn all_invalid_bins_fail() {
        let traj = Trajectory::new(vec![0.5; 100], 1, 1.0, TrajKind::Other).unwrap();
        let rc = ReactionCoordinate::select(vec![0]);
        let grid = RCGrid::uniform(0.0, 1.0, 1).unwrap();
        assert!(matches!(
            estimate_km(&traj, &rc, &grid, 1.0, 1000, 1.0),
            Err(Error::EstimationFailed(_))
        ));
    }

    #[test]
    fn periodic_increments_use_shortest_arc() {
        let data = vec![3.1, -3.1, 3.1, -3.1, 3.1, -3.1];
        let traj = Trajectory::new(data, 1, 1.0, TrajKind::Other).unwrap();
        let rc = ReactionCoordinate {
            kind: crate::projection::RcKind::CoordinateSelect { indices: vec![0] },
            periods: vec![Some(2.0 * PI)],
        };
        let est = estimate_km(&traj, &rc, &RCGrid::lemon_angle(), 1.0, 1, 1.0).unwrap();
        let b = RCGrid::lemon_angle().bin_index(&[3.1]).unwrap();
        assert!((est.drift_at(b)[0] - (2.0 * PI - 6.2)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_bootstrap_has_zero_errors() {
        let data: Vec<f64> = (0..5000).map(|t| ((t as f64) * 0.1).sin()).collect();
        let traj = Trajectory::new(data, 1, 0.1, TrajKind::Other).unwrap();
        let rc = ReactionCoordinate::select(vec![0]);
        let grid = RCGrid::uniform(-1.0, 0.25, 8).unwrap();
        let n = traj.len();
        let res = bootstrap_km(
            &traj,
            &rc,
            &grid,
            0.1,
            1.0,
            BootstrapSettings {
                replicas: 2,
                block_len: n,
                seed: 9,
            },
        )
        .unwrap();
        assert!(res.drift_se.iter().all(|&v| v == 0.0));
        assert!(res.diffusion_se.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bootstrap_policies_agree() {
        let data: Vec<f64> = (0..20_000)
            .map(|t| ((t as f64) * 0.013).sin() + 0.1 * ((t * 7919 % 101) as f64 / 101.0))
            .collect();
        let traj = Trajectory::new(data, 1, 0.1, TrajKind::Other).unwrap();
        let rc = ReactionCoordinate::select(vec![0]);
        let grid = RCGrid::uniform(-1.2, 0.2, 12).unwrap();
        let samples = KmSamples::collect(&traj, &rc, &grid, 0.3).unwrap();
        let settings = BootstrapSettings {
            replicas: 8,
            block_len: 100,
            seed: 1,
        };
        let a = bootstrap_from_samples(Exec::Sequential, &samples, 1.0, settings).unwrap();
        let b = bootstrap_from_samples(Exec::Parallel, &samples, 1.0, settings).unwrap();
        assert_eq!(a, b);
        assert!(a.drift_se.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn interpolation_hits_nodes() {
        let grid = RCGrid::uniform(0.0, 1.0, 4).unwrap();
        let b = synthetic(grid, vec![1.0, 2.0, 4.0, 8.0], vec![1.0, 1.0, 2.0, 2.0], vec![true; 4]);
        let f = interpolate_coefficients(&b).unwrap();
        for (i, want) in [1.0, 2.0, 4.0, 8.0].iter().enumerate() {
            assert_eq!(f.eval(&[i as f64 + 0.5]).unwrap().0[0], *want);
        }
        assert_eq!(f.eval(&[1.0]).unwrap().0[0], 1.5);
        // clamped outside the outermost centers
        assert_eq!(f.eval(&[-3.0]).unwrap().0[0], 1.0);
        assert_eq!(f.eval(&[9.0]).unwrap().0[0], 8.0);
        assert_eq!(f.bounds[0], Some((0.0, 4.0)));
    }

    #[test]
    fn interpolation_skips_invalid_bins() {
        let grid = RCGrid::uniform(0.0, 1.0, 4).unwrap();
        let b = synthetic(
            grid,
            vec![1.0, 99.0, 3.0, 5.0],
            vec![1.0; 4],
            vec![true, false, true, true],
        );
        let f = interpolate_coefficients(&b).unwrap();
        assert!((f.eval(&[1.5]).unwrap().0[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_two_bin_field() {
        let grid = RCGrid::new(vec![GridAxis::periodic(-PI, PI, 2, 2.0 * PI)]).unwrap();
        let b = synthetic(grid, vec![1.0, 3.0], vec![1.0, 1.0], vec![true, true]);
        let f = interpolate_coefficients(&b).unwrap();
        assert!((f.eval(&[0.0]).unwrap().0[0] - 2.0).abs() < 1e-12);
        assert!((f.eval(&[PI]).unwrap().0[0] - 2.0).abs() < 1e-12);
        assert!((f.eval(&[-PI]).unwrap().0[0] - 2.0).abs() < 1e-12);
        assert!((f.eval(&[-PI / 2.0]).unwrap().0[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_valid_bins() {
        let grid = RCGrid::uniform(0.0, 1.0, 3).unwrap();
        let b = synthetic(grid, vec![1.0; 3], vec![1.0; 3], vec![false, true, false]);
        assert!(matches!(interpolate_coefficients(&b), Err(Error::EstimationFailed(_))));
    }

    #[test]
    fn diffusion_is_floored() {
        let grid = RCGrid::uniform(0.0, 1.0, 2).unwrap();
        let b = synthetic(grid, vec![0.0; 2], vec![0.0, 0.0], vec![true, true]);
        let f = interpolate_coefficients(&b).unwrap();
        assert_eq!(f.eval(&[0.7]).unwrap().1[0], A_FLOOR);
        let mut mat = vec![1.0, 2.0, 2.0, 1.0];
        floor_symmetric(&mut mat, 2, 1e-12);
        // eigenvalues 3 and -1 -> 3 and 1e-12
        assert!((mat[0] - 1.5).abs() < 1e-9 && (mat[1] - 1.5).abs() < 1e-9);
        assert_eq!(mat[1], mat[2]);
    }

    #[test]
    fn two_dimensional_field() {
        let grid = RCGrid::new(vec![GridAxis::new(0.0, 1.0, 2), GridAxis::new(0.0, 1.0, 2)]).unwrap();
        let binned = BinnedCoefficients {
            grid,
            offset: 1.0,
            beta: 1.0,
            m: 2,
            drift: vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0],
            diffusion: [1.0, 0.0, 0.0, 1.0].repeat(4),
            counts: vec![100; 4],
            valid: vec![true; 4],
        };
        let f = interpolate_coefficients(&binned).unwrap();
        let (b, a) = f.eval(&[1.0, 1.0]).unwrap();
        assert!((b[0] - 1.5).abs() < 1e-12);
        assert_eq!(a, vec![1.0, 0.0, 0.0, 1.0]);
    }
}
