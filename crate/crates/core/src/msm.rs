//! Markov state models on indicator bases: transition counting, the
//! generalized eigenvalue problem `C^tau v = lambda C^0 v`, implied
//! timescales, stationary distributions and interval probabilities.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::sorted_sym_eigen;
use crate::par::Exec;
use crate::projection::{wrap_symmetric, GridAxis, RCGrid, ReactionCoordinate};
use crate::rng::{split_seed, Stream};
use crate::trajectory::Trajectory;

/// Marker for frames outside the grid.
pub const NONE: u32 = u32::MAX;

/// Discarded `C^0` directions have eigenvalue below this fraction of the largest.
pub const RANK_TOL: f64 = 1e-10;

/// Bin index sequence; out-of-grid frames hold [`NONE`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTrajectory {
    pub states: Vec<u32>,
    pub n_states: usize,
    pub dt: f64,
}

impl DiscreteTrajectory {
    pub fn new(states: Vec<Option<usize>>, n_states: usize, dt: f64) -> Result<Self> {
        let states = states
            .into_iter()
            .map(|s| match s {
                Some(i) if i < n_states => Ok(i as u32),
                Some(i) => Err(Error::invalid(format!("state {i} out of range for {n_states} states"))),
                None => Ok(NONE),
            })
            .collect::<Result<Vec<u32>>>()?;
        Ok(Self { states, n_states, dt })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, t: usize) -> Option<usize> {
        match self.states[t] {
            NONE => None,
            s => Some(s as usize),
        }
    }
}

pub fn assign_states(traj: &Trajectory, rc: &ReactionCoordinate, grid: &RCGrid) -> Result<DiscreteTrajectory> {
    let bins = crate::projection::assign_bins(traj, rc, grid)?;
    DiscreteTrajectory::new(bins, grid.n_bins(), traj.dt)
}

/// Sparse transition counts keyed by `(from, to)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CountMatrix {
    pub n_states: usize,
    pub counts: HashMap<(u32, u32), u64>,
}

impl CountMatrix {
    pub fn merge(&mut self, other: &CountMatrix) {
        for (&k, &v) in &other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Count pairs `(s_t, s_{t+lag})` for `t` in `range`, skipping pairs whose
/// window `[t, t + lag]` contains an out-of-grid frame.
pub fn count_transitions(dtraj: &DiscreteTrajectory, lag: usize, range: std::ops::Range<usize>) -> CountMatrix {
    let s = &dtraj.states;
    let mut counts = HashMap::new();
    let end = range.end.min(s.len().saturating_sub(lag));
    if range.start >= end {
        return CountMatrix {
            n_states: dtraj.n_states,
            counts,
        };
    }
    // position of the next NONE at or after t, maintained while sweeping
    let mut next_none = (range.start..s.len()).find(|&i| s[i] == NONE).unwrap_or(usize::MAX);
    for t in range.start..end {
        if next_none < t {
            next_none = (t..s.len()).find(|&i| s[i] == NONE).unwrap_or(usize::MAX);
        }
        if next_none <= t + lag {
            continue;
        }
        *counts.entry((s[t], s[t + lag])).or_insert(0) += 1;
    }
    CountMatrix {
        n_states: dtraj.n_states,
        counts,
    }
}

pub fn count_matrix(exec: Exec, dtraj: &DiscreteTrajectory, lag: usize) -> Result<CountMatrix> {
    if lag == 0 || lag >= dtraj.len() {
        return Err(Error::invalid(format!("lag {lag} must lie in [1, {})", dtraj.len())));
    }
    const SHARD: usize = 1 << 20;
    let n = dtraj.len() - lag;
    let parts = exec.map(n.div_ceil(SHARD), |k| {
        count_transitions(dtraj, lag, k * SHARD..((k + 1) * SHARD).min(n))
    });
    let mut total = CountMatrix {
        n_states: dtraj.n_states,
        counts: HashMap::new(),
    };
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// Correlation matrices on the visited states.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationPair {
    pub c_tau: DMatrix<f64>,
    pub c_0: DMatrix<f64>,
    /// Lag in time units.
    pub lag: f64,
    pub lag_steps: usize,
    pub symmetrized: bool,
    /// Original state index of each row.
    pub states: Vec<usize>,
    pub n_states: usize,
    /// Number of counted pairs.
    pub total: u64,
}

impl CorrelationPair {
    /// From counts: `C^tau` the normalized (optionally symmetrized) counts,
    /// `C^0` the diagonal of their row sums.
    pub fn from_counts(counts: &CountMatrix, lag_steps: usize, dt: f64, symmetrize: bool) -> Result<Self> {
        let total = counts.total();
        if total == 0 {
            return Err(Error::EstimationFailed("no valid transition pairs".into()));
        }
        let mut states: Vec<usize> = counts
            .counts
            .keys()
            .flat_map(|&(i, j)| [i as usize, j as usize])
            .collect();
        states.sort_unstable();
        states.dedup();
        let index: HashMap<usize, usize> = states.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        let n = states.len();
        let mut c = DMatrix::zeros(n, n);
        for (&(i, j), &v) in &counts.counts {
            c[(index[&(i as usize)], index[&(j as usize)])] += v as f64;
        }
        if symmetrize {
            c = 0.5 * (&c + c.transpose());
        }
        c /= total as f64;
        let row_sums: Vec<f64> = (0..n).map(|i| c.row(i).sum()).collect();
        let c_0 = DMatrix::from_diagonal(&DVector::from_vec(row_sums));
        Ok(Self {
            c_tau: c,
            c_0,
            lag: lag_steps as f64 * dt,
            lag_steps,
            symmetrized: symmetrize,
            states,
            n_states: counts.n_states,
            total,
        })
    }

    /// Keep the listed rows (positions into `states`).
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let n = keep.len();
        let mut c = DMatrix::from_fn(n, n, |a, b| self.c_tau[(keep[a], keep[b])]);
        let mass = c.sum();
        if mass > 0.0 {
            c /= mass;
        }
        let row_sums: Vec<f64> = (0..n).map(|i| c.row(i).sum()).collect();
        Self {
            c_0: DMatrix::from_diagonal(&DVector::from_vec(row_sums)),
            c_tau: c,
            states: keep.iter().map(|&k| self.states[k]).collect(),
            ..self.clone()
        }
    }

    /// Positions of the largest connected component of the count graph
    /// (undirected when symmetrized, strongly connected otherwise);
    /// ties go to the component holding the lowest state.
    pub fn largest_connected_set(&self) -> Vec<usize> {
        let n = self.states.len();
        let adj: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && self.c_tau[(i, j)] > 0.0).collect())
            .collect();
        let components = if self.symmetrized {
            undirected_components(&adj)
        } else {
            strong_components(&adj)
        };
        let mut best: Vec<usize> = Vec::new();
        for mut comp in components {
            comp.sort_unstable();
            if comp.len() > best.len() || (comp.len() == best.len() && comp.first() < best.first()) {
                best = comp;
            }
        }
        best
    }

    pub fn correlate(dtraj: &DiscreteTrajectory, lag_steps: usize, symmetrize: bool) -> Result<Self> {
        let counts = count_matrix(Exec::default(), dtraj, lag_steps)?;
        Self::from_counts(&counts, lag_steps, dtraj.dt, symmetrize)
    }
}

/// Free-function form of [`CorrelationPair::correlate`].
pub fn count_and_correlate(dtraj: &DiscreteTrajectory, lag_steps: usize, symmetrize: bool) -> Result<CorrelationPair> {
    CorrelationPair::correlate(dtraj, lag_steps, symmetrize)
}

fn undirected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut k = 0;
        while k < comp.len() {
            for &j in &adj[comp[k]] {
                if !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                }
            }
            k += 1;
        }
        out.push(comp);
    }
    out
}

/// Strongly connected components by forward/backward reachability.
fn strong_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut rev = vec![Vec::new(); n];
    for (i, row) in adj.iter().enumerate() {
        for &j in row {
            rev[j].push(i);
        }
    }
    let reach = |g: &[Vec<usize>], s: usize| {
        let mut seen = vec![false; n];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(i) = stack.pop() {
            for &j in &g[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let mut assigned = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if assigned[s] {
            continue;
        }
        let fwd = reach(adj, s);
        let bwd = reach(&rev, s);
        let comp: Vec<usize> = (0..n).filter(|&i| fwd[i] && bwd[i] && !assigned[i]).collect();
        for &i in &comp {
            assigned[i] = true;
        }
        out.push(comp);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralModel {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// `C^0`-orthonormal right eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
    pub timescales: Vec<f64>,
    /// Stationary distribution on `states`.
    pub stationary: Vec<f64>,
    pub transition: DMatrix<f64>,
    pub lag: f64,
    pub states: Vec<usize>,
    pub n_states: usize,
    pub diagnostics: Vec<String>,
}

impl SpectralModel {
    /// Stationary distribution spread over all grid states (zero where unvisited).
    pub fn stationary_full(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for (k, &s) in self.states.iter().enumerate() {
            out[s] = self.stationary[k];
        }
        out
    }

    /// Largest `|(pi T)_j - pi_j|`.
    pub fn stationarity_residual(&self) -> f64 {
        let pi = DVector::from_column_slice(&self.stationary);
        let lhs = self.transition.transpose() * &pi;
        (lhs - pi).amax()
    }

    pub fn timescales_csv(&self) -> String {
        let mut out = String::from("index,eigenvalue,timescale\n");
        for (i, (l, t)) in self.eigenvalues.iter().zip(&self.timescales).enumerate() {
            let _ = writeln!(out, "{},{},{}", i + 1, l, t);
        }
        out
    }

    pub fn stationary_csv(&self) -> String {
        let mut out = String::from("state,pi\n");
        for (s, p) in self.states.iter().zip(&self.stationary) {
            let _ = writeln!(out, "{s},{p}");
        }
        out
    }
}

/// Top-`k` generalized eigenpairs of `C^tau v = lambda C^0 v`.
///
/// Rows whose `C^0` diagonal falls below `RANK_TOL` times the largest are
/// dropped (`C^0` is diagonal on an indicator basis). If fewer than `k`
/// directions remain, the available pairs are returned with a diagnostic.
pub fn solve_gevp(pair: &CorrelationPair, k: usize) -> Result<SpectralModel> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let d: Vec<f64> = (0..pair.c_0.nrows()).map(|i| pair.c_0[(i, i)]).collect();
    let dmax = d.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..d.len()).filter(|&i| d[i] > RANK_TOL * dmax).collect();
    if keep.is_empty() {
        return Err(Error::EstimationFailed("C^0 has no positive directions".into()));
    }
    let mut diagnostics = Vec::new();
    if keep.len() < d.len() {
        diagnostics.push(format!("dropped {} rank-deficient states", d.len() - keep.len()));
    }
    let n = keep.len();
    let c = DMatrix::from_fn(n, n, |a, b| pair.c_tau[(keep[a], keep[b])]);
    let dk: Vec<f64> = keep.iter().map(|&i| d[i]).collect();
    let transition = DMatrix::from_fn(n, n, |a, b| c[(a, b)] / dk[a]);
    let k_eff = if k > n {
        diagnostics.push(format!("only {n} eigenpairs available, {k} requested"));
        n
    } else {
        k
    };

    let (eigenvalues, eigenvectors, stationary) = if pair.symmetrized {
        // D^{-1/2} C D^{-1/2} u = lambda u, v = D^{-1/2} u
        let s = DMatrix::from_fn(n, n, |a, b| c[(a, b)] / (dk[a] * dk[b]).sqrt());
        let (vals, vecs) = sorted_sym_eigen(s);
        let take: Vec<usize> = (0..k_eff).map(|i| n - 1 - i).collect();
        let values = take.iter().map(|&i| vals[i]).collect::<Vec<_>>();
        let v = DMatrix::from_fn(n, k_eff, |r, col| vecs[(r, take[col])] / dk[r].sqrt());
        let total: f64 = dk.iter().sum();
        (values, v, dk.iter().map(|x| x / total).collect::<Vec<_>>())
    } else {
        nonreversible_eigen(&transition, &dk, k_eff, &mut diagnostics)?
    };

    let mut model = SpectralModel {
        timescales: Vec::new(),
        eigenvalues,
        eigenvectors: crate::linalg::fix_signs(eigenvectors),
        stationary,
        transition,
        lag: pair.lag,
        states: keep.iter().map(|&i| pair.states[i]).collect(),
        n_states: pair.n_states,
        diagnostics,
    };
    model.timescales = implied_timescales(&model);
    Ok(model)
}

/// Eigenpairs of a non-symmetric row-stochastic matrix via inverse iteration
/// on the real parts of its eigenvalues.
fn nonreversible_eigen(
    t: &DMatrix<f64>,
    d: &[f64],
    k: usize,
    diagnostics: &mut Vec<String>,
) -> Result<(Vec<f64>, DMatrix<f64>, Vec<f64>)> {
    let n = t.nrows();
    let complex = t.complex_eigenvalues();
    let mut vals: Vec<f64> = complex.iter().map(|z| z.re).collect();
    if complex.iter().any(|z| z.im.abs() > 1e-10) {
        diagnostics.push("complex eigenvalues present; real parts used".into());
    }
    vals.sort_by(|a, b| b.total_cmp(a));
    vals.truncate(k);
    let inverse_iterate = |m: &DMatrix<f64>, lambda: f64| -> DVector<f64> {
        let eps = 1e-10 * (1.0 + lambda.abs());
        let shifted = m - DMatrix::identity(n, n) * (lambda + eps);
        let lu = shifted.lu();
        let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        for _ in 0..3 {
            if let Some(y) = lu.solve(&x) {
                let norm = y.norm();
                if norm > 0.0 && norm.is_finite() {
                    x = y / norm;
                }
            }
        }
        x
    };
    let mut vecs = DMatrix::zeros(n, k);
    for (col, &lambda) in vals.iter().enumerate() {
        let mut v = inverse_iterate(t, lambda);
        let norm = v.iter().zip(d).map(|(x, w)| x * x * w).sum::<f64>().sqrt();
        v /= norm;
        vecs.set_column(col, &v);
    }
    let mut pi = inverse_iterate(&t.transpose(), 1.0);
    let sum = pi.sum();
    pi /= sum;
    Ok((vals, vecs, pi.iter().map(|v| v.max(0.0)).collect()))
}

/// `t_i = -tau / ln(lambda_i)`; `INFINITY` for `lambda >= 1 - 1e-12`
/// and `NAN` (non-Markovian) for `lambda <= 0`.
pub fn implied_timescales(model: &SpectralModel) -> Vec<f64> {
    model.eigenvalues.iter().map(|&l| timescale(l, model.lag)).collect()
}

pub fn timescale(lambda: f64, lag: f64) -> f64 {
    if lambda >= 1.0 - 1e-12 {
        f64::INFINITY
    } else if lambda <= 0.0 {
        f64::NAN
    } else {
        -lag / lambda.ln()
    }
}

/// Count, restrict to the largest connected set, and solve.
pub fn estimate_msm(dtraj: &DiscreteTrajectory, lag_steps: usize, k: usize, symmetrize: bool) -> Result<SpectralModel> {
    let pair = count_and_correlate(dtraj, lag_steps, symmetrize)?;
    let connected = pair.restrict(&pair.largest_connected_set());
    solve_gevp(&connected, k)
}

/// Bootstrap spread of implied timescales.
#[derive(Clone, Debug, PartialEq)]
pub struct TimescaleBootstrap {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub replicas: usize,
}

/// Block bootstrap over contiguous trajectory segments: counts of each of
/// `n_blocks` segments are precomputed, replicas resample segments with
/// replacement and re-solve.
pub fn bootstrap_timescales(
    exec: Exec,
    dtraj: &DiscreteTrajectory,
    lag_steps: usize,
    k: usize,
    n_blocks: usize,
    replicas: usize,
    seed: u64,
) -> Result<TimescaleBootstrap> {
    if n_blocks < 2 || replicas < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 blocks and 2 replicas"));
    }
    if lag_steps == 0 || lag_steps >= dtraj.len() {
        return Err(Error::invalid("lag out of range"));
    }
    let n = dtraj.len() - lag_steps;
    let block = n.div_ceil(n_blocks);
    let blocks = exec.map(n_blocks, |b| {
        count_transitions(dtraj, lag_steps, b * block..((b + 1) * block).min(n))
    });
    let samples = exec.map(replicas, |r| -> Option<Vec<f64>> {
        let mut rng = Stream::new(split_seed(seed, r as u64));
        let mut counts = CountMatrix {
            n_states: dtraj.n_states,
            counts: HashMap::new(),
        };
        for _ in 0..n_blocks {
            counts.merge(&blocks[rng.below(n_blocks)]);
        }
        let pair = CorrelationPair::from_counts(&counts, lag_steps, dtraj.dt, true).ok()?;
        let model = solve_gevp(&pair.restrict(&pair.largest_connected_set()), k).ok()?;
        (model.timescales.len() == k).then_some(model.timescales)
    });
    let good: Vec<Vec<f64>> = samples.into_iter().flatten().collect();
    if good.len() < 2 {
        return Err(Error::EstimationFailed("fewer than 2 usable bootstrap replicas".into()));
    }
    let mut mean = vec![0.0; k];
    let mut std = vec![0.0; k];
    for i in 0..k {
        let vals: Vec<f64> = good.iter().map(|v| v[i]).filter(|v| v.is_finite()).collect();
        if good.iter().all(|v| v[i] == f64::INFINITY) {
            mean[i] = f64::INFINITY;
            continue;
        }
        if vals.len() < 2 {
            mean[i] = f64::NAN;
            std[i] = f64::NAN;
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        mean[i] = m;
        std[i] = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
    }
    Ok(TimescaleBootstrap {
        mean,
        std,
        replicas: good.len(),
    })
}

/// Overlap length of `[lo, hi]` with `[a, b]`.
fn overlap(lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    (hi.min(b) - lo.max(a)).max(0.0)
}

/// Probability of each interval from per-bin masses on a one-dimensional
/// grid. Bins straddling an interval edge contribute the fraction of their
/// width inside the interval. Periodic axes wrap intervals around the seam.
pub fn interval_probabilities(axis: &GridAxis, masses: &[f64], intervals: &[(f64, f64)]) -> Result<Vec<f64>> {
    if masses.len() != axis.count {
        return Err(Error::invalid(format!(
            "{} masses for {} bins",
            masses.len(),
            axis.count
        )));
    }
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("masses must have positive total"));
    }
    intervals
        .iter()
        .map(|&(lo, hi)| {
            if !(hi >= lo) {
                return Err(Error::invalid(format!("interval [{lo}, {hi}] is reversed")));
            }
            let shifts: Vec<f64> = match axis.period {
                Some(p) => {
                    if hi - lo > p {
                        return Err(Error::invalid("interval longer than the period"));
                    }
                    vec![-p, 0.0, p]
                }
                None => vec![0.0],
            };
            let mut mass = 0.0;
            for (i, &m) in masses.iter().enumerate() {
                let (a, b) = axis.edges(i);
                let inside: f64 = shifts.iter().map(|s| overlap(lo, hi, a + s, b + s)).sum();
                mass += m * inside / (b - a);
            }
            Ok(mass / total)
        })
        .collect()
}

/// Fraction of samples inside each interval, measured on the circle for a
/// periodic coordinate.
pub fn interval_occupancy(samples: &[f64], period: Option<f64>, intervals: &[(f64, f64)]) -> Vec<f64> {
    let n = samples.len().max(1) as f64;
    intervals
        .iter()
        .map(|&(lo, hi)| {
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            let inside = samples
                .iter()
                .filter(|&&z| {
                    let d = match period {
                        Some(p) => wrap_symmetric(z - mid, p),
                        None => z - mid,
                    };
                    d.abs() <= half
                })
                .count();
            inside as f64 / n
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pair_from(c_tau: DMatrix<f64>, c_0: DMatrix<f64>) -> CorrelationPair {
        let n = c_tau.nrows();
        CorrelationPair {
            c_tau,
            c_0,
            lag: 1.0,
            lag_steps: 1,
            symmetrized: true,
            states: (0..n).collect(),
            n_states: n,
            total: 1,
        }
    }

    fn dtraj(states: &[usize]) -> DiscreteTrajectory {
        let n = states.iter().max().unwrap() + 1;
        DiscreteTrajectory::new(states.iter().map(|&s| Some(s)).collect(), n, 1.0).unwrap()
    }

    #[test]
    fn alternating_counts() {
        let d = dtraj(&[0, 1, 0, 1, 0, 1, 0, 1, 0]);
        let pair = count_and_correlate(&d, 1, true).unwrap();
        assert_eq!(pair.c_tau[(0, 0)], 0.0);
        assert_eq!(pair.c_tau[(0, 1)], pair.c_tau[(1, 0)]);
        assert!((pair.c_tau.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn none_frames_break_transitions() {
        let d = DiscreteTrajectory::new(vec![Some(0), Some(1), None, Some(1), Some(0)], 2, 1.0).unwrap();
        let counts = count_matrix(Exec::Sequential, &d, 1).unwrap();
        assert_eq!(counts.total(), 2);
        let counts2 = count_matrix(Exec::Sequential, &d, 2).unwrap();
        assert_eq!(counts2.total(), 0);
        assert!(CorrelationPair::from_counts(&counts2, 2, 1.0, true).is_err());
    }

    #[test]
    fn c0_holds_state_frequencies() {
        let d = dtraj(&[0, 0, 1, 2, 2, 2, 1, 0, 0, 1, 2]);
        let pair = count_and_correlate(&d, 1, false).unwrap();
        let starts = &d.states[..d.len() - 1];
        for s in 0..3 {
            let freq = starts.iter().filter(|&&x| x as usize == s).count() as f64 / starts.len() as f64;
            assert!((pair.c_0[(s, s)] - freq).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_operator() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.7]));
        let m = solve_gevp(&pair_from(c.clone(), c), 2).unwrap();
        assert!(m.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-12));
    }

    #[test]
    fn diagonal_operator() {
        let m = solve_gevp(
            &pair_from(
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])),
                DMatrix::identity(2, 2),
            ),
            2,
        )
        .unwrap();
        assert!((m.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((m.eigenvalues[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_state_chain() {
        // pi = (2/3, 1/3); C^tau = diag(pi) T
        let t = [[0.9, 0.1], [0.2, 0.8]];
        let pi = [2.0 / 3.0, 1.0 / 3.0];
        let c = DMatrix::from_fn(2, 2, |i, j| pi[i] * t[i][j]);
        let c0 = DMatrix::from_diagonal(&DVector::from_vec(pi.to_vec()));
        let m = solve_gevp(&pair_from(c, c0), 2).unwrap();
        assert!((m.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((m.eigenvalues[1] - 0.7).abs() < 1e-12);
        assert!((m.stationary[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(m.stationarity_residual() < 1e-12);
        // C^0-orthonormal eigenvectors
        let c0 = DMatrix::from_diagonal(&DVector::from_vec(pi.to_vec()));
        let g = m.eigenvectors.transpose() * c0 * &m.eigenvectors;
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn nonreversible_path_agrees_on_reversible_data() {
        let t = [[0.9, 0.1], [0.2, 0.8]];
        let pi = [2.0 / 3.0, 1.0 / 3.0];
        let c = DMatrix::from_fn(2, 2, |i, j| pi[i] * t[i][j]);
        let c0 = DMatrix::from_diagonal(&DVector::from_vec(pi.to_vec()));
        let mut pair = pair_from(c, c0);
        pair.symmetrized = false;
        let m = solve_gevp(&pair, 2).unwrap();
        assert!((m.eigenvalues[1] - 0.7).abs() < 1e-10);
        assert!((m.stationary[0] - 2.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn too_many_pairs_gives_diagnostic() {
        let c = DMatrix::identity(2, 2) * 0.5;
        let m = solve_gevp(&pair_from(c.clone(), c), 5).unwrap();
        assert_eq!(m.eigenvalues.len(), 2);
        assert!(!m.diagnostics.is_empty());
    }

    #[test]
    fn timescale_examples() {
        assert!((timescale((-1.0f64).exp(), 1.0) - 1.0).abs() < 1e-14);
        assert!((timescale(0.5, 1.0) - 1.0 / 2f64.ln()).abs() < 1e-14);
        assert!(timescale(1.0, 1.0).is_infinite());
        assert!(timescale(-0.1, 1.0).is_nan());
    }

    #[test]
    fn connected_set_selection() {
        let d = dtraj(&[0, 1, 0, 1, 0, 1, 2, 3, 2, 3]);
        // 1 -> 2 once, so with symmetrization all four states connect
        let pair = count_and_correlate(&d, 1, true).unwrap();
        assert_eq!(pair.largest_connected_set(), vec![0, 1, 2, 3]);
        // without symmetrization {0,1} and {2,3} are separate strong components
        let pair = count_and_correlate(&d, 1, false).unwrap();
        assert_eq!(pair.largest_connected_set(), vec![0, 1]);
    }

    #[test]
    fn uniform_half_circle() {
        let axis = GridAxis::periodic(-PI, 0.1, 63, 2.0 * PI);
        let masses: Vec<f64> = (0..63)
            .map(|i| {
                let (a, b) = axis.edges(i);
                b - a
            })
            .collect();
        let p = interval_probabilities(&axis, &masses, &[(0.0, PI), (PI - 0.5, PI + 0.5)]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 1.0 / (2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn occupancy_wraps() {
        let samples = vec![3.1, -3.1, 0.0, 1.0];
        let occ = interval_occupancy(&samples, Some(2.0 * PI), &[(PI - 0.1, PI + 0.1)]);
        assert_eq!(occ, vec![0.5]);
    }

    #[test]
    fn bootstrap_is_policy_independent() {
        let mut rng = Stream::new(3);
        let mut s = 0usize;
        let states: Vec<usize> = (0..20_000)
            .map(|_| {
                if rng.uniform() < 0.05 {
                    s = rng.below(3);
                }
                s
            })
            .collect();
        let d = dtraj(&states);
        let a = bootstrap_timescales(Exec::Sequential, &d, 5, 3, 10, 6, 1).unwrap();
        let b = bootstrap_timescales(Exec::Parallel, &d, 5, 3, 10, 6, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.std[1] > 0.0);
    }
}
