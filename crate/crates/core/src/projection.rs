//! Reaction coordinates, periodic differences, binning grids and empirical
//! marginals of the reaction coordinate.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::trajectory::Trajectory;

/// A one-dimensional map tabulated at increasing knots of one input coordinate,
/// interpolated linearly and clamped outside the knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tabulated {
    pub input: usize,
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl Tabulated {
    fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0] {
            return self.values[0];
        }
        if x >= k[k.len() - 1] {
            return self.values[k.len() - 1];
        }
        let j = k.partition_point(|&v| v <= x) - 1;
        let t = (x - k[j]) / (k[j + 1] - k[j]);
        self.values[j] * (1.0 - t) + self.values[j + 1] * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RcKind {
    /// `atan2(y, x)` of the first two coordinates, in `(-pi, pi]`.
    PolarAngle,
    /// Selected coordinates, in the given order.
    CoordinateSelect {
        indices: Vec<usize>,
    },
    Custom {
        map: Tabulated,
    },
}

/// A reaction coordinate with optional per-component periods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactionCoordinate {
    pub kind: RcKind,
    pub periods: Vec<Option<f64>>,
}

impl ReactionCoordinate {
    pub fn polar_angle() -> Self {
        Self {
            kind: RcKind::PolarAngle,
            periods: vec![Some(2.0 * PI)],
        }
    }

    pub fn select(indices: Vec<usize>) -> Self {
        let periods = vec![None; indices.len()];
        Self {
            kind: RcKind::CoordinateSelect { indices },
            periods,
        }
    }

    pub fn custom(map: Tabulated) -> Result<Self> {
        if map.knots.len() < 2 || map.knots.len() != map.values.len() || map.knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "tabulated map needs >= 2 increasing knots with matching values",
            ));
        }
        Ok(Self {
            kind: RcKind::Custom { map },
            periods: vec![None],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods.len() != self.m() || self.m() == 0 {
            return Err(Error::invalid(
                "reaction coordinate needs one period slot per component",
            ));
        }
        if self.periods.iter().flatten().any(|p| !(*p > 0.0)) {
            return Err(Error::invalid("periods must be positive"));
        }
        Ok(())
    }

    /// Output dimension.
    pub fn m(&self) -> usize {
        match &self.kind {
            RcKind::PolarAngle | RcKind::Custom { .. } => 1,
            RcKind::CoordinateSelect { indices } => indices.len(),
        }
    }

    pub fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.m()];
        self.apply_into(state, &mut z)?;
        Ok(z)
    }

    #[inline]
    pub fn apply_into(&self, state: &[f64], z: &mut [f64]) -> Result<()> {
        match &self.kind {
            RcKind::PolarAngle => {
                if state.len() < 2 {
                    return Err(Error::invalid("polar angle needs two coordinates"));
                }
                let (x, y) = (state[0], state[1]);
                if x == 0.0 && y == 0.0 {
                    return Err(Error::Domain("polar angle undefined at the origin".into()));
                }
                let phi = y.atan2(x);
                z[0] = if phi <= -PI { PI } else { phi };
            }
            RcKind::CoordinateSelect { indices } => {
                for (zl, &i) in z.iter_mut().zip(indices) {
                    *zl = *state.get(i).ok_or_else(|| {
                        Error::invalid(format!("coordinate {i} out of range for a {}-dim state", state.len()))
                    })?;
                }
            }
            RcKind::Custom { map } => {
                let x = *state
                    .get(map.input)
                    .ok_or_else(|| Error::invalid("tabulated map input out of range"))?;
                z[0] = map.eval(x);
            }
        }
        Ok(())
    }

    pub fn wrap_difference(&self, z1: &[f64], z0: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; z1.len()];
        self.wrap_difference_into(z1, z0, &mut d);
        d
    }

    /// `z1 - z0` per component; periodic components map into `(-P/2, P/2]`.
    #[inline]
    pub fn wrap_difference_into(&self, z1: &[f64], z0: &[f64], out: &mut [f64]) {
        for l in 0..out.len() {
            let d = z1[l] - z0[l];
            out[l] = match self.periods[l] {
                Some(p) => wrap_symmetric(d, p),
                None => d,
            };
        }
    }

    /// Evaluate along a whole trajectory, row-major `len x m`.
    pub fn apply_trajectory(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let m = self.m();
        let mut out = vec![0.0; traj.len() * m];
        for (t, row) in traj.rows().enumerate() {
            self.apply_into(row, &mut out[t * m..(t + 1) * m])
                .map_err(|e| Error::InvalidInput(format!("frame {t}: {e}")))?;
        }
        Ok(out)
    }
}

/// Representative of `d` modulo `p` in `(-p/2, p/2]`.
#[inline]
pub fn wrap_symmetric(d: f64, p: f64) -> f64 {
    d - p * ((d - 0.5 * p) / p).ceil()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lower: f64,
    pub width: f64,
    pub count: usize,
    #[serde(default)]
    pub period: Option<f64>,
}

impl GridAxis {
    pub fn new(lower: f64, width: f64, count: usize) -> Self {
        Self {
            lower,
            width,
            count,
            period: None,
        }
    }

    pub fn periodic(lower: f64, width: f64, count: usize, period: f64) -> Self {
        Self {
            lower,
            width,
            count,
            period: Some(period),
        }
    }

    /// Upper edge of the covered range; for periodic axes this is `lower + period`.
    pub fn upper(&self) -> f64 {
        match self.period {
            Some(p) => self.lower + p,
            None => self.lower + self.width * self.count as f64,
        }
    }

    /// Edges of bin `i`; the last bin of a periodic axis is truncated at the period.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let lo = self.lower + self.width * i as f64;
        let hi = (lo + self.width).min(self.upper());
        (lo, hi)
    }

    pub fn center(&self, i: usize) -> f64 {
        let (lo, hi) = self.edges(i);
        0.5 * (lo + hi)
    }

    #[inline]
    pub fn index(&self, z: f64) -> Option<usize> {
        if !z.is_finite() {
            return None;
        }
        match self.period {
            Some(p) => {
                let u = (z - self.lower).rem_euclid(p);
                Some(((u / self.width) as usize).min(self.count - 1))
            }
            None => {
                let u = (z - self.lower) / self.width;
                if u < 0.0 || u >= self.count as f64 {
                    None
                } else {
                    Some((u as usize).min(self.count - 1))
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || self.count == 0 {
            return Err(Error::invalid("grid axes need positive width and count"));
        }
        if let Some(p) = self.period {
            let covered = self.width * self.count as f64;
            if !(p > 0.0) || (covered - p).abs() >= self.width || covered < p {
                return Err(Error::invalid(format!(
                    "periodic axis covers {covered}, period {p}: bins must tile the period"
                )));
            }
        }
        Ok(())
    }
}

/// Tensor-product binning grid on reaction-coordinate space.
///
/// Flat indices are row-major: the last axis varies fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RCGrid {
    pub axes: Vec<GridAxis>,
}

impl RCGrid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::invalid("grid needs at least one axis"));
        }
        for a in &axes {
            a.validate()?;
        }
        Ok(Self { axes })
    }

    /// 1D grid on the circle `(-pi, pi]` with bins of `width`; the last bin is truncated.
    pub fn circle(width: f64) -> Result<Self> {
        let count = (2.0 * PI / width).ceil() as usize;
        Self::new(vec![GridAxis::periodic(-PI, width, count, 2.0 * PI)])
    }

    /// The 63-bin, 0.1-radian angular grid.
    pub fn lemon_angle() -> Self {
        Self::circle(0.1).expect("valid grid")
    }

    pub fn uniform(lower: f64, width: f64, count: usize) -> Result<Self> {
        Self::new(vec![GridAxis::new(lower, width, count)])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn n_bins(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    #[inline]
    pub fn bin_index(&self, z: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (a, &zl) in self.axes.iter().zip(z) {
            idx = idx * a.count + a.index(zl)?;
        }
        Some(idx)
    }

    /// Per-axis indices of a flat index.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            out[k] = flat % a.count;
            flat /= a.count;
        }
        out
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.center(i))
            .collect()
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.axes[axis].period.is_some()
    }
}

/// Empirical marginal of the reaction coordinate on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalHistogram {
    pub grid: RCGrid,
    pub counts: Vec<u64>,
    pub weights: Vec<f64>,
}

impl MarginalHistogram {
    pub fn from_counts(grid: RCGrid, counts: Vec<u64>) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("histogram has no samples inside the grid"));
        }
        let weights = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self { grid, counts, weights })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let names: Vec<String> = (1..=self.grid.dim()).map(|k| format!("center{k}")).collect();
        out.push_str(&format!("{},count,weight\n", names.join(",")));
        for b in 0..self.grid.n_bins() {
            let c: Vec<String> = self.grid.center(b).iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{},{},{}\n", c.join(","), self.counts[b], self.weights[b]));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Bin every frame of a trajectory; frames outside the grid give `None`.
pub fn assign_bins(traj: &Trajectory, rc: &ReactionCoordinate, grid: &RCGrid) -> Result<Vec<Option<usize>>> {
    let mut z = vec![0.0; rc.m()];
    traj.rows()
        .enumerate()
        .map(|(t, row)| {
            rc.apply_into(row, &mut z)
                .map_err(|e| Error::InvalidInput(format!("frame {t}: {e}")))?;
            Ok(grid.bin_index(&z))
        })
        .collect()
}

pub fn marginal_histogram(traj: &Trajectory, rc: &ReactionCoordinate, grid: &RCGrid) -> Result<MarginalHistogram> {
    marginal_histogram_with(Exec::default(), traj, rc, grid)
}

/// Histogram accumulation sharded over `exec`, merged by addition.
pub fn marginal_histogram_with(
    exec: Exec,
    traj: &Trajectory,
    rc: &ReactionCoordinate,
    grid: &RCGrid,
) -> Result<MarginalHistogram> {
    if traj.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    const SHARD: usize = 1 << 16;
    let n = traj.len();
    let shards = n.div_ceil(SHARD);
    let partial = exec.map(shards, |s| -> Result<Vec<u64>> {
        let part = traj.slice(s * SHARD, ((s + 1) * SHARD).min(n));
        let mut counts = vec![0u64; grid.n_bins()];
        for b in assign_bins(&part, rc, grid)?.into_iter().flatten() {
            counts[b] += 1;
        }
        Ok(counts)
    });
    let mut counts = vec![0u64; grid.n_bins()];
    for p in partial {
        for (c, v) in counts.iter_mut().zip(p?) {
            *c += v;
        }
    }
    MarginalHistogram::from_counts(grid.clone(), counts)
}
