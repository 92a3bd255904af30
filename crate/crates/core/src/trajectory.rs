use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What produced a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajKind {
    Overdamped,
    /// Rows store positions followed by momenta.
    Langevin,
    Effective,
    Other,
}

impl TrajKind {
    pub fn tag(self) -> u8 {
        match self {
            TrajKind::Overdamped => 0,
            TrajKind::Langevin => 1,
            TrajKind::Effective => 2,
            TrajKind::Other => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => TrajKind::Overdamped,
            1 => TrajKind::Langevin,
            2 => TrajKind::Effective,
            3 => TrajKind::Other,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajMeta {
    pub potential: Option<String>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    /// Coefficient file an effective trajectory was simulated from.
    pub source: Option<String>,
    /// Kramers-Moyal offset of the coefficients behind an effective trajectory.
    pub offset: Option<f64>,
}

/// Time-ordered states at a fixed time step, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    data: Vec<f64>,
    dim: usize,
    pub dt: f64,
    pub kind: TrajKind,
    pub meta: TrajMeta,
}

impl Trajectory {
    pub fn new(data: Vec<f64>, dim: usize, dt: f64, kind: TrajKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("trajectory dimension must be positive"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} values do not fill rows of length {dim}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            dim,
            dt,
            kind,
            meta: TrajMeta::default(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], dt: f64, kind: TrajKind) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("rows have unequal length"));
        }
        Self::new(rows.concat(), dim, dt, kind)
    }

    pub fn with_meta(mut self, meta: TrajMeta) -> Self {
        self.meta = meta;
        self
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Column `k` as a vector.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    /// The same states in reverse time order.
    pub fn reversed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.dim).rev() {
            data.extend_from_slice(row);
        }
        Self { data, ..self.clone() }
    }

    /// Consecutive frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            ..self.clone()
        }
    }
}
