//! PCCA+ metastable decomposition from dominant eigenvectors (inner simplex
//! vertices with a feasibility projection, no further optimization).

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::msm::SpectralModel;

#[derive(Clone, Debug, PartialEq)]
pub struct MetastablePartition {
    /// `n x M`, rows non-negative and summing to one.
    pub memberships: DMatrix<f64>,
    /// Set of each state by largest membership, ties to the lowest set.
    pub crisp: Vec<usize>,
    /// Stationary mass of each crisp set.
    pub set_probabilities: Vec<f64>,
    /// Original state index of each row.
    pub states: Vec<usize>,
    pub diagnostics: Vec<String>,
}

impl MetastablePartition {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,set");
        for k in 0..self.memberships.ncols() {
            let _ = write!(out, ",chi{}", k + 1);
        }
        out.push('\n');
        for (row, (&s, &set)) in self.states.iter().zip(&self.crisp).enumerate() {
            let _ = write!(out, "{s},{set}");
            for k in 0..self.memberships.ncols() {
                let _ = write!(out, ",{}", self.memberships[(row, k)]);
            }
            out.push('\n');
        }
        out
    }
}

/// Representative rows spanning the simplex, by successive maximal
/// distance with Gram-Schmidt deflation. Ties go to the lowest row. Only
/// rows flagged in `eligible` can become vertices.
fn inner_simplex_vertices(x: &DMatrix<f64>, eligible: &[bool]) -> Vec<usize> {
    let (n, m) = (x.nrows(), x.ncols());
    let mut index = vec![0usize; m];
    let mut best = -1.0;
    for i in 0..n {
        let d = x.row(i).norm();
        if eligible[i] && d > best {
            best = d;
            index[0] = i;
        }
    }
    let origin = x.row(index[0]).into_owned();
    let mut ortho = x.clone();
    for i in 0..n {
        let shifted = ortho.row(i) - &origin;
        ortho.set_row(i, &shifted);
    }
    for k in 1..m {
        let temp = ortho.row(index[k - 1]).into_owned();
        let mut best = -1.0;
        for i in 0..n {
            let proj = ortho.row(i).dot(&temp);
            let deflated = ortho.row(i) - proj * &temp;
            ortho.set_row(i, &deflated);
            let d = deflated.norm();
            if eligible[i] && d > best && !index[..k].contains(&i) {
                best = d;
                index[k] = i;
            }
        }
        if best > 0.0 {
            ortho /= best;
        }
    }
    index
}

/// PCCA+ on eigenvector rows `x` (`n x M`, first column spanning constants)
/// with stationary weights `pi`.
pub fn pcca_vectors(x: &DMatrix<f64>, pi: &[f64], states: Vec<usize>) -> Result<MetastablePartition> {
    pcca_vectors_on_support(x, pi, states, 0.0)
}

/// PCCA+ where simplex vertices are restricted to rows whose weight is at
/// least `support_tol` times the largest weight. On fine grids the
/// eigenvectors leave their plateaus in regions of negligible mass, and
/// such rows would otherwise be picked as vertices.
pub fn pcca_vectors_on_support(
    x: &DMatrix<f64>,
    pi: &[f64],
    states: Vec<usize>,
    support_tol: f64,
) -> Result<MetastablePartition> {
    let (n, m) = (x.nrows(), x.ncols());
    if m == 0 || m > n {
        return Err(Error::invalid(format!("cannot form {m} sets from {n} states")));
    }
    let mut diagnostics = Vec::new();
    let max_pi = pi.iter().copied().fold(0.0, f64::max);
    let eligible: Vec<bool> = pi.iter().map(|&p| p >= support_tol * max_pi).collect();
    if eligible.iter().filter(|&&e| e).count() < m {
        return Err(Error::invalid(format!("fewer than {m} states carry enough weight")));
    }
    let vertices = inner_simplex_vertices(x, &eligible);
    let simplex = DMatrix::from_fn(m, m, |r, c| x[(vertices[r], c)]);
    let inv = simplex
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::EstimationFailed("degenerate simplex: vertex rows are linearly dependent".into()))?;
    let mut chi = x * inv;
    let mut clipped = 0.0f64;
    for i in 0..n {
        let mut sum = 0.0;
        for k in 0..m {
            if chi[(i, k)] < 0.0 {
                clipped = clipped.max(-chi[(i, k)]);
                chi[(i, k)] = 0.0;
            }
            sum += chi[(i, k)];
        }
        if sum > 0.0 {
            for k in 0..m {
                chi[(i, k)] /= sum;
            }
        } else {
            chi[(i, 0)] = 1.0;
        }
    }
    if clipped > 1e-3 {
        diagnostics.push(format!(
            "feasibility projection clipped memberships by up to {clipped:.3e}"
        ));
    }
    let crisp: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = 0;
            for k in 1..m {
                if chi[(i, k)] > chi[(i, best)] {
                    best = k;
                }
            }
            best
        })
        .collect();
    let mut set_probabilities = vec![0.0; m];
    for (i, &set) in crisp.iter().enumerate() {
        set_probabilities[set] += pi[i];
    }
    let total: f64 = set_probabilities.iter().sum();
    if total > 0.0 {
        set_probabilities.iter_mut().for_each(|p| *p /= total);
    }
    Ok(MetastablePartition {
        memberships: chi,
        crisp,
        set_probabilities,
        states,
        diagnostics,
    })
}

/// PCCA+ with `M` sets from the top-`M` eigenvectors of a model.
pub fn pcca(model: &SpectralModel, m: usize) -> Result<MetastablePartition> {
    if m == 0 || m > model.eigenvalues.len() {
        return Err(Error::invalid(format!(
            "M = {m} but the model has {} eigenpairs",
            model.eigenvalues.len()
        )));
    }
    if !(model.eigenvalues[m - 1] > 0.0) {
        return Err(Error::invalid(format!(
            "eigenvalue {m} is {} but must be positive",
            model.eigenvalues[m - 1]
        )));
    }
    let x = model.eigenvectors.columns(0, m).into_owned();
    let mut part = pcca_vectors(&x, &model.stationary, model.states.clone())?;
    for w in model.eigenvalues[..m].windows(2) {
        if (w[0] - w[1]).abs() < 1e-10 {
            part.diagnostics.push(format!(
                "repeated eigenvalue {} within 1e-10; the simplex basis is not unique",
                w[0]
            ));
        }
    }
    Ok(part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msm::{solve_gevp, CorrelationPair};
    use nalgebra::DVector;

    fn model_from_transition(t: &DMatrix<f64>, pi: &[f64], k: usize) -> SpectralModel {
        let n = t.nrows();
        let c = DMatrix::from_fn(n, n, |i, j| pi[i] * t[(i, j)]);
        let pair = CorrelationPair {
            c_tau: 0.5 * (&c + c.transpose()),
            c_0: DMatrix::from_diagonal(&DVector::from_vec(pi.to_vec())),
            lag: 1.0,
            lag_steps: 1,
            symmetrized: true,
            states: (0..n).collect(),
            n_states: n,
            total: 1,
        };
        solve_gevp(&pair, k).unwrap()
    }

    #[test]
    fn decoupled_chain() {
        let model = model_from_transition(&DMatrix::identity(2, 2), &[0.5, 0.5], 2);
        let p = pcca(&model, 2).unwrap();
        let mut crisp = p.crisp.clone();
        crisp.sort();
        assert_eq!(crisp, vec![0, 1]);
        for i in 0..2 {
            let row = p.memberships.row(i);
            assert!((row.max() - 1.0).abs() < 1e-12 && row.min().abs() < 1e-12);
        }
        assert!(!p.diagnostics.is_empty());
    }

    #[test]
    fn nearly_decoupled_blocks() {
        let eps = 1e-6;
        let block = [[0.7, 0.3], [0.4, 0.6]];
        let t = DMatrix::from_fn(4, 4, |i, j| {
            if i / 2 == j / 2 {
                block[i % 2][j % 2] * (1.0 - eps)
            } else {
                eps / 2.0
            }
        });
        // symmetric blocks: stationary distribution of each block is (4/7, 3/7)
        let pi = [2.0 / 7.0, 1.5 / 7.0, 2.0 / 7.0, 1.5 / 7.0];
        let model = model_from_transition(&t, &pi, 2);
        let p = pcca(&model, 2).unwrap();
        assert_eq!(p.crisp[0], p.crisp[1]);
        assert_eq!(p.crisp[2], p.crisp[3]);
        assert_ne!(p.crisp[0], p.crisp[2]);
        for i in 0..4 {
            let set = p.crisp[i];
            assert!((p.memberships[(i, set)] - 1.0).abs() < 1e-3);
        }
        assert!((p.set_probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p.set_probabilities[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn too_many_sets() {
        let model = model_from_transition(&DMatrix::identity(2, 2), &[0.5, 0.5], 2);
        assert!(pcca(&model, 3).is_err());
    }
}
