//! Sparse symmetric matrices, banded Cholesky factorization, and a
//! shift-invert block subspace iteration for the lowest eigenpairs.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry exists") += v;
                continue;
            }
            indices.push(j);
            values.push(v);
            indptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }
}

/// Lower-triangular band storage of a symmetric matrix.
#[derive(Clone, Debug)]
struct SymBand {
    n: usize,
    bw: usize,
    /// Row `i` holds columns `i - bw ..= i` at offsets `0 ..= bw`.
    data: Vec<f64>,
}

impl SymBand {
    fn from_csr(a: &CsrMatrix, shift: f64) -> Self {
        let bw = a.bandwidth();
        let mut data = vec![0.0; a.n * (bw + 1)];
        for i in 0..a.n {
            for (j, v) in a.row(i) {
                if j <= i {
                    data[i * (bw + 1) + (j + bw - i)] += v;
                }
            }
            data[i * (bw + 1) + bw] += shift;
        }
        Self { n: a.n, bw, data }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// In-place Cholesky `A = L L^T`.
    fn factor(mut self) -> Result<Self> {
        let bw = self.bw;
        for i in 0..self.n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut sum = self.data[self.at(i, j)];
                for k in k0..j {
                    sum -= self.data[self.at(i, k)] * self.data[self.at(j, k)];
                }
                if j == i {
                    if !(sum > 0.0) {
                        return Err(Error::Eigen(format!("matrix is not positive definite at row {i}")));
                    }
                    let idx = self.at(i, i);
                    self.data[idx] = sum.sqrt();
                } else {
                    let idx = self.at(i, j);
                    self.data[idx] = sum / self.data[self.at(j, j)];
                }
            }
        }
        Ok(self)
    }

    /// Solve `L L^T x = b` in place.
    #[cfg(test)]
    fn solve(&self, x: &mut [f64]) {
        self.solve_block(x, 1);
    }

    /// Solve `L L^T X = B` in place for `p` right-hand sides stored
    /// row-major (`n x p`), streaming the factor once per sweep.
    fn solve_block(&self, x: &mut [f64], p: usize) {
        let bw = self.bw;
        let mut acc = vec![0.0; p];
        for i in 0..self.n {
            acc.copy_from_slice(&x[i * p..(i + 1) * p]);
            for k in i.saturating_sub(bw)..i {
                let l = self.data[self.at(i, k)];
                for (a, v) in acc.iter_mut().zip(&x[k * p..(k + 1) * p]) {
                    *a -= l * v;
                }
            }
            let d = self.data[self.at(i, i)];
            for (dst, a) in x[i * p..(i + 1) * p].iter_mut().zip(&acc) {
                *dst = a / d;
            }
        }
        for i in (0..self.n).rev() {
            acc.copy_from_slice(&x[i * p..(i + 1) * p]);
            for k in i + 1..(i + bw + 1).min(self.n) {
                let l = self.data[self.at(k, i)];
                for (a, v) in acc.iter_mut().zip(&x[k * p..(k + 1) * p]) {
                    *a -= l * v;
                }
            }
            let d = self.data[self.at(i, i)];
            for (dst, a) in x[i * p..(i + 1) * p].iter_mut().zip(&acc) {
                *dst = a / d;
            }
        }
    }
}

/// Eigenvalues ascending with matching eigenvector columns.
pub fn sorted_sym_eigen(mat: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = mat.nrows();
    let sym = 0.5 * (&mat + mat.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, fix_signs(vecs))
}

/// Make the largest-magnitude entry of each column positive.
pub fn fix_signs(mut vecs: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in vecs.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    vecs
}

#[derive(Clone, Copy, Debug)]
pub struct EigenSettings {
    /// Shift `alpha` of the factored operator `A + alpha I`.
    pub shift: f64,
    /// Residual tolerance relative to `max(theta_k, shift)`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Matrices up to this size are solved densely.
    pub dense_limit: usize,
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self {
            shift: 1e-2,
            tol: 1e-10,
            max_iter: 1000,
            seed: 0x5eed,
            dense_limit: 600,
        }
    }
}

/// The `k` smallest eigenpairs of a symmetric positive semi-definite sparse
/// matrix, eigenvalues ascending and eigenvectors orthonormal.
pub fn smallest_eigenpairs(a: &CsrMatrix, k: usize, settings: EigenSettings) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.n;
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "cannot compute {k} eigenpairs of a {n}x{n} matrix"
        )));
    }
    if n <= settings.dense_limit {
        let (vals, vecs) = sorted_sym_eigen(a.to_dense());
        return Ok((vals[..k].to_vec(), vecs.columns(0, k).into_owned()));
    }
    let factor = SymBand::from_csr(a, settings.shift).factor()?;
    // residuals cannot drop below rounding in A x
    let a_norm = (0..n)
        .map(|i| a.row(i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let floor = 1e3 * f64::EPSILON * a_norm;
    let p = (2 * k).max(k + 8).min(n);
    let mut rng = Stream::new(settings.seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.normal());
    x = x.qr().q();
    let mut ax = DMatrix::zeros(n, p);
    let mut block = vec![0.0; n * p];
    let mut out = vec![0.0; n];
    for iter in 0..settings.max_iter {
        // Y = (A + alpha)^{-1} X
        for r in 0..n {
            for c in 0..p {
                block[r * p + c] = x[(r, c)];
            }
        }
        factor.solve_block(&mut block, p);
        let y = DMatrix::from_row_slice(n, p, &block);
        let q = y.qr().q();
        for c in 0..p {
            a.mul_vec(q.column(c).as_slice(), &mut out);
            ax.column_mut(c).copy_from_slice(&out);
        }
        let h = q.transpose() * &ax;
        let (theta, w) = sorted_sym_eigen(h);
        x = &q * &w;
        let axw = &ax * &w;
        let scale = theta[k - 1].abs().max(settings.shift);
        let converged = (0..k).all(|i| {
            let r = (axw.column(i) - theta[i] * x.column(i)).norm();
            r <= settings.tol * scale + floor
        });
        if converged {
            log::debug!("subspace iteration converged after {} sweeps", iter + 1);
            let vecs = fix_signs(x.columns(0, k).into_owned());
            return Ok((theta[..k].to_vec(), vecs));
        }
    }
    Err(Error::Eigen(format!(
        "subspace iteration did not converge in {} iterations",
        settings.max_iter
    )))
}
