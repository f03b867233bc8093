//! Compressed sparse rows and a profile (skyline) LU factorization.
//!
//! The scheme Jacobians are M-matrices, so LU without pivoting is stable and
//! the fill stays inside the row/column envelope. On a periodic 1D grid the
//! wrap entries add a single dense row and column, keeping the cost linear.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Assemble from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize, scale: f64) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, scale)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (i, &xi) in x.iter().enumerate() {
            for (c, v) in self.row(i) {
                out[c] += v * xi;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Largest off-diagonal entry with its position, if any off-diagonal
    /// entries are stored.
    pub fn max_off_diagonal(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                if c != i && best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((i, c, v));
                }
            }
        }
        best
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(i) {
                row[c] = v;
            }
        }
        d
    }
}

/// `A = L U` with unit lower `L`, stored by rows, and `U` stored by columns,
/// each restricted to the envelope of `A`.
#[derive(Clone, Debug)]
pub struct SkylineLu {
    n: usize,
    /// First stored column of each row of `L`.
    l_start: Vec<usize>,
    /// `l[i]` holds `L[i][l_start[i]..i]`.
    l: Vec<Vec<f64>>,
    /// First stored row of each column of `U`.
    u_start: Vec<usize>,
    /// `u[j]` holds `U[u_start[j]..=j][j]`.
    u: Vec<Vec<f64>>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SkylineLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.n();
        let mut l_start: Vec<usize> = (0..n).collect();
        let mut u_start: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for (j, _) in a.row(i) {
                if j < i {
                    l_start[i] = l_start[i].min(j);
                } else {
                    u_start[j] = u_start[j].min(i);
                }
            }
        }
        let mut l: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; i - l_start[i]]).collect();
        let mut u: Vec<Vec<f64>> = (0..n).map(|j| vec![0.0; j + 1 - u_start[j]]).collect();
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j < i {
                    l[i][j - l_start[i]] = v;
                } else {
                    u[j][i - u_start[j]] = v;
                }
            }
        }

        for k in 0..n {
            // Row k of L.
            let lk0 = l_start[k];
            for j in lk0..k {
                let m0 = lk0.max(u_start[j]);
                let s = dot(&l[k][m0 - lk0..j - lk0], &u[j][m0 - u_start[j]..j - u_start[j]]);
                let pivot = u[j][j - u_start[j]];
                l[k][j - lk0] = (l[k][j - lk0] - s) / pivot;
            }
            // Column k of U.
            let uk0 = u_start[k];
            for i in uk0..=k {
                let m0 = l_start[i].max(uk0);
                if m0 < i {
                    let s = dot(
                        &l[i][m0 - l_start[i]..i - l_start[i]],
                        &u[k][m0 - uk0..i - uk0],
                    );
                    u[k][i - uk0] -= s;
                }
            }
            let pivot = u[k][k - uk0];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::SingularSystem(k));
            }
        }

        Ok(Self {
            n,
            l_start,
            l,
            u_start,
            u,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries of both factors.
    pub fn fill(&self) -> usize {
        self.l.iter().map(Vec::len).sum::<usize>() + self.u.iter().map(Vec::len).sum::<usize>()
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y = b.to_vec();
        for i in 0..self.n {
            let s0 = self.l_start[i];
            y[i] -= dot(&self.l[i], &y[s0..i]);
        }
        for j in (0..self.n).rev() {
            let s0 = self.u_start[j];
            let xj = y[j] / self.u[j][j - s0];
            y[j] = xj;
            for (yi, uij) in y[s0..j].iter_mut().zip(&self.u[j]) {
                *yi -= uij * xj;
            }
        }
        y
    }

    /// Solve `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut z = b.to_vec();
        for j in 0..self.n {
            let s0 = self.u_start[j];
            let s = dot(&self.u[j][..j - s0], &z[s0..j]);
            z[j] = (z[j] - s) / self.u[j][j - s0];
        }
        for i in (0..self.n).rev() {
            let s0 = self.l_start[i];
            let xi = z[i];
            for (zm, lim) in z[s0..i].iter_mut().zip(&self.l[i]) {
                *zm -= lim * xi;
            }
        }
        z
    }
}
