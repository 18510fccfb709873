//! Compressed sparse row storage and the symmetric factorization that backs
//! every solve, log-determinant and sample in the crate.
//!
//! The factorization is an envelope (profile) Cholesky applied after a
//! reverse Cuthill–McKee reordering. For the interval meshes and structured
//! grids handled here the reordered profile is narrow, so the envelope is a
//! close fit to the true fill of `L`.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{FieldError, Result};

/// Square or rectangular matrix in CSR form with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// in insertion order, so the result is a deterministic function of the
    /// triplet sequence.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (r, c, v) = triplets[k];
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix { nrows, ncols, row_ptr, col_idx, values }
    }

    /// Converts a dense matrix, dropping entries that are exactly zero.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &triplets)
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates stored entries as `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Entrywise `self + scale * other`.
    pub fn add_scaled(&self, other: &CsrMatrix, scale: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets: Vec<_> = self.iter().collect();
        triplets.extend(other.iter().map(|(i, j, v)| (i, j, scale * v)));
        Self::from_triplets(self.nrows, self.ncols, &triplets)
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= scale);
        out
    }

    /// Extracts the submatrix with the given (ordered) rows and columns.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_pos = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_pos[c] = k;
        }
        let mut triplets = Vec::new();
        for (r_new, &r) in rows.iter().enumerate() {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                if col_pos[c] != usize::MAX {
                    triplets.push((r_new, col_pos[c], v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), &triplets)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    /// Exact (bitwise) symmetry of pattern and values.
    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && self.iter().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &CsrMatrix) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz() * other.nnz());
        for (i, j, a) in self.iter() {
            for (k, l, b) in other.iter() {
                triplets.push((i * other.nrows + k, j * other.ncols + l, a * b));
            }
        }
        Self::from_triplets(self.nrows * other.nrows, self.ncols * other.ncols, &triplets)
    }
}

/// Reverse Cuthill–McKee ordering of the symmetric pattern of `a`.
/// Returns `order` with `order[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let adjacency: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).0.iter().copied().filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        // lowest-degree unvisited node seeds the next component
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        let start = pseudo_peripheral(seed, &adjacency, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> =
                adjacency[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(start: usize, adjacency: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut level = vec![None; adjacency.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap();
        for &w in &adjacency[v] {
            if level[w].is_none() {
                level[w] = Some(lv + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

fn pseudo_peripheral(seed: usize, adjacency: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut current = seed;
    let mut eccentricity = 0;
    for _ in 0..8 {
        let levels = bfs_levels(current, adjacency);
        let depth = levels.iter().flatten().copied().max().unwrap_or(0);
        if depth <= eccentricity && current != seed {
            break;
        }
        eccentricity = depth;
        let candidate = (0..adjacency.len())
            .filter(|&i| levels[i] == Some(depth))
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        if candidate == current {
            break;
        }
        current = candidate;
    }
    current
}

/// Cholesky factorization `P A Pᵀ = L Lᵀ` of a symmetric positive-definite
/// sparse matrix, stored row-wise over the envelope of `L`.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    /// `order[new] = old`
    order: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    env: Vec<f64>,
}

impl SparseCholesky {
    /// Factors `a`, reading only its lower triangle. Fails with
    /// [`FieldError::Numeric`] on a non-positive pivot.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(FieldError::Numeric(format!(
                "cannot factor a {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let order = reverse_cuthill_mckee(a);
        let mut position = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }

        // envelope of the permuted lower triangle
        let mut first: Vec<usize> = (0..n).collect();
        for (new_i, &old_i) in order.iter().enumerate() {
            for &old_j in a.row(old_i).0 {
                let new_j = position[old_j];
                if new_j < first[new_i] {
                    first[new_i] = new_j;
                }
            }
        }
        let mut row_start = vec![0usize; n + 1];
        for i in 0..n {
            row_start[i + 1] = row_start[i] + (i - first[i] + 1);
        }
        let mut env = vec![0.0; row_start[n]];
        for (new_i, &old_i) in order.iter().enumerate() {
            let (cols, vals) = a.row(old_i);
            for (&old_j, &v) in cols.iter().zip(vals) {
                let new_j = position[old_j];
                if new_j <= new_i {
                    env[row_start[new_i] + new_j - first[new_i]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let ri = row_start[i];
            for j in fi..i {
                let fj = first[j];
                let rj = row_start[j];
                let k0 = fi.max(fj);
                let mut s = env[ri + j - fi];
                for k in k0..j {
                    s -= env[ri + k - fi] * env[rj + k - fj];
                }
                env[ri + j - fi] = s / env[rj + j - fj];
            }
            let mut d = env[ri + i - fi];
            for k in fi..i {
                let l = env[ri + k - fi];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(FieldError::Numeric(format!(
                    "matrix is not positive definite (pivot {d:e} at reordered row {i})"
                )));
            }
            env[ri + i - fi] = d.sqrt();
        }
        Ok(SparseCholesky { n, order, first, row_start, env })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of `L` (envelope size).
    pub fn envelope_size(&self) -> usize {
        self.env.len()
    }

    fn l(&self, i: usize, k: usize) -> f64 {
        self.env[self.row_start[i] + k - self.first[i]]
    }

    fn forward(&self, y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = y[i];
            for k in self.first[i]..i {
                s -= self.l(i, k) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
    }

    fn backward(&self, x: &mut [f64]) {
        for i in (0..self.n).rev() {
            x[i] /= self.l(i, i);
            let xi = x[i];
            for k in self.first[i]..i {
                x[k] -= self.l(i, k) * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut work: Vec<f64> = self.order.iter().map(|&old| b[old]).collect();
        self.forward(&mut work);
        self.backward(&mut work);
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.order.iter().enumerate() {
            x[old] = work[new];
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let col: Vec<f64> = b.column(c).iter().copied().collect();
            let x = self.solve(&col);
            out.column_mut(c).copy_from_slice(&x);
        }
        out
    }

    /// Maps `ξ` to `η = Pᵀ L⁻ᵀ ξ`. For `ξ ~ N(0, I)` the result has
    /// covariance `A⁻¹`.
    pub fn solve_upper(&self, xi: &[f64]) -> Vec<f64> {
        assert_eq!(xi.len(), self.n);
        let mut work = xi.to_vec();
        self.backward(&mut work);
        let mut eta = vec![0.0; self.n];
        for (new, &old) in self.order.iter().enumerate() {
            eta[old] = work[new];
        }
        eta
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l(i, i).ln()).sum::<f64>()
    }

    /// Dense inverse; intended for small systems and oracle checks.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_dense(&DMatrix::identity(self.n, self.n))
    }

    /// Diagonal of `A⁻¹`, one solve per entry.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.n];
        (0..self.n)
            .map(|i| {
                e[i] = 1.0;
                let x = self.solve(&e);
                e[i] = 0.0;
                x[i]
            })
            .collect()
    }
}
