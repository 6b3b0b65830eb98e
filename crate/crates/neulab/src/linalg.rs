//! Sparse linear algebra behind the assembly module: triplet matrices,
//! shared LU factorizations (direct and transpose solves against one
//! factorization), saddle-point extensions for mean-zero constraints, and
//! smallest-singular-value extraction with a dense fallback.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Sparse square matrix assembled from (row, col, value) triplets.
#[derive(Debug, Clone)]
pub struct SparseMat {
    pub nrows: usize,
    pub ncols: usize,
    inner: SparseColMat<usize, f64>,
}

impl SparseMat {
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let t: Vec<Triplet<usize, usize, f64>> = triplets
            .iter()
            .map(|&(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let inner = SparseColMat::try_new_from_triplets(nrows, ncols, &t)
            .map_err(|e| Error::Solver(format!("triplet assembly: {e:?}")))?;
        Ok(Self { nrows, ncols, inner })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        let sym = self.inner.symbolic();
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let vals = self.inner.val_of_col(j);
            for (r, v) in sym.row_idx_of_col(j).zip(vals.iter()) {
                y[r] += v * xj;
            }
        }
        y
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        let sym = self.inner.symbolic();
        for j in 0..self.ncols {
            let vals = self.inner.val_of_col(j);
            let mut acc = 0.0;
            for (r, v) in sym.row_idx_of_col(j).zip(vals.iter()) {
                acc += v * x[r];
            }
            y[j] = acc;
        }
        y
    }

    /// Entries as triplets (column order).
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let sym = self.inner.symbolic();
        let mut out = Vec::new();
        for j in 0..self.ncols {
            let vals = self.inner.val_of_col(j);
            for (r, v) in sym.row_idx_of_col(j).zip(vals.iter()) {
                out.push((r, j, *v));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Frobenius norm.
    pub fn norm_frobenius(&self) -> f64 {
        self.triplets().iter().map(|(_, _, v)| v * v).sum::<f64>().sqrt()
    }

    /// `A^T A + tau I` as a new sparse matrix (SPD for `tau > 0`).
    pub fn gram_plus_shift(&self, tau: f64) -> Result<SparseMat> {
        let n = self.ncols;
        // CSR image of A: rows of A = columns of A^T
        let mut row_entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nrows];
        for (i, j, v) in self.triplets() {
            row_entries[i].push((j, v));
        }
        let mut acc = vec![0.0f64; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let sym = self.inner.symbolic();
        for j in 0..n {
            let vals = self.inner.val_of_col(j);
            for (r, v) in sym.row_idx_of_col(j).zip(vals.iter()) {
                for &(col, w) in &row_entries[r] {
                    if acc[col] == 0.0 && !touched.contains(&col) {
                        touched.push(col);
                    }
                    acc[col] += v * w;
                }
            }
            for &col in &touched {
                triplets.push((col, j, acc[col]));
                acc[col] = 0.0;
            }
            triplets.push((j, j, tau));
            touched.clear();
        }
        SparseMat::from_triplets(n, n, &triplets)
    }
}

/// Shared LU factorization; solves both `A x = b` and `A^T x = b`.
pub struct LuFactor {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl LuFactor {
    pub fn new(mat: &SparseMat) -> Result<Self> {
        if mat.nrows != mat.ncols {
            return Err(Error::Solver("LU of a non-square matrix".into()));
        }
        let lu = mat
            .inner
            .as_ref()
            .sp_lu()
            .map_err(|e| Error::Solver(format!("sparse LU: {e:?}")))?;
        Ok(Self { n: mat.nrows, lu })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_transpose_in_place(&mut rhs);
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }
}

/// Sparse Cholesky of an SPD matrix.
pub struct LltFactor {
    n: usize,
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl LltFactor {
    pub fn new(mat: &SparseMat) -> Result<Self> {
        let llt = mat
            .inner
            .as_ref()
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Solver(format!("sparse Cholesky: {e:?}")))?;
        Ok(Self { n: mat.nrows, llt })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.llt.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

// ---------------------------------------------------------------------------
// smallest singular values
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SingularTriples {
    /// Ascending smallest singular values.
    pub sigmas: Vec<f64>,
    /// Matching right singular vectors (unit Euclidean norm).
    pub vectors: Vec<Vec<f64>>,
}

/// Upper bound on matrices sent to the dense SVD path.
pub const DENSE_SVD_LIMIT: usize = 1100;

/// The `k` smallest singular values of a square sparse matrix with their
/// right singular vectors: dense SVD for small problems, shifted inverse
/// subspace iteration on `A^T A + tau I` beyond.
pub fn smallest_singular_triples(mat: &SparseMat, k: usize, seed: u64) -> Result<SingularTriples> {
    if mat.nrows != mat.ncols {
        return Err(Error::Solver("singular analysis of non-square matrix".into()));
    }
    let n = mat.nrows;
    let k = k.min(n);
    if n <= DENSE_SVD_LIMIT {
        let dense = mat.to_dense();
        let svd = dense
            .svd()
            .map_err(|e| Error::Solver(format!("dense SVD: {e:?}")))?;
        let s = svd.S();
        let v = svd.V();
        // faer returns singular values in descending order
        let mut sigmas = Vec::with_capacity(k);
        let mut vectors = Vec::with_capacity(k);
        for idx in (n - k..n).rev() {
            sigmas.push(s[idx]);
            vectors.push((0..n).map(|i| v[(i, idx)]).collect());
        }
        return Ok(SingularTriples { sigmas, vectors });
    }
    shifted_inverse_iteration(mat, k, seed)
}

fn shifted_inverse_iteration(mat: &SparseMat, k: usize, seed: u64) -> Result<SingularTriples> {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let n = mat.nrows;
    let q = (k + 4).min(n);

    // spectral scale via a few power iterations on A^T A
    let mut rng = StdRng::seed_from_u64(seed);
    let mut z: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mut sigma_max: f64 = 1.0;
    for _ in 0..20 {
        let w = mat.matvec_transpose(&mat.matvec(&z));
        let nrm = norm(&w);
        if nrm == 0.0 {
            break;
        }
        sigma_max = nrm.sqrt();
        z = w.iter().map(|x| x / nrm).collect();
    }
    let mut tau = (1e-7 * sigma_max).powi(2).max(f64::MIN_POSITIVE);

    let chol = loop {
        match mat.gram_plus_shift(tau).and_then(|g| LltFactor::new(&g)) {
            Ok(c) => break c,
            Err(_) if tau < sigma_max * sigma_max => {
                tau *= 100.0;
            }
            Err(e) => return Err(e),
        }
    };

    let mut basis: Vec<Vec<f64>> = (0..q)
        .map(|_| (0..n).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect();
    orthonormalize(&mut basis);
    let mut last: Vec<f64> = vec![f64::INFINITY; k];
    let mut result = None;
    for _iter in 0..400 {
        for b in basis.iter_mut() {
            *b = chol.solve(b);
        }
        orthonormalize(&mut basis);
        // Ritz step on A^T A restricted to the basis
        let w: Vec<Vec<f64>> = basis.iter().map(|b| mat.matvec(b)).collect();
        let mut g = vec![vec![0.0; q]; q];
        for i in 0..q {
            for j in i..q {
                let d = dot(&w[i], &w[j]);
                g[i][j] = d;
                g[j][i] = d;
            }
        }
        let (evals, evecs) = jacobi_eigen(&g);
        let sigmas: Vec<f64> = evals.iter().take(k).map(|&l| l.max(0.0).sqrt()).collect();
        let drift = sigmas
            .iter()
            .zip(last.iter())
            .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
            .fold(0.0f64, f64::max);
        last.clone_from(&sigmas);
        if drift < 1e-9 || _iter == 399 {
            let mut vectors = Vec::with_capacity(k);
            for (col, _) in evals.iter().enumerate().take(k) {
                let mut v = vec![0.0; n];
                for (b, basis_vec) in basis.iter().enumerate() {
                    let c = evecs[b][col];
                    for (vi, bv) in v.iter_mut().zip(basis_vec.iter()) {
                        *vi += c * bv;
                    }
                }
                let nv = norm(&v);
                for vi in v.iter_mut() {
                    *vi /= nv;
                }
                vectors.push(v);
            }
            result = Some(SingularTriples { sigmas, vectors });
            if drift < 1e-9 {
                break;
            }
        }
    }
    result.ok_or_else(|| Error::Solver("inverse iteration did not converge".into()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn orthonormalize(basis: &mut [Vec<f64>]) {
    for i in 0..basis.len() {
        for _ in 0..2 {
            for j in 0..i {
                let c = dot(&basis[i], &basis[j]);
                let (head, tail) = basis.split_at_mut(i);
                for (x, y) in tail[0].iter_mut().zip(head[j].iter()) {
                    *x -= c * y;
                }
            }
        }
        let nrm = norm(&basis[i]);
        if nrm > 0.0 {
            for x in basis[i].iter_mut() {
                *x /= nrm;
            }
        }
    }
}

/// Cyclic Jacobi eigendecomposition for small symmetric matrices.
/// Returns eigenvalues ascending with matching eigenvector columns
/// (`evecs[row][col]`).
fn jacobi_eigen(g: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = g.len();
    let mut a: Vec<Vec<f64>> = g.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-14 * frob(&a).max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let (aip, aiq) = (a[i][p], a[i][q]);
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let (apj, aqj) = (a[p][j], a[q][j]);
                    a[p][j] = c * apj - s * aqj;
                    a[q][j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let (vip, viq) = (v[i][p], v[i][q]);
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());
    let evals: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let mut evecs = vec![vec![0.0; n]; n];
    for (newc, &oldc) in order.iter().enumerate() {
        for r in 0..n {
            evecs[r][newc] = v[r][oldc];
        }
    }
    (evals, evecs)
}

fn frob(a: &[Vec<f64>]) -> f64 {
    a.iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_plus(n: usize) -> SparseMat {
        // tridiagonal SPD-ish test matrix
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + i as f64 * 0.01));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -0.5));
            }
        }
        SparseMat::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn lu_solves_direct_and_transpose() {
        let m = diag_plus(50);
        let lu = LuFactor::new(&m).unwrap();
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = lu.solve(&b);
        let r = m.matvec(&x);
        let err: f64 = r.iter().zip(b.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        let y = lu.solve_transpose(&b);
        let rt = m.matvec_transpose(&y);
        let errt: f64 = rt.iter().zip(b.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(errt < 1e-12);
    }

    #[test]
    fn dense_and_sparse_sigma_paths_agree() {
        let m = diag_plus(80);
        let dense = smallest_singular_triples(&m, 4, 1).unwrap();
        let sparse = shifted_inverse_iteration(&m, 4, 1).unwrap();
        for (a, b) in dense.sigmas.iter().zip(sparse.sigmas.iter()) {
            assert!((a - b).abs() < 1e-7 * a.max(1e-10), "dense {a} sparse {b}");
        }
        // residual quality of the reported vectors
        for (s, v) in dense.sigmas.iter().zip(dense.vectors.iter()) {
            let r = norm(&m.matvec(v));
            assert!((r - s).abs() < 1e-8 * s.max(1e-12));
        }
    }

    #[test]
    fn singular_matrix_detected() {
        // rank-deficient: last row/col zero except coupling
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = 1.0 / (1.0 + (i as f64 - j as f64).abs());
                t.push((i, j, v));
            }
        }
        // make row sums zero so the constant vector is in the kernel
        let m0 = SparseMat::from_triplets(n, n, &t).unwrap();
        let ones = vec![1.0; n];
        let rs = m0.matvec(&ones);
        for (i, r) in rs.iter().enumerate() {
            t.push((i, i, -r));
        }
        let m = SparseMat::from_triplets(n, n, &t).unwrap();
        let res = smallest_singular_triples(&m, 3, 2).unwrap();
        assert!(res.sigmas[0] < 1e-12 * m.norm_frobenius());
        assert!(res.sigmas[1] > 1e-6 * m.norm_frobenius());
        // the kernel vector is the constant one
        let v = &res.vectors[0];
        let mean = v.iter().sum::<f64>() / n as f64;
        let dev = v.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-8);
    }

    #[test]
    fn jacobi_small_symmetric() {
        let g = vec![
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ];
        let (evals, evecs) = jacobi_eigen(&g);
        assert!(evals.windows(2).all(|w| w[0] <= w[1]));
        // A v = lambda v check
        for c in 0..3 {
            for r in 0..3 {
                let av: f64 = (0..3).map(|k| g[r][k] * evecs[k][c]).sum();
                assert!((av - evals[c] * evecs[r][c]).abs() < 1e-10);
            }
        }
    }
}
