//! Sparse linear algebra: CSR matrices, Jacobi-preconditioned conjugate
//! gradients, the nodal stiffness operator and the exact projection-based
//! cleaning of the electric field.

use crate::error::{Error, Result};

/// Compressed-sparse-row matrix.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets; duplicate entries are summed
    /// and exact zeros produced by cancellation are kept out of storage.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut it = triplets.into_iter().peekable();
        while let Some((r, c, v)) = it.next() {
            debug_assert!(r < nrows && c < ncols);
            let mut acc = v;
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    acc += v2;
                    it.next();
                } else {
                    break;
                }
            }
            if acc != 0.0 {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(acc);
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
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

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
        y
    }

    /// y = A^T x
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * x[r];
            }
        }
        y
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                triplets.push((*c, r, *v));
            }
        }
        SparseMatrix::from_triplets(self.ncols, self.nrows, triplets)
    }

    /// C = A B (small problem sizes; row-by-row accumulation).
    pub fn matmul(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut triplets = Vec::new();
        let mut dense: Vec<f64> = vec![0.0; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (k, v) in cols.iter().zip(vals) {
                let (bcols, bvals) = other.row(*k);
                for (c, bv) in bcols.iter().zip(bvals) {
                    if dense[*c] == 0.0 && !touched.contains(c) {
                        touched.push(*c);
                    }
                    dense[*c] += v * bv;
                }
            }
            for &c in &touched {
                if dense[c] != 0.0 {
                    triplets.push((r, c, dense[c]));
                }
                dense[c] = 0.0;
            }
            touched.clear();
        }
        SparseMatrix::from_triplets(self.nrows, other.ncols, triplets)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for r in 0..d.len() {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *c == r {
                    d[r] = *v;
                }
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let t = self.transpose();
        if t.nnz() != self.nnz() {
            return false;
        }
        for r in 0..self.nrows {
            let (c1, v1) = self.row(r);
            let (c2, v2) = t.row(r);
            if c1 != c2 {
                return false;
            }
            for (a, b) in v1.iter().zip(v2) {
                if (a - b).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Conjugate gradient settings.
#[derive(Debug, Clone)]
pub struct CgConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            rel_tol: 1e-12,
            abs_tol: 0.0,
            max_iter: 10_000,
        }
    }
}

/// Jacobi-preconditioned conjugate gradient for symmetric positive
/// (semi-)definite systems.  `x0` seeds the iteration when available.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    cfg: &CgConfig,
) -> Result<Vec<f64>> {
    assert_eq!(a.nrows(), a.ncols());
    assert_eq!(b.len(), a.nrows());
    let n = b.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = (cfg.rel_tol * norm_b).max(cfg.abs_tol);
    if norm_b == 0.0 {
        return Ok(vec![0.0; n]);
    }

    let diag = a.diagonal();
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| {
            assert!(d > 0.0, "zero or negative diagonal in SPD solve");
            1.0 / d
        })
        .collect();

    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(r, z)| r * z).sum();
    let mut res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if res <= target {
        return Ok(x);
    }

    for iter in 0..cfg.max_iter {
        let ap = a.matvec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(p, ap)| p * ap).sum();
        if pap <= 0.0 {
            return Err(Error::IndefiniteMatrix { iter });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res <= target {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(r, z)| r * z).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolveFailed {
        iters: cfg.max_iter,
        residual: res / norm_b,
    })
}

/// Stiffness operator on the boundary-constrained nodal space,
/// `K = G^T M_N G` with `G` the discrete gradient and `M_N` the edge mass
/// matrix.  Symmetric positive definite.
pub fn stiffness_matrix_q(grad: &SparseMatrix, edge_mass: &SparseMatrix) -> SparseMatrix {
    grad.transpose().matmul(&edge_mass.matmul(grad))
}

/// Exact Gauss-law cleaning.
///
/// Given edge coefficients `e` and the assembled charge functional
/// `f_moment[i] = ∫ f φ_i dx` over the constrained nodal basis, solves the
/// two Poisson problems
///   K a = G^T M_N e,      K b = -f_moment
/// and returns `e' = e - G a + G b`, so that the weak divergence of `e'`
/// matches `f` against every constrained nodal test function.
pub fn gauss_clean(
    grad: &SparseMatrix,
    edge_mass: &SparseMatrix,
    stiffness: &SparseMatrix,
    e: &[f64],
    f_moment: &[f64],
    cfg: &CgConfig,
) -> Result<Vec<f64>> {
    let rhs_a = grad.matvec_transpose(&edge_mass.matvec(e));
    let a = cg_solve(stiffness, &rhs_a, None, cfg)?;
    let rhs_b: Vec<f64> = f_moment.iter().map(|v| -v).collect();
    let b = cg_solve(stiffness, &rhs_b, None, cfg)?;
    let correction: Vec<f64> = a.iter().zip(&b).map(|(a, b)| b - a).collect();
    let gc = grad.matvec(&correction);
    Ok(e.iter().zip(&gc).map(|(e, g)| e + g).collect())
}

// Dense vector helpers shared by the assembly and integrator code.

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

pub fn linear_comb(alpha: f64, x: &[f64], beta: f64, y: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(x, y)| alpha * x + beta * y).collect()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(x, y)| x * y).sum()
}
