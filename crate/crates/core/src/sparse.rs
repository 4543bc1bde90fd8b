//! Compressed sparse row storage and a Jacobi-preconditioned conjugate
//! gradient solver.

use crate::error::{Error, Result};

/// Symmetric sparse matrix in CSR form with a fixed pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Pattern from the node adjacency of a triangle list, diagonal included.
    pub fn from_triangles(n: usize, triangles: &[[usize; 3]]) -> Self {
        let mut cols: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for t in triangles {
            for &a in t {
                for &b in t {
                    cols[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut c in cols {
            c.sort_unstable();
            c.dedup();
            col_idx.extend(c);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix { n, row_ptr, col_idx, values: vec![0.0; nnz] }
    }

    pub fn zeroed(&self) -> Self {
        CsrMatrix { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    /// Position of `(i, j)` in `values`.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.position(i, j).expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `self + alpha * diag(d)`.
    pub fn plus_diagonal(&self, alpha: f64, d: &[f64]) -> Self {
        let mut out = self.clone();
        for (i, di) in d.iter().enumerate() {
            let k = out.position(i, i).unwrap();
            out.values[k] += alpha * di;
        }
        out
    }

    /// Entry-wise maximum of `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Largest off-diagonal entry.
    pub fn max_off_diagonal(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] != i {
                    worst = worst.max(self.values[k]);
                }
            }
        }
        worst
    }
}

/// A symmetric linear operator usable by [`conjugate_gradient`].
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y)
    }
    fn diagonal(&self) -> Vec<f64> {
        CsrMatrix::diagonal(self)
    }
}

/// `A + scale * m m^T`, SPD when `A` is PSD with null space spanned by a
/// vector not orthogonal to `m`.
pub struct RankOneUpdate<'a> {
    pub base: &'a CsrMatrix,
    pub vector: &'a [f64],
    pub scale: f64,
}

impl LinearOperator for RankOneUpdate<'_> {
    fn dim(&self) -> usize {
        self.base.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.base.mul_vec_into(x, y);
        let proj = self.scale * dot(self.vector, x);
        for (yi, mi) in y.iter_mut().zip(self.vector) {
            *yi += proj * mi;
        }
    }
    fn diagonal(&self) -> Vec<f64> {
        let mut d = self.base.diagonal();
        for (di, mi) in d.iter_mut().zip(self.vector) {
            *di += self.scale * mi * mi;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` (absolute when `b = 0`).
    pub relative_residual: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned CG on `A x = b`, starting from the contents of `x`.
/// Converged when `||r||_2 <= tol * ||b||_2`.
pub fn conjugate_gradient(
    a: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = a.dim();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let b_norm = dot(b, b).sqrt();
    let target = if b_norm > 0.0 { tol * b_norm } else { tol };
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };

    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut r_norm = dot(&r, &r).sqrt();
    if r_norm <= target {
        return Ok(SolveStats { iterations: 0, relative_residual: r_norm / scale });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SingularSystem(format!("p^T A p = {pap:e} at CG iteration {it}")));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        r_norm = dot(&r, &r).sqrt();
        if !r_norm.is_finite() {
            return Err(Error::LinearSolveFailure { residual: r_norm, iterations: it });
        }
        if r_norm <= target {
            return Ok(SolveStats { iterations: it, relative_residual: r_norm / scale });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolveFailure { residual: r_norm / scale, iterations: max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        // path graph as "triangles" is awkward; build tridiagonal directly
        let mut row_ptr = vec![0];
        let mut col_idx = vec![];
        let mut values = vec![];
        for i in 0..n {
            for j in i.saturating_sub(1)..=(i + 1).min(n - 1) {
                col_idx.push(j);
                values.push(if i == j { 2.0 } else { -1.0 });
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    #[test]
    fn cg_solves_tridiagonal() {
        let a = laplacian_1d(50);
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&x_true);
        let mut x = vec![0.0; 50];
        let stats = conjugate_gradient(&a, &b, &mut x, 1e-12, 500).unwrap();
        assert!(stats.relative_residual <= 1e-12);
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_reports_iteration_cap() {
        let a = laplacian_1d(200);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        assert!(matches!(
            conjugate_gradient(&a, &b, &mut x, 1e-14, 3),
            Err(Error::LinearSolveFailure { iterations: 3, .. })
        ));
    }

    #[test]
    fn pattern_from_triangles() {
        let m = CsrMatrix::from_triangles(4, &[[0, 1, 2], [1, 3, 2]]);
        assert!(m.position(0, 3).is_none());
        assert!(m.position(1, 2).is_some());
        assert_eq!(m.row_ptr[4], m.col_idx.len());
    }
}
