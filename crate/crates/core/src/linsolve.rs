//! Sparse matrix storage and iterative linear solvers.

use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("linear solver did not converge: residual {residual:e} after {iters} iterations (tol {tol:e})")]
    NoConvergence { residual: f64, tol: f64, iters: usize },
    #[error("dimension mismatch: matrix is {rows}x{cols}, vector has length {len}")]
    Dimension { rows: usize, cols: usize, len: usize },
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<R> {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<R>,
}

/// Coordinate-format accumulator; duplicate entries are summed on conversion.
pub struct Triplets<R> {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, R)>,
}

impl<R: Real> Triplets<R> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: R) {
        debug_assert!(i < self.rows && j < self.cols);
        self.entries.push((i, j, v));
    }

    pub fn to_csr(&self) -> Csr<R> {
        let mut per_row: Vec<Vec<(usize, R)>> = vec![Vec::new(); self.rows];
        for &(i, j, v) in &self.entries {
            per_row[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    let n = values.len();
                    values[n - 1] += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Csr { rows: self.rows, cols: self.cols, row_ptr, col_idx, values }
    }
}

impl<R: Real> Csr<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, row_ptr: vec![0; rows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn matvec(&self, x: &[R], y: &mut [R]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for i in 0..self.rows {
            let mut acc = R::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn apply(&self, x: &[R]) -> Vec<R> {
        let mut y = vec![R::zero(); self.rows];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<R> {
        let mut d = vec![R::zero(); self.rows];
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] = self.values[k];
                }
            }
        }
        d
    }

    pub fn get(&self, i: usize, j: usize) -> R {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_idx[k] == j {
                return self.values[k];
            }
        }
        R::zero()
    }

    /// Entrywise a*self + b*other on identical sparsity unions.
    pub fn add_scaled(&self, a: R, other: &Csr<R>, b: R) -> Csr<R> {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        let mut t = Triplets::new(self.rows, self.cols);
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.push(i, self.col_idx[k], a * self.values[k]);
            }
            for k in other.row_ptr[i]..other.row_ptr[i + 1] {
                t.push(i, other.col_idx[k], b * other.values[k]);
            }
        }
        t.to_csr()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<R> {
        let mut m = nalgebra::DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] += self.values[k];
            }
        }
        m
    }
}

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut s = R::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

fn norm2<R: Real>(a: &[R]) -> R {
    num_traits::Float::sqrt(dot(a, a))
}

/// Jacobi-preconditioned conjugate gradient for symmetric positive
/// (semi-)definite systems. `fixed` pins a degree of freedom to zero,
/// removing the constant null space of pure-Neumann problems.
pub fn cg_jacobi<R: Real>(
    a: &Csr<R>,
    b: &[R],
    tol_rel: R,
    max_iter: usize,
    fixed: Option<usize>,
) -> Result<Vec<R>, SolveError> {
    let n = a.rows;
    if b.len() != n {
        return Err(SolveError::Dimension { rows: a.rows, cols: a.cols, len: b.len() });
    }
    let mut diag = a.diagonal();
    for d in diag.iter_mut() {
        if *d == R::zero() {
            *d = R::one();
        }
    }
    let mask = |v: &mut [R]| {
        if let Some(i) = fixed {
            v[i] = R::zero();
        }
    };

    let mut x = vec![R::zero(); n];
    let mut r = b.to_vec();
    mask(&mut r);
    let b_norm = norm2(&r);
    if b_norm == R::zero() {
        return Ok(x);
    }
    let mut z: Vec<R> = r.iter().zip(&diag).map(|(&ri, &di)| ri / di).collect();
    mask(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![R::zero(); n];
    for _ in 0..max_iter {
        a.matvec(&p, &mut ap);
        mask(&mut ap);
        let pap = dot(&p, &ap);
        if pap == R::zero() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm2(&r);
        if res <= tol_rel * b_norm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        mask(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm2(&r) / b_norm;
    Err(SolveError::NoConvergence { residual: res.to_f64(), tol: tol_rel.to_f64(), iters: max_iter })
}

/// Jacobi-preconditioned BiCGSTAB for the nonsymmetric transport systems.
pub fn bicgstab_jacobi<R: Real>(
    a: &Csr<R>,
    b: &[R],
    x0: Option<&[R]>,
    tol_rel: R,
    max_iter: usize,
) -> Result<Vec<R>, SolveError> {
    let n = a.rows;
    if b.len() != n {
        return Err(SolveError::Dimension { rows: a.rows, cols: a.cols, len: b.len() });
    }
    let mut diag = a.diagonal();
    for d in diag.iter_mut() {
        if *d == R::zero() {
            *d = R::one();
        }
    }
    let b_norm = norm2(b);
    if b_norm == R::zero() {
        return Ok(vec![R::zero(); n]);
    }
    let mut x = match x0 {
        Some(v) => v.to_vec(),
        None => vec![R::zero(); n],
    };
    let mut r = {
        let ax = a.apply(&x);
        b.iter().zip(&ax).map(|(&bi, &axi)| bi - axi).collect::<Vec<_>>()
    };
    if norm2(&r) <= tol_rel * b_norm {
        return Ok(x);
    }
    let r_hat = r.clone();
    let mut rho = R::one();
    let mut alpha = R::one();
    let mut omega = R::one();
    let mut v = vec![R::zero(); n];
    let mut p = vec![R::zero(); n];
    let mut s = vec![R::zero(); n];
    let mut t = vec![R::zero(); n];
    let mut phat = vec![R::zero(); n];
    let mut shat = vec![R::zero(); n];
    for _ in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == R::zero() {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        for i in 0..n {
            phat[i] = p[i] / diag[i];
        }
        a.matvec(&phat, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= tol_rel * b_norm {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok(x);
        }
        for i in 0..n {
            shat[i] = s[i] / diag[i];
        }
        a.matvec(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt == R::zero() {
            break;
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= tol_rel * b_norm {
            return Ok(x);
        }
        if omega == R::zero() {
            break;
        }
    }
    let res = norm2(&r) / b_norm;
    if res <= tol_rel {
        Ok(x)
    } else {
        Err(SolveError::NoConvergence { residual: res.to_f64(), tol: tol_rel.to_f64(), iters: max_iter })
    }
}
