//! Compressed sparse row matrices and a thin wrapper over faer's sparse LU.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::lu::{factorize_symbolic_lu, LuRef, LuSymbolicParams, NumericLu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from `(row, col, value)` triplets; duplicates are summed in
    /// input order.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut m = Self::pattern(nrows, ncols, triplets.iter().map(|&(i, j, _)| (i, j)));
        for &(i, j, v) in triplets {
            let p = m.position(i, j).expect("entry is in the pattern");
            m.values[p] += v;
        }
        m
    }

    /// A zero matrix with the given sparsity pattern.
    pub fn pattern(nrows: usize, ncols: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); nrows];
        for (i, j) in entries {
            assert!(i < nrows && j < ncols, "entry ({i}, {j}) out of bounds");
            rows[i].push(j);
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn zeros_like(&self) -> Self {
        CsrMatrix {
            values: vec![0.0; self.values.len()],
            ..self.clone()
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

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        let cols = &self.col_idx[start..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `A^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// `x^T A x` for square matrices.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>())
            .sum()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                triplets.push((j, i, v));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Fixed column-compressed sparsity pattern with a reusable symbolic LU.
///
/// Cloning is cheap; the symbolic factorisation is shared.
#[derive(Clone, Debug)]
pub struct LuPattern {
    n: usize,
    col_ptr: Arc<Vec<usize>>,
    row_idx: Arc<Vec<usize>>,
    symbolic: Arc<SymbolicLu<usize>>,
}

impl LuPattern {
    /// Pattern of a square CSR matrix, stored column-compressed. Values for
    /// [`LuPattern::factor`] must follow [`LuPattern::csc_values`] ordering.
    pub fn from_csr(a: &CsrMatrix) -> Result<Self> {
        assert_eq!(a.nrows, a.ncols);
        let t = a.transpose();
        let col_ptr = Arc::new(t.row_ptr);
        let row_idx = Arc::new(t.col_idx);
        let sym = SymbolicSparseColMatRef::new_checked(a.nrows, a.ncols, &col_ptr, None, &row_idx);
        let symbolic =
            factorize_symbolic_lu(sym, LuSymbolicParams::default()).map_err(|e| Error::Solver(format!("symbolic LU: {e:?}")))?;
        Ok(LuPattern {
            n: a.nrows,
            col_ptr,
            row_idx,
            symbolic: Arc::new(symbolic),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Index into the column-compressed value array for entry `(i, j)`.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.col_ptr[j];
        let rows = &self.row_idx[start..self.col_ptr[j + 1]];
        rows.binary_search(&i).ok().map(|k| start + k)
    }

    /// Reorders the values of `a` (which must share this pattern) into
    /// column-compressed order.
    pub fn csc_values(&self, a: &CsrMatrix) -> Vec<f64> {
        let mut vals = vec![0.0; self.nnz()];
        for i in 0..a.nrows {
            for (j, v) in a.row(i) {
                vals[self.position(i, j).expect("pattern mismatch")] = v;
            }
        }
        vals
    }

    pub fn factor(&self, values: &[f64]) -> Result<LuFactor> {
        assert_eq!(values.len(), self.nnz());
        let sym = SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx);
        let mat = SparseColMatRef::new(sym, values);
        let mut numeric = NumericLu::new();
        let mut buf = MemBuffer::try_new(self.symbolic.factorize_numeric_lu_scratch::<f64>(Par::Seq, Default::default()))
            .map_err(|e| Error::Solver(format!("LU workspace: {e:?}")))?;
        self.symbolic
            .factorize_numeric_lu(&mut numeric, mat, Par::Seq, MemStack::new(&mut buf), Default::default())
            .map_err(|e| Error::Solver(format!("numeric LU: {e:?}")))?;
        Ok(LuFactor {
            n: self.n,
            symbolic: Arc::clone(&self.symbolic),
            numeric,
        })
    }

    /// `y = A x` for a value array in this pattern's ordering.
    pub fn mul_vec(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let xj = x[j];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[p]] += values[p] * xj;
            }
        }
        y
    }
}

/// A numeric sparse LU factorisation.
#[derive(Debug)]
pub struct LuFactor {
    n: usize,
    symbolic: Arc<SymbolicLu<usize>>,
    numeric: NumericLu<usize, f64>,
}

impl LuFactor {
    pub fn from_csr(a: &CsrMatrix) -> Result<Self> {
        let pattern = LuPattern::from_csr(a)?;
        let vals = pattern.csc_values(a);
        pattern.factor(&vals)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        self.solve_many_in_place(rhs, 1);
    }

    /// Solves for several right-hand sides stored column-major in `rhs`.
    pub fn solve_many_in_place(&self, rhs: &mut [f64], ncols: usize) {
        assert_eq!(rhs.len(), self.n * ncols);
        let mat = MatMut::from_column_major_slice_mut(rhs, self.n, ncols);
        let lu = LuRef::new_unchecked(&self.symbolic, &self.numeric);
        let mut buf = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(ncols, Par::Seq));
        lu.solve_in_place_with_conj(Conj::No, mat, Par::Seq, MemStack::new(&mut buf));
    }
}

/// Outcome of [`gmres`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresReport {
    pub iterations: usize,
    /// `||b - A x|| / ||b||`, recomputed from the returned iterate.
    pub relative_residual: f64,
}

/// Restarted GMRES with right preconditioning and modified Gram–Schmidt
/// (applied twice). Starts from `x = 0`.
pub fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&mut [f64]),
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> (Vec<f64>, GmresReport) {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (
            x,
            GmresReport {
                iterations: 0,
                relative_residual: 0.0,
            },
        );
    }
    let mut iterations = 0;
    let mut r = b.to_vec();
    loop {
        let beta = norm(&r);
        if beta <= tol * bnorm || iterations >= max_iter {
            return (
                x,
                GmresReport {
                    iterations,
                    relative_residual: beta / bnorm,
                },
            );
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<(f64, f64)> = Vec::new();
        let mut g = vec![beta];
        for k in 0..restart {
            let mut z = basis[k].clone();
            precondition(&mut z);
            let mut w = apply(&z);
            let mut col = vec![0.0; k + 2];
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let d: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
                    col[i] += d;
                    for (wj, vj) in w.iter_mut().zip(v) {
                        *wj -= d * vj;
                    }
                }
            }
            let hk1 = norm(&w);
            col[k + 1] = hk1;
            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, b) = (col[i], col[i + 1]);
                col[i] = c * a + s * b;
                col[i + 1] = -s * a + c * b;
            }
            let (a, b) = (col[k], col[k + 1]);
            let rho = a.hypot(b);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, b / rho) };
            col[k] = rho;
            col[k + 1] = 0.0;
            cs.push((c, s));
            g.push(-s * g[k]);
            g[k] *= c;
            h.push(col);
            basis.push(if hk1 > 0.0 { w.iter().map(|v| v / hk1).collect() } else { w });
            iterations += 1;
            if g[k + 1].abs() <= tol * bnorm || iterations >= max_iter || hk1 == 0.0 {
                break;
            }
        }
        let m = h.len();
        let mut y = vec![0.0; m];
        for i in (0..m).rev() {
            let s: f64 = (i + 1..m).map(|j| h[j][i] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        let mut dx = vec![0.0; n];
        for (yi, v) in y.iter().zip(&basis) {
            for (d, vj) in dx.iter_mut().zip(v) {
                *d += yi * vj;
            }
        }
        precondition(&mut dx);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0), (1, 2, -1.0), (1, 1, 0.5)],
        )
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = small();
        assert_eq!(a.get(1, 1), 3.5);
        assert_eq!(a.get(2, 0), 0.0);
        assert_eq!(a.nnz(), 6);
    }

    #[test]
    fn products() {
        let a = small();
        let x = [1.0, 2.0, 3.0];
        assert_eq!(a.mul_vec(&x), vec![6.0, 5.0, 6.0]);
        assert_eq!(a.tr_mul_vec(&x), a.transpose().mul_vec(&x));
        assert_eq!(a.quadratic_form(&x), 1.0 * 6.0 + 2.0 * 5.0 + 3.0 * 6.0);
    }

    #[test]
    fn lu_solves_unsymmetric_system() {
        let a = small();
        let x = [1.0, -2.0, 0.5];
        let mut b = a.mul_vec(&x);
        LuFactor::from_csr(&a).unwrap().solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn gmres_with_nearby_preconditioner() {
        let a = small();
        let lu = LuFactor::from_csr(&a).unwrap();
        let mut b = a.clone();
        b.values_mut()[0] += 0.3;
        let rhs = [1.0, 2.0, -1.0];
        let (x, rep) = gmres(|v| b.mul_vec(v), |r| lu.solve_in_place(r), &rhs, 1e-14, 10, 50);
        assert!(rep.relative_residual <= 1e-14);
        assert!(rep.iterations <= 3);
        let bx = b.mul_vec(&x);
        for (p, q) in bx.iter().zip(&rhs) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn pattern_reuse_for_new_values() {
        let a = small();
        let pat = LuPattern::from_csr(&a).unwrap();
        let mut b = a.clone();
        for v in b.values_mut() {
            *v *= 2.0;
        }
        let vals = pat.csc_values(&b);
        let x = [0.3, 0.1, -1.0];
        let mut rhs = pat.mul_vec(&vals, &x);
        assert_eq!(rhs, b.mul_vec(&x));
        pat.factor(&vals).unwrap().solve_in_place(&mut rhs);
        for (u, v) in rhs.iter().zip(&x) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
