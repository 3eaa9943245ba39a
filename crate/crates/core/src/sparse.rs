//! Compressed sparse symmetric matrices and a Jacobi-preconditioned
//! conjugate-gradient solver.
//!
//! Matrices store both triangles in CSR layout. Symmetry is enforced at
//! construction: every off-diagonal contribution is inserted at `(i, j)` and
//! `(j, i)` with the same value, and duplicates are summed in a fixed order,
//! so the two stored halves are bitwise equal.

use crate::error::{Error, Result};

/// Square sparse matrix with exactly symmetric CSR storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates symmetric contributions before compression.
#[derive(Debug, Clone)]
pub struct SymTripletBuilder {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymTripletBuilder {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    /// Adds `value` at `(i, j)` and, when `i != j`, at `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.dim && j < self.dim);
        self.entries.push((i, j, value));
        if i != j {
            self.entries.push((j, i, value));
        }
    }

    /// Adds a dense symmetric local block scattered through `dofs`.
    ///
    /// Only the upper triangle of `block` is read.
    pub fn add_block<const N: usize>(&mut self, dofs: &[usize; N], block: &[[f64; N]; N]) {
        for a in 0..N {
            self.add(dofs[a], dofs[a], block[a][a]);
            for b in (a + 1)..N {
                let (i, j) = (dofs[a], dofs[b]);
                // Store the pair with a canonical orientation so that the
                // summation order at (i, j) and (j, i) is identical.
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                self.add(lo, hi, block[a][b]);
            }
        }
    }

    pub fn build(mut self) -> SparseSymMatrix {
        // Stable sort keeps insertion order among duplicates, which makes the
        // summation order deterministic and the same for mirrored entries.
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_offsets = vec![0usize; self.dim + 1];
        let mut col_indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &self.entries {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                col_indices.push(j);
                values.push(v);
                row_offsets[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for r in 0..self.dim {
            row_offsets[r + 1] += row_offsets[r];
        }
        SparseSymMatrix { dim: self.dim, row_offsets, col_indices, values }
    }
}

impl SparseSymMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut b = SymTripletBuilder::new(dim);
        for i in 0..dim {
            b.add(i, i, 1.0);
        }
        b.build()
    }

    /// Builds a matrix from a dense row-major array, reading the upper triangle.
    pub fn from_dense_upper(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut b = SymTripletBuilder::new(n);
        for i in 0..n {
            for j in i..n {
                if rows[i][j] != 0.0 {
                    b.add(i, j, rows[i][j]);
                }
            }
        }
        b.build()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Checks bitwise equality of the stored upper and lower halves.
    pub fn is_symmetric(&self) -> bool {
        (0..self.dim).all(|i| self.row(i).all(|(j, v)| self.get(j, i).to_bits() == v.to_bits()))
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// `self + scale * other`, over the union of both sparsity patterns.
    pub fn add_scaled(&self, other: &SparseSymMatrix, scale: f64) -> SparseSymMatrix {
        assert_eq!(self.dim, other.dim);
        let mut b = SymTripletBuilder::new(self.dim);
        for i in 0..self.dim {
            for (j, v) in self.row(i).filter(|&(j, _)| j >= i) {
                b.add(i, j, v);
            }
            for (j, v) in other.row(i).filter(|&(j, _)| j >= i) {
                b.add(i, j, scale * v);
            }
        }
        b.build()
    }

    /// Principal submatrix on `indices` (which must be sorted and unique).
    pub fn restrict(&self, indices: &[usize]) -> SparseSymMatrix {
        let mut local = vec![usize::MAX; self.dim];
        for (k, &i) in indices.iter().enumerate() {
            local[i] = k;
        }
        let mut b = SymTripletBuilder::new(indices.len());
        for (k, &i) in indices.iter().enumerate() {
            for (j, v) in self.row(i) {
                let l = local[j];
                if l != usize::MAX && l >= k {
                    b.add(k, l, v);
                }
            }
        }
        b.build()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim]; self.dim];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Outcome of a successful (or failed) PCG run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Options for [`pcg`].
#[derive(Debug, Clone, Copy)]
pub struct PcgOptions {
    /// Relative residual target `‖A x − b‖ / ‖b‖`.
    pub tol: f64,
    /// Iteration cap as a multiple of the system dimension.
    pub max_iter_factor: usize,
}

pub const DEFAULT_LINEAR_TOL: f64 = 1e-12;

impl Default for PcgOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_LINEAR_TOL, max_iter_factor: 20 }
    }
}

/// Solves `A x = rhs` for SPD `A` with the default relative tolerance 1e-12.
pub fn spd_solve(a: &SparseSymMatrix, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, LinearSolveReport)> {
    pcg(a, rhs, None, PcgOptions { tol, ..PcgOptions::default() })
}

/// Jacobi-preconditioned conjugate gradients with an optional initial guess.
pub fn pcg(
    a: &SparseSymMatrix,
    rhs: &[f64],
    guess: Option<&[f64]>,
    opts: PcgOptions,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let n = a.dim();
    if rhs.len() != n {
        return Err(Error::Dimension { expected: n, found: rhs.len() });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Validation(format!("linear solver tolerance must be positive, got {}", opts.tol)));
    }
    let rhs_norm = norm2(rhs);
    if rhs_norm == 0.0 {
        return Ok((vec![0.0; n], LinearSolveReport { iterations: 0, relative_residual: 0.0 }));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match guess {
        Some(g) if g.len() == n => g.to_vec(),
        _ => vec![0.0; n],
    };
    let mut r = rhs.to_vec();
    let mut ap = vec![0.0; n];
    if x.iter().any(|&v| v != 0.0) {
        a.mul_vec_into(&x, &mut ap);
        for (ri, api) in r.iter_mut().zip(&ap) {
            *ri -= api;
        }
    }
    let target = opts.tol * rhs_norm;
    let mut res = norm2(&r);
    if res <= target {
        return Ok((x, LinearSolveReport { iterations: 0, relative_residual: res / rhs_norm }));
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let max_iter = opts.max_iter_factor.max(1) * n.max(1);

    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolve {
                reason: "matrix is not positive definite along a search direction".into(),
                report: LinearSolveReport { iterations: it, relative_residual: res / rhs_norm },
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        res = norm2(&r);
        if res <= target {
            return Ok((x, LinearSolveReport { iterations: it, relative_residual: res / rhs_norm }));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolve {
        reason: format!("no convergence within {max_iter} iterations"),
        report: LinearSolveReport { iterations: max_iter, relative_residual: res / rhs_norm },
    })
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator given as a
/// closure. Used where assembling the matrix would cost a PDE solve per column.
pub fn pcg_operator<F>(
    mut apply: F,
    rhs: &[f64],
    inv_diag: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, LinearSolveReport)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = rhs.len();
    let rhs_norm = norm2(rhs);
    if rhs_norm == 0.0 {
        return Ok((vec![0.0; n], LinearSolveReport { iterations: 0, relative_residual: 0.0 }));
    }
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = rhs_norm;
    for it in 1..=max_iter {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolve {
                reason: "operator is not positive definite along a search direction".into(),
                report: LinearSolveReport { iterations: it, relative_residual: res / rhs_norm },
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        res = norm2(&r);
        if res <= tol * rhs_norm {
            return Ok((x, LinearSolveReport { iterations: it, relative_residual: res / rhs_norm }));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolve {
        reason: format!("no convergence within {max_iter} iterations"),
        report: LinearSolveReport { iterations: max_iter, relative_residual: res / rhs_norm },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let a = SparseSymMatrix::identity(4);
        let rhs = [1.0, -2.0, 3.5, 0.25];
        let (x, _) = spd_solve(&a, &rhs, 1e-12).unwrap();
        for (xi, bi) in x.iter().zip(&rhs) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn two_by_two_hand_solve() {
        let a = SparseSymMatrix::from_dense_upper(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (x, report) = spd_solve(&a, &[3.0, 3.0], 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
        assert!(report.relative_residual <= 1e-12);
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let a = SparseSymMatrix::from_dense_upper(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (x, report) = spd_solve(&a, &[0.0, 0.0], 1e-12).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let a = SparseSymMatrix::from_dense_upper(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        let err = spd_solve(&a, &[1.0, 1.0], 1e-12).unwrap_err();
        assert!(matches!(err, Error::LinearSolve { .. }));
    }

    #[test]
    fn builder_sums_duplicates_symmetrically() {
        let mut b = SymTripletBuilder::new(3);
        b.add_block(&[2, 0, 1], &[[1.0, 0.1, 0.2], [0.1, 2.0, 0.3], [0.2, 0.3, 3.0]]);
        b.add_block(&[0, 2, 1], &[[1.0, 0.7, 0.2], [0.7, 2.0, 0.3], [0.2, 0.3, 3.0]]);
        let m = b.build();
        assert!(m.is_symmetric());
        assert!((m.get(0, 2) - 0.8).abs() < 1e-15);
        assert!((m.get(2, 2) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn operator_form_matches_matrix_form() {
        let a = SparseSymMatrix::from_dense_upper(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ]);
        let rhs = [1.0, 2.0, 3.0];
        let (x, _) = spd_solve(&a, &rhs, 1e-14).unwrap();
        let inv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let (y, _) = pcg_operator(|v| Ok(a.mul_vec(v)), &rhs, &inv, 1e-14, 50).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn restrict_and_add_scaled() {
        let a = SparseSymMatrix::from_dense_upper(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 4.0, 1.0],
            vec![0.0, 1.0, 4.0],
        ]);
        let r = a.restrict(&[0, 2]);
        assert_eq!(r.to_dense(), vec![vec![4.0, 0.0], vec![0.0, 4.0]]);
        let s = a.add_scaled(&SparseSymMatrix::identity(3), 2.0);
        assert_eq!(s.get(1, 1), 6.0);
        assert_eq!(s.get(0, 1), 1.0);
    }
}
