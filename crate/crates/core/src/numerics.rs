// SPDX-License-Identifier: MIT OR Apache-2.0
//! Dense f64 kernels: products with a fixed summation order, SPD solves,
//! least squares and Haar-orthogonal sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DenseVector = Vec<f64>;

/// Ridge floor used by [`least_squares`].
pub const LAMBDA_PROBE: f64 = 1e-8;
const REFINEMENT_STEPS: usize = 3;

/// Row-major dense matrix. Serialized as the triplets of its nonzero entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Triplets", try_from = "Triplets")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Sparse storage form: `(row, col, value)` for every entry whose bits are
/// nonzero, so `-0.0` survives a round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplets {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl From<DenseMatrix> for Triplets {
    fn from(m: DenseMatrix) -> Self {
        let entries = m
            .data
            .iter()
            .enumerate()
            .filter(|(_, v)| v.to_bits() != 0)
            .map(|(i, &v)| ((i / m.cols) as u32, (i % m.cols) as u32, v))
            .collect();
        Triplets {
            rows: m.rows,
            cols: m.cols,
            entries,
        }
    }
}

impl TryFrom<Triplets> for DenseMatrix {
    type Error = Error;

    fn try_from(t: Triplets) -> Result<Self> {
        let mut m = DenseMatrix::zeros(t.rows, t.cols);
        for (r, c, v) in t.entries {
            let (r, c) = (r as usize, c as usize);
            if r >= t.rows || c >= t.cols {
                return Err(Error::Serialization(format!(
                    "entry ({r}, {c}) outside a {}×{} matrix",
                    t.rows, t.cols
                )));
            }
            m.data[r * t.cols + c] = v;
        }
        Ok(m)
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "from_row_major",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("from_row_major"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose rows are the given vectors.
    pub fn from_rows(rows: &[DenseVector], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    op: "from_rows",
                    left: (rows.len(), cols),
                    right: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), cols, data)
    }

    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> DenseVector {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows, "set_column length");
        for (r, &x) in v.iter().enumerate() {
            self[(r, c)] = x;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shapes");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `y = A x`, summing over columns in increasing order.
    pub fn matvec(&self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "matvec",
                left: self.shape(),
                right: (x.len(), 1),
            });
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `y = Aᵀ x`.
    pub fn matvec_t(&self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                op: "matvec_t",
                left: (self.cols, self.rows),
                right: (x.len(), 1),
            });
        }
        let mut y = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (yc, &a) in y.iter_mut().zip(self.row(r)) {
                *yc += a * xr;
            }
        }
        Ok(y)
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "max_abs_diff lengths");
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `C = A B` with `C[i][j] = Σ_k A[i][k] B[k][j]`, k ascending.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(c)
}

fn gram_scaled(x: &DenseMatrix, n_eff: f64) -> DMatrix<f64> {
    let p = x.cols;
    let mut g = DMatrix::<f64>::zeros(p, p);
    for r in 0..x.rows {
        let row = x.row(r);
        for a in 0..p {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..p {
                g[(a, b)] += row[a] * row[b];
            }
        }
    }
    g / n_eff
}

/// `argmin_w (1/(2 n_eff))‖Xw − y‖² + (λ/2)‖w‖²` via Cholesky of `XᵀX/n_eff + λI`.
///
/// An empty design (`n = 0`) returns the zero vector.
pub fn ridge_solve(x: &DenseMatrix, y: &[f64], lambda: f64, n_eff: usize) -> Result<DenseVector> {
    if y.len() != x.rows {
        return Err(Error::DimensionMismatch {
            op: "ridge_solve",
            left: x.shape(),
            right: (y.len(), 1),
        });
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) || !lambda.is_finite() {
        return Err(Error::NonFinite("ridge_solve"));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidParameter(format!("ridge_solve: λ = {lambda} < 0")));
    }
    let p = x.cols;
    if x.rows == 0 {
        return Ok(vec![0.0; p]);
    }
    if n_eff == 0 {
        return Err(Error::InvalidParameter("ridge_solve: n_eff must be ≥ 1".into()));
    }
    let n = n_eff as f64;
    let mut g = gram_scaled(x, n);
    for i in 0..p {
        g[(i, i)] += lambda;
    }
    let rhs = nalgebra::DVector::from_vec(x.matvec_t(y)?.into_iter().map(|v| v / n).collect());
    let chol = g.cholesky().ok_or(Error::Singular("ridge_solve"))?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("ridge_solve"));
    }
    Ok(w.iter().copied().collect())
}

/// Minimum-norm least squares `argmin ‖XW − Y‖_F`, column by column.
///
/// Uses a `LAMBDA_PROBE` ridge floor (relative to the mean diagonal of `XᵀX/n`)
/// followed by iterated Tikhonov refinement, so rank-deficient and
/// underdetermined designs are handled without error.
pub fn least_squares(x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    if x.rows != y.rows {
        return Err(Error::DimensionMismatch {
            op: "least_squares",
            left: x.shape(),
            right: y.shape(),
        });
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite("least_squares"));
    }
    let (n, p, q) = (x.rows, x.cols, y.cols);
    let mut w = DenseMatrix::zeros(p, q);
    if n == 0 || p == 0 {
        return Ok(w);
    }
    let nf = n as f64;
    let mut g = gram_scaled(x, nf);
    let mean_diag = (0..p).map(|i| g[(i, i)]).sum::<f64>() / p as f64;
    if mean_diag == 0.0 {
        return Ok(w);
    }
    let lambda = LAMBDA_PROBE * mean_diag;
    for i in 0..p {
        g[(i, i)] += lambda;
    }
    let chol = g.cholesky().ok_or(Error::Singular("least_squares"))?;
    for c in 0..q {
        let xty: Vec<f64> = x.matvec_t(&y.column(c))?.into_iter().map(|v| v / nf).collect();
        let mut wc = nalgebra::DVector::<f64>::zeros(p);
        for _ in 0..=REFINEMENT_STEPS {
            let rhs = nalgebra::DVector::from_iterator(p, (0..p).map(|i| xty[i] + lambda * wc[i]));
            wc = chol.solve(&rhs);
        }
        for i in 0..p {
            w[(i, c)] = wc[i];
        }
    }
    Ok(w)
}

/// Haar-distributed matrix with orthonormal columns (`rows ≥ cols`) or rows.
pub fn random_orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter(format!(
            "random_orthogonal: shape {rows}×{cols}"
        )));
    }
    let (tall, wide) = (rows.max(cols), rows.min(cols));
    let g = DenseMatrix::random_normal(tall, wide, 1.0, rng);
    let qr = g.to_nalgebra().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = DenseMatrix::from_nalgebra(&q);
    for c in 0..wide {
        if r[(c, c)] < 0.0 {
            for rr in 0..tall {
                q[(rr, c)] = -q[(rr, c)];
            }
        }
    }
    Ok(if rows >= cols { q } else { q.transpose() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum()
        })
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = DenseMatrix::random_normal(3, 4, 1.0, &mut rng(1));
        assert_eq!(matmul(&DenseMatrix::identity(3), &a).unwrap(), a);
        assert!(matmul(&a, &DenseMatrix::zeros(4, 2)).unwrap().is_zero());
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut r = rng(2);
        let a = DenseMatrix::random_normal(5, 4, 1.0, &mut r);
        let b = DenseMatrix::random_normal(4, 3, 1.0, &mut r);
        let c = matmul(&a, &b).unwrap();
        let o = naive_matmul(&a, &b);
        for i in 0..5 {
            for j in 0..3 {
                assert!((c[(i, j)] - o[(i, j)]).abs() <= 1e-13 * o[(i, j)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let e = matmul(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(2, 3)).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn from_row_major_rejects_nan() {
        assert!(DenseMatrix::from_row_major(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::from_row_major(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn ridge_empty_design_is_zero() {
        let w = ridge_solve(&DenseMatrix::zeros(0, 3), &[], 0.1, 1).unwrap();
        assert_eq!(w, vec![0.0; 3]);
    }

    #[test]
    fn ridge_scalar_case() {
        let x = DenseMatrix::from_row_major(1, 1, vec![2.0]).unwrap();
        let w = ridge_solve(&x, &[4.0], 0.0, 1).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn ridge_huge_lambda_shrinks() {
        let mut r = rng(3);
        let x = DenseMatrix::random_normal(10, 4, 1.0, &mut r);
        let y: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let w = ridge_solve(&x, &y, 1e9, 10).unwrap();
        let bound = norm(&x.matvec_t(&y).unwrap()) / (10.0 * 1e9);
        assert!(norm(&w) <= bound * (1.0 + 1e-9));
    }

    #[test]
    fn ridge_singular_at_zero_lambda() {
        let x = DenseMatrix::from_row_major(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(ridge_solve(&x, &[1.0, 1.0], 0.0, 2), Err(Error::Singular(_))));
    }

    #[test]
    fn ridge_rejects_nan() {
        let x = DenseMatrix::from_fn(2, 1, |_, _| 1.0);
        assert!(ridge_solve(&x, &[1.0, f64::NAN], 0.1, 2).is_err());
    }

    #[test]
    fn least_squares_recovers_exact_map() {
        let mut r = rng(4);
        let x = DenseMatrix::random_normal(60, 5, 1.0, &mut r);
        let w0 = DenseMatrix::random_normal(5, 2, 1.0, &mut r);
        let y = matmul(&x, &w0).unwrap();
        let w = least_squares(&x, &y).unwrap();
        assert!(w.max_abs_diff(&w0) <= 1e-8 * w0.frobenius_norm());
        assert!(least_squares(&x, &DenseMatrix::zeros(60, 2)).unwrap().is_zero());
    }

    #[test]
    fn least_squares_residual_matches_normal_equations() {
        let mut r = rng(5);
        let x = DenseMatrix::random_normal(40, 6, 1.0, &mut r);
        let y = DenseMatrix::random_normal(40, 1, 1.0, &mut r);
        let w = least_squares(&x, &y).unwrap();
        // Normal-equations reference through a plain LU solve.
        let xn = x.to_nalgebra();
        let yn = y.to_nalgebra();
        let wn = (xn.transpose() * &xn).lu().solve(&(xn.transpose() * &yn)).unwrap();
        let res = |w: &DMatrix<f64>| (&xn * w - &yn).norm();
        assert!((res(&w.to_nalgebra()) - res(&wn)).abs() <= 1e-8);
    }

    #[test]
    fn least_squares_rank_deficient_min_norm() {
        // Two identical columns: minimum-norm solution splits the weight evenly.
        let x = DenseMatrix::from_fn(20, 2, |r, _| (r as f64 * 0.37).cos());
        let y = DenseMatrix::from_fn(20, 1, |r, _| 2.0 * (r as f64 * 0.37).cos());
        let w = least_squares(&x, &y).unwrap();
        assert!((w[(0, 0)] - 1.0).abs() < 1e-6 && (w[(1, 0)] - 1.0).abs() < 1e-6);
        // Underdetermined case does not error.
        let x = DenseMatrix::random_normal(3, 8, 1.0, &mut rng(6));
        let y = DenseMatrix::random_normal(3, 1, 1.0, &mut rng(7));
        assert!(least_squares(&x, &y).is_ok());
    }

    fn orth_err(b: &DenseMatrix) -> f64 {
        let g = if b.rows() >= b.cols() {
            matmul(&b.transpose(), b).unwrap()
        } else {
            matmul(b, &b.transpose()).unwrap()
        };
        g.max_abs_diff(&DenseMatrix::identity(g.rows()))
    }

    #[test]
    fn random_orthogonal_shapes() {
        let mut r = rng(8);
        assert!(orth_err(&random_orthogonal(3, 3, &mut r).unwrap()) <= 1e-12);
        let b = random_orthogonal(20, 5, &mut r).unwrap();
        assert_eq!(b.shape(), (20, 5));
        assert!(orth_err(&b) <= 1e-12);
        let b = random_orthogonal(4, 9, &mut r).unwrap();
        assert_eq!(b.shape(), (4, 9));
        assert!(orth_err(&b) <= 1e-12);
        assert!(random_orthogonal(0, 3, &mut r).is_err());
    }

    #[test]
    fn random_orthogonal_is_deterministic() {
        let a = random_orthogonal(6, 4, &mut rng(9)).unwrap();
        let b = random_orthogonal(6, 4, &mut rng(9)).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn random_orthogonal_haar_first_moment() {
        // Haar columns have E[q_11²] = 1/n; sign correction makes E[q_11] = 0.
        let mut r = rng(10);
        let n = 4;
        let trials = 4000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..trials {
            let q = random_orthogonal(n, n, &mut r).unwrap();
            m1 += q[(0, 0)];
            m2 += q[(0, 0)] * q[(0, 0)];
        }
        m1 /= trials as f64;
        m2 /= trials as f64;
        let se = (1.0 / n as f64 / trials as f64).sqrt();
        assert!(m1.abs() < 4.0 * se, "mean {m1}");
        assert!((m2 - 0.25).abs() < 0.02, "second moment {m2}");
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in 0u64..1000, n in 1usize..6, m in 1usize..6, p in 1usize..6, q in 1usize..6) {
            let mut r = rng(seed);
            let a = DenseMatrix::random_normal(n, m, 1.0, &mut r);
            let b = DenseMatrix::random_normal(m, p, 1.0, &mut r);
            let c = DenseMatrix::random_normal(p, q, 1.0, &mut r);
            let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let rr = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = l.frobenius_norm().max(1.0);
            prop_assert!(l.max_abs_diff(&rr) <= 1e-10 * scale);
        }

        #[test]
        fn ridge_satisfies_stationarity(seed in 0u64..1000, n in 1usize..15, p in 1usize..6, lam in 1e-3f64..10.0) {
            let mut r = rng(seed);
            let x = DenseMatrix::random_normal(n, p, 1.0, &mut r);
            let y: Vec<f64> = DenseMatrix::random_normal(n, 1, 1.0, &mut r).into_vec();
            let w = ridge_solve(&x, &y, lam, n).unwrap();
            let xw = x.matvec(&w).unwrap();
            let lhs: Vec<f64> = x.matvec_t(&xw).unwrap().iter().zip(&w).map(|(a, b)| a / n as f64 + lam * b).collect();
            let rhs: Vec<f64> = x.matvec_t(&y).unwrap().iter().map(|a| a / n as f64).collect();
            let res = max_abs_diff(&lhs, &rhs);
            prop_assert!(res <= 1e-10 * norm(&rhs).max(1.0));
        }

        #[test]
        fn orthogonal_columns_unit_norm(seed in 0u64..1000, rows in 1usize..12, cols in 1usize..12) {
            let b = random_orthogonal(rows, cols, &mut rng(seed)).unwrap();
            if rows >= cols {
                for c in 0..cols {
                    prop_assert!((norm(&b.column(c)) - 1.0).abs() <= 1e-12);
                }
            } else {
                for r in 0..rows {
                    prop_assert!((norm(b.row(r)) - 1.0).abs() <= 1e-12);
                }
            }
        }
    }
}
