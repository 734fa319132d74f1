//! Small dense linear algebra kernels: LU with partial pivoting, Householder
//! QR and pivoted Cholesky, over real or complex scalars.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Index, IndexMut, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex;
use num_traits::{Float, One, Zero};

use crate::scalar::Real;

/// Scalar field the kernels run over.
pub trait Field:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Zero
    + One
    + Send
    + Sync
{
    type R: Real;
    fn modulus(self) -> Self::R;
    fn conj(self) -> Self;
    fn from_real(r: Self::R) -> Self;
    fn real(self) -> Self::R;
    fn scale(self, r: Self::R) -> Self;
    /// `|x|^2`
    fn norm_sqr(self) -> Self::R {
        let m = self.modulus();
        m * m
    }
}

impl<T: Real> Field for T {
    type R = T;
    #[inline]
    fn modulus(self) -> T {
        self.abs()
    }
    #[inline]
    fn conj(self) -> T {
        self
    }
    #[inline]
    fn from_real(r: T) -> T {
        r
    }
    #[inline]
    fn real(self) -> T {
        self
    }
    #[inline]
    fn scale(self, r: T) -> T {
        self * r
    }
    #[inline]
    fn norm_sqr(self) -> T {
        self * self
    }
}

impl<T: Real> Field for Complex<T> {
    type R = T;
    #[inline]
    fn modulus(self) -> T {
        self.re.hypot(self.im)
    }
    #[inline]
    fn conj(self) -> Self {
        Complex::conj(&self)
    }
    #[inline]
    fn from_real(r: T) -> Self {
        Complex::new(r, T::zero())
    }
    #[inline]
    fn real(self) -> T {
        self.re
    }
    #[inline]
    fn scale(self, r: T) -> Self {
        Complex::new(self.re * r, self.im * r)
    }
    #[inline]
    fn norm_sqr(self) -> T {
        self.re * self.re + self.im * self.im
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Field> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[S]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, other.rows, "inner dimensions");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for l in 0..self.cols {
                let a = self.data[i * self.cols + l];
                if a == S::zero() {
                    continue;
                }
                let brow = &other.data[l * other.cols..(l + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = S::zero();
                for (&a, &x) in self.row(i).iter().zip(v) {
                    acc += a * x;
                }
                acc
            })
            .collect()
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Mat<S>) -> S::R {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).modulus())
            .fold(S::R::zero(), |m, x| if x > m { x } else { m })
    }
}

impl<S> Index<(usize, usize)> for Mat<S> {
    type Output = S;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Mat<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization `P A = L U` with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu<S> {
    lu: Mat<S>,
    perm: Vec<usize>,
}

impl<S: Field> Lu<S> {
    pub fn factor(mut a: Mat<S>) -> Self {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = a[(k, k)].modulus();
            for i in k + 1..n {
                let v = a[(i, k)].modulus();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[(k, k)];
            if pivot == S::zero() {
                continue;
            }
            let (top, bottom) = a.data.split_at_mut((k + 1) * n);
            let krow = &top[k * n..(k + 1) * n];
            for i in 0..n - k - 1 {
                let row = &mut bottom[i * n..(i + 1) * n];
                let f = row[k] / pivot;
                row[k] = f;
                if f == S::zero() {
                    continue;
                }
                for j in k + 1..n {
                    row[j] -= f * krow[j];
                }
            }
        }
        Lu { lu: a, perm }
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Diagonal of `U`.
    pub fn pivots(&self) -> Vec<S> {
        (0..self.dim()).map(|i| self.lu[(i, i)]).collect()
    }

    /// `log|det A|`, `-inf` when some pivot is below `threshold`.
    pub fn log_abs_det(&self, threshold: S::R) -> S::R {
        let mut acc = S::R::zero();
        for i in 0..self.dim() {
            let p = self.lu[(i, i)].modulus();
            if !(p >= threshold) {
                return S::R::neg_infinity();
            }
            acc += p.ln();
        }
        acc
    }

    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.dim();
        let mut x: Vec<S> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let mut acc = x[i];
            for j in 0..i {
                acc -= row[j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= row[j] * x[j];
            }
            x[i] = acc / row[i];
        }
        x
    }

    pub fn inverse(&self) -> Mat<S> {
        let n = self.dim();
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![S::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = S::zero());
            e[j] = S::one();
            let col = self.solve(&e);
            inv.set_col(j, &col);
        }
        inv
    }
}

/// `log|det A|` with each column scaled to unit max-modulus before factoring;
/// the scale factors are added back in the log domain.
pub fn log_abs_det_scaled<S: Field>(mut a: Mat<S>, threshold: S::R) -> S::R {
    let n = a.rows;
    assert_eq!(n, a.cols, "square matrix");
    let mut log_scale = S::R::zero();
    for j in 0..n {
        let s = (0..n).map(|i| a[(i, j)].modulus()).fold(S::R::zero(), |m, x| if x > m { x } else { m });
        if !(s > S::R::zero()) || !s.is_finite() {
            return S::R::neg_infinity();
        }
        let inv = S::R::one() / s;
        for i in 0..n {
            a[(i, j)] = a[(i, j)].scale(inv);
        }
        log_scale += s.ln();
    }
    let lu = Lu::factor(a);
    let ld = lu.log_abs_det(threshold);
    if ld == S::R::neg_infinity() {
        ld
    } else {
        ld + log_scale
    }
}

/// Diagonal of `R` in a Householder QR of a tall matrix (`rows >= cols`).
pub fn qr_r_diagonal<S: Field>(mut a: Mat<S>) -> Vec<S::R> {
    let (m, n) = (a.rows, a.cols);
    let steps = n.min(m);
    let mut diag = Vec::with_capacity(n);
    let mut v = vec![S::zero(); m];
    for k in 0..steps {
        let norm: S::R = (k..m).map(|i| a[(i, k)].norm_sqr()).sum::<S::R>().sqrt();
        if norm == S::R::zero() {
            diag.push(S::R::zero());
            continue;
        }
        let x0 = a[(k, k)];
        let x0m = x0.modulus();
        // alpha = -e^{i arg x0} * norm
        let phase = if x0m > S::R::zero() { x0.scale(S::R::one() / x0m) } else { S::one() };
        let alpha = -(phase.scale(norm));
        for i in k..m {
            v[i] = a[(i, k)];
        }
        v[k] -= alpha;
        let vnorm2: S::R = (k..m).map(|i| v[i].norm_sqr()).sum();
        diag.push(norm);
        if vnorm2 == S::R::zero() {
            continue;
        }
        let two_over = S::R::lit(2.0) / vnorm2;
        for j in k..n {
            let mut dot = S::zero();
            for i in k..m {
                dot += v[i].conj() * a[(i, j)];
            }
            let f = dot.scale(two_over);
            for i in k..m {
                let vi = v[i];
                a[(i, j)] -= vi * f;
            }
        }
    }
    while diag.len() < n {
        diag.push(S::R::zero());
    }
    diag
}

/// Pivoted Cholesky of a Hermitian PSD matrix: `P^T G P = L L^*`, truncated
/// at the numerical rank.
#[derive(Clone, Debug)]
pub struct PivotedCholesky<S> {
    /// `n x rank`, rows in original order.
    pub l: Mat<S>,
    pub perm: Vec<usize>,
    pub rank: usize,
}

/// Factor `g`. Pivots below `rel_tol * max_diag` stop the factorization; a
/// residual diagonal below `-psd_tol * max_diag` is reported as an error
/// through the returned `Err(pivot)`.
pub fn pivoted_cholesky<S: Field>(g: &Mat<S>, rel_tol: S::R, psd_tol: S::R) -> Result<PivotedCholesky<S>, S::R> {
    let n = g.rows;
    let a = g;
    let mut perm: Vec<usize> = (0..n).collect();
    let max_diag = (0..n)
        .map(|i| a[(i, i)].modulus())
        .fold(S::R::zero(), |m, x| if x > m { x } else { m });
    let mut l = Mat::<S>::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        // residual diagonal d_i = a_ii - sum_j |l_ij|^2 over permuted rows
        let mut best = S::R::neg_infinity();
        let mut p = k;
        for i in k..n {
            let pi = perm[i];
            let mut d = a[(pi, pi)].real();
            for j in 0..k {
                d -= l[(pi, j)].norm_sqr();
            }
            if d > best {
                best = d;
                p = i;
            }
        }
        if best < -psd_tol * max_diag.max(S::R::min_positive_value()) {
            return Err(best);
        }
        if !(best > rel_tol * max_diag) {
            break;
        }
        perm.swap(k, p);
        let pk = perm[k];
        let lkk = best.sqrt();
        l[(pk, k)] = S::from_real(lkk);
        for i in k + 1..n {
            let pi = perm[i];
            let mut s = a[(pi, pk)];
            for j in 0..k {
                s -= l[(pi, j)] * l[(pk, j)].conj();
            }
            l[(pi, k)] = s.scale(S::R::one() / lkk);
        }
        rank += 1;
    }
    let l = Mat::from_fn(n, rank, |i, j| l[(i, j)]);
    Ok(PivotedCholesky { l, perm, rank })
}

/// Largest eigenvalue estimate of a symmetric operator by power iteration.
pub fn power_iteration<T: Real>(apply: impl Fn(&[T]) -> Vec<T>, start: Vec<T>, iters: usize) -> T {
    let mut v = start;
    let norm = |x: &[T]| x.iter().map(|&a| a * a).sum::<T>().sqrt();
    let n0 = norm(&v);
    if n0 == T::zero() {
        return T::zero();
    }
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = T::zero();
    for _ in 0..iters {
        let w = apply(&v);
        let nw = norm(&w);
        if nw == T::zero() {
            return T::zero();
        }
        lambda = v.iter().zip(&w).map(|(&a, &b)| a * b).sum::<T>().abs().max(lambda);
        v = w.into_iter().map(|x| x / nw).collect();
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_and_reports_determinant() {
        let a = Mat::from_rows(3, 3, vec![2.0, 1.0, 1.0, 4.0, -6.0, 0.0, -2.0, 7.0, 2.0]);
        let lu = Lu::factor(a.clone());
        let x = lu.solve(&[5.0, -2.0, 9.0]);
        let back = a.matvec(&x);
        for (b, e) in back.iter().zip([5.0, -2.0, 9.0]) {
            assert!((b - e).abs() < 1e-12);
        }
        // det = -16
        assert!((lu.log_abs_det(1e-300) - 16f64.ln()).abs() < 1e-12);
        let inv = lu.inverse();
        assert!(a.matmul(&inv).max_abs_diff(&Mat::identity(3)) < 1e-12);
    }

    #[test]
    fn scaled_log_det_matches_plain() {
        let a = Mat::from_rows(2, 2, vec![1e200, 3.0, 2e200, 5.0]);
        // det = 1e200 * 5 - 3 * 2e200 = -1e200
        let ld = log_abs_det_scaled(a, 1e-300);
        assert!((ld - 200.0 * 10f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn singular_matrix_gives_neg_infinity() {
        let a = Mat::from_rows(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert_eq!(log_abs_det_scaled(a, 1e-300), f64::NEG_INFINITY);
    }

    #[test]
    fn qr_diagonal_gives_gram_determinant() {
        let a = Mat::from_rows(3, 2, vec![
            Complex::new(1.0, 0.0), Complex::new(0.0, 1.0),
            Complex::new(1.0, 1.0), Complex::new(2.0, 0.0),
            Complex::new(0.0, -1.0), Complex::new(1.0, 0.0),
        ]);
        let g = a.adjoint().matmul(&a);
        let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
        let r = qr_r_diagonal(a);
        let prod: f64 = r.iter().map(|x| x * x).product();
        assert!((prod - det.re).abs() < 1e-12 * det.re);
    }

    #[test]
    fn pivoted_cholesky_reports_rank() {
        // rank 1: v v^T with v = (1, 2, 3)
        let v = [1.0, 2.0, 3.0];
        let g = Mat::from_fn(3, 3, |i, j| v[i] * v[j]);
        let ch = pivoted_cholesky(&g, 1e-12, 1e-10).unwrap();
        assert_eq!(ch.rank, 1);
        let llt = ch.l.matmul(&ch.l.adjoint());
        assert!(llt.max_abs_diff(&g) < 1e-12);
    }

    #[test]
    fn pivoted_cholesky_rejects_indefinite() {
        let g = Mat::from_rows(2, 2, vec![1.0, 0.0, 0.0, -1.0]);
        assert!(pivoted_cholesky(&g, 1e-12, 1e-10).is_err());
    }
}
