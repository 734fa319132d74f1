use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::linalg::Mat;
use crate::scalar::{binomial, Cplx, Real};

/// Largest basis size accepted by [`MonomialBasis::new`].
pub const DEFAULT_BASIS_CAP: usize = 5000;

/// Monomials `z^alpha`, `|alpha| <= k`, in graded lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonomialBasis {
    n: usize,
    k: usize,
    exponents: Vec<Vec<u32>>,
}

impl MonomialBasis {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        Self::with_cap(n, k, DEFAULT_BASIS_CAP)
    }

    pub fn with_cap(n: usize, k: usize, cap: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("ambient dimension must be at least 1".into()));
        }
        let size = binomial(n + k, k);
        if size > cap {
            return Err(Error::BasisTooLarge { size, cap });
        }
        let mut exponents = Vec::with_capacity(size);
        for d in 0..=k as u32 {
            push_degree(n, d, &mut vec![0; n], 0, &mut exponents);
        }
        debug_assert_eq!(exponents.len(), size);
        Ok(MonomialBasis { n, k, exponents })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `N_k = binomial(n + k, k)`.
    pub fn size(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn degree(&self, j: usize) -> u32 {
        self.exponents[j].iter().sum()
    }

    /// `sum_j deg(e_j)`; equals `n k N_k / (n + 1)`.
    pub fn degree_sum(&self) -> u64 {
        self.exponents.iter().map(|e| e.iter().map(|&x| x as u64).sum::<u64>()).sum()
    }
}

fn push_degree(n: usize, d: u32, cur: &mut Vec<u32>, at: usize, out: &mut Vec<Vec<u32>>) {
    if at == n - 1 {
        cur[at] = d;
        out.push(cur.clone());
        cur[at] = 0;
        return;
    }
    for v in (0..=d).rev() {
        cur[at] = v;
        push_degree(n, d - v, cur, at + 1, out);
    }
    cur[at] = 0;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Powers of the affinely rescaled coordinates.
    Monomial,
    /// Chebyshev polynomials of the rescaled coordinates (real sets).
    Chebyshev,
}

/// A well-conditioned basis spanning the same space as a [`MonomialBasis`].
///
/// Each element is `prod_i f_{alpha_i}((z_i - c_i) / s_i)` where the leading
/// term is a known multiple of `z^alpha`, so the change of basis to the
/// monomials is block triangular with an exactly known determinant.
#[derive(Clone, Debug)]
pub struct EvalBasis<T> {
    basis: MonomialBasis,
    family: Family,
    center: Vec<Cplx<T>>,
    scale: Vec<T>,
    log_det_correction: T,
}

impl<T: Real> EvalBasis<T> {
    pub fn new(basis: MonomialBasis, family: Family, center: Vec<Cplx<T>>, scale: Vec<T>) -> Self {
        assert_eq!(center.len(), basis.n());
        assert_eq!(scale.len(), basis.n());
        let mut corr = T::zero();
        let ln2 = T::LN_2();
        for e in basis.exponents() {
            for (i, &a) in e.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                corr += T::from_count(a as usize) * scale[i].ln();
                if family == Family::Chebyshev {
                    corr -= T::from_count(a as usize - 1) * ln2;
                }
            }
        }
        EvalBasis { basis, family, center, scale, log_det_correction: corr }
    }

    /// Pick family, center and scale from the bounding box of `points`.
    pub fn for_points(basis: &MonomialBasis, points: &[Point<T>]) -> Self {
        let (center, scale, real) = affine_frame(basis.n(), points);
        let family = if real { Family::Chebyshev } else { Family::Monomial };
        Self::new(basis.clone(), family, center, scale)
    }

    pub fn monomials(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn size(&self) -> usize {
        self.basis.size()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// `log|det[e_i(x_j)]| - log|det[b_i(x_j)]|` for any points `x_j`.
    pub fn log_det_correction(&self) -> T {
        self.log_det_correction
    }

    pub fn eval_into(&self, z: &Point<T>, out: &mut [Cplx<T>]) {
        let n = self.basis.n();
        let k = self.basis.k();
        let mut table = vec![Cplx::<T>::zero(); n * (k + 1)];
        for i in 0..n {
            let u = (z.coords()[i] - self.center[i]) / self.scale[i];
            let row = &mut table[i * (k + 1)..(i + 1) * (k + 1)];
            row[0] = Cplx::one();
            if k >= 1 {
                row[1] = u;
            }
            for d in 2..=k {
                row[d] = match self.family {
                    Family::Monomial => row[d - 1] * u,
                    Family::Chebyshev => u * row[d - 1] * T::lit(2.0) - row[d - 2],
                };
            }
        }
        for (o, e) in out.iter_mut().zip(self.basis.exponents()) {
            let mut v = Cplx::one();
            for (i, &a) in e.iter().enumerate() {
                if a > 0 {
                    v *= table[i * (k + 1) + a as usize];
                }
            }
            *o = v;
        }
    }

    pub fn eval(&self, z: &Point<T>) -> Vec<Cplx<T>> {
        let mut out = vec![Cplx::zero(); self.size()];
        self.eval_into(z, &mut out);
        out
    }

    /// `N x M` matrix whose column `j` is the basis evaluated at `points[j]`.
    pub fn matrix(&self, points: &[Point<T>]) -> Mat<Cplx<T>> {
        let nb = self.size();
        let mut m = Mat::zeros(nb, points.len());
        let mut col = vec![Cplx::zero(); nb];
        for (j, p) in points.iter().enumerate() {
            self.eval_into(p, &mut col);
            for i in 0..nb {
                m[(i, j)] = col[i];
            }
        }
        m
    }
}

/// Per-coordinate center and scale mapping `points` into the unit box (real
/// sets) or unit polydisk, plus whether every point is real.
pub(crate) fn affine_frame<T: Real>(n: usize, points: &[Point<T>]) -> (Vec<Cplx<T>>, Vec<T>, bool) {
    let real = points.iter().all(|p| p.is_real());
    let mut center = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    for i in 0..n {
        let (mut rlo, mut rhi, mut ilo, mut ihi) = (T::infinity(), T::neg_infinity(), T::infinity(), T::neg_infinity());
        for p in points {
            let c = p.coords()[i];
            rlo = rlo.min(c.re);
            rhi = rhi.max(c.re);
            ilo = ilo.min(c.im);
            ihi = ihi.max(c.im);
        }
        let half = T::lit(0.5);
        let c = if points.is_empty() { Cplx::zero() } else { Cplx::new((rlo + rhi) * half, (ilo + ihi) * half) };
        let s = if real {
            (rhi - rlo) * half
        } else {
            points.iter().map(|p| (p.coords()[i] - c).norm()).fold(T::zero(), T::max)
        };
        center.push(c);
        scale.push(if s > T::zero() && s.is_finite() { s } else { T::one() });
    }
    (center, scale, real)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn univariate_cubic() {
        let b = MonomialBasis::new(1, 3).unwrap();
        assert_eq!(b.size(), 4);
        assert_eq!(b.exponents(), &[vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn bivariate_linear() {
        let b = MonomialBasis::new(2, 1).unwrap();
        assert_eq!(b.exponents(), &[vec![0, 0], vec![1, 0], vec![0, 1]]);
        assert_eq!(b.degree_sum(), 2);
    }

    #[test]
    fn constants_only() {
        let b = MonomialBasis::new(1, 0).unwrap();
        assert_eq!(b.size(), 1);
    }

    #[test]
    fn graded_order_and_degree_identity() {
        for n in 1..=4 {
            for k in 0..=8 {
                let b = MonomialBasis::new(n, k).unwrap();
                assert_eq!(b.size(), binomial(n + k, k));
                let degs: Vec<u32> = (0..b.size()).map(|j| b.degree(j)).collect();
                assert!(degs.windows(2).all(|w| w[0] <= w[1]));
                assert_eq!(b.degree_sum() * (n as u64 + 1), (n * k * b.size()) as u64);
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(MonomialBasis::new(3, 40), Err(Error::BasisTooLarge { .. })));
        assert!(MonomialBasis::with_cap(1, 10, 11).is_ok());
    }

    #[test]
    fn chebyshev_values() {
        let b = MonomialBasis::new(1, 3).unwrap();
        let e = EvalBasis::<f64>::new(b, Family::Chebyshev, vec![Cplx::zero()], vec![1.0]);
        let v = e.eval(&Point::real(0.5));
        assert!((v[2].re - (2.0 * 0.25 - 1.0)).abs() < 1e-15);
        assert!((v[3].re - (4.0 * 0.125 - 3.0 * 0.5)).abs() < 1e-15);
        // leading coefficients 1, 1, 2, 4
        assert!((e.log_det_correction() + 3.0 * 2f64.ln()).abs() < 1e-15);
    }
}
