use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{CompactSetSpec, Point};
use crate::linalg::{pivoted_cholesky, Field, Mat};
use crate::measure::DiscreteMeasure;
use crate::polynomials::basis::{affine_frame, EvalBasis, Family, MonomialBasis};
use crate::scalar::{Cplx, Real};
use crate::weight::Weight;

/// Relative residual below which a new Arnoldi direction counts as dependent.
const ARNOLDI_DROP: f64 = 1e-10;
/// Relative pivot floor for the pivoted Cholesky rank decision.
const CHOLESKY_RANK: f64 = 1e-12;
/// Negative residual pivots beyond this (relative) mean the input is not PSD.
const PSD_TOL: f64 = 1e-10;

/// Weighted Gram matrix of a monomial basis, with the data it was built from.
#[derive(Clone, Debug)]
pub struct Gram<T> {
    matrix: Mat<Cplx<T>>,
    basis: MonomialBasis,
    weight: Weight,
    k: usize,
}

impl<T: Real> Gram<T> {
    pub fn matrix(&self) -> &Mat<Cplx<T>> {
        &self.matrix
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn weight(&self) -> &Weight {
        &self.weight
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

fn weighted_sqrt_masses<T: Real>(nu: &DiscreteMeasure<T>, q: &Weight, k: usize) -> Result<Vec<T>> {
    q.check_dim(nu.dim())?;
    let kk = T::from_count(k);
    let w: Vec<T> = nu
        .atoms()
        .iter()
        .zip(nu.masses())
        .map(|(a, &m)| {
            let qv = q.eval(a);
            if qv == T::infinity() || m == T::zero() {
                T::zero()
            } else {
                m.sqrt() * (-kk * qv).exp()
            }
        })
        .collect();
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("weight `{}` overflows e^(-kQ) on the support", q.source())));
    }
    if w.iter().all(|x| *x == T::zero()) {
        return Err(Error::AllMassAnnihilated);
    }
    Ok(w)
}

/// `G_ij = sum_atoms mass e_i(z) conj(e_j(z)) e^{-2kQ(z)}` by direct summation.
pub fn gram_matrix<T: Real>(nu: &DiscreteMeasure<T>, q: &Weight, k: usize, basis: &MonomialBasis) -> Result<Gram<T>> {
    if basis.n() != nu.dim() {
        return Err(Error::Dimension { expected: basis.n(), found: nu.dim() });
    }
    let w = weighted_sqrt_masses(nu, q, k)?;
    let raw = raw_monomials::<T>(basis);
    let nb = basis.size();
    let mut g = Mat::<Cplx<T>>::zeros(nb, nb);
    let mut v = vec![Cplx::zero(); nb];
    for (a, &wa) in nu.atoms().iter().zip(&w) {
        if wa == T::zero() {
            continue;
        }
        raw.eval_into(a, &mut v);
        let w2 = wa * wa;
        for i in 0..nb {
            let vi = v[i].scale(w2);
            for j in 0..nb {
                g[(i, j)] += vi * v[j].conj();
            }
        }
    }
    Ok(Gram { matrix: g, basis: basis.clone(), weight: q.clone(), k })
}

fn raw_monomials<T: Real>(basis: &MonomialBasis) -> EvalBasis<T> {
    let n = basis.n();
    EvalBasis::new(basis.clone(), Family::Monomial, vec![Cplx::zero(); n], vec![T::one(); n])
}

#[derive(Clone, Debug)]
struct Step<T> {
    var: usize,
    parent: usize,
    h: Vec<Cplx<T>>,
    norm: T,
}

#[derive(Clone, Debug)]
enum Repr<T> {
    /// Row `a` holds the monomial coefficients of `p_a`.
    Coefficients { basis: EvalBasis<T>, coeffs: Mat<Cplx<T>> },
    /// Three-term-free Arnoldi recurrence in rescaled coordinates.
    Recurrence { center: Vec<Cplx<T>>, scale: Vec<T>, norm0: T, steps: Vec<Step<T>> },
}

/// Polynomials `p_1, ..., p_r` of degree at most `k`, orthonormal for
/// `<f, g> = int f conj(g) e^{-2kQ} dnu`. `r < N_k` when `nu` cannot separate
/// `P_k`.
#[derive(Clone, Debug)]
pub struct OrthonormalSystem<T> {
    n: usize,
    k: usize,
    dim: usize,
    weight: Weight,
    degrees: Vec<u32>,
    repr: Repr<T>,
    /// Columns `sqrt(mass) e^{-kQ} p_j` on the atoms of the building measure.
    atom_vectors: Option<Vec<Vec<Cplx<T>>>>,
}

impl<T: Real> OrthonormalSystem<T> {
    /// Orthonormalize by Arnoldi on the atoms of `nu`: each new candidate is a
    /// coordinate times an already orthonormal vector, orthogonalized twice
    /// against everything kept so far.
    pub fn from_measure(nu: &DiscreteMeasure<T>, q: &Weight, k: usize) -> Result<Self> {
        let n = nu.dim();
        let dim = MonomialBasis::new(n, k)?.size();
        let w = weighted_sqrt_masses(nu, q, k)?;
        let support: Vec<Point<T>> =
            nu.atoms().iter().zip(&w).filter(|(_, &x)| x > T::zero()).map(|(a, _)| a.clone()).collect();
        let (center, scale, _) = affine_frame(n, &support);
        let m = nu.len();
        let u: Vec<Vec<Cplx<T>>> = (0..n)
            .map(|i| nu.atoms().iter().map(|a| (a.coords()[i] - center[i]) / scale[i]).collect())
            .collect();
        let norm0 = w.iter().map(|&x| x * x).sum::<T>().sqrt();
        let mut kept: Vec<Vec<Cplx<T>>> = vec![w.iter().map(|&x| Cplx::from_real(x / norm0)).collect()];
        let mut degrees = vec![0u32];
        let mut steps = Vec::new();
        let mut prev_level = vec![0usize];
        let drop = T::lit(ARNOLDI_DROP);
        'outer: for d in 1..=k {
            let mut level = Vec::new();
            for &b in &prev_level {
                for (i, ui) in u.iter().enumerate() {
                    if kept.len() == dim {
                        break 'outer;
                    }
                    let mut v: Vec<Cplx<T>> = (0..m).map(|t| ui[t] * kept[b][t]).collect();
                    let vn = norm(&v);
                    if vn == T::zero() {
                        continue;
                    }
                    let mut h = vec![Cplx::<T>::zero(); kept.len()];
                    for _ in 0..2 {
                        for (j, qj) in kept.iter().enumerate() {
                            let c: Cplx<T> = qj.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                            h[j] += c;
                            for (vt, qt) in v.iter_mut().zip(qj) {
                                *vt -= c * qt;
                            }
                        }
                    }
                    let r = norm(&v);
                    if !(r > drop * vn) {
                        continue;
                    }
                    v.iter_mut().for_each(|x| *x = x.scale(T::one() / r));
                    steps.push(Step { var: i, parent: b, h, norm: r });
                    level.push(kept.len());
                    kept.push(v);
                    degrees.push(d as u32);
                }
            }
            if level.is_empty() {
                break;
            }
            prev_level = level;
        }
        Ok(OrthonormalSystem {
            n,
            k,
            dim,
            weight: q.clone(),
            degrees,
            repr: Repr::Recurrence { center, scale, norm0, steps },
            atom_vectors: Some(kept),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of orthonormal polynomials.
    pub fn rank(&self) -> usize {
        self.degrees.len()
    }

    /// `N_k`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank() == self.dim
    }

    pub fn weight(&self) -> &Weight {
        &self.weight
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    /// Monomial coefficients (rows = polynomials), when built from a Gram matrix.
    pub fn coefficients(&self) -> Option<&Mat<Cplx<T>>> {
        match &self.repr {
            Repr::Coefficients { coeffs, .. } => Some(coeffs),
            Repr::Recurrence { .. } => None,
        }
    }

    /// Orthonormal columns `sqrt(mass) e^{-kQ} p_j` on the atoms used to build
    /// the system (Arnoldi construction only).
    pub fn atom_vectors(&self) -> Option<&[Vec<Cplx<T>>]> {
        self.atom_vectors.as_deref()
    }

    /// `p_j(z)`, without the weight factor.
    pub fn eval(&self, z: &Point<T>) -> Vec<Cplx<T>> {
        match &self.repr {
            Repr::Coefficients { basis, coeffs } => {
                let e = basis.eval(z);
                (0..coeffs.rows()).map(|a| coeffs.row(a).iter().zip(&e).map(|(c, x)| *c * x).sum()).collect()
            }
            Repr::Recurrence { center, scale, norm0, steps } => {
                let u: Vec<Cplx<T>> = (0..self.n).map(|i| (z.coords()[i] - center[i]) / scale[i]).collect();
                let mut p = Vec::with_capacity(steps.len() + 1);
                p.push(Cplx::from_real(T::one() / *norm0));
                for s in steps {
                    let mut v = u[s.var] * p[s.parent];
                    for (hj, pj) in s.h.iter().zip(&p) {
                        v -= *hj * pj;
                    }
                    p.push(v.scale(T::one() / s.norm));
                }
                p
            }
        }
    }

    /// `e^{-kQ(z)}`, zero where `Q = +inf`.
    pub fn weight_factor(&self, z: &Point<T>) -> T {
        let qv = self.weight.eval(z);
        if qv == T::infinity() {
            T::zero()
        } else {
            (-T::from_count(self.k) * qv).exp()
        }
    }
}

fn norm<T: Real>(v: &[Cplx<T>]) -> T {
    v.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt()
}

/// Orthonormal system from a Gram matrix via pivoted Cholesky
/// `P^T G P = L L^*`: the coefficients are `L_P^{-1}` on the pivot monomials,
/// so a rank-deficient Gram gives a reduced system.
pub fn orthonormalize<T: Real>(gram: &Gram<T>) -> Result<OrthonormalSystem<T>> {
    let g = gram.matrix();
    let nb = g.rows();
    let ch = pivoted_cholesky(g, T::lit(CHOLESKY_RANK), T::lit(PSD_TOL))
        .map_err(|pivot| Error::NotPsd { pivot: pivot.as_f64() })?;
    let r = ch.rank;
    let piv = &ch.perm[..r];
    // Forward substitution on the lower-triangular r x r block.
    let lp = Mat::from_fn(r, r, |i, j| ch.l[(piv[i], j)]);
    let mut inv = Mat::<Cplx<T>>::zeros(r, r);
    for c in 0..r {
        for i in c..r {
            let mut s: Cplx<T> = if i == c { Cplx::one() } else { Cplx::zero() };
            for j in c..i {
                s -= lp[(i, j)] * inv[(j, c)];
            }
            inv[(i, c)] = s / lp[(i, i)];
        }
    }
    // p_a = sum_b conj(inv_ab) e_{piv_b}: rows of the coefficient matrix
    // satisfy C G C^* = I with C = conj(L_P^{-1}) S.
    let mut coeffs = Mat::<Cplx<T>>::zeros(r, nb);
    for a in 0..r {
        for b in 0..r {
            coeffs[(a, piv[b])] = inv[(a, b)].conj();
        }
    }
    let degrees = (0..r)
        .map(|a| (0..nb).filter(|&i| coeffs[(a, i)] != Cplx::zero()).map(|i| gram.basis().degree(i)).max().unwrap_or(0))
        .collect();
    Ok(OrthonormalSystem {
        n: gram.basis().n(),
        k: gram.k(),
        dim: nb,
        weight: gram.weight().clone(),
        degrees,
        repr: Repr::Coefficients { basis: raw_monomials(gram.basis()), coeffs },
        atom_vectors: None,
    })
}

/// `sum_j |p_j(z)|^2 e^{-2kQ(z)}`.
pub fn christoffel<T: Real>(z: &Point<T>, sys: &OrthonormalSystem<T>) -> T {
    let f = sys.weight_factor(z);
    if f == T::zero() {
        return T::zero();
    }
    let s: T = sys.eval(z).iter().map(|x| x.norm_sqr()).sum();
    s * f * f
}

/// Numerical dimension of `P_k` restricted to `points`.
pub fn polynomial_space_rank<T: Real>(points: &[Point<T>], k: usize) -> Result<usize> {
    let nu = DiscreteMeasure::uniform(points.to_vec())?;
    Ok(OrthonormalSystem::from_measure(&nu, &Weight::zero(), k)?.rank())
}

/// Optimal Bernstein–Markov constant on a candidate grid.
#[derive(Clone, Debug, Serialize)]
#[serde(bound(serialize = "T: Real"))]
pub struct BmConstant<T> {
    pub k: usize,
    /// `max sqrt(christoffel)`, or `+inf` when `nu` does not determine `P_k(K)`.
    pub value: T,
    pub argmax: Option<Point<T>>,
    /// Rank of the orthonormal system in `L^2(e^{-2kQ} nu)`.
    pub rank: usize,
    /// Numerical dimension of `P_k` on the finite-weight candidates.
    pub space_rank: usize,
    pub dim: usize,
}

pub fn bm_constant_detail<T: Real>(spec: &CompactSetSpec, nu: &DiscreteMeasure<T>, q: &Weight, k: usize) -> Result<BmConstant<T>> {
    let sys = OrthonormalSystem::from_measure(nu, q, k)?;
    let candidates = spec.discretize::<T>()?;
    bm_constant_on(&sys, &candidates)
}

/// As [`bm_constant_detail`] with a prebuilt system and candidate list.
pub fn bm_constant_on<T: Real>(sys: &OrthonormalSystem<T>, candidates: &[Point<T>]) -> Result<BmConstant<T>> {
    let finite: Vec<Point<T>> = candidates.iter().filter(|c| sys.weight().eval(*c).is_finite()).cloned().collect();
    if finite.is_empty() {
        return Err(Error::InadmissibleWeight);
    }
    let space_rank = polynomial_space_rank(&finite, sys.k())?;
    if sys.rank() < space_rank {
        return Ok(BmConstant { k: sys.k(), value: T::infinity(), argmax: None, rank: sys.rank(), space_rank, dim: sys.dim() });
    }
    let mut best = T::neg_infinity();
    let mut arg = None;
    for c in &finite {
        let v = christoffel(c, sys);
        if v > best {
            best = v;
            arg = Some(c.clone());
        }
    }
    Ok(BmConstant { k: sys.k(), value: best.sqrt(), argmax: arg, rank: sys.rank(), space_rank, dim: sys.dim() })
}

/// Optimal `M_k = max over candidates of sqrt(christoffel)`.
pub fn bm_constant<T: Real>(spec: &CompactSetSpec, nu: &DiscreteMeasure<T>, q: &Weight, k: usize) -> Result<T> {
    Ok(bm_constant_detail(spec, nu, q, k)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight::parse_weight;

    fn circle(m: usize) -> DiscreteMeasure<f64> {
        DiscreteMeasure::uniform(CompactSetSpec::unit_circle(m).discretize().unwrap()).unwrap()
    }

    fn arcsine(m: usize) -> DiscreteMeasure<f64> {
        // Gauss-Chebyshev nodes carry the arcsine law exactly up to degree 2m - 1.
        let atoms = (0..m)
            .map(|j| Point::real(((2 * j + 1) as f64 * std::f64::consts::PI / (2 * m) as f64).cos()))
            .collect();
        DiscreteMeasure::uniform(atoms).unwrap()
    }

    #[test]
    fn circle_monomials_are_orthonormal() {
        let b = MonomialBasis::new(1, 5).unwrap();
        let g = gram_matrix(&circle(64), &Weight::zero(), 5, &b).unwrap();
        assert!(g.matrix().max_abs_diff(&Mat::identity(6)) < 1e-12);
    }

    #[test]
    fn degree_zero_gram_is_one() {
        let b = MonomialBasis::new(1, 0).unwrap();
        let g = gram_matrix(&arcsine(7), &Weight::zero(), 0, &b).unwrap();
        assert!((g.matrix()[(0, 0)].re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_atom_gives_rank_one() {
        let b = MonomialBasis::new(1, 3).unwrap();
        let nu = DiscreteMeasure::dirac(Point::real(0.5f64));
        let g = gram_matrix(&nu, &Weight::zero(), 3, &b).unwrap();
        assert_eq!(orthonormalize(&g).unwrap().rank(), 1);
    }

    #[test]
    fn annihilated_mass_is_an_error() {
        let b = MonomialBasis::new(1, 1).unwrap();
        let q = parse_weight("1/x").unwrap();
        let nu = DiscreteMeasure::dirac(Point::real(0.0f64));
        assert_eq!(gram_matrix(&nu, &q, 1, &b).unwrap_err(), Error::AllMassAnnihilated);
    }

    #[test]
    fn scaling_gram() {
        let b = MonomialBasis::new(1, 0).unwrap();
        let nu = DiscreteMeasure::dirac(Point::real(0.0f64));
        let mut g = gram_matrix(&nu, &Weight::zero(), 0, &b).unwrap();
        g.matrix[(0, 0)] = Cplx::new(4.0, 0.0);
        let sys = orthonormalize(&g).unwrap();
        assert!((sys.coefficients().unwrap()[(0, 0)].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn orthonormalized_gram_is_identity() {
        let b = MonomialBasis::new(1, 6).unwrap();
        let q = parse_weight("x^2/4").unwrap();
        let g = gram_matrix(&arcsine(40), &q, 6, &b).unwrap();
        let sys = orthonormalize(&g).unwrap();
        let c = sys.coefficients().unwrap();
        let back = c.matmul(g.matrix()).matmul(&c.adjoint());
        assert!(back.max_abs_diff(&Mat::identity(7)) < 1e-8);
    }

    #[test]
    fn arnoldi_system_is_orthonormal_on_atoms() {
        let nu = arcsine(30);
        let q = parse_weight("abs(x)").unwrap();
        let sys = OrthonormalSystem::from_measure(&nu, &q, 8).unwrap();
        assert_eq!(sys.rank(), 9);
        // Recompute the Gram of the evaluated polynomials.
        let mut g = Mat::<Cplx<f64>>::zeros(9, 9);
        for (a, &m) in nu.atoms().iter().zip(nu.masses()) {
            let p = sys.eval(a);
            let f = sys.weight_factor(a);
            for i in 0..9 {
                for j in 0..9 {
                    g[(i, j)] += p[i] * p[j].conj() * (m * f * f);
                }
            }
        }
        assert!(g.max_abs_diff(&Mat::identity(9)) < 1e-8);
        // Kernel integrates to the rank.
        let total: f64 = nu.atoms().iter().zip(nu.masses()).map(|(a, m)| m * christoffel(a, &sys)).sum();
        assert!((total - 9.0).abs() < 1e-8);
    }

    #[test]
    fn legendre_kernel_at_endpoint() {
        // Fine Gauss-Legendre-free check: midpoint rule on [0, 1].
        let m = 4000;
        let atoms = (0..m).map(|j| Point::real((j as f64 + 0.5) / m as f64)).collect();
        let nu = DiscreteMeasure::uniform(atoms).unwrap();
        let k = 6;
        let sys = OrthonormalSystem::from_measure(&nu, &Weight::zero(), k).unwrap();
        let at_one = christoffel(&Point::real(1.0), &sys);
        let oracle: f64 = (0..=k).map(|j| (2 * j + 1) as f64).sum();
        assert!((at_one - oracle).abs() < 1e-3 * oracle);
    }

    #[test]
    fn chebyshev_kernel_and_bm_constant() {
        let spec = CompactSetSpec::interval_with_points(-1.0, 1.0, 2001);
        let k = 50;
        let bm = bm_constant_detail(&spec, &arcsine(400), &Weight::zero(), k).unwrap();
        assert!((bm.value - 101f64.sqrt()).abs() < 1e-8 * bm.value);
        assert!((bm.value.powf(1.0 / 50.0) - 1.0472).abs() < 1e-4);
    }

    #[test]
    fn single_point_set_has_unit_constant() {
        let spec = CompactSetSpec::PointCloud { n: 1, points: vec![vec![0.3, 0.0]], resolution: 1 };
        let nu = DiscreteMeasure::dirac(Point::real(0.3f64));
        for k in 0..5 {
            assert!((bm_constant(&spec, &nu, &Weight::zero(), k).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dirac_on_interval_is_not_bernstein_markov() {
        let spec = CompactSetSpec::interval_with_points(-1.0, 1.0, 101);
        let nu = DiscreteMeasure::dirac(Point::real(0.0f64));
        let bm = bm_constant_detail(&spec, &nu, &Weight::zero(), 3).unwrap();
        assert!(bm.value.is_infinite());
        assert_eq!((bm.rank, bm.space_rank), (1, 4));
    }

    #[test]
    fn reduced_rank_matches_eigen_count() {
        let b = MonomialBasis::new(1, 5).unwrap();
        let atoms: Vec<_> = [-0.7, 0.1, 0.8].iter().map(|&x| Point::real(x)).collect();
        let nu = DiscreteMeasure::uniform(atoms).unwrap();
        let g = gram_matrix(&nu, &Weight::zero(), 5, &b).unwrap();
        let dm = nalgebra::DMatrix::from_fn(6, 6, |i, j| g.matrix()[(i, j)].re);
        let eig = nalgebra::SymmetricEigen::new(dm).eigenvalues;
        let max = eig.iter().cloned().fold(0.0, f64::max);
        let count = eig.iter().filter(|&&e| e > 1e-12 * max).count();
        assert_eq!(orthonormalize(&g).unwrap().rank(), count);
        assert_eq!(count, 3);
    }
}
