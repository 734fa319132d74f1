//! Bernstein-Markov measures: the Fekete-series construction, sampled checks
//! of the (weighted) inequality, growth scans of the optimal constants, and
//! the mass-density sufficient condition.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fekete::{ExchangeProblem, FeketeOptions};
use crate::geometry::{CompactSetSpec, Point};
use crate::io::Table;
use crate::measure::DiscreteMeasure;
use crate::polynomials::{bm_constant_on, christoffel, polynomial_space_rank, EvalBasis, MonomialBasis, OrthonormalSystem};
use crate::rng::substream;
use crate::scalar::{Cplx, Real};
use crate::weight::Weight;

/// Order-`k` Fekete set used in the construction.
#[derive(Clone, Debug, Serialize)]
pub struct FeketeTerm {
    pub k: usize,
    /// Number of points, `m_k`.
    pub m_k: usize,
    /// Largest Lagrange function of the set on the grid (1 for exact Fekete points).
    pub lebesgue: f64,
}

/// `nu = c sum_{k=1}^{k_max} k^{-2} nu_k`, `nu_k` uniform on an order-`k`
/// Fekete set.
#[derive(Clone, Debug)]
pub struct BmConstruction<T> {
    pub measure: DiscreteMeasure<T>,
    pub k_max: usize,
    /// `1 / sum k^{-2}`.
    pub c: f64,
    pub terms: Vec<FeketeTerm>,
}

impl<T: Real> BmConstruction<T> {
    /// `lebesgue_k m_k k^2 / c`: for every polynomial of degree at most `k`,
    /// `||p||_K <= bound ||p||_{L^2(nu)}`.
    pub fn explicit_bound(&self, k: usize) -> Option<f64> {
        self.terms.iter().find(|t| t.k == k).map(|t| t.lebesgue.max(1.0) * t.m_k as f64 * (k * k) as f64 / self.c)
    }
}

/// Fekete points of every order up to `k_max` on the grid of `spec`, merged
/// into one probability measure. When polynomials of degree `k` already
/// separate every candidate (finite sets), the whole grid is the Fekete set.
pub fn construct_bm_measure<T: Real>(spec: &CompactSetSpec, k_max: usize, opts: &FeketeOptions) -> Result<BmConstruction<T>> {
    if k_max < 1 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let candidates = spec.discretize::<T>()?;
    let n = spec.dim();
    let terms: Vec<(FeketeTerm, Vec<usize>)> = (1..=k_max)
        .into_par_iter()
        .map(|k| -> Result<(FeketeTerm, Vec<usize>)> {
            let n_k = MonomialBasis::new(n, k)?.size();
            if candidates.len() <= n_k {
                let rank = polynomial_space_rank(&candidates, k)?;
                if rank == candidates.len() {
                    let all: Vec<usize> = (0..candidates.len()).collect();
                    return Ok((FeketeTerm { k, m_k: all.len(), lebesgue: 1.0 }, all));
                }
                return Err(Error::RankDeficient { rank, needed: n_k });
            }
            let p = ExchangeProblem::new(candidates.clone(), &Weight::zero(), k)?;
            let run = p.optimize(opts)?;
            if run.objective == T::neg_infinity() {
                let rank = polynomial_space_rank(&candidates, k)?;
                if rank == candidates.len() {
                    let all: Vec<usize> = (0..candidates.len()).collect();
                    return Ok((FeketeTerm { k, m_k: all.len(), lebesgue: 1.0 }, all));
                }
                return Err(Error::RankDeficient { rank, needed: n_k });
            }
            Ok((FeketeTerm { k, m_k: run.selection.len(), lebesgue: run.lebesgue.as_f64() }, run.selection))
        })
        .collect::<Result<Vec<_>>>()?;
    let s: f64 = (1..=k_max).map(|k| 1.0 / (k * k) as f64).sum();
    let c = 1.0 / s;
    let mut mass = vec![0.0f64; candidates.len()];
    for (t, sel) in &terms {
        let w = c / ((t.k * t.k) as f64 * sel.len() as f64);
        for &i in sel {
            mass[i] += w;
        }
    }
    let (atoms, masses): (Vec<Point<T>>, Vec<T>) =
        candidates.iter().zip(&mass).filter(|(_, &m)| m > 0.0).map(|(a, &m)| (a.clone(), T::lit(m))).unzip();
    Ok(BmConstruction {
        measure: DiscreteMeasure::normalize(atoms, masses)?,
        k_max,
        c,
        terms: terms.into_iter().map(|(t, _)| t).collect(),
    })
}

/// Outcome of the sampled inequality check at one degree.
#[derive(Clone, Debug, Serialize)]
pub struct BmInequalityReport {
    pub k: usize,
    pub trials: usize,
    /// Largest `||e^{-kQ} p||_K / ||e^{-kQ} p||_{L^2(nu)}` over the trials
    /// (`+inf` when some trial vanishes on the support of `nu`).
    pub max_ratio: f64,
    /// Optimal constant `M_k` (`+inf` when `nu` does not determine `P_k(K)`).
    pub m_k: f64,
    /// Trials whose ratio exceeds `M_k (1 + 1e-9)`.
    pub christoffel_violations: usize,
    pub explicit_bound: Option<f64>,
    pub explicit_violations: usize,
    /// Ratio of the kernel section `K_k(., z*)` at the maximizer `z*`, which
    /// attains `M_k`.
    pub witness_ratio: f64,
}

impl BmInequalityReport {
    pub fn passes(&self) -> bool {
        self.christoffel_violations == 0
            && self.explicit_violations == 0
            && (self.m_k.is_infinite() || (self.witness_ratio / self.m_k - 1.0).abs() < 1e-6)
    }
}

/// Sup on `grid` over `L^2(nu)` norm, both with the factor `e^{-kQ}`.
fn ratio<T: Real>(
    coef: &[Cplx<T>],
    grid_vals: &[Vec<Cplx<T>>],
    grid_w: &[T],
    atom_vals: &[Vec<Cplx<T>>],
    atom_w: &[T],
) -> f64 {
    let eval = |v: &[Cplx<T>]| -> Cplx<T> { coef.iter().zip(v).map(|(a, b)| *a * b).sum() };
    let sup = grid_vals.iter().zip(grid_w).map(|(v, &w)| eval(v).norm() * w).fold(T::zero(), T::max);
    let l2: T = atom_vals.iter().zip(atom_w).map(|(v, &w)| eval(v).norm_sqr() * w).sum::<T>().sqrt();
    (sup / l2).as_f64()
}

/// Random polynomials `p = sum c_j b_j` (`b_j` a well-conditioned basis of
/// `P_k`, `c_j` standard normal, complex on non-real sets) against the optimal
/// constant and, when given, the explicit bound. The first trial is `p = 1`.
pub fn verify_bm_inequality<T: Real>(
    nu: &DiscreteMeasure<T>,
    spec: &CompactSetSpec,
    q: &Weight,
    k: usize,
    trials: usize,
    seed: u64,
    explicit_bound: Option<f64>,
) -> Result<BmInequalityReport> {
    if trials < 1 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let grid = spec.discretize::<T>()?;
    let sys = OrthonormalSystem::from_measure(nu, q, k)?;
    let bm = bm_constant_on(&sys, &grid)?;
    let mb = MonomialBasis::new(nu.dim(), k)?;
    let basis = EvalBasis::for_points(&mb, &grid);
    let kk = T::from_count(k);
    let wf = |p: &Point<T>| {
        let v = q.eval(p);
        if v.is_finite() {
            (-kk * v).exp()
        } else {
            T::zero()
        }
    };
    let grid_vals: Vec<Vec<Cplx<T>>> = grid.iter().map(|z| basis.eval(z)).collect();
    let grid_w: Vec<T> = grid.iter().map(wf).collect();
    let atom_vals: Vec<Vec<Cplx<T>>> = nu.atoms().iter().map(|z| basis.eval(z)).collect();
    let atom_w: Vec<T> = nu.atoms().iter().zip(nu.masses()).map(|(z, &m)| wf(z).powi(2) * m).collect();
    let real = spec.is_real();
    let mut rng = substream(seed, 0);
    let m_k = bm.value.as_f64();
    let tol = 1.0 + 1e-9;
    let mut max_ratio: f64 = 0.0;
    let (mut cv, mut ev) = (0, 0);
    for t in 0..trials {
        let coef: Vec<Cplx<T>> = (0..mb.size())
            .map(|j| {
                if t == 0 {
                    Cplx::new(if j == 0 { T::one() } else { T::zero() }, T::zero())
                } else {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = if real { 0.0 } else { rng.sample(StandardNormal) };
                    Cplx::new(T::lit(re), T::lit(im))
                }
            })
            .collect();
        let r = ratio(&coef, &grid_vals, &grid_w, &atom_vals, &atom_w);
        let r = if r.is_nan() { f64::INFINITY } else { r };
        max_ratio = max_ratio.max(r);
        if r > m_k * tol {
            cv += 1;
        }
        if let Some(b) = explicit_bound {
            if r > b * tol {
                ev += 1;
            }
        }
    }
    let witness_ratio = match &bm.argmax {
        Some(zs) => {
            // p(z) = sum_j conj(p_j(z*)) p_j(z): coefficients in the orthonormal basis.
            let ps = sys.eval(zs);
            let gv: Vec<Vec<Cplx<T>>> = grid.iter().map(|z| sys.eval(z)).collect();
            let av: Vec<Vec<Cplx<T>>> = nu.atoms().iter().map(|z| sys.eval(z)).collect();
            let coef: Vec<Cplx<T>> = ps.iter().map(|x| x.conj()).collect();
            ratio(&coef, &gv, &grid_w, &av, &atom_w)
        }
        None => f64::INFINITY,
    };
    Ok(BmInequalityReport {
        k,
        trials,
        max_ratio,
        m_k,
        christoffel_violations: cv,
        explicit_bound,
        explicit_violations: ev,
        witness_ratio,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BmVerdict {
    ConsistentWithBm,
    GrowthDetected,
}

/// Optimal constants over a range of degrees for one weight.
#[derive(Clone, Debug, Serialize)]
pub struct BmReport {
    pub weight: String,
    pub ks: Vec<usize>,
    pub m_k: Vec<f64>,
    pub m_k_root: Vec<f64>,
    /// Least-squares slope of `log M_k` against `k` over the top half of `ks`.
    pub tail_slope: f64,
    pub verdict: BmVerdict,
    /// `M_k^{1/k}` never increases along `ks`.
    pub root_decreasing: bool,
    /// `lebesgue_k m_k k^2 / c` per degree, for constructed measures.
    pub explicit_bound: Vec<Option<f64>>,
}

/// Slope above which `log M_k` counts as growing linearly in `k`.
pub const GROWTH_SLOPE: f64 = 0.01;

impl BmReport {
    /// CSV columns `k, M_k, M_k^{1/k}, bound_m_k_k2_over_c`.
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["k", "M_k", "M_k^{1/k}", "bound_m_k_k2_over_c"]);
        for (i, &k) in self.ks.iter().enumerate() {
            t.push(vec![k.into(), self.m_k[i].into(), self.m_k_root[i].into(), self.explicit_bound[i].unwrap_or(f64::NAN).into()]);
        }
        t
    }
}

fn tail_slope(ks: &[usize], m: &[f64]) -> f64 {
    let start = ks.len() / 2;
    let pts: Vec<(f64, f64)> = ks[start..].iter().zip(&m[start..]).map(|(&k, &v)| (k as f64, v.ln())).collect();
    if pts.iter().any(|p| !p.1.is_finite()) {
        return f64::INFINITY;
    }
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// `M_k` trajectories of `nu` for each weight in `weights`.
pub fn strong_bm_scan<T: Real>(
    nu: &DiscreteMeasure<T>,
    spec: &CompactSetSpec,
    weights: &[Weight],
    ks: &[usize],
    construction: Option<&BmConstruction<T>>,
) -> Result<Vec<BmReport>> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("empty degree range".into()));
    }
    let grid = spec.discretize::<T>()?;
    weights
        .iter()
        .map(|q| {
            let m_k = ks
                .par_iter()
                .map(|&k| {
                    let sys = OrthonormalSystem::from_measure(nu, q, k)?;
                    Ok(bm_constant_on(&sys, &grid)?.value.as_f64())
                })
                .collect::<Result<Vec<f64>>>()?;
            let m_k_root: Vec<f64> =
                ks.iter().zip(&m_k).map(|(&k, &m)| if k == 0 { f64::NAN } else { m.powf(1.0 / k as f64) }).collect();
            let slope = tail_slope(ks, &m_k);
            Ok(BmReport {
                weight: q.source().to_string(),
                ks: ks.to_vec(),
                root_decreasing: m_k_root.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)),
                m_k,
                m_k_root,
                tail_slope: slope,
                verdict: if slope > GROWTH_SLOPE { BmVerdict::GrowthDetected } else { BmVerdict::ConsistentWithBm },
                explicit_bound: ks.iter().map(|&k| construction.and_then(|c| c.explicit_bound(k))).collect(),
            })
        })
        .collect()
}

/// Ball masses `nu(B(z0, r))` against `r^T` at one radius.
#[derive(Clone, Debug, Serialize)]
pub struct MassDensityRow {
    pub r: f64,
    pub centers: usize,
    pub passes: usize,
    pub fraction: f64,
    /// `r` is below the atom spacing, so a failure says nothing about `K`.
    pub inconclusive: bool,
    pub min_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MassDensityReport {
    pub t: f64,
    /// Largest nearest-neighbor gap between atoms.
    pub spacing: f64,
    pub rows: Vec<MassDensityRow>,
}

impl MassDensityReport {
    /// Every conclusive radius passes at every center.
    pub fn all_pass(&self) -> bool {
        self.rows.iter().filter(|r| !r.inconclusive).all(|r| r.passes == r.centers)
    }
}

/// `nu(B(z0, r)) >= r^T` for each center and radius.
pub fn mass_density_check<T: Real>(nu: &DiscreteMeasure<T>, t: f64, radii: &[f64], centers: &[Point<T>]) -> Result<MassDensityReport> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument("mass-density exponent must be positive".into()));
    }
    let atoms = nu.atoms();
    let spacing = if atoms.len() < 2 {
        0.0
    } else {
        crate::geometry::nearest_neighbor_cells(atoms).iter().map(|h| h.as_f64()).fold(0.0, f64::max)
    };
    let rows = radii
        .iter()
        .map(|&r| {
            let mut passes = 0;
            let mut min_ratio = f64::INFINITY;
            for z in centers {
                let mass: f64 =
                    atoms.iter().zip(nu.masses()).filter(|(a, _)| a.distance(z).as_f64() <= r).map(|(_, m)| m.as_f64()).sum();
                let need = r.powf(t);
                min_ratio = min_ratio.min(mass / need);
                if mass >= need {
                    passes += 1;
                }
            }
            MassDensityRow {
                r,
                centers: centers.len(),
                passes,
                fraction: if centers.is_empty() { 1.0 } else { passes as f64 / centers.len() as f64 },
                inconclusive: r < spacing,
                min_ratio,
            }
        })
        .collect();
    Ok(MassDensityReport { t, spacing, rows })
}

/// `christoffel` maximum restricted to `grid`, exposed for callers that
/// already hold an orthonormal system.
pub fn christoffel_max<T: Real>(sys: &OrthonormalSystem<T>, grid: &[Point<T>]) -> T {
    grid.iter().map(|z| christoffel(z, sys)).fold(T::zero(), T::max).sqrt()
}
