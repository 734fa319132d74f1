//! Neighborhood functionals `J_k(G)`, `W_k(G)` and finite-`k` estimates of
//! the large-deviation rate of the empirical measures under `Prob_k`:
//!
//! `-(1/2kN_k) log sigma_k(G) = -[log J_k(G) - (1/2kN_k) log Z_k]`,
//!
//! with `J_k(G)^{2kN_k} = int_{G~} |VDM^Q|^2 dnu^{N_k}` over the tuples whose
//! empirical measure lies in `G`.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::{equilibrium_measure, rate_function, voronoi_cells, EquilibriumOptions, EquilibriumResult, SymMatrix};
use crate::ensembles::{partition_function, sample_dpp};
use crate::error::{Error, Result};
use crate::fekete::ExchangeProblem;
use crate::geometry::{CompactSetSpec, Point};
use crate::io::Table;
use crate::linalg::{log_abs_det_scaled, Mat};
use crate::measure::{empirical_moments, DiscreteMeasure, NeighborhoodSpec};
use crate::polynomials::{EvalBasis, MonomialBasis};
use crate::quadrature::grid_measure;
use crate::rng::{chunk_sizes, substream};
use crate::scalar::{ln_factorial, Cplx, Real};
use crate::weight::Weight;

/// Largest number of `N_k`-subsets summed exactly.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// `C(m, n)`, saturating.
pub fn subsets(m: usize, n: usize) -> u128 {
    if n > m {
        return 0;
    }
    let n = n.min(m - n);
    let mut c: u128 = 1;
    for i in 0..n {
        c = match c.checked_mul((m - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    c
}

/// How `J_k` is computed.
#[derive(Clone, Debug)]
pub enum JMode {
    /// Enumeration when the support is small enough, plain Monte Carlo otherwise.
    Auto,
    Enumerate,
    /// Tuples drawn from `nu^{N_k}`.
    MonteCarlo,
    /// Configurations drawn exactly from the ensembles with weights `Q_t`
    /// (equal shares), reweighted by the mixture density (balance heuristic).
    Tilted(Vec<Weight>),
}

/// Estimate of `J_k(G)`.
#[derive(Clone, Debug, Serialize)]
pub struct JEstimate {
    pub k: usize,
    pub n_k: usize,
    pub mode: String,
    /// `log int_{G~} |VDM^Q|^2 dnu^{N_k}` (`-inf` when no tuple was found in `G`).
    pub log_integral: f64,
    /// `exp(log_integral / (2 k N_k))`.
    pub value: f64,
    /// Tuples summed (enumeration) or drawn.
    pub samples: u128,
    pub hits: u128,
    /// Relative standard error of `exp(log_integral)`; zero when exact.
    pub rel_stderr: f64,
    /// No tuple landed in `G`: `value` is only an upper-bound flag and
    /// `hit_bound` is the one-sided 95% bound `3/samples` on the hit rate.
    pub zero_flag: bool,
    pub hit_bound: f64,
}

impl JEstimate {
    fn new(k: usize, n_k: usize, mode: &str, log_integral: f64, samples: u128, hits: u128, rel_stderr: f64) -> Self {
        let zero = hits == 0;
        JEstimate {
            k,
            n_k,
            mode: mode.to_string(),
            log_integral,
            value: if zero { 0.0 } else { (log_integral / (2.0 * (k * n_k) as f64)).exp() },
            samples,
            hits,
            rel_stderr,
            zero_flag: zero,
            hit_bound: if zero && samples > 0 { 3.0 / samples as f64 } else { 0.0 },
        }
    }
}

/// Basis matrix and per-atom log weights shared by the enumerations.
struct Tuples<T> {
    atoms: Vec<Point<T>>,
    /// `N_k x M`.
    c: Mat<Cplx<T>>,
    corr: T,
    n_k: usize,
}

impl<T: Real> Tuples<T> {
    fn new(atoms: Vec<Point<T>>, k: usize) -> Result<Self> {
        let n = atoms.first().map(|a| a.dim()).ok_or(Error::TooFewCandidates { needed: 1, found: 0 })?;
        let mb = MonomialBasis::new(n, k)?;
        let basis = EvalBasis::for_points(&mb, &atoms);
        let c = basis.matrix(&atoms);
        Ok(Tuples { n_k: mb.size(), corr: basis.log_det_correction(), atoms, c })
    }

    fn log_vdm(&self, sel: &[usize]) -> T {
        let m = Mat::from_fn(self.n_k, self.n_k, |i, j| self.c[(i, sel[j])]);
        let ld = log_abs_det_scaled(m, T::singular_threshold());
        if ld == T::neg_infinity() {
            ld
        } else {
            ld + self.corr
        }
    }

    fn points(&self, sel: &[usize]) -> Vec<Point<T>> {
        sel.iter().map(|&i| self.atoms[i].clone()).collect()
    }
}

/// Advance `sel` to the next lexicographic `n`-subset of `lo..m`.
fn next_subset(sel: &mut [usize], m: usize) -> bool {
    let n = sel.len();
    let mut i = n;
    while i > 0 {
        i -= 1;
        if sel[i] < m - n + i {
            sel[i] += 1;
            for j in i + 1..n {
                sel[j] = sel[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exact sums over all `N_k`-subsets of the atoms.
#[derive(Clone, Debug, Serialize)]
pub struct Enumeration {
    pub k: usize,
    pub n_k: usize,
    pub subsets: u128,
    /// Subsets whose empirical measure lies in `G`.
    pub feasible: u128,
    /// `log int_{G~} |VDM^Q|^2 dnu^{N_k}` (ordered tuples: `N_k!` times the subset sum).
    pub log_integral: f64,
    /// `log int |VDM^Q|^2 dnu^{N_k} = log Z_k`.
    pub log_total: f64,
    /// `max log|VDM^Q|` over feasible subsets.
    pub best_log_vdm_q: f64,
    /// Smallest moment deviation of any subset.
    pub floor: f64,
}

/// Per-block partial results, reduced in block order.
struct Block {
    g_terms: (f64, f64),
    all_terms: (f64, f64),
    feasible: u128,
    count: u128,
    best: f64,
    floor: f64,
}

fn lse_push(acc: &mut (f64, f64), x: f64) {
    // (max, sum of exp(. - max))
    if x == f64::NEG_INFINITY {
        return;
    }
    if x > acc.0 {
        acc.1 = acc.1 * (acc.0 - x).exp() + 1.0;
        acc.0 = x;
    } else {
        acc.1 += (x - acc.0).exp();
    }
}

fn lse_merge(a: &mut (f64, f64), b: (f64, f64)) {
    if b.0 == f64::NEG_INFINITY {
        return;
    }
    if b.0 > a.0 {
        a.1 = a.1 * (a.0 - b.0).exp() + b.1;
        a.0 = b.0;
    } else {
        a.1 += b.1 * (b.0 - a.0).exp();
    }
}

fn lse_value(a: (f64, f64)) -> f64 {
    if a.0 == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        a.0 + a.1.ln()
    }
}

/// Sum `|VDM^Q|^2 prod mass` over every `N_k`-subset of `supp nu`, inside and
/// outside `G`. Blocks share their smallest index and run in parallel.
pub fn enumerate<T: Real>(g: Option<&NeighborhoodSpec<T>>, nu: &DiscreteMeasure<T>, q: &Weight, k: usize) -> Result<Enumeration> {
    let (atoms, lw) = log_weights(nu, q, k, true)?;
    let kq: Vec<f64> = atoms.iter().map(|a| -(k as f64) * q.eval(a).as_f64()).collect();
    let t = Tuples::new(atoms, k)?;
    let n_k = t.n_k;
    let m = t.atoms.len();
    let total = subsets(m, n_k);
    if total > ENUMERATION_LIMIT {
        return Err(Error::InvalidArgument(format!("{total} subsets exceed the enumeration limit")));
    }
    let log_nf = ln_factorial(n_k);
    let blocks: Vec<Block> = if n_k > m {
        Vec::new()
    } else {
        (0..=m - n_k)
            .into_par_iter()
            .map(|first| {
                let mut b = Block {
                    g_terms: (f64::NEG_INFINITY, 0.0),
                    all_terms: (f64::NEG_INFINITY, 0.0),
                    feasible: 0,
                    count: 0,
                    best: f64::NEG_INFINITY,
                    floor: f64::INFINITY,
                };
                let mut sel: Vec<usize> = (0..n_k).map(|i| first + i).collect();
                loop {
                    b.count += 1;
                    let lv = t.log_vdm(&sel).as_f64();
                    let wsum: f64 = sel.iter().map(|&i| lw[i].as_f64()).sum();
                    let term = log_nf + wsum + 2.0 * lv;
                    lse_push(&mut b.all_terms, term);
                    let pts = t.points(&sel);
                    let (inside, dev) = match g {
                        None => (true, 0.0),
                        Some(g) => {
                            let d = g.max_deviation(&pts);
                            (d < g.epsilon(), d.as_f64())
                        }
                    };
                    b.floor = b.floor.min(dev);
                    if inside {
                        b.feasible += 1;
                        lse_push(&mut b.g_terms, term);
                        b.best = b.best.max(lv + sel.iter().map(|&i| kq[i]).sum::<f64>());
                    }
                    if n_k == 0 || sel[0] != first || !next_subset(&mut sel, m) || sel[0] != first {
                        break;
                    }
                }
                b
            })
            .collect()
    };
    let mut g_acc = (f64::NEG_INFINITY, 0.0);
    let mut all_acc = (f64::NEG_INFINITY, 0.0);
    let (mut feasible, mut count, mut best, mut floor) = (0, 0, f64::NEG_INFINITY, f64::INFINITY);
    for b in blocks {
        lse_merge(&mut g_acc, b.g_terms);
        lse_merge(&mut all_acc, b.all_terms);
        feasible += b.feasible;
        count += b.count;
        best = best.max(b.best);
        floor = floor.min(b.floor);
    }
    Ok(Enumeration {
        k,
        n_k,
        subsets: count,
        feasible,
        log_integral: lse_value(g_acc),
        log_total: lse_value(all_acc),
        best_log_vdm_q: best,
        floor,
    })
}

/// Atoms with positive mass and finite `Q`, with `log mass - 2kQ`
/// (`with_mass`) or `-2kQ`.
fn log_weights<T: Real>(nu: &DiscreteMeasure<T>, q: &Weight, k: usize, with_mass: bool) -> Result<(Vec<Point<T>>, Vec<T>)> {
    q.check_dim(nu.dim())?;
    let kk = T::from_count(2 * k);
    let mut atoms = Vec::new();
    let mut lw = Vec::new();
    for (a, &m) in nu.atoms().iter().zip(nu.masses()) {
        let v = q.eval(a);
        if m > T::zero() && v.is_finite() {
            atoms.push(a.clone());
            lw.push(if with_mass { m.ln() } else { T::zero() } - kk * v);
        }
    }
    if atoms.is_empty() {
        return Err(Error::AllMassAnnihilated);
    }
    Ok((atoms, lw))
}

/// `J_k(G)`; `g = None` means `G = M(K)`.
pub fn j_functional_k<T: Real>(
    g: Option<&NeighborhoodSpec<T>>,
    nu: &DiscreteMeasure<T>,
    q: &Weight,
    k: usize,
    samples: usize,
    seed: u64,
    mode: &JMode,
) -> Result<JEstimate> {
    if samples < 1 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let n_k = MonomialBasis::new(nu.dim(), k)?.size();
    let m = nu.masses().iter().filter(|&&x| x > T::zero()).count();
    let small = subsets(m, n_k) <= ENUMERATION_LIMIT;
    match mode {
        JMode::Enumerate => j_by_enumeration(g, nu, q, k),
        JMode::Auto if small => j_by_enumeration(g, nu, q, k),
        JMode::Auto | JMode::MonteCarlo => j_by_monte_carlo(g, nu, q, k, samples, seed),
        JMode::Tilted(qt) => j_by_tilting(g, nu, q, qt, k, samples, seed),
    }
}

fn j_by_enumeration<T: Real>(g: Option<&NeighborhoodSpec<T>>, nu: &DiscreteMeasure<T>, q: &Weight, k: usize) -> Result<JEstimate> {
    let e = enumerate(g, nu, q, k)?;
    Ok(JEstimate::new(k, e.n_k, "enumeration", e.log_integral, e.subsets, e.feasible, 0.0))
}

/// `(log mean, relative stderr)` of `exp(terms)` over `n` draws, where draws
/// missing from `terms` contribute zero.
fn log_mean(terms: &[f64], n: usize) -> (f64, f64) {
    if terms.is_empty() {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
    let nf = n as f64;
    let mean = a.iter().sum::<f64>() / nf;
    let sq = a.iter().map(|x| x * x).sum::<f64>() / nf;
    let var = (sq - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
    (max + mean.ln(), (var / nf).sqrt() / mean)
}

fn j_by_monte_carlo<T: Real>(
    g: Option<&NeighborhoodSpec<T>>,
    nu: &DiscreteMeasure<T>,
    q: &Weight,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<JEstimate> {
    let (atoms, lw) = log_weights(nu, q, k, false)?;
    let masses: Vec<f64> = {
        let mut v = Vec::new();
        for (a, &m) in nu.atoms().iter().zip(nu.masses()) {
            if m > T::zero() && q.eval(a).is_finite() {
                v.push(m.as_f64());
            }
        }
        v
    };
    let total: f64 = masses.iter().sum();
    let cdf: Vec<f64> = masses
        .iter()
        .scan(0.0, |s, &m| {
            *s += m / total;
            Some(*s)
        })
        .collect();
    let t = Tuples::new(atoms, k)?;
    let n_k = t.n_k;
    let tasks = rayon::current_num_threads().max(1);
    let terms: Vec<f64> = chunk_sizes(samples, tasks)
        .par_iter()
        .enumerate()
        .map(|(task, &cnt)| {
            let mut rng = substream(seed, task as u64);
            let mut out = Vec::new();
            for _ in 0..cnt {
                let sel: Vec<usize> = (0..n_k)
                    .map(|_| {
                        let u: f64 = rng.random();
                        cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
                    })
                    .collect();
                if g.is_some_and(|g| !g.contains_points(&t.points(&sel))) {
                    continue;
                }
                let lv = t.log_vdm(&sel).as_f64();
                if lv == f64::NEG_INFINITY {
                    continue;
                }
                out.push(2.0 * lv + sel.iter().map(|&i| lw[i].as_f64()).sum::<f64>());
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    // nu^{N_k} restricted to finite-Q atoms has total mass total^{N_k}.
    let (lm, rel) = log_mean(&terms, samples);
    let log_integral = lm + n_k as f64 * total.ln();
    Ok(JEstimate::new(k, n_k, "monte_carlo", log_integral, samples as u128, terms.len() as u128, rel))
}

fn j_by_tilting<T: Real>(
    g: Option<&NeighborhoodSpec<T>>,
    nu: &DiscreteMeasure<T>,
    q: &Weight,
    tilts: &[Weight],
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<JEstimate> {
    if tilts.is_empty() {
        return Err(Error::InvalidArgument("at least one tilt is required".into()));
    }
    let tasks = rayon::current_num_threads().max(1);
    let counts = chunk_sizes(samples, tilts.len());
    let mut log_z = Vec::new();
    let mut draws = Vec::new();
    for (t, qt) in tilts.iter().enumerate() {
        let z = partition_function(nu, qt, k)?;
        log_z.push(z.log_z);
        if counts[t] > 0 {
            let s = sample_dpp(nu, qt, k, counts[t], seed.wrapping_add(0x51_7cc1_b727 * t as u64), tasks)?;
            draws.extend(s.configurations);
        }
    }
    // Balance heuristic: f / sum_t (n_t/S) p_t, where p_t = |VDM^{Q_t}|^2 / Z_t.
    let kk = 2.0 * k as f64;
    let lw: Vec<f64> = counts.iter().zip(&log_z).map(|(&n, lz)| (n as f64 / samples as f64).ln() - lz).collect();
    let mut terms = Vec::new();
    for c in &draws {
        if g.is_some_and(|g| !g.contains_points(c.points())) {
            continue;
        }
        let qs: f64 = c.points().iter().map(|p| q.eval(p).as_f64()).sum();
        let mut acc = (f64::NEG_INFINITY, 0.0);
        for (qt, w) in tilts.iter().zip(&lw) {
            let qts: f64 = c.points().iter().map(|p| qt.eval(p).as_f64()).sum();
            lse_push(&mut acc, w + kk * (qs - qts));
        }
        let term = -lse_value(acc);
        if term.is_finite() {
            terms.push(term);
        }
    }
    let n_k = MonomialBasis::new(nu.dim(), k)?.size();
    let (lm, rel) = log_mean(&terms, samples);
    Ok(JEstimate::new(k, n_k, "tilted", lm, samples as u128, terms.len() as u128, rel))
}

/// Weight whose discrete equilibrium measure on the atoms of `nu` is
/// `target`: `Q' = -p_target` with the continuum kernel on the atom cells.
pub fn tilt_weight<T: Real>(target: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>) -> Result<Weight> {
    let u = tilt_values(target, nu)?;
    Ok(Weight::tabulated(nu.atoms(), &u))
}

/// Tilts toward `(1 - t) target + t anchor` for `t = j / (count - 1)`.
pub fn tilt_path<T: Real>(target: &DiscreteMeasure<T>, anchor: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>, count: usize) -> Result<Vec<Weight>> {
    let a = tilt_values(target, nu)?;
    let b = tilt_values(anchor, nu)?;
    Ok((0..count.max(1))
        .map(|j| {
            let t = if count > 1 { T::from_count(j) / T::from_count(count - 1) } else { T::zero() };
            let u: Vec<T> = a.iter().zip(&b).map(|(&x, &y)| (T::one() - t) * x + t * y).collect();
            Weight::tabulated(nu.atoms(), &u)
        })
        .collect())
}

fn tilt_values<T: Real>(target: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>) -> Result<Vec<T>> {
    if nu.dim() != 1 || target.dim() != 1 {
        return Err(Error::Dimension { expected: 1, found: nu.dim().max(target.dim()) });
    }
    let atoms = nu.atoms();
    let cells = voronoi_cells(atoms);
    let index: std::collections::HashMap<Vec<u64>, usize> = atoms.iter().enumerate().map(|(i, a)| (a.key(), i)).collect();
    let mut m = vec![T::zero(); atoms.len()];
    for (a, &w) in target.atoms().iter().zip(target.masses()) {
        let i = index.get(&a.key()).copied().unwrap_or_else(|| {
            (0..atoms.len())
                .min_by(|&x, &y| atoms[x].distance(a).partial_cmp(&atoms[y].distance(a)).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap_or(0)
        });
        m[i] += w;
    }
    let a = SymMatrix::from_fn(atoms.len(), |i, j| {
        if i == j {
            crate::energy::segment_self_energy(cells[i])
        } else {
            -(atoms[i].z() - atoms[j].z()).norm().ln()
        }
    });
    let p = a.apply(&m);
    Ok(p.iter().map(|&v| -v).collect())
}

/// `W_k(G) = sup |VDM^Q|^{1/(k N_k)}` over configurations of grid points with
/// empirical measure in `G`.
#[derive(Clone, Debug, Serialize)]
pub struct WEstimate {
    pub k: usize,
    pub n_k: usize,
    pub mode: String,
    /// `-inf` when no feasible configuration was found.
    pub log_vdm_q: f64,
    pub value: f64,
    pub feasible: bool,
    /// Smallest moment deviation reached (the feasibility floor).
    pub floor: f64,
    pub selection: Vec<Vec<f64>>,
}

/// Exact maximum by enumeration on small grids; otherwise a feasibility
/// search for a configuration in `G` followed by an exchange search that
/// never leaves `G` (a lower bound).
pub fn w_functional_k<T: Real>(
    g: Option<&NeighborhoodSpec<T>>,
    spec: &CompactSetSpec,
    q: &Weight,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<WEstimate> {
    if restarts < 1 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let candidates = spec.discretize::<T>()?;
    let n_k = MonomialBasis::new(spec.dim(), k)?.size();
    let finish = |mode: &str, lv: f64, floor: f64, sel: Vec<Vec<f64>>| WEstimate {
        k,
        n_k,
        mode: mode.to_string(),
        log_vdm_q: lv,
        value: if lv == f64::NEG_INFINITY { 0.0 } else { (lv / (k * n_k) as f64).exp() },
        feasible: lv > f64::NEG_INFINITY,
        floor,
        selection: sel,
    };
    let finite: Vec<Point<T>> = candidates.iter().filter(|c| q.eval(*c).is_finite()).cloned().collect();
    if subsets(finite.len(), n_k) <= ENUMERATION_LIMIT {
        let nu = DiscreteMeasure::uniform(finite)?;
        let e = enumerate(g, &nu, q, k)?;
        return Ok(finish("enumeration", e.best_log_vdm_q, e.floor, Vec::new()));
    }
    let p = ExchangeProblem::new(candidates, q, k)?;
    let mut best: (f64, f64, Vec<usize>) = (f64::NEG_INFINITY, f64::INFINITY, Vec::new());
    for r in 0..restarts {
        let start = if r == 0 {
            p.leja()?
        } else {
            match p.random_start(&mut substream(seed, r as u64)) {
                Ok(s) => s,
                Err(Error::Degenerate) => continue,
                Err(e) => return Err(e),
            }
        };
        let (sel, dev) = match g {
            None => (start, 0.0),
            Some(g) => feasibility_search(g, p.candidates(), start),
        };
        best.1 = best.1.min(dev);
        if g.is_some_and(|g| !(T::lit(dev) < g.epsilon())) {
            continue;
        }
        let run = match g {
            None => p.exchange(sel, 200, 1e-12)?,
            Some(g) => {
                let cands = p.candidates();
                p.exchange_constrained(sel, 200, 1e-12, |s, j, m| {
                    let mut pts: Vec<Point<T>> = s.iter().map(|&i| cands[i].clone()).collect();
                    pts[j] = cands[m].clone();
                    g.contains_points(&pts)
                })?
            }
        };
        let lv = run.objective.as_f64();
        if lv > best.0 {
            best = (lv, best.1, run.selection);
        }
    }
    let sel = best.2.iter().map(|&i| p.candidates()[i].to_flat()).collect();
    Ok(finish("exchange", best.0, best.1, sel))
}

/// Coordinate descent on the largest moment deviation over configurations
/// of distinct candidates; returns the local minimizer and its deviation.
pub fn feasibility_search<T: Real>(g: &NeighborhoodSpec<T>, candidates: &[Point<T>], start: Vec<usize>) -> (Vec<usize>, f64) {
    let n = start.len();
    let idx = g.indices();
    let phi: Vec<Vec<f64>> = candidates
        .iter()
        .map(|c| empirical_moments(std::slice::from_ref(c), idx).iter().map(|v| v.as_f64()).collect())
        .collect();
    let target: Vec<f64> = g.center_moments().iter().map(|v| v.as_f64()).collect();
    let nf = n as f64;
    let dev = |s: &[f64]| s.iter().zip(&target).map(|(a, b)| (a / nf - b).abs()).fold(0.0, f64::max);
    let mut sel = start;
    let mut used = vec![false; candidates.len()];
    sel.iter().for_each(|&i| used[i] = true);
    let mut sum: Vec<f64> = (0..target.len()).map(|l| sel.iter().map(|&i| phi[i][l]).sum()).collect();
    let mut cur = dev(&sum);
    loop {
        let mut improved = false;
        for j in 0..n {
            let out = sel[j];
            let mut best = (cur, None);
            for t in 0..candidates.len() {
                if used[t] {
                    continue;
                }
                let trial: Vec<f64> = (0..sum.len()).map(|l| sum[l] - phi[out][l] + phi[t][l]).collect();
                let d = dev(&trial);
                if d < best.0 * (1.0 - 1e-12) {
                    best = (d, Some(t));
                }
            }
            if let Some(t) = best.1 {
                for l in 0..sum.len() {
                    sum[l] += phi[t][l] - phi[out][l];
                }
                used[out] = false;
                used[t] = true;
                sel[j] = t;
                cur = best.0;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    (sel, cur)
}

/// Rate estimates at one degree for the radius `eps` and `eps / 2`.
#[derive(Clone, Debug, Serialize)]
pub struct RateRow {
    pub k: usize,
    pub n_k: usize,
    pub log_z: f64,
    pub eps: f64,
    /// `-(1/2kN_k) log sigma_k(G_eps)`; `+inf` when no tuple landed in `G`.
    pub rate: f64,
    pub stderr: f64,
    pub rate_half: f64,
    pub stderr_half: f64,
    /// Feasibility floor of the moment box (best deviation of any configuration found).
    pub floor: f64,
    pub feasible: bool,
    pub feasible_half: bool,
    pub mode: String,
    pub hits: u128,
    pub hits_half: u128,
}

/// Empirical rate of the target against the predicted rate function value.
#[derive(Clone, Debug, Serialize)]
pub struct RateEstimate {
    pub target_id: String,
    pub moment_degree: usize,
    pub eps: f64,
    pub rows: Vec<RateRow>,
    /// `1/2 [I^Q(target) - I^Q(mu_eq)]`.
    pub prediction: f64,
    /// Largest `k` with both radii feasible and hit.
    pub k_star: Option<usize>,
    /// `(min, max)` of the two estimates at `k_star`.
    pub bracket: Option<(f64, f64)>,
    pub midpoint: Option<f64>,
    /// `(2 sqrt(r_{eps/2}) - sqrt(r_eps))^2` at `k_star`: removes the finite-`eps`
    /// bias when the rate grows quadratically with the distance from the box
    /// to the target, as it does near a smooth minimizer. A diagnostic only.
    pub eps_extrapolated: Option<f64>,
}

impl RateEstimate {
    /// CSV columns `k, N_k, eps, rate, stderr, rate_half, stderr_half, floor, prediction`.
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["k", "N_k", "eps", "rate", "stderr", "rate_half", "stderr_half", "floor", "prediction"]);
        for r in &self.rows {
            t.push(vec![
                r.k.into(),
                r.n_k.into(),
                r.eps.into(),
                r.rate.into(),
                r.stderr.into(),
                r.rate_half.into(),
                r.stderr_half.into(),
                r.floor.into(),
                self.prediction.into(),
            ]);
        }
        t
    }
}

/// Knobs of the rate harness.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateOptions {
    pub ks: Vec<usize>,
    pub eps: f64,
    #[serde(default = "default_degree")]
    pub moment_degree: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Draw from the ensemble tilted toward the target (importance sampling)
    /// instead of plain Monte Carlo when the support is too large to enumerate.
    #[serde(default = "yes")]
    pub tilted: bool,
    /// Mixture components on the path from the target to the equilibrium measure.
    #[serde(default = "default_tilts")]
    pub tilts: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_degree() -> usize {
    2
}
fn default_samples() -> usize {
    20_000
}
fn yes() -> bool {
    true
}
fn default_tilts() -> usize {
    4
}
fn default_restarts() -> usize {
    3
}

fn rate_of(j: &JEstimate, log_z: f64) -> (f64, f64) {
    let speed = 2.0 * (j.k * j.n_k) as f64;
    if j.zero_flag {
        return (f64::INFINITY, f64::NAN);
    }
    (-(j.log_integral - log_z) / speed, j.rel_stderr / speed)
}

/// Rate estimates for `target` over `opts.ks`, each at `eps` and `eps/2`.
pub fn rate_estimate<T: Real>(
    target: &DiscreteMeasure<T>,
    spec: &CompactSetSpec,
    nu: &DiscreteMeasure<T>,
    q: &Weight,
    opts: &RateOptions,
    eq: Option<&EquilibriumResult<T>>,
) -> Result<RateEstimate> {
    if let Some(a) = target.atoms().iter().zip(target.masses()).find(|(a, &m)| m > T::zero() && !spec.contains(*a, 1e-9)) {
        return Err(Error::Measure(format!("target atom {:?} lies outside K", a.0.to_flat())));
    }
    let owned;
    let eq = match eq {
        Some(e) => e,
        None => {
            owned = equilibrium_measure::<T>(spec, q, &EquilibriumOptions::default())?;
            &owned
        }
    };
    let prediction = rate_function(target, eq, q)?.as_f64();
    let g = NeighborhoodSpec::new(target.clone(), opts.moment_degree, T::lit(opts.eps))?;
    let gh = g.with_epsilon(T::lit(opts.eps / 2.0))?;
    let mode = if opts.tilted { JMode::Tilted(tilt_path(target, &eq.mu_eq, nu, opts.tilts)?) } else { JMode::MonteCarlo };
    let mut rows = Vec::new();
    for &k in &opts.ks {
        let z = partition_function(nu, q, k)?;
        let m = nu.masses().iter().filter(|&&x| x > T::zero()).count();
        let small = subsets(m, z.n_k) <= ENUMERATION_LIMIT;
        let mode_k = if small { JMode::Enumerate } else { mode.clone() };
        let w = w_functional_k(Some(&gh), spec, q, k, opts.restarts, opts.seed)?;
        let floor = w.floor;
        let j = j_functional_k(Some(&g), nu, q, k, opts.samples, opts.seed, &mode_k)?;
        let jh = j_functional_k(Some(&gh), nu, q, k, opts.samples, opts.seed ^ 0x9e37_79b9, &mode_k)?;
        let (rate, stderr) = rate_of(&j, z.log_z);
        let (rate_half, stderr_half) = rate_of(&jh, z.log_z);
        rows.push(RateRow {
            k,
            n_k: z.n_k,
            log_z: z.log_z,
            eps: opts.eps,
            rate,
            stderr,
            rate_half,
            stderr_half,
            floor,
            feasible: floor < opts.eps,
            feasible_half: floor < opts.eps / 2.0,
            mode: j.mode.clone(),
            hits: j.hits,
            hits_half: jh.hits,
        });
    }
    let star = rows.iter().rev().find(|r| r.rate.is_finite() && r.rate_half.is_finite());
    let bracket = star.map(|r| (r.rate.min(r.rate_half), r.rate.max(r.rate_half)));
    Ok(RateEstimate {
        target_id: target.id(),
        moment_degree: opts.moment_degree,
        eps: opts.eps,
        k_star: star.map(|r| r.k),
        midpoint: bracket.map(|(a, b)| 0.5 * (a + b)),
        eps_extrapolated: star.and_then(|r| {
            let (a, b) = (r.rate.max(0.0).sqrt(), r.rate_half.max(0.0).sqrt());
            (2.0 * b >= a).then(|| (2.0 * b - a).powi(2))
        }),
        bracket,
        rows,
        prediction,
    })
}

/// Targets understood by [`ldp_report`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// The computed equilibrium measure: the rate should vanish.
    Equilibrium,
    /// Uniform density on the grid cells of `K`.
    Uniform,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpConfig {
    pub rate: RateOptions,
    pub targets: Vec<TargetKind>,
    /// Absolute tolerance for the equilibrium target.
    #[serde(default = "default_eq_tol")]
    pub equilibrium_tolerance: f64,
    /// Relative tolerance of the bracket midpoint for other targets.
    #[serde(default = "default_rel_tol")]
    pub relative_tolerance: f64,
}

fn default_eq_tol() -> f64 {
    0.02
}
fn default_rel_tol() -> f64 {
    0.35
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub k: Option<usize>,
    pub value: f64,
    pub prediction: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LdpReport {
    pub config_hash: String,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub estimates: Vec<(TargetKind, RateEstimate)>,
}

impl LdpReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Equilibrium and rate checks for each configured target.
pub fn ldp_report<T: Real>(spec: &CompactSetSpec, nu: &DiscreteMeasure<T>, q: &Weight, config: &LdpConfig) -> Result<LdpReport> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).unwrap_or_default());
    h.update(q.source().as_bytes());
    h.update(nu.id().as_bytes());
    h.update(serde_json::to_vec(config).unwrap_or_default());
    let config_hash = hex::encode(&h.finalize()[..8]);
    let mut checks = Vec::new();
    let mut estimates = Vec::new();
    if config.rate.ks.is_empty() {
        return Ok(LdpReport { config_hash, checks, estimates });
    }
    let eq = equilibrium_measure::<T>(spec, q, &EquilibriumOptions::default())?;
    checks.push(Check {
        name: "equilibrium_kkt".into(),
        k: None,
        value: eq.kkt_residual.as_f64(),
        prediction: 0.0,
        tolerance: 1e-6,
        pass: eq.kkt_residual.as_f64() < 1e-6,
    });
    for kind in &config.targets {
        let target = match kind {
            TargetKind::Equilibrium => eq.mu_eq.clone(),
            TargetKind::Uniform => grid_measure(eq.mu_eq.atoms(), &eq.cells, |_| 1.0)?,
        };
        let est = rate_estimate(&target, spec, nu, q, &config.rate, Some(&eq))?;
        let name = match kind {
            TargetKind::Equilibrium => "rate_equilibrium",
            TargetKind::Uniform => "rate_uniform",
        };
        let value = est.midpoint.unwrap_or(f64::INFINITY);
        let (tolerance, pass) = match kind {
            TargetKind::Equilibrium => (config.equilibrium_tolerance, value.abs() < config.equilibrium_tolerance),
            TargetKind::Uniform => {
                (config.relative_tolerance, (value - est.prediction).abs() <= config.relative_tolerance * est.prediction)
            }
        };
        checks.push(Check { name: format!("{name}_prediction_nonnegative"), k: None, value: est.prediction, prediction: 0.0, tolerance: 1e-9, pass: est.prediction >= -1e-9 });
        checks.push(Check { name: name.into(), k: est.k_star, value, prediction: est.prediction, tolerance, pass });
        estimates.push((kind.clone(), est));
    }
    Ok(LdpReport { config_hash, checks, estimates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::grid_measure;

    fn small_line() -> (CompactSetSpec, DiscreteMeasure<f64>) {
        let spec = CompactSetSpec::interval_with_points(-1.0, 1.0, 9);
        let nu = DiscreteMeasure::uniform(spec.discretize().unwrap()).unwrap();
        (spec, nu)
    }

    #[test]
    fn subset_counts() {
        assert_eq!(subsets(5, 2), 10);
        assert_eq!(subsets(3, 5), 0);
        assert_eq!(subsets(25, 5), 53_130);
        assert_eq!(subsets(1000, 500), u128::MAX);
    }

    #[test]
    fn whole_space_gives_the_partition_function() {
        let (_, nu) = small_line();
        let q = crate::weight::parse_weight("x^2").unwrap();
        let j = j_functional_k(None, &nu, &q, 2, 1, 0, &JMode::Enumerate).unwrap();
        let z = partition_function(&nu, &q, 2).unwrap();
        assert!((j.value - z.normalized).abs() < 1e-12 * z.normalized);
    }

    #[test]
    fn empty_neighborhood_is_flagged() {
        let (_, nu) = small_line();
        let g = NeighborhoodSpec::new(DiscreteMeasure::dirac(Point::real(0.05)), 1, 1e-6).unwrap();
        let j = j_functional_k(Some(&g), &nu, &Weight::zero(), 2, 1, 0, &JMode::Enumerate).unwrap();
        assert!(j.zero_flag && j.value == 0.0);
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration_on_everything() {
        let (_, nu) = small_line();
        let e = j_functional_k(None, &nu, &Weight::zero(), 1, 1, 0, &JMode::Enumerate).unwrap();
        let mc = j_functional_k(None, &nu, &Weight::zero(), 1, 40_000, 3, &JMode::MonteCarlo).unwrap();
        let rel = (mc.log_integral - e.log_integral).exp() - 1.0;
        assert!(rel.abs() < 4.0 * mc.rel_stderr + 1e-3, "{rel} {}", mc.rel_stderr);
    }

    #[test]
    fn tilting_is_unbiased() {
        let (_, nu) = small_line();
        let qt = crate::weight::parse_weight("x^2").unwrap();
        let e = j_functional_k(None, &nu, &Weight::zero(), 2, 1, 0, &JMode::Enumerate).unwrap();
        let t = j_functional_k(None, &nu, &Weight::zero(), 2, 20_000, 1, &JMode::Tilted(vec![qt, Weight::zero()])).unwrap();
        let rel = (t.log_integral - e.log_integral).exp() - 1.0;
        assert!(rel.abs() < 4.0 * t.rel_stderr + 1e-3, "{rel} {}", t.rel_stderr);
    }

    #[test]
    fn sandwich_and_nesting_on_a_small_grid() {
        let (spec, nu) = small_line();
        let (pts, cells) = spec.discretize_with_cells::<f64>().unwrap();
        let target = grid_measure(&pts, &cells.unwrap(), |_| 1.0).unwrap();
        let mut prev = (0.0, 0.0);
        for eps in [0.05, 0.1, 0.2, 0.4] {
            let g = NeighborhoodSpec::new(target.clone(), 2, eps).unwrap();
            let j = j_functional_k(Some(&g), &nu, &Weight::zero(), 2, 1, 0, &JMode::Enumerate).unwrap();
            let w = w_functional_k(Some(&g), &spec, &Weight::zero(), 2, 1, 0).unwrap();
            assert!(j.value <= w.value * (1.0 + 1e-9));
            assert!(j.value >= prev.0 && w.value >= prev.1);
            prev = (j.value, w.value);
        }
    }

    #[test]
    fn feasibility_search_reaches_a_box() {
        let spec = CompactSetSpec::interval(-1.0, 1.0, 100);
        let pts = spec.discretize::<f64>().unwrap();
        let target = DiscreteMeasure::uniform(pts.clone()).unwrap();
        let g = NeighborhoodSpec::new(target, 2, 0.01).unwrap();
        let (sel, dev) = feasibility_search(&g, &pts, (0..6).collect());
        assert!(dev < 0.01, "{dev}");
        let chosen: Vec<Point<f64>> = sel.iter().map(|&i| pts[i].clone()).collect();
        assert!(g.contains_points(&chosen));
    }
}
