//! Weighted Fekete configurations by discrete Leja initialization and
//! single-point exchange, weighted k-th order diameters and their
//! extrapolated limits.

use num_traits::Zero;
use rand::seq::index::sample;

use crate::energy::{equilibrium_measure, EquilibriumOptions};
use crate::error::{Error, Result};
use crate::geometry::{CompactSetSpec, Point};
use crate::io::Table;
use crate::linalg::{log_abs_det_scaled, Field, Lu, Mat};
use crate::measure::{weak_star_distance, DiscreteMeasure, DEFAULT_MOMENT_DEGREE};
use crate::polynomials::{Configuration, EvalBasis, MonomialBasis};
use crate::rng::substream;
use crate::scalar::{Cplx, Real};
use crate::weight::Weight;

/// Knobs of the Fekete search.
#[derive(Clone, Debug, PartialEq)]
pub struct FeketeOptions {
    pub max_sweeps: usize,
    /// Random restarts after the Leja start; the best run is kept.
    pub restarts: usize,
    pub seed: u64,
    /// An exchange must raise `log|VDM^Q|` by more than this.
    pub tol: f64,
}

impl Default for FeketeOptions {
    fn default() -> Self {
        FeketeOptions { max_sweeps: 200, restarts: 3, seed: 0, tol: 1e-12 }
    }
}

/// Candidate grid, weights and basis matrix shared by every exchange run.
#[derive(Clone, Debug)]
pub struct ExchangeProblem<T> {
    n: usize,
    k: usize,
    candidates: Vec<Point<T>>,
    basis: EvalBasis<T>,
    /// `N_k x M`: basis evaluated at every candidate.
    c: Mat<Cplx<T>>,
    /// `-k Q` at each candidate (`-inf` where `Q = +inf`).
    lw: Vec<T>,
    /// `exp(lw - max lw)`.
    ew: Vec<T>,
    weight_hash: String,
}

/// Outcome of one exchange run.
#[derive(Clone, Debug)]
pub struct ExchangeRun<T> {
    pub selection: Vec<usize>,
    pub objective: T,
    /// `log|VDM^Q|` after the start and after each sweep.
    pub history: Vec<T>,
    pub exchanges: usize,
    pub sweeps: usize,
    pub converged: bool,
    /// `max |l_j(z) e^{-kQ(z)}| / e^{-kQ(x_j)}` over the grid: weighted Lagrange
    /// functions of the final configuration.
    pub lebesgue: T,
}

impl<T: Real> ExchangeProblem<T> {
    pub fn new(candidates: Vec<Point<T>>, q: &Weight, k: usize) -> Result<Self> {
        let n = candidates.first().map(|p| p.dim()).ok_or(Error::TooFewCandidates { needed: 1, found: 0 })?;
        let mb = MonomialBasis::new(n, k)?;
        if candidates.len() < mb.size() {
            return Err(Error::TooFewCandidates { needed: mb.size(), found: candidates.len() });
        }
        let qv = q.values_on(&candidates)?;
        let kk = T::from_count(k);
        let lw: Vec<T> = qv.iter().map(|&v| if v == T::infinity() { T::neg_infinity() } else { -kk * v }).collect();
        let max = lw.iter().copied().fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            return Err(Error::InadmissibleWeight);
        }
        let ew = lw.iter().map(|&l| (l - max).exp()).collect();
        let basis = EvalBasis::for_points(&mb, &candidates);
        let c = basis.matrix(&candidates);
        Ok(ExchangeProblem { n, k, candidates, basis, c, lw, ew, weight_hash: q.hash().to_string() })
    }

    pub fn from_spec(spec: &CompactSetSpec, q: &Weight, k: usize) -> Result<Self> {
        Self::new(spec.discretize()?, q, k)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `N_k`.
    pub fn size(&self) -> usize {
        self.c.rows()
    }

    pub fn candidates(&self) -> &[Point<T>] {
        &self.candidates
    }

    /// `-k Q` at each candidate.
    pub fn log_weights(&self) -> &[T] {
        &self.lw
    }

    fn columns(&self, sel: &[usize]) -> Mat<Cplx<T>> {
        let nb = self.size();
        Mat::from_fn(nb, nb, |i, j| self.c[(i, sel[j])])
    }

    /// `log|VDM_k^Q|` of the selected candidates.
    pub fn objective(&self, sel: &[usize]) -> T {
        let wsum = sel.iter().map(|&s| self.lw[s]).fold(T::zero(), |a, b| a + b);
        if wsum == T::neg_infinity() {
            return wsum;
        }
        let ld = log_abs_det_scaled(self.columns(sel), T::singular_threshold());
        if ld == T::neg_infinity() {
            return ld;
        }
        ld + self.basis.log_det_correction() + wsum
    }

    /// `B^{-1} C` for the selected columns `B`.
    fn lagrange(&self, sel: &[usize]) -> Result<Mat<Cplx<T>>> {
        if self.objective(sel) == T::neg_infinity() {
            return Err(Error::Degenerate);
        }
        let inv = Lu::factor(self.columns(sel)).inverse();
        Ok(inv.matmul(&self.c))
    }

    /// Discrete Leja points: Gaussian elimination with weighted column
    /// pivoting on the candidate matrix, ties to the lowest index.
    pub fn leja(&self) -> Result<Vec<usize>> {
        let nb = self.size();
        let m = self.candidates.len();
        let mut r = self.c.clone();
        let mut used = vec![false; m];
        let mut sel = Vec::with_capacity(nb);
        for i in 0..nb {
            let mut best = T::zero();
            let mut arg = None;
            for j in 0..m {
                if used[j] {
                    continue;
                }
                let s = r[(i, j)].modulus() * self.ew[j];
                if s > best {
                    best = s;
                    arg = Some(j);
                }
            }
            let p = arg.ok_or(Error::Degenerate)?;
            used[p] = true;
            sel.push(p);
            let piv = r[(i, p)];
            for j in 0..m {
                if used[j] {
                    continue;
                }
                let f = r[(i, j)] / piv;
                if f == Cplx::zero() {
                    continue;
                }
                for t in i + 1..nb {
                    let v = r[(t, p)];
                    r[(t, j)] -= f * v;
                }
            }
        }
        Ok(sel)
    }

    /// A uniformly random nondegenerate start drawn from finite-weight candidates.
    pub fn random_start(&self, rng: &mut crate::rng::Rng) -> Result<Vec<usize>> {
        let admissible: Vec<usize> = (0..self.candidates.len()).filter(|&i| self.lw[i].is_finite()).collect();
        let nb = self.size();
        if admissible.len() < nb {
            return Err(Error::TooFewCandidates { needed: nb, found: admissible.len() });
        }
        for _ in 0..50 {
            let sel: Vec<usize> = sample(rng, admissible.len(), nb).into_iter().map(|i| admissible[i]).collect();
            if self.objective(&sel).is_finite() {
                return Ok(sel);
            }
        }
        Err(Error::Degenerate)
    }

    /// Single-point exchange from `start`.
    pub fn exchange(&self, start: Vec<usize>, max_sweeps: usize, tol: f64) -> Result<ExchangeRun<T>> {
        self.exchange_constrained(start, max_sweeps, tol, |_, _, _| true)
    }

    /// Exchange restricted to swaps accepted by `feasible(selection, j, m)`
    /// (replace position `j` by candidate `m`).
    pub fn exchange_constrained(
        &self,
        start: Vec<usize>,
        max_sweeps: usize,
        tol: f64,
        mut feasible: impl FnMut(&[usize], usize, usize) -> bool,
    ) -> Result<ExchangeRun<T>> {
        let nb = self.size();
        if start.len() != nb {
            return Err(Error::Dimension { expected: nb, found: start.len() });
        }
        let m = self.candidates.len();
        let mut sel = start;
        let mut a = self.lagrange(&sel)?;
        let mut obj = self.objective(&sel);
        let mut history = vec![obj];
        let factor = T::one() + T::lit(tol);
        let (mut exchanges, mut sweeps, mut converged) = (0, 0, false);
        let mut in_sel = vec![false; m];
        sel.iter().for_each(|&s| in_sel[s] = true);
        while sweeps < max_sweeps {
            sweeps += 1;
            let mut changed = false;
            for j in 0..nb {
                let threshold = self.ew[sel[j]] * factor;
                let mut scored: Vec<(T, usize)> = Vec::new();
                let mut best = (threshold, None);
                for t in 0..m {
                    let s = a[(j, t)].modulus() * self.ew[t];
                    if s > threshold && !in_sel[t] {
                        scored.push((s, t));
                        if s > best.0 {
                            best = (s, Some(t));
                        }
                    }
                }
                let choice = match best.1 {
                    None => None,
                    Some(t) if feasible(&sel, j, t) => Some(t),
                    Some(_) => {
                        scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal).then(x.1.cmp(&y.1)));
                        scored.iter().skip(1).map(|&(_, t)| t).find(|&t| feasible(&sel, j, t))
                    }
                };
                if let Some(t) = choice {
                    let piv = a[(j, t)];
                    for col in 0..m {
                        let v = a[(j, col)] / piv;
                        a[(j, col)] = v;
                    }
                    for i in 0..nb {
                        if i == j {
                            continue;
                        }
                        let f = a[(i, t)];
                        if f == Cplx::zero() {
                            continue;
                        }
                        for col in 0..m {
                            let v = a[(j, col)];
                            a[(i, col)] -= f * v;
                        }
                    }
                    in_sel[sel[j]] = false;
                    in_sel[t] = true;
                    sel[j] = t;
                    exchanges += 1;
                    changed = true;
                }
            }
            a = self.lagrange(&sel)?;
            let next = self.objective(&sel);
            let slack = T::lit(1e-9) * (T::one() + obj.abs());
            assert!(next >= obj - slack, "exchange objective decreased: {obj} -> {next}");
            obj = next;
            history.push(obj);
            if !changed {
                converged = true;
                break;
            }
        }
        let mut lebesgue = T::zero();
        for (j, &s) in sel.iter().enumerate() {
            let base = self.ew[s];
            if base == T::zero() {
                continue;
            }
            for t in 0..m {
                lebesgue = lebesgue.max(a[(j, t)].modulus() * self.ew[t] / base);
            }
        }
        Ok(ExchangeRun { selection: sel, objective: obj, history, exchanges, sweeps, converged, lebesgue })
    }

    /// Leja start plus seeded random restarts; the best run wins.
    pub fn optimize(&self, opts: &FeketeOptions) -> Result<ExchangeRun<T>> {
        let mut best = self.exchange(self.leja()?, opts.max_sweeps, opts.tol)?;
        for r in 0..opts.restarts {
            let mut rng = substream(opts.seed, r as u64);
            let start = match self.random_start(&mut rng) {
                Ok(s) => s,
                Err(Error::Degenerate) => continue,
                Err(e) => return Err(e),
            };
            let run = self.exchange(start, opts.max_sweeps, opts.tol)?;
            if run.objective > best.objective {
                best = run;
            }
        }
        Ok(best)
    }

    pub fn report(&self, run: &ExchangeRun<T>) -> Result<FeketeReport<T>> {
        let points: Vec<Point<T>> = run.selection.iter().map(|&i| self.candidates[i].clone()).collect();
        let mut config = Configuration::new(points, self.k)?;
        config.set_cache(&self.weight_hash, run.objective);
        Ok(FeketeReport::new(self.n, self.k, config, run))
    }
}

/// Result of a Fekete search at one degree.
#[derive(Clone, Debug)]
pub struct FeketeReport<T> {
    pub k: usize,
    pub n: usize,
    pub n_k: usize,
    pub config: Configuration<T>,
    pub log_vdm_q: T,
    /// `exp(log|VDM^Q| (n+1) / (n k N_k))`; `NaN` at `k = 0`.
    pub delta_qk: T,
    /// `delta_qk^{n/(n+1)}`.
    pub normalized: T,
    pub iterations: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub objective_history: Vec<T>,
    pub lebesgue: T,
}

impl<T: Real> FeketeReport<T> {
    fn new(n: usize, k: usize, config: Configuration<T>, run: &ExchangeRun<T>) -> Self {
        let n_k = config.len();
        let (delta_qk, normalized) = diameters(run.objective, n, k, n_k);
        FeketeReport {
            k,
            n,
            n_k,
            config,
            log_vdm_q: run.objective,
            delta_qk,
            normalized,
            iterations: run.exchanges,
            sweeps: run.sweeps,
            converged: run.converged,
            objective_history: run.history.clone(),
            lebesgue: run.lebesgue,
        }
    }
}

/// `(delta^{Q,k}, normalized)` from `log|VDM^Q|`.
pub fn diameters<T: Real>(log_vdm_q: T, n: usize, k: usize, n_k: usize) -> (T, T) {
    if k == 0 {
        return (T::nan(), T::nan());
    }
    let nf = T::from_count(n);
    let e = T::from_count(n + 1) / (nf * T::from_count(k) * T::from_count(n_k));
    let delta = (log_vdm_q * e).exp();
    (delta, (log_vdm_q / (T::from_count(k) * T::from_count(n_k))).exp())
}

/// Greedy weighted Leja configuration of `N_k` candidates.
pub fn leja_sequence<T: Real>(spec: &CompactSetSpec, q: &Weight, k: usize) -> Result<Configuration<T>> {
    let p = ExchangeProblem::<T>::from_spec(spec, q, k)?;
    let sel = p.leja()?;
    Configuration::new(sel.iter().map(|&i| p.candidates[i].clone()).collect(), k)
}

/// Exchange search from a given configuration whose points lie on the grid.
pub fn fekete_exchange<T: Real>(
    start: &Configuration<T>,
    spec: &CompactSetSpec,
    q: &Weight,
    max_sweeps: usize,
) -> Result<FeketeReport<T>> {
    let p = ExchangeProblem::<T>::from_spec(spec, q, start.k())?;
    let index: std::collections::HashMap<Vec<u64>, usize> =
        p.candidates.iter().enumerate().map(|(i, c)| (c.key(), i)).collect();
    let sel = start
        .points()
        .iter()
        .map(|pt| index.get(&pt.key()).copied().ok_or_else(|| Error::InvalidArgument("start point is not a candidate".into())))
        .collect::<Result<Vec<_>>>()?;
    let run = p.exchange(sel, max_sweeps, FeketeOptions::default().tol)?;
    p.report(&run)
}

/// Best Fekete report at degree `k` (Leja start plus restarts).
pub fn fekete_points<T: Real>(spec: &CompactSetSpec, q: &Weight, k: usize, opts: &FeketeOptions) -> Result<FeketeReport<T>> {
    let p = ExchangeProblem::<T>::from_spec(spec, q, k)?;
    let run = p.optimize(opts)?;
    p.report(&run)
}

/// Reports for `k = 1..=k_max` with extrapolated limits of the normalized
/// sequence.
#[derive(Clone, Debug)]
pub struct TransfiniteReport<T> {
    pub reports: Vec<FeketeReport<T>>,
    /// Richardson extrapolation in `1/k` through the last three values.
    pub richardson: T,
    /// Fit of `log value = a + b log(k)/k + c/k` through the last three
    /// values; returns `exp(a)`.
    pub log_fit: T,
    /// Whether the normalized values decrease monotonically.
    pub monotone: bool,
}

impl<T: Real> TransfiniteReport<T> {
    /// CSV columns `k, N_k, log_vdm_q, delta_qk, normalized, iterations`.
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["k", "N_k", "log_vdm_q", "delta_qk", "normalized", "iterations"]);
        for r in &self.reports {
            t.push(vec![
                r.k.into(),
                r.n_k.into(),
                r.log_vdm_q.as_f64().into(),
                r.delta_qk.as_f64().into(),
                r.normalized.as_f64().into(),
                r.iterations.into(),
            ]);
        }
        t
    }
}

pub fn transfinite_diameter<T: Real>(
    spec: &CompactSetSpec,
    q: &Weight,
    k_max: usize,
    opts: &FeketeOptions,
) -> Result<TransfiniteReport<T>> {
    if k_max < 2 {
        return Err(Error::InvalidArgument("k_max must be at least 2".into()));
    }
    let ks: Vec<usize> = (1..=k_max).collect();
    transfinite_diameter_at(spec, q, &ks, opts)
}

/// As [`transfinite_diameter`] on an explicit increasing list of degrees.
pub fn transfinite_diameter_at<T: Real>(
    spec: &CompactSetSpec,
    q: &Weight,
    ks: &[usize],
    opts: &FeketeOptions,
) -> Result<TransfiniteReport<T>> {
    use rayon::prelude::*;
    if ks.len() < 2 || ks.windows(2).any(|w| w[0] >= w[1]) || ks[0] == 0 {
        return Err(Error::InvalidArgument("need at least two increasing positive degrees".into()));
    }
    let reports = ks.par_iter().map(|&k| fekete_points::<T>(spec, q, k, opts)).collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = reports.iter().map(|r| (r.k as f64, r.normalized.as_f64())).collect();
    let monotone = pts.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12));
    Ok(TransfiniteReport {
        richardson: T::lit(richardson(&pts)),
        log_fit: T::lit(log_fit(&pts)),
        monotone,
        reports,
    })
}

/// Polynomial extrapolation in `h = 1/k` to `h = 0` through the last (up to)
/// three points.
pub fn richardson(pts: &[(f64, f64)]) -> f64 {
    let tail = &pts[pts.len().saturating_sub(3)..];
    let mut acc = 0.0;
    for (i, &(ki, vi)) in tail.iter().enumerate() {
        let hi = 1.0 / ki;
        let mut l = 1.0;
        for (j, &(kj, _)) in tail.iter().enumerate() {
            if i != j {
                let hj = 1.0 / kj;
                l *= -hj / (hi - hj);
            }
        }
        acc += l * vi;
    }
    acc
}

/// `exp(a)` for `log v = a + b log(k)/k + c/k` through the last three points
/// (the `c` term is dropped with only two).
pub fn log_fit(pts: &[(f64, f64)]) -> f64 {
    let tail = &pts[pts.len().saturating_sub(3)..];
    let rows: Vec<Vec<f64>> = tail
        .iter()
        .map(|&(k, _)| {
            let mut r = vec![1.0, k.ln() / k];
            if tail.len() == 3 {
                r.push(1.0 / k);
            }
            r
        })
        .collect();
    let d = rows.len();
    let a = Mat::from_fn(d, d, |i, j| rows[i][j]);
    let rhs: Vec<f64> = tail.iter().map(|&(_, v)| v.ln()).collect();
    Lu::factor(a).solve(&rhs)[0].exp()
}

/// Weak-* distances of Fekete empirical measures to the equilibrium measure.
#[derive(Clone, Debug)]
pub struct EmpiricalConvergence<T> {
    pub ks: Vec<usize>,
    pub distances: Vec<T>,
    /// Last distance below the first.
    pub decreasing: bool,
}

/// Empirical measures of Fekete configurations against `reference`, or the
/// computed equilibrium measure when `reference` is `None` (one variable only).
pub fn fekete_empirical_convergence<T: Real>(
    spec: &CompactSetSpec,
    q: &Weight,
    ks: &[usize],
    reference: Option<&DiscreteMeasure<T>>,
    opts: &FeketeOptions,
) -> Result<EmpiricalConvergence<T>> {
    let owned;
    let reference = match reference {
        Some(r) => r,
        None => {
            if spec.dim() != 1 {
                return Err(Error::MissingReference("equilibrium measures are only computed in one variable".into()));
            }
            owned = equilibrium_measure::<T>(spec, q, &EquilibriumOptions::default())?.mu_eq;
            &owned
        }
    };
    let mut distances = Vec::with_capacity(ks.len());
    for &k in ks {
        let r = fekete_points::<T>(spec, q, k, opts)?;
        let emp = DiscreteMeasure::empirical(r.config.points())?;
        distances.push(weak_star_distance(&emp, reference, DEFAULT_MOMENT_DEGREE)?);
    }
    let decreasing = ks.len() >= 2 && distances.last() < distances.first();
    Ok(EmpiricalConvergence { ks: ks.to_vec(), distances, decreasing })
}
