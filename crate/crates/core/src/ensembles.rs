//! The determinantal ensembles `Prob_k` on `K^{N_k}`:
//! `dProb_k = |VDM_k^Q|^2 dnu^{N_k} / Z_k` for a discrete `nu`.
//!
//! `Z_k = N_k! det G` with `G` the weighted Gram matrix of the monomials, and
//! `Prob_k` (on unordered configurations) is the projection DPP whose kernel
//! is spanned by the weighted orthonormal polynomials.

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::fekete::ExchangeProblem;
use crate::geometry::Point;
use crate::io::{json_lines, Table};
use crate::linalg::{qr_r_diagonal, Lu, Mat};
use crate::measure::DiscreteMeasure;
use crate::polynomials::{log_abs_vdm_weighted, Configuration, EvalBasis, MonomialBasis, OrthonormalSystem};
use crate::rng::{chunk_sizes, substream, Rng};
use crate::scalar::{ln_factorial, Cplx, Real};
use crate::weight::Weight;

/// `Z_k` in the log domain.
#[derive(Clone, Debug, Serialize)]
pub struct PartitionFunction {
    pub k: usize,
    pub n_k: usize,
    /// `-inf` when the Gram matrix is singular.
    pub log_z: f64,
    /// `Z_k^{1/(2 k N_k)}`.
    pub normalized: f64,
}

/// Atoms of `nu` with `mass > 0` and finite `Q`, paired with
/// `log mass - 2k Q`.
fn weighted_support<T: Real>(nu: &DiscreteMeasure<T>, q: &Weight, k: usize) -> Result<(Vec<usize>, Vec<T>)> {
    q.check_dim(nu.dim())?;
    let kk = T::from_count(2 * k);
    let mut idx = Vec::new();
    let mut lw = Vec::new();
    for (i, (a, &m)) in nu.atoms().iter().zip(nu.masses()).enumerate() {
        let qv = q.eval(a);
        if m > T::zero() && qv.is_finite() {
            idx.push(i);
            lw.push(m.ln() - kk * qv);
        }
    }
    if idx.is_empty() {
        return Err(Error::AllMassAnnihilated);
    }
    Ok((idx, lw))
}

/// `log Z_k = log N_k! + log det G`, with `log det G` from a QR factorization
/// of the weighted basis matrix `[sqrt(mass) e^{-kQ} b_j(z)]`.
pub fn partition_function<T: Real>(nu: &DiscreteMeasure<T>, q: &Weight, k: usize) -> Result<PartitionFunction> {
    let mb = MonomialBasis::new(nu.dim(), k)?;
    let n_k = mb.size();
    let (idx, lw) = weighted_support(nu, q, k)?;
    let log_n_fact = ln_factorial(n_k);
    let finish = |log_z: f64| {
        let normalized = if k == 0 { f64::NAN } else { (log_z / (2.0 * k as f64 * n_k as f64)).exp() };
        PartitionFunction { k, n_k, log_z, normalized }
    };
    if idx.len() < n_k {
        return Ok(finish(f64::NEG_INFINITY));
    }
    let support: Vec<Point<T>> = idx.iter().map(|&i| nu.atoms()[i].clone()).collect();
    let basis = EvalBasis::for_points(&mb, &support);
    let lmax = lw.iter().copied().fold(T::neg_infinity(), T::max);
    let half = T::lit(0.5);
    let b = basis.matrix(&support);
    let rs: Vec<T> = lw.iter().map(|&l| ((l - lmax) * half).exp()).collect();
    let mut w = Mat::from_fn(support.len(), n_k, |r, c| b[(c, r)].scale(rs[r]));
    let mut log_scale = 0.0;
    for c in 0..n_k {
        let s = (0..w.rows()).map(|r| w[(r, c)].norm()).fold(T::zero(), T::max);
        if !(s > T::zero()) {
            return Ok(finish(f64::NEG_INFINITY));
        }
        for r in 0..w.rows() {
            w[(r, c)] = w[(r, c)].scale(T::one() / s);
        }
        log_scale += s.as_f64().ln();
    }
    let rows = w.rows();
    let diag = qr_r_diagonal(w);
    let tiny = T::epsilon() * T::lit(64.0) * T::from_count(rows).sqrt();
    if diag.iter().any(|&d| !(d > tiny)) {
        return Ok(finish(f64::NEG_INFINITY));
    }
    let log_r: f64 = diag.iter().map(|d| d.as_f64().ln()).sum::<f64>() + log_scale;
    let log_det = 2.0 * (log_r + basis.log_det_correction().as_f64()) + n_k as f64 * lmax.as_f64();
    Ok(finish(log_n_fact + log_det))
}

/// CSV columns `k, N_k, log_Z_k, normalized`.
pub fn partition_table(rows: &[PartitionFunction]) -> Table {
    let mut t = Table::new(&["k", "N_k", "log_Z_k", "normalized"]);
    for r in rows {
        t.push(vec![r.k.into(), r.n_k.into(), r.log_z.into(), r.normalized.into()]);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    DppExact,
    Mcmc,
}

/// Draws from `Prob_k`, each configuration as a list of atoms of `nu`.
#[derive(Clone, Debug)]
pub struct EnsembleSample<T> {
    pub k: usize,
    pub configurations: Vec<Configuration<T>>,
    /// Indices into the atoms of `nu`, parallel to `configurations`.
    pub indices: Vec<Vec<usize>>,
    pub sampler: Sampler,
    pub seed: u64,
    pub tasks: usize,
    /// Metropolis acceptance rate (`None` for exact sampling).
    pub acceptance_rate: Option<f64>,
    pub nu_id: String,
    pub q_id: String,
}

impl<T: Real> EnsembleSample<T> {
    pub fn len(&self) -> usize {
        self.configurations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configurations.is_empty()
    }

    /// One JSON object per line: `{k, seed, points}` with each point given by
    /// its flattened `[re, im, ...]` coordinates.
    pub fn to_json_lines(&self) -> String {
        json_lines(self.configurations.iter().map(|c| {
            json!({
                "k": self.k,
                "seed": self.seed,
                "points": c.points().iter().map(|p| p.to_flat()).collect::<Vec<_>>(),
            })
        }))
        .expect("plain JSON values serialize")
    }
}

/// `K_k(z, z) mass(z)` at every atom of `nu` (sums to `N_k`).
pub fn one_point_intensity<T: Real>(nu: &DiscreteMeasure<T>, q: &Weight, k: usize) -> Result<Vec<T>> {
    let sys = projection_system(nu, q, k)?;
    let phi = sys.atom_vectors().expect("Arnoldi systems carry atom vectors");
    Ok((0..nu.len()).map(|a| phi.iter().map(|col| col[a].norm_sqr()).sum()).collect())
}

fn projection_system<T: Real>(nu: &DiscreteMeasure<T>, q: &Weight, k: usize) -> Result<OrthonormalSystem<T>> {
    let sys = OrthonormalSystem::from_measure(nu, q, k)?;
    if !sys.is_full_rank() {
        return Err(Error::RankDeficient { rank: sys.rank(), needed: sys.dim() });
    }
    Ok(sys)
}

/// Exact draws by sequential conditioning of the projection DPP: pick an atom
/// with probability proportional to its squared row norm, then restrict the
/// span to vectors vanishing there.
pub fn sample_dpp<T: Real>(
    nu: &DiscreteMeasure<T>,
    q: &Weight,
    k: usize,
    count: usize,
    seed: u64,
    tasks: usize,
) -> Result<EnsembleSample<T>> {
    let sys = projection_system(nu, q, k)?;
    let phi = sys.atom_vectors().expect("Arnoldi systems carry atom vectors");
    let m = nu.len();
    let n_k = sys.dim();
    // Row-major M x N_k.
    let rows: Vec<Vec<Cplx<T>>> = (0..m).map(|a| phi.iter().map(|col| col[a]).collect()).collect();
    let sizes = chunk_sizes(count, tasks);
    let indices: Vec<Vec<usize>> = sizes
        .par_iter()
        .enumerate()
        .map(|(t, &c)| {
            let mut rng = substream(seed, t as u64);
            (0..c).map(|_| hkpv_draw(&rows, n_k, &mut rng)).collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    finish_sample(nu, q, k, indices, Sampler::DppExact, seed, sizes.len(), None)
}

#[allow(clippy::too_many_arguments)]
fn finish_sample<T: Real>(
    nu: &DiscreteMeasure<T>,
    q: &Weight,
    k: usize,
    indices: Vec<Vec<usize>>,
    sampler: Sampler,
    seed: u64,
    tasks: usize,
    acceptance_rate: Option<f64>,
) -> Result<EnsembleSample<T>> {
    let configurations = indices
        .iter()
        .map(|sel| Configuration::new(sel.iter().map(|&i| nu.atoms()[i].clone()).collect(), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleSample {
        k,
        configurations,
        indices,
        sampler,
        seed,
        tasks,
        acceptance_rate,
        nu_id: nu.id(),
        q_id: q.hash().to_string(),
    })
}

fn hkpv_draw<T: Real>(rows: &[Vec<Cplx<T>>], n_k: usize, rng: &mut Rng) -> Vec<usize> {
    let m = rows.len();
    // Columns of the current orthonormal frame, one Vec of length M each.
    let mut v: Vec<Vec<Cplx<T>>> = (0..n_k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut out = Vec::with_capacity(n_k);
    while !v.is_empty() {
        let w: Vec<f64> = (0..m).map(|a| v.iter().map(|c| c[a].norm_sqr()).sum::<T>().as_f64()).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = m - 1;
        for (a, &x) in w.iter().enumerate() {
            if u < x {
                pick = a;
                break;
            }
            u -= x;
        }
        while w[pick] == 0.0 {
            pick -= 1;
        }
        assert!(!out.contains(&pick), "exact DPP draws have distinct points");
        out.push(pick);
        // Eliminate the coordinate `pick` using the column with the largest entry there.
        let j = (0..v.len())
            .max_by(|&x, &y| v[x][pick].norm_sqr().partial_cmp(&v[y][pick].norm_sqr()).unwrap_or(std::cmp::Ordering::Equal))
            .expect("frame is not empty");
        let pivot = v.swap_remove(j);
        let pv = pivot[pick];
        for col in v.iter_mut() {
            let f = col[pick] / pv;
            for (x, &p) in col.iter_mut().zip(&pivot) {
                *x -= f * p;
            }
            col[pick] = Cplx::new(T::zero(), T::zero());
        }
        // Re-orthonormalize (modified Gram-Schmidt, twice).
        for i in 0..v.len() {
            for _ in 0..2 {
                for l in 0..i {
                    let c: Cplx<T> = v[l].iter().zip(&v[i]).map(|(a, b)| a.conj() * b).sum();
                    let (head, tail) = v.split_at_mut(i);
                    for (x, &y) in tail[0].iter_mut().zip(&head[l]) {
                        *x -= c * y;
                    }
                }
            }
            let nrm = v[i].iter().map(|x| x.norm_sqr()).sum::<T>().sqrt();
            v[i].iter_mut().for_each(|x| *x = x.scale(T::one() / nrm));
        }
    }
    out.sort_unstable();
    out
}

/// Metropolis chain on configurations of distinct atoms: replace a uniformly
/// chosen point by a uniformly chosen atom, accept with
/// `min(1, |VDM^Q|'^2 mass' / |VDM^Q|^2 mass)`. Each task runs its own chain
/// (with its own burn-in) from the weighted Leja configuration.
#[allow(clippy::too_many_arguments)]
pub fn sample_mcmc<T: Real>(
    nu: &DiscreteMeasure<T>,
    q: &Weight,
    k: usize,
    count: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    tasks: usize,
) -> Result<EnsembleSample<T>> {
    let (idx, lw) = weighted_support(nu, q, k)?;
    let support: Vec<Point<T>> = idx.iter().map(|&i| nu.atoms()[i].clone()).collect();
    // Leja start on the support with the weight folded into the candidates.
    let table = Weight::tabulated(&support, &lw.iter().map(|&l| -l / T::from_count(2 * k.max(1))).collect::<Vec<_>>());
    let prob = ExchangeProblem::new(support.clone(), &table, k)?;
    let start = prob.leja()?;
    if prob.objective(&start) == T::neg_infinity() {
        return Err(Error::Degenerate);
    }
    let mb = MonomialBasis::new(nu.dim(), k)?;
    let basis = EvalBasis::for_points(&mb, &support);
    let c = basis.matrix(&support);
    let thin = thin.max(1);
    let sizes = chunk_sizes(count, tasks);
    let runs: Vec<(Vec<Vec<usize>>, usize, usize)> = sizes
        .par_iter()
        .enumerate()
        .map(|(t, &cnt)| {
            let mut rng = substream(seed, t as u64);
            run_chain(&c, &lw, start.clone(), cnt, burn_in, thin, &mut rng)
        })
        .collect();
    let mut indices = Vec::with_capacity(count);
    let (mut acc, mut tot) = (0, 0);
    for (draws, a, n) in runs {
        acc += a;
        tot += n;
        indices.extend(draws.into_iter().map(|d| {
            let mut s: Vec<usize> = d.into_iter().map(|i| idx[i]).collect();
            s.sort_unstable();
            s
        }));
    }
    let rate = if tot == 0 { 0.0 } else { acc as f64 / tot as f64 };
    finish_sample(nu, q, k, indices, Sampler::Mcmc, seed, sizes.len(), Some(rate))
}

fn run_chain<T: Real>(
    c: &Mat<Cplx<T>>,
    lw: &[T],
    mut state: Vec<usize>,
    count: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut Rng,
) -> (Vec<Vec<usize>>, usize, usize) {
    let n_k = state.len();
    let m = lw.len();
    let refactor = |state: &[usize]| Lu::factor(Mat::from_fn(n_k, n_k, |i, j| c[(i, state[j])])).inverse();
    let mut inv = refactor(&state);
    let mut draws = Vec::with_capacity(count);
    let (mut accepted, mut proposed) = (0, 0);
    let steps = burn_in + count * thin;
    for step in 1..=steps {
        if count == 0 {
            break;
        }
        let s = rng.random_range(0..n_k);
        let cand = rng.random_range(0..m);
        proposed += 1;
        if cand != state[s] && !state.contains(&cand) {
            // lambda = B^{-1} b(cand); the determinant ratio is lambda_s.
            let lambda: Vec<Cplx<T>> =
                (0..n_k).map(|i| (0..n_k).map(|j| inv[(i, j)] * c[(j, cand)]).sum()).collect();
            let log_ratio = T::lit(2.0) * lambda[s].norm().ln() + lw[cand] - lw[state[s]];
            if log_ratio >= T::zero() || rng.random::<f64>() < log_ratio.as_f64().exp() {
                accepted += 1;
                state[s] = cand;
                if accepted % 500 == 0 {
                    inv = refactor(&state);
                } else {
                    let ls = lambda[s];
                    let row: Vec<Cplx<T>> = (0..n_k).map(|j| inv[(s, j)]).collect();
                    for i in 0..n_k {
                        let mut f = lambda[i];
                        if i == s {
                            f -= Cplx::new(T::one(), T::zero());
                        }
                        let f = f / ls;
                        for j in 0..n_k {
                            inv[(i, j)] -= f * row[j];
                        }
                    }
                }
            }
        } else if cand == state[s] {
            accepted += 1;
        }
        if step > burn_in && (step - burn_in) % thin == 0 {
            draws.push(state.clone());
        }
    }
    (draws, accepted, proposed)
}

/// Empirical large-deviation check for one sample.
#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub k: usize,
    pub n_k: usize,
    pub eta: f64,
    pub delta_bar: f64,
    pub count: usize,
    /// Fraction of draws with `|VDM^Q|^2 < (delta_bar - eta)^{2 k N_k}`.
    pub empirical: f64,
    pub stderr: f64,
    /// `(1 - eta / (2 delta_bar))^{2 k N_k}`.
    pub bound: f64,
    /// `empirical <= bound + 2 stderr`.
    pub passes: bool,
}

pub fn tail_bound_check<T: Real>(sample: &EnsembleSample<T>, q: &Weight, eta: f64, delta_bar: f64) -> Result<TailReport> {
    if !(eta > 0.0 && delta_bar > eta) {
        return Err(Error::InvalidArgument(format!("need 0 < eta < delta_bar, got eta = {eta}, delta_bar = {delta_bar}")));
    }
    if q.hash() != sample.q_id {
        return Err(Error::InvalidArgument("weight does not match the sample".into()));
    }
    let n_k = sample.configurations.first().map(|c| c.len()).unwrap_or(0);
    let kn = (sample.k * n_k) as f64;
    let threshold = kn * (delta_bar - eta).ln();
    let below = sample
        .configurations
        .iter()
        .filter(|c| {
            let mut c = (*c).clone();
            log_abs_vdm_weighted(&mut c, q).as_f64() < threshold
        })
        .count();
    let count = sample.len();
    let p = if count == 0 { 0.0 } else { below as f64 / count as f64 };
    let stderr = if count == 0 { 0.0 } else { (p * (1.0 - p) / count as f64).sqrt() };
    let bound = (1.0 - eta / (2.0 * delta_bar)).powf(2.0 * kn);
    Ok(TailReport { k: sample.k, n_k, eta, delta_bar, count, empirical: p, stderr, bound, passes: p <= bound + 2.0 * stderr })
}

/// Uniform empirical measure of every configuration.
pub fn pushforward_sigma_k<T: Real>(sample: &EnsembleSample<T>) -> Result<Vec<DiscreteMeasure<T>>> {
    sample.configurations.iter().map(|c| DiscreteMeasure::empirical(c.points())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CompactSetSpec;

    fn circle_nu(m: usize) -> DiscreteMeasure<f64> {
        DiscreteMeasure::uniform(CompactSetSpec::unit_circle(m).discretize().unwrap()).unwrap()
    }

    fn line(xs: &[f64]) -> DiscreteMeasure<f64> {
        DiscreteMeasure::uniform(xs.iter().map(|&x| Point::real(x)).collect()).unwrap()
    }

    #[test]
    fn degree_one_on_the_circle() {
        // Gram = I, so Z_1 = 2!; double-sum oracle of |z1 - z2|^2 is 2 as well.
        let nu = circle_nu(64);
        let z = partition_function(&nu, &Weight::zero(), 1).unwrap();
        assert!((z.log_z - 2f64.ln()).abs() < 1e-12);
        let a = nu.atoms();
        let oracle: f64 = a.iter().flat_map(|x| a.iter().map(move |y| (x.z() - y.z()).norm_sqr())).sum::<f64>() / 4096.0;
        assert!((oracle - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dirac_has_zero_partition_function() {
        let nu = DiscreteMeasure::dirac(Point::real(0.3));
        assert_eq!(partition_function(&nu, &Weight::zero(), 2).unwrap().log_z, f64::NEG_INFINITY);
    }

    #[test]
    fn three_point_pair_probabilities() {
        let nu = line(&[-1.0, 0.0, 1.0]);
        let s = sample_dpp(&nu, &Weight::zero(), 1, 30_000, 5, 3).unwrap();
        let far = s.indices.iter().filter(|c| c == &&vec![0, 2]).count() as f64 / 30_000.0;
        assert!((far - 2.0 / 3.0).abs() < 0.015, "{far}");
        assert!(s.indices.iter().all(|c| c[0] != c[1]));
    }

    #[test]
    fn minimal_support_is_drawn_whole() {
        let nu = line(&[0.0, 0.5, 2.0]);
        let s = sample_dpp(&nu, &Weight::zero(), 2, 20, 1, 2).unwrap();
        assert!(s.indices.iter().all(|c| c == &vec![0, 1, 2]));
        let m = sample_mcmc(&nu, &Weight::zero(), 2, 20, 10, 1, 1, 1).unwrap();
        assert!(m.indices.iter().all(|c| c == &vec![0, 1, 2]));
        let r = m.acceptance_rate.unwrap();
        assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn intensity_is_a_trace() {
        let nu = line(&[-1.0, -0.4, 0.1, 0.3, 0.8, 1.0]);
        let i = one_point_intensity(&nu, &Weight::zero(), 2).unwrap();
        assert!((i.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mcmc_matches_three_point_probabilities() {
        let nu = line(&[-1.0, 0.0, 1.0]);
        let s = sample_mcmc(&nu, &Weight::zero(), 1, 30_000, 100, 2, 9, 1).unwrap();
        let far = s.indices.iter().filter(|c| c == &&vec![0, 2]).count() as f64 / 30_000.0;
        assert!((far - 2.0 / 3.0).abs() < 0.03, "{far}");
        let r = s.acceptance_rate.unwrap();
        assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn tail_check_rejects_degenerate_eta_and_pushforward_is_uniform() {
        let nu = line(&[0.0, 1.0]);
        let s = sample_dpp(&nu, &Weight::zero(), 1, 2, 0, 1).unwrap();
        assert!(tail_bound_check(&s, &Weight::zero(), 1.0, 1.0).is_err());
        let sig = pushforward_sigma_k(&s).unwrap();
        assert_eq!(sig[0].masses(), &[0.5, 0.5]);
        assert!(s.to_json_lines().lines().next().unwrap().contains("\"points\":[[0.0,0.0],[1.0,0.0]]"));
    }
}
