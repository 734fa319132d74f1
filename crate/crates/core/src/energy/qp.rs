//! Convex quadratic program over the probability simplex:
//! minimize `m^T A m + 2 q^T m` subject to `m >= 0`, `sum m = 1`.
//!
//! Accelerated projected gradient locates the support, then an active-set
//! loop solves the equality-constrained problem on the support exactly by
//! conjugate gradients on the zero-sum subspace.

use crate::linalg::power_iteration;
use crate::scalar::Real;

/// Dense symmetric matrix, row-major.
#[derive(Clone, Debug)]
pub struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SymMatrix<T> {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SymMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    /// `A[idx, idx] x`.
    fn apply_sub(&self, idx: &[usize], x: &[T]) -> Vec<T> {
        idx.iter()
            .map(|&i| {
                let row = self.row(i);
                idx.iter().zip(x).map(|(&j, &xj)| row[j] * xj).sum()
            })
            .collect()
    }

    /// `A[:, idx] x`.
    fn apply_cols(&self, idx: &[usize], x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                idx.iter().zip(x).map(|(&j, &xj)| row[j] * xj).sum()
            })
            .collect()
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex<T: Real>(y: &[T]) -> Vec<T> {
    let mut s: Vec<T> = y.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = T::zero();
    let mut theta = T::zero();
    for (i, &v) in s.iter().enumerate() {
        cum += v;
        let t = (cum - T::one()) / T::from_count(i + 1);
        if v - t > T::zero() {
            theta = t;
        }
    }
    y.iter().map(|&v| (v - theta).max(T::zero())).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpOptions {
    pub max_iters: usize,
    pub gradient_iters: usize,
    pub kkt_tol: f64,
    pub active_set_iters: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { max_iters: 100_000, gradient_iters: 400, kkt_tol: 1e-7, active_set_iters: 200 }
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    /// Multiplier of the simplex constraint: `A x + q = F` on the support.
    pub multiplier: T,
    pub objective: T,
    pub kkt_residual: T,
    pub iterations: usize,
    pub converged: bool,
}

/// `(residual, multiplier)`: `max(|g - F|` on the support, `(F - g)_+` off it,
/// `(-x)_+)` with `g = A x + q` and `F = sum x g`.
pub fn kkt<T: Real>(a: &SymMatrix<T>, q: &[T], free: &[usize], x: &[T]) -> (T, T) {
    let xs: Vec<T> = free.iter().map(|&i| x[i]).collect();
    let g = a.apply_cols(free, &xs);
    let f: T = free.iter().map(|&i| x[i] * (g[i] + q[i])).sum();
    let mut r = T::zero();
    for &i in free {
        let gi = g[i] + q[i];
        if x[i] > T::zero() {
            r = r.max((gi - f).abs());
        } else {
            r = r.max(f - gi).max(-x[i]);
        }
    }
    (r, f)
}

fn objective<T: Real>(a: &SymMatrix<T>, q: &[T], free: &[usize], x: &[T]) -> T {
    let xs: Vec<T> = free.iter().map(|&i| x[i]).collect();
    let ax = a.apply_sub(free, &xs);
    free.iter().zip(&ax).map(|(&i, &v)| x[i] * (v + T::lit(2.0) * q[i])).sum()
}

/// Minimize over the simplex restricted to indices where `q` is finite.
pub fn solve_simplex_qp<T: Real>(a: &SymMatrix<T>, q: &[T], opts: &QpOptions) -> QpSolution<T> {
    let n = a.dim();
    let free: Vec<usize> = (0..n).filter(|&i| q[i].is_finite()).collect();
    let nf = free.len();
    let tol = T::lit(opts.kkt_tol);
    let mut x = vec![T::zero(); n];
    if nf == 0 {
        return QpSolution { x, multiplier: T::nan(), objective: T::nan(), kkt_residual: T::infinity(), iterations: 0, converged: false };
    }
    let qf: Vec<T> = free.iter().map(|&i| q[i]).collect();
    let zero_mean = |v: &[T]| {
        let m = v.iter().copied().sum::<T>() / T::from_count(v.len());
        v.iter().map(|&x| x - m).collect::<Vec<T>>()
    };
    let start: Vec<T> = (0..nf).map(|i| T::from_count((i * 7919) % 101) - T::lit(50.0)).collect();
    let lmax = power_iteration(|v| zero_mean(&a.apply_sub(&free, &zero_mean(v))), zero_mean(&start), 60);
    let lmax = if lmax > T::zero() { lmax } else { T::one() };
    let lip = T::lit(2.0) * lmax * T::lit(1.05);

    // Accelerated projected gradient with gradient restarts.
    let mut xf = vec![T::one() / T::from_count(nf); nf];
    let mut y = xf.clone();
    let mut t = T::one();
    let mut iterations = 0;
    let budget = opts.gradient_iters.min(opts.max_iters);
    while iterations < budget {
        iterations += 1;
        let ay = a.apply_sub(&free, &y);
        let step: Vec<T> = (0..nf).map(|i| y[i] - T::lit(2.0) * (ay[i] + qf[i]) / lip).collect();
        let xn = project_simplex(&step);
        let tn = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / T::lit(2.0);
        let restart = (0..nf).map(|i| (y[i] - xn[i]) * (xn[i] - xf[i])).sum::<T>() > T::zero();
        if restart {
            t = T::one();
            y = xn.clone();
        } else {
            let beta = (t - T::one()) / tn;
            y = (0..nf).map(|i| xn[i] + beta * (xn[i] - xf[i])).collect();
            t = tn;
        }
        xf = xn;
    }
    for (k, &i) in free.iter().enumerate() {
        x[i] = xf[k];
    }
    let (mut best_r, _) = kkt(a, q, &free, &x);
    let mut best_x = x.clone();

    // Active-set polishing.
    let mut support: Vec<usize> = free.iter().copied().filter(|&i| x[i] > T::zero()).collect();
    if support.is_empty() {
        support.push(free[0]);
    }
    let converged = best_r < tol;
    let mut outer = 0;
    while !converged && outer < opts.active_set_iters && iterations < opts.max_iters {
        outer += 1;
        let warm: Vec<T> = support.iter().map(|&i| x[i]).collect();
        let (ms, cg_iters) = equality_qp(a, q, &support, &warm, tol * T::lit(1e-3));
        iterations += cg_iters;
        let negative: Vec<usize> = support.iter().zip(&ms).filter(|(_, &m)| m < T::zero()).map(|(&i, _)| i).collect();
        x.iter_mut().for_each(|v| *v = T::zero());
        if !negative.is_empty() {
            // Step to the boundary along the segment from the warm start.
            let mut alpha = T::one();
            for (k, &m) in ms.iter().enumerate() {
                if m < T::zero() {
                    let w = warm[k];
                    alpha = alpha.min(w / (w - m));
                }
            }
            let mut kept = Vec::new();
            for (k, &i) in support.iter().enumerate() {
                let v = warm[k] + alpha * (ms[k] - warm[k]);
                if v > T::zero() && !(ms[k] < T::zero() && alpha == warm[k] / (warm[k] - ms[k])) {
                    x[i] = v;
                    kept.push(i);
                }
            }
            if kept.is_empty() {
                kept.push(support[0]);
                x[support[0]] = T::one();
            }
            let total: T = x.iter().copied().sum();
            x.iter_mut().for_each(|v| *v /= total);
            support = kept;
            continue;
        }
        for (k, &i) in support.iter().enumerate() {
            x[i] = ms[k].max(T::zero());
        }
        let (r, f) = kkt(a, q, &free, &x);
        if r < best_r {
            best_r = r;
            best_x = x.clone();
        }
        if r < tol {
            break;
        }
        // Add the violators below the multiplier.
        let xs: Vec<T> = support.iter().map(|&i| x[i]).collect();
        let g = a.apply_cols(&support, &xs);
        let mut add: Vec<(T, usize)> = free
            .iter()
            .copied()
            .filter(|i| x[*i] == T::zero() && g[*i] + q[*i] < f - tol * T::lit(0.1))
            .map(|i| (g[i] + q[i] - f, i))
            .collect();
        if add.is_empty() {
            break;
        }
        add.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        support.extend(add.iter().map(|&(_, i)| i));
        support.sort_unstable();
    }
    let (r, f) = kkt(a, q, &free, &best_x);
    QpSolution {
        objective: objective(a, q, &free, &best_x),
        x: best_x,
        multiplier: f,
        kkt_residual: r,
        iterations,
        converged: r < tol,
    }
}

/// Minimize `m^T A m + 2 q^T m` with `sum m = 1` on `support` (signs free),
/// by conjugate gradients on the zero-sum subspace from `warm`, stopping
/// once the projected residual drops below `rtol`.
fn equality_qp<T: Real>(a: &SymMatrix<T>, q: &[T], support: &[usize], warm: &[T], rtol: T) -> (Vec<T>, usize) {
    let s = support.len();
    let sum: T = warm.iter().copied().sum();
    let mut m: Vec<T> = if sum > T::zero() {
        warm.iter().map(|&w| w / sum).collect()
    } else {
        vec![T::one() / T::from_count(s); s]
    };
    let qs: Vec<T> = support.iter().map(|&i| q[i]).collect();
    let proj = |v: &mut Vec<T>| {
        let mean = v.iter().copied().sum::<T>() / T::from_count(v.len());
        v.iter_mut().for_each(|x| *x -= mean);
    };
    // residual r = -P(A m + q)
    let am = a.apply_sub(support, &m);
    let mut r: Vec<T> = (0..s).map(|i| -(am[i] + qs[i])).collect();
    proj(&mut r);
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let scale = qs.iter().map(|x| x.abs()).fold(T::one(), T::max) + am.iter().map(|x| x.abs()).fold(T::zero(), T::max);
    let stop = (rtol.max(T::epsilon() * T::lit(16.0) * scale)).powi(2);
    let mut it = 0;
    while rr > stop && it < 4 * s + 50 {
        it += 1;
        let mut ap = a.apply_sub(support, &p);
        proj(&mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..s {
            m[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        // Periodically recompute the residual to fight drift.
        if it % 50 == 0 {
            let am = a.apply_sub(support, &m);
            r = (0..s).map(|i| -(am[i] + qs[i])).collect();
            proj(&mut r);
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..s {
            p[i] = r[i] + beta * p[i];
        }
    }
    (m, it)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_lands_on_simplex() {
        let p = project_simplex(&[0.5f64, 2.0, -1.0, 0.3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(p, vec![0.0, 1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.2f64, 0.2, 0.2]);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn small_qp_matches_closed_form() {
        // minimize x^T I x + 2 q^T x: optimum x = proj(-q) style water filling.
        let a = SymMatrix::from_fn(3, |i, j| if i == j { 1.0 } else { 0.0 });
        let q = [0.0f64, 0.1, 1.0];
        let s = solve_simplex_qp(&a, &q, &QpOptions::default());
        // x_i = F - q_i on support {0, 1}: F = 0.55, x = (0.55, 0.45, 0)
        assert!((s.x[0] - 0.55).abs() < 1e-10 && (s.x[1] - 0.45).abs() < 1e-10 && s.x[2] == 0.0);
        assert!((s.multiplier - 0.55).abs() < 1e-10);
        assert!(s.converged);
    }

    #[test]
    fn infinite_weights_are_excluded() {
        let a = SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 0.5 });
        let s = solve_simplex_qp(&a, &[f64::INFINITY, 0.0], &QpOptions::default());
        assert_eq!(s.x, vec![0.0, 1.0]);
    }
}
