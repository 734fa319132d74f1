//! Quadrature rules and discretized reference measures on the line and the
//! circle: arcsine, uniform and semicircle laws with their CDFs.

use std::f64::consts::PI;

use crate::error::Result;
use crate::geometry::Point;
use crate::measure::DiscreteMeasure;
use crate::scalar::{Cplx, Real};

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on the three-term
/// recurrence).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(m: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if m == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=m {
        let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

fn affine(a: f64, b: f64, t: f64) -> f64 {
    0.5 * (a + b) + 0.5 * (b - a) * t
}

fn real_measure<T: Real>(xs: Vec<f64>, ms: Vec<f64>) -> Result<DiscreteMeasure<T>> {
    let atoms = xs.into_iter().map(|x| Point::real(T::lit(x))).collect();
    DiscreteMeasure::normalize(atoms, ms.into_iter().map(T::lit).collect())
}

/// Arcsine law of `[a, b]` on `m` Chebyshev nodes with equal masses; exact
/// for polynomials of degree below `2m`.
pub fn arcsine_measure<T: Real>(a: f64, b: f64, m: usize) -> Result<DiscreteMeasure<T>> {
    let xs = (0..m).map(|j| affine(a, b, -((2 * j + 1) as f64 * PI / (2 * m) as f64).cos())).collect();
    real_measure(xs, vec![1.0; m])
}

/// Normalized Lebesgue measure on `[a, b]` via Gauss–Legendre.
pub fn uniform_measure<T: Real>(a: f64, b: f64, m: usize) -> Result<DiscreteMeasure<T>> {
    let (x, w) = gauss_legendre(m);
    real_measure(x.into_iter().map(|t| affine(a, b, t)).collect(), w)
}

/// Semicircle law on `[-r, r]` via Gauss–Chebyshev of the second kind.
pub fn semicircle_measure<T: Real>(r: f64, m: usize) -> Result<DiscreteMeasure<T>> {
    let (mut xs, mut ws) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for j in 1..=m {
        let t = j as f64 * PI / (m + 1) as f64;
        xs.push(-r * t.cos());
        ws.push(t.sin().powi(2));
    }
    real_measure(xs, ws)
}

/// Uniform measure on `m` equally spaced points of a circle.
pub fn circle_measure<T: Real>(center: (f64, f64), r: f64, m: usize) -> Result<DiscreteMeasure<T>> {
    let atoms = (0..m)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / m as f64;
            Point::scalar(Cplx::new(T::lit(center.0 + r * t.cos()), T::lit(center.1 + r * t.sin())))
        })
        .collect();
    DiscreteMeasure::uniform(atoms)
}

/// Masses proportional to `density(x) * cell` on a real grid.
pub fn grid_measure<T: Real>(points: &[Point<T>], cells: &[T], density: impl Fn(f64) -> f64) -> Result<DiscreteMeasure<T>> {
    let ms = points.iter().zip(cells).map(|(p, &h)| T::lit(density(p.z().re.as_f64()).max(0.0)) * h).collect();
    DiscreteMeasure::normalize(points.to_vec(), ms)
}

/// Masses `F(b_i) - F(a_i)` over the midpoint cells `[a_i, b_i]` of sorted
/// real points, the outer cells ending at the extreme points.
pub fn cell_measure<T: Real>(points: &[Point<T>], cdf: impl Fn(f64) -> f64) -> Result<DiscreteMeasure<T>> {
    let xs: Vec<f64> = points.iter().map(|p| p.z().re.as_f64()).collect();
    let m = xs.len();
    let mut ms = Vec::with_capacity(m);
    for i in 0..m {
        let lo = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (xs[i - 1] + xs[i]) };
        let hi = if i + 1 == m { f64::INFINITY } else { 0.5 * (xs[i] + xs[i + 1]) };
        let f = |x: f64| if x == f64::NEG_INFINITY { 0.0 } else if x == f64::INFINITY { 1.0 } else { cdf(x) };
        ms.push(T::lit((f(hi) - f(lo)).max(0.0)));
    }
    DiscreteMeasure::normalize(points.to_vec(), ms)
}

pub fn arcsine_density(x: f64, a: f64, b: f64) -> f64 {
    if x <= a || x >= b {
        0.0
    } else {
        1.0 / (PI * ((x - a) * (b - x)).sqrt())
    }
}

pub fn arcsine_cdf(x: f64, a: f64, b: f64) -> f64 {
    let t = ((2.0 * x - a - b) / (b - a)).clamp(-1.0, 1.0);
    0.5 + t.asin() / PI
}

pub fn semicircle_density(x: f64, r: f64) -> f64 {
    if x.abs() >= r {
        0.0
    } else {
        2.0 / (PI * r * r) * (r * r - x * x).sqrt()
    }
}

pub fn semicircle_cdf(x: f64, r: f64) -> f64 {
    let t = (x / r).clamp(-1.0, 1.0);
    0.5 + (t * (1.0 - t * t).sqrt() + t.asin()) / PI
}

pub fn uniform_cdf(x: f64, a: f64, b: f64) -> f64 {
    ((x - a) / (b - a)).clamp(0.0, 1.0)
}

/// `sup_x |F_mu(x) - F(x)|` for a measure on the real line, checking both
/// one-sided limits at every atom.
pub fn cdf_sup_distance<T: Real>(mu: &DiscreteMeasure<T>, cdf: impl Fn(f64) -> f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = mu.atoms().iter().zip(mu.masses()).map(|(a, m)| (a.z().re.as_f64(), m.as_f64())).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut worst: f64 = 0.0;
    for (x, m) in pts {
        let f = cdf(x);
        worst = worst.max((acc - f).abs());
        acc += m;
        worst = worst.max((acc - f).abs());
    }
    worst
}

/// As [`cdf_sup_distance`] with each atom spread uniformly over its cell, the
/// same mini-segment reading the continuum energy uses. Cell boundaries are
/// midpoints between neighbors; an end cell longer than its inner half
/// extends outward by the excess. The piecewise-linear CDF is compared at the
/// boundaries and at 16 interior points per cell.
pub fn cell_cdf_sup_distance<T: Real>(mu: &DiscreteMeasure<T>, cells: &[T], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut pts: Vec<(f64, f64, f64)> = mu
        .atoms()
        .iter()
        .zip(mu.masses())
        .zip(cells)
        .map(|((a, m), h)| (a.z().re.as_f64(), m.as_f64(), h.as_f64()))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = pts.len();
    if m == 1 {
        let (x, w, h) = pts[0];
        return cell_gap(x - h / 2.0, x + h / 2.0, 0.0, w, &cdf);
    }
    let mut bounds = Vec::with_capacity(m + 1);
    bounds.push(pts[0].0 - (pts[0].2 - (pts[1].0 - pts[0].0) / 2.0).max(0.0));
    for i in 0..m - 1 {
        bounds.push((pts[i].0 + pts[i + 1].0) / 2.0);
    }
    bounds.push(pts[m - 1].0 + (pts[m - 1].2 - (pts[m - 1].0 - pts[m - 2].0) / 2.0).max(0.0));
    let mut acc = 0.0;
    let mut worst: f64 = 0.0;
    for i in 0..m {
        worst = worst.max(cell_gap(bounds[i], bounds[i + 1], acc, pts[i].1, &cdf));
        acc += pts[i].1;
    }
    worst
}

fn cell_gap(lo: f64, hi: f64, before: f64, mass: f64, cdf: &impl Fn(f64) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..=16 {
        let t = s as f64 / 16.0;
        worst = worst.max((before + t * mass - cdf(lo + t * (hi - lo))).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(12);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m22: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        assert!((m22 - 2.0 / 23.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(2001);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn reference_measures_have_known_moments() {
        let a = arcsine_measure::<f64>(-1.0, 1.0, 50).unwrap();
        let m2: f64 = a.integrate(|p| p.z().re.powi(2));
        assert!((m2 - 0.5).abs() < 1e-14);
        let s = semicircle_measure::<f64>(2.0, 60).unwrap();
        let m2: f64 = s.integrate(|p| p.z().re.powi(2));
        assert!((m2 - 1.0).abs() < 1e-13);
        let u = uniform_measure::<f64>(0.0, 2.0, 20).unwrap();
        let m1: f64 = u.integrate(|p| p.z().re);
        assert!((m1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cdfs_are_consistent_with_densities() {
        let h = 1e-6;
        for &x in &[-0.7, 0.0, 0.4] {
            let d = (arcsine_cdf(x + h, -1.0, 1.0) - arcsine_cdf(x - h, -1.0, 1.0)) / (2.0 * h);
            assert!((d - arcsine_density(x, -1.0, 1.0)).abs() < 1e-6);
            let d = (semicircle_cdf(x + h, 1.5) - semicircle_cdf(x - h, 1.5)) / (2.0 * h);
            assert!((d - semicircle_density(x, 1.5)).abs() < 1e-6);
        }
        assert_eq!(semicircle_cdf(3.0, 1.0), 1.0);
    }

    #[test]
    fn sup_distance_of_fine_discretization_is_small() {
        let a = arcsine_measure::<f64>(-1.0, 1.0, 1000).unwrap();
        assert!(cdf_sup_distance(&a, |x| arcsine_cdf(x, -1.0, 1.0)) <= 1e-3 + 1e-12);
    }
}
