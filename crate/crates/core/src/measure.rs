//! Discrete probability measures, moments and weak-* neighborhoods.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scalar::Real;

/// Truncation degree of the moment metric.
pub const DEFAULT_MOMENT_DEGREE: usize = 4;

/// Finitely many atoms carrying nonnegative masses that sum to one.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Real"))]
pub struct DiscreteMeasure<T> {
    atoms: Vec<Point<T>>,
    masses: Vec<T>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real"))]
struct RawMeasure<T> {
    atoms: Vec<Point<T>>,
    masses: Vec<T>,
}

impl<'de, T: Real> Deserialize<'de> for DiscreteMeasure<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawMeasure::<T>::deserialize(d)?;
        DiscreteMeasure::new(raw.atoms, raw.masses).map_err(serde::de::Error::custom)
    }
}

fn mass_tolerance<T: Real>(len: usize) -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(4.0) * T::from_count(len).sqrt())
}

impl<T: Real> DiscreteMeasure<T> {
    /// Validating constructor; masses are never renormalized here.
    pub fn new(atoms: Vec<Point<T>>, masses: Vec<T>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Measure("a probability measure needs at least one atom".into()));
        }
        if atoms.len() != masses.len() {
            return Err(Error::Measure(format!("{} atoms but {} masses", atoms.len(), masses.len())));
        }
        let n = atoms[0].dim();
        if let Some(bad) = atoms.iter().find(|a| a.dim() != n) {
            return Err(Error::Dimension { expected: n, found: bad.dim() });
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::Measure("non-finite atom".into()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= T::zero())) {
            return Err(Error::Measure("masses must be finite and nonnegative".into()));
        }
        let total: T = masses.iter().copied().sum();
        if (total - T::one()).abs() > mass_tolerance::<T>(masses.len()) {
            return Err(Error::Measure(format!("masses sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure { atoms, masses })
    }

    /// Rescale nonnegative weights to unit total mass.
    pub fn normalize(atoms: Vec<Point<T>>, weights: Vec<T>) -> Result<Self> {
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero() && total.is_finite()) {
            return Err(Error::Measure("weights must have positive finite total".into()));
        }
        let masses = weights.into_iter().map(|w| w / total).collect();
        Self::new(atoms, masses)
    }

    pub fn uniform(atoms: Vec<Point<T>>) -> Result<Self> {
        let n = atoms.len();
        if n == 0 {
            return Err(Error::Measure("empty atom list".into()));
        }
        let m = T::one() / T::from_count(n);
        Self::new(atoms, vec![m; n])
    }

    /// Empirical measure `(1/N) sum delta_{x_j}`.
    pub fn empirical(points: &[Point<T>]) -> Result<Self> {
        Self::uniform(points.to_vec())
    }

    pub fn dirac(p: Point<T>) -> Self {
        DiscreteMeasure { atoms: vec![p], masses: vec![T::one()] }
    }

    pub fn atoms(&self) -> &[Point<T>] {
        &self.atoms
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    /// Atoms carrying positive mass.
    pub fn support(&self) -> Vec<Point<T>> {
        self.atoms.iter().zip(&self.masses).filter(|(_, m)| **m > T::zero()).map(|(a, _)| a.clone()).collect()
    }

    /// Drop zero-mass atoms and merge exact duplicates.
    pub fn compact(&self) -> Self {
        let mut index = std::collections::HashMap::new();
        let mut atoms = Vec::new();
        let mut masses: Vec<T> = Vec::new();
        for (a, &m) in self.atoms.iter().zip(&self.masses) {
            if m == T::zero() {
                continue;
            }
            match index.get(&a.key()) {
                Some(&i) => masses[i] += m,
                None => {
                    index.insert(a.key(), atoms.len());
                    atoms.push(a.clone());
                    masses.push(m);
                }
            }
        }
        DiscreteMeasure { atoms, masses }
    }

    /// `sum m f(atom)`.
    pub fn integrate(&self, mut f: impl FnMut(&Point<T>) -> T) -> T {
        self.atoms.iter().zip(&self.masses).map(|(a, &m)| if m == T::zero() { T::zero() } else { m * f(a) }).sum()
    }

    /// Short content hash of atoms and masses.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        for (a, m) in self.atoms.iter().zip(&self.masses) {
            for k in a.key() {
                h.update(k.to_le_bytes());
            }
            h.update(m.as_f64().to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn cast<U: Real>(&self) -> DiscreteMeasure<U> {
        DiscreteMeasure {
            atoms: self.atoms.iter().map(|a| a.cast()).collect(),
            masses: self.masses.iter().map(|m| U::lit(m.as_f64())).collect(),
        }
    }
}

/// A real-moment multi-index pair `(alpha, beta)` for `(Re z)^alpha (Im z)^beta`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MomentIndex {
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
}

impl MomentIndex {
    pub fn degree(&self) -> u32 {
        self.alpha.iter().sum::<u32>() + self.beta.iter().sum::<u32>()
    }
}

/// All `(alpha, beta)` in `N^n x N^n` with `|alpha| + |beta| <= degree`,
/// ordered by total degree.
pub fn moment_indices(n: usize, degree: usize) -> Vec<MomentIndex> {
    let mut out = Vec::new();
    for d in 0..=degree as u32 {
        let mut exps = Vec::new();
        compositions(2 * n, d, &mut vec![0; 2 * n], 0, &mut exps);
        for e in exps {
            out.push(MomentIndex { alpha: e[..n].to_vec(), beta: e[n..].to_vec() });
        }
    }
    out
}

/// Weak compositions of `total` into `slots` parts, in descending lex order.
fn compositions(slots: usize, total: u32, cur: &mut Vec<u32>, at: usize, out: &mut Vec<Vec<u32>>) {
    if at == slots - 1 {
        cur[at] = total;
        out.push(cur.clone());
        return;
    }
    for v in (0..=total).rev() {
        cur[at] = v;
        compositions(slots, total - v, cur, at + 1, out);
    }
    cur[at] = 0;
}

fn monomial_value<T: Real>(z: &Point<T>, idx: &MomentIndex) -> T {
    let mut v = T::one();
    for (i, c) in z.coords().iter().enumerate() {
        if idx.alpha[i] > 0 {
            v *= c.re.powi(idx.alpha[i] as i32);
        }
        if idx.beta[i] > 0 {
            v *= c.im.powi(idx.beta[i] as i32);
        }
    }
    v
}

/// `int (Re z)^alpha (Im z)^beta dmu`.
pub fn moment<T: Real>(mu: &DiscreteMeasure<T>, alpha: &[u32], beta: &[u32]) -> Result<T> {
    let n = mu.dim();
    if alpha.len() != n {
        return Err(Error::Dimension { expected: n, found: alpha.len() });
    }
    if beta.len() != n {
        return Err(Error::Dimension { expected: n, found: beta.len() });
    }
    let idx = MomentIndex { alpha: alpha.to_vec(), beta: beta.to_vec() };
    Ok(mu.integrate(|z| monomial_value(z, &idx)))
}

/// Moments of `mu` over an index list.
pub fn moment_vector<T: Real>(mu: &DiscreteMeasure<T>, indices: &[MomentIndex]) -> Vec<T> {
    indices.iter().map(|idx| mu.integrate(|z| monomial_value(z, idx))).collect()
}

/// Moments of the empirical measure of `points`, without building the measure.
pub fn empirical_moments<T: Real>(points: &[Point<T>], indices: &[MomentIndex]) -> Vec<T> {
    let w = T::one() / T::from_count(points.len());
    indices.iter().map(|idx| points.iter().map(|z| monomial_value(z, idx)).sum::<T>() * w).collect()
}

/// The moment box `G(center, degree, epsilon)`.
#[derive(Clone, Debug)]
pub struct NeighborhoodSpec<T> {
    center: DiscreteMeasure<T>,
    moment_degree: usize,
    epsilon: T,
    indices: Vec<MomentIndex>,
    center_moments: Vec<T>,
}

impl<T: Real> NeighborhoodSpec<T> {
    pub fn new(center: DiscreteMeasure<T>, moment_degree: usize, epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidArgument("neighborhood epsilon must be positive".into()));
        }
        let indices = moment_indices(center.dim(), moment_degree);
        let center_moments = moment_vector(&center, &indices);
        Ok(NeighborhoodSpec { center, moment_degree, epsilon, indices, center_moments })
    }

    /// Same center and degree, different radius.
    pub fn with_epsilon(&self, epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidArgument("neighborhood epsilon must be positive".into()));
        }
        Ok(NeighborhoodSpec { epsilon, ..self.clone() })
    }

    pub fn center(&self) -> &DiscreteMeasure<T> {
        &self.center
    }
    pub fn moment_degree(&self) -> usize {
        self.moment_degree
    }
    pub fn epsilon(&self) -> T {
        self.epsilon
    }
    pub fn indices(&self) -> &[MomentIndex] {
        &self.indices
    }
    pub fn center_moments(&self) -> &[T] {
        &self.center_moments
    }

    /// `max |moment difference|` of an empirical configuration.
    pub fn max_deviation(&self, points: &[Point<T>]) -> T {
        let m = empirical_moments(points, &self.indices);
        m.iter().zip(&self.center_moments).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max)
    }

    /// Whether the empirical measure of `points` lies in the box.
    pub fn contains_points(&self, points: &[Point<T>]) -> bool {
        self.max_deviation(points) < self.epsilon
    }
}

/// `sigma in G`.
pub fn in_neighborhood<T: Real>(sigma: &DiscreteMeasure<T>, g: &NeighborhoodSpec<T>) -> Result<bool> {
    if sigma.dim() != g.center.dim() {
        return Err(Error::Dimension { expected: g.center.dim(), found: sigma.dim() });
    }
    let m = moment_vector(sigma, &g.indices);
    Ok(m.iter().zip(&g.center_moments).all(|(a, b)| (*a - *b).abs() < g.epsilon))
}

/// Moment metric `sum 2^{-(|alpha|+|beta|)} |moment difference|` up to `degree`.
pub fn weak_star_distance<T: Real>(mu: &DiscreteMeasure<T>, sigma: &DiscreteMeasure<T>, degree: usize) -> Result<T> {
    if mu.dim() != sigma.dim() {
        return Err(Error::Dimension { expected: mu.dim(), found: sigma.dim() });
    }
    let idx = moment_indices(mu.dim(), degree);
    let a = moment_vector(mu, &idx);
    let b = moment_vector(sigma, &idx);
    Ok(idx
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(i, (x, y))| (*x - *y).abs() * T::lit(0.5f64.powi(i.degree() as i32)))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Cplx;

    fn pts(xs: &[f64]) -> Vec<Point<f64>> {
        xs.iter().map(|&x| Point::real(x)).collect()
    }

    #[test]
    fn constructor_rejects_bad_masses() {
        assert!(DiscreteMeasure::new(pts(&[0.0, 1.0]), vec![0.5, 0.4]).is_err());
        assert!(DiscreteMeasure::new(pts(&[0.0, 1.0]), vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(pts(&[0.0]), vec![0.5, 0.5]).is_err());
        let m = DiscreteMeasure::normalize(pts(&[0.0, 1.0]), vec![2.0, 2.0]).unwrap();
        assert_eq!(m.masses(), &[0.5, 0.5]);
    }

    #[test]
    fn moments_of_simple_measures() {
        let d0 = DiscreteMeasure::dirac(Point::real(0.0));
        assert_eq!(moment(&d0, &[3], &[0]).unwrap(), 0.0);
        let sym = DiscreteMeasure::uniform(pts(&[-1.0, 1.0])).unwrap();
        assert_eq!(moment(&sym, &[2], &[0]).unwrap(), 1.0);
        let roots = DiscreteMeasure::uniform(
            vec![Cplx::new(1.0, 0.0), Cplx::new(0.0, 1.0), Cplx::new(-1.0, 0.0), Cplx::new(0.0, -1.0)]
                .into_iter()
                .map(Point::scalar)
                .collect(),
        )
        .unwrap();
        assert_eq!(moment(&roots, &[1], &[0]).unwrap(), 0.0);
        assert!(moment(&roots, &[1, 0], &[0]).is_err());
    }

    #[test]
    fn index_count_matches_binomial() {
        assert_eq!(moment_indices(1, 2).len(), 6);
        assert_eq!(moment_indices(2, 3).len(), crate::scalar::binomial(7, 3));
    }

    #[test]
    fn neighborhood_identity_and_separation() {
        let mu = DiscreteMeasure::uniform(pts(&[-0.3, 0.2, 0.9])).unwrap();
        for eps in [1e-9, 0.1, 10.0] {
            let g = NeighborhoodSpec::new(mu.clone(), 4, eps).unwrap();
            assert!(in_neighborhood(&mu, &g).unwrap());
        }
        let g = NeighborhoodSpec::new(DiscreteMeasure::dirac(Point::real(0.0)), 1, 0.5).unwrap();
        assert!(!in_neighborhood(&DiscreteMeasure::dirac(Point::real(1.0)), &g).unwrap());
        assert!(NeighborhoodSpec::new(mu, 1, 0.0).is_err());
    }

    #[test]
    fn distance_between_point_masses() {
        let a = DiscreteMeasure::dirac(Point::real(0.0));
        let b = DiscreteMeasure::dirac(Point::real(1.0));
        assert_eq!(weak_star_distance(&a, &b, 1).unwrap(), 0.5);
        assert_eq!(weak_star_distance(&a, &a, 4).unwrap(), 0.0);
    }

    #[test]
    fn json_form_validates() {
        let m = DiscreteMeasure::uniform(pts(&[0.0, 1.0])).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"atoms":[[0.0,0.0],[1.0,0.0]],"masses":[0.5,0.5]}"#);
        let bad = r#"{"atoms":[[0.0,0.0]],"masses":[0.7]}"#;
        assert!(serde_json::from_str::<DiscreteMeasure<f64>>(bad).is_err());
    }
}
