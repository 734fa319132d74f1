//! Compact sets presented as finite candidate grids.

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Cplx, Real};

/// A point of `C^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Point<T> {
    coords: Vec<Cplx<T>>,
}

impl<T: Real> Point<T> {
    pub fn new(coords: Vec<Cplx<T>>) -> Self {
        assert!(!coords.is_empty(), "points live in C^n with n >= 1");
        Point { coords }
    }

    /// A point of `C^1`.
    pub fn scalar(z: Cplx<T>) -> Self {
        Point { coords: vec![z] }
    }

    /// A real point of `C^1`.
    pub fn real(x: T) -> Self {
        Point::scalar(Cplx::new(x, T::zero()))
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Cplx<T>] {
        &self.coords
    }

    /// First coordinate; the whole point when `n = 1`.
    pub fn z(&self) -> Cplx<T> {
        self.coords[0]
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn is_real(&self) -> bool {
        self.coords.iter().all(|c| c.im == T::zero())
    }

    /// Euclidean norm in `C^n = R^2n`.
    pub fn norm(&self) -> T {
        self.coords.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt()
    }

    pub fn distance(&self, other: &Point<T>) -> T {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<T>()
            .sqrt()
    }

    /// Bitwise key for exact-equality deduplication.
    pub fn key(&self) -> Vec<u64> {
        self.coords
            .iter()
            .flat_map(|c| [c.re.as_f64().to_bits(), c.im.as_f64().to_bits()])
            .collect()
    }

    pub fn to_f64(&self) -> Point<f64> {
        Point { coords: self.coords.iter().map(|c| Cplx::new(c.re.as_f64(), c.im.as_f64())).collect() }
    }

    pub fn cast<U: Real>(&self) -> Point<U> {
        Point {
            coords: self.coords.iter().map(|c| Cplx::new(U::lit(c.re.as_f64()), U::lit(c.im.as_f64()))).collect(),
        }
    }

    /// Flat `[re_1, im_1, ..., re_n, im_n]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.coords.iter().flat_map(|c| [c.re.as_f64(), c.im.as_f64()]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.is_empty() || flat.len() % 2 != 0 {
            return Err(Error::Geometry(format!(
                "a point needs an even, nonzero number of coordinates, got {}",
                flat.len()
            )));
        }
        Ok(Point { coords: flat.chunks(2).map(|p| Cplx::new(T::lit(p[0]), T::lit(p[1]))).collect() })
    }
}

impl<T: Real> Serialize for Point<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(2 * self.coords.len()))?;
        for c in &self.coords {
            seq.serialize_element(&c.re.as_f64())?;
            seq.serialize_element(&c.im.as_f64())?;
        }
        seq.end()
    }
}

impl<'de, T: Real> Deserialize<'de> for Point<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V<T>(std::marker::PhantomData<T>);
        impl<'de, T: Real> Visitor<'de> for V<T> {
            type Value = Point<T>;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a flat array [re, im, ...]")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Point<T>, A::Error> {
                let mut flat = Vec::new();
                while let Some(x) = seq.next_element::<f64>()? {
                    flat.push(x);
                }
                Point::from_flat(&flat).map_err(de::Error::custom)
            }
        }
        d.deserialize_seq(V(std::marker::PhantomData))
    }
}

/// A compact set `K` and how to discretize it.
///
/// `resolution` counts candidates per unit length for intervals, and points
/// per angular axis for circles and tori. Point clouds ignore it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompactSetSpec {
    IntervalUnion {
        intervals: Vec<(f64, f64)>,
        resolution: usize,
    },
    Circle {
        #[serde(default)]
        center: (f64, f64),
        radius: f64,
        resolution: usize,
    },
    TorusGrid {
        n: usize,
        resolution: usize,
    },
    PointCloud {
        n: usize,
        points: Vec<Vec<f64>>,
        #[serde(default = "one")]
        resolution: usize,
    },
}

fn one() -> usize {
    1
}

impl CompactSetSpec {
    pub fn interval(a: f64, b: f64, resolution: usize) -> Self {
        CompactSetSpec::IntervalUnion { intervals: vec![(a, b)], resolution }
    }

    /// Interval `[a, b]` discretized with exactly `points` equispaced candidates.
    pub fn interval_with_points(a: f64, b: f64, points: usize) -> Self {
        let len = b - a;
        let res = if points <= 1 || len == 0.0 { 1 } else { ((points - 1) as f64 / len).round() as usize };
        // resolution is per unit length; only exact when (points-1)/len is integral
        debug_assert!(len == 0.0 || ((res as f64) * len).round() as usize + 1 == points);
        CompactSetSpec::IntervalUnion { intervals: vec![(a, b)], resolution: res }
    }

    pub fn unit_circle(points: usize) -> Self {
        CompactSetSpec::Circle { center: (0.0, 0.0), radius: 1.0, resolution: points }
    }

    pub fn dim(&self) -> usize {
        match self {
            CompactSetSpec::IntervalUnion { .. } | CompactSetSpec::Circle { .. } => 1,
            CompactSetSpec::TorusGrid { n, .. } | CompactSetSpec::PointCloud { n, .. } => *n,
        }
    }

    /// True when every candidate lies in `R^n`.
    pub fn is_real(&self) -> bool {
        match self {
            CompactSetSpec::IntervalUnion { .. } => true,
            CompactSetSpec::PointCloud { points, .. } => {
                points.iter().all(|p| p.iter().skip(1).step_by(2).all(|&im| im == 0.0))
            }
            _ => false,
        }
    }

    fn validate(&self) -> Result<()> {
        let res = match self {
            CompactSetSpec::IntervalUnion { intervals, resolution } => {
                if intervals.is_empty() {
                    return Err(Error::Geometry("empty interval union".into()));
                }
                for &(a, b) in intervals {
                    if !a.is_finite() || !b.is_finite() {
                        return Err(Error::Geometry("non-finite interval endpoint".into()));
                    }
                    if a > b {
                        return Err(Error::Geometry(format!("interval [{a}, {b}] has negative length")));
                    }
                }
                *resolution
            }
            CompactSetSpec::Circle { center, radius, resolution } => {
                if !(radius.is_finite() && *radius > 0.0) || !center.0.is_finite() || !center.1.is_finite() {
                    return Err(Error::Geometry("circle needs a finite center and positive radius".into()));
                }
                *resolution
            }
            CompactSetSpec::TorusGrid { n, resolution } => {
                if *n == 0 {
                    return Err(Error::Geometry("torus dimension must be at least 1".into()));
                }
                *resolution
            }
            CompactSetSpec::PointCloud { n, points, resolution } => {
                if *n == 0 {
                    return Err(Error::Geometry("ambient dimension must be at least 1".into()));
                }
                if points.is_empty() {
                    return Err(Error::Geometry("empty point cloud".into()));
                }
                for p in points {
                    if p.len() != 2 * n {
                        return Err(Error::Dimension { expected: 2 * n, found: p.len() });
                    }
                    if p.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Geometry("non-finite point coordinate".into()));
                    }
                }
                *resolution
            }
        };
        if res == 0 {
            return Err(Error::Geometry("resolution must be positive".into()));
        }
        Ok(())
    }

    /// Deterministic candidate list with exact duplicates removed
    /// (first occurrence kept).
    pub fn discretize<T: Real>(&self) -> Result<Vec<Point<T>>> {
        Ok(self.discretize_with_cells::<T>()?.0)
    }

    /// Candidates together with the length of the cell each one represents
    /// (one-dimensional sets only; `None` for `n >= 2`).
    pub fn discretize_with_cells<T: Real>(&self) -> Result<(Vec<Point<T>>, Option<Vec<T>>)> {
        self.validate()?;
        let mut raw: Vec<(Point<T>, f64)> = Vec::new();
        match self {
            CompactSetSpec::IntervalUnion { intervals, resolution } => {
                for &(a, b) in intervals {
                    let len = b - a;
                    if len == 0.0 {
                        raw.push((Point::real(T::lit(a)), 0.0));
                        continue;
                    }
                    let gaps = ((len * *resolution as f64).round() as usize).max(1);
                    let h = len / gaps as f64;
                    for i in 0..=gaps {
                        let x = if i == gaps { b } else { a + len * (i as f64) / (gaps as f64) };
                        let cell = if i == 0 || i == gaps { h / 2.0 } else { h };
                        raw.push((Point::real(T::lit(x)), cell));
                    }
                }
            }
            CompactSetSpec::Circle { center, radius, resolution } => {
                let m = *resolution;
                let arc = 2.0 * std::f64::consts::PI * radius / m as f64;
                for j in 0..m {
                    let (c, s) = unit_root(j, m);
                    let z = Cplx::new(center.0 + radius * c, center.1 + radius * s);
                    raw.push((Point::scalar(Cplx::new(T::lit(z.re), T::lit(z.im))), arc));
                }
            }
            CompactSetSpec::TorusGrid { n, resolution } => {
                let m = *resolution;
                let total = m.checked_pow(*n as u32).ok_or_else(|| Error::Geometry("torus grid too large".into()))?;
                for idx in 0..total {
                    let mut rem = idx;
                    let mut coords = vec![Cplx::new(T::zero(), T::zero()); *n];
                    for axis in (0..*n).rev() {
                        let (c, s) = unit_root(rem % m, m);
                        coords[axis] = Cplx::new(T::lit(c), T::lit(s));
                        rem /= m;
                    }
                    raw.push((Point::new(coords), f64::NAN));
                }
            }
            CompactSetSpec::PointCloud { points, .. } => {
                for p in points {
                    raw.push((Point::from_flat(p)?, f64::NAN));
                }
            }
        }
        let mut seen = std::collections::HashMap::new();
        let mut pts: Vec<Point<T>> = Vec::new();
        let mut cells: Vec<f64> = Vec::new();
        for (p, c) in raw {
            if !p.is_finite() {
                return Err(Error::Geometry("non-finite candidate".into()));
            }
            match seen.get(&p.key()) {
                Some(&i) => {
                    let prev: f64 = cells[i];
                    cells[i] = prev + c;
                }
                None => {
                    seen.insert(p.key(), pts.len());
                    pts.push(p);
                    cells.push(c);
                }
            }
        }
        if pts.is_empty() {
            return Err(Error::Geometry("empty candidate list".into()));
        }
        let cells = if self.dim() == 1 {
            if cells.iter().any(|c| c.is_nan()) {
                Some(nearest_neighbor_cells(&pts))
            } else {
                Some(cells.into_iter().map(T::lit).collect())
            }
        } else {
            None
        };
        Ok((pts, cells))
    }

    /// Membership test with absolute tolerance `tol`.
    pub fn contains<T: Real>(&self, z: &Point<T>, tol: f64) -> bool {
        if z.dim() != self.dim() {
            return false;
        }
        let z = z.to_f64();
        match self {
            CompactSetSpec::IntervalUnion { intervals, .. } => {
                let c = z.z();
                c.im.abs() <= tol && intervals.iter().any(|&(a, b)| c.re >= a - tol && c.re <= b + tol)
            }
            CompactSetSpec::Circle { center, radius, .. } => {
                let c = z.z() - Cplx::new(center.0, center.1);
                (c.norm() - radius).abs() <= tol
            }
            CompactSetSpec::TorusGrid { .. } => z.coords().iter().all(|c| (c.norm() - 1.0).abs() <= tol),
            CompactSetSpec::PointCloud { points, .. } => points.iter().any(|p| {
                Point::<f64>::from_flat(p).map(|q| q.distance(&z) <= tol).unwrap_or(false)
            }),
        }
    }
}

/// `(cos, sin)` of `2 pi j / m`, exact at quarter turns.
fn unit_root(j: usize, m: usize) -> (f64, f64) {
    if (4 * j) % m == 0 {
        match (4 * j / m) % 4 {
            0 => return (1.0, 0.0),
            1 => return (0.0, 1.0),
            2 => return (-1.0, 0.0),
            _ => return (0.0, -1.0),
        }
    }
    let t = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
    (t.cos(), t.sin())
}

/// Distance to the nearest other point, used as the cell length of an
/// unstructured one-dimensional point set.
pub fn nearest_neighbor_cells<T: Real>(pts: &[Point<T>]) -> Vec<T> {
    if pts.len() == 1 {
        return vec![T::zero()];
    }
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            pts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.distance(q))
                .fold(T::infinity(), T::min)
        })
        .collect()
}
