//! Logarithmic potentials, energies and weighted equilibrium measures in one
//! complex variable.
//!
//! Continuous measures are represented on a grid: each atom stands for a
//! uniform mini-segment (its cell). The continuum energy adds the exact
//! self-energy `3/2 - log h` of a segment of length `h` per unit mass squared,
//! which replaces the undefined `log 0` on the diagonal.

pub mod qp;

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::fekete::{transfinite_diameter_at, FeketeOptions};
use crate::geometry::{nearest_neighbor_cells, CompactSetSpec, Point};
use crate::io::Table;
use crate::measure::DiscreteMeasure;
use crate::scalar::Real;
use crate::weight::Weight;

pub use qp::{project_simplex, solve_simplex_qp, QpOptions, QpSolution, SymMatrix};

/// How the diagonal of the energy double sum is treated.
#[derive(Clone, Debug, PartialEq)]
pub enum EnergyMode<T> {
    /// Pairs `i != j` only. A single atom has energy zero.
    Offdiag,
    /// Adds `m_i^2 (3/2 - log h_i)` per atom. `None` takes the cells from
    /// the atom spacing (see [`voronoi_cells`]).
    Continuum(Option<Vec<T>>),
}

fn check_univariate<T: Real>(mu: &DiscreteMeasure<T>) -> Result<()> {
    if mu.dim() != 1 {
        return Err(Error::Dimension { expected: 1, found: mu.dim() });
    }
    Ok(())
}

/// `-log|z - w|`.
fn log_kernel<T: Real>(z: &Point<T>, w: &Point<T>) -> T {
    -(z.z() - w.z()).norm().ln()
}

/// Self-energy of a uniform unit mass on a segment of length `h`.
pub fn segment_self_energy<T: Real>(h: T) -> T {
    T::lit(1.5) - h.ln()
}

/// `p_mu(z) = sum m_i log(1/|z - z_i|)`; `+inf` on an atom of positive mass.
pub fn log_potential<T: Real>(mu: &DiscreteMeasure<T>, z: &Point<T>) -> Result<T> {
    check_univariate(mu)?;
    if z.dim() != 1 {
        return Err(Error::Dimension { expected: 1, found: z.dim() });
    }
    let mut p = T::zero();
    for (a, &m) in mu.atoms().iter().zip(mu.masses()) {
        if m > T::zero() {
            p += m * log_kernel(z, a);
        }
    }
    Ok(p)
}

/// Cell lengths from the atom spacing: half the distance between the two
/// neighbors for sorted real atoms (the single gap at the ends), nearest
/// neighbor distance otherwise.
pub fn voronoi_cells<T: Real>(atoms: &[Point<T>]) -> Vec<T> {
    let m = atoms.len();
    if m < 2 || !atoms.iter().all(|a| a.is_real()) {
        return nearest_neighbor_cells(atoms);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| atoms[i].z().re.partial_cmp(&atoms[j].z().re).unwrap_or(std::cmp::Ordering::Equal));
    let x: Vec<T> = order.iter().map(|&i| atoms[i].z().re).collect();
    let mut cells = vec![T::zero(); m];
    for r in 0..m {
        let h = if r == 0 {
            x[1] - x[0]
        } else if r + 1 == m {
            x[m - 1] - x[m - 2]
        } else {
            (x[r + 1] - x[r - 1]) / T::lit(2.0)
        };
        cells[order[r]] = h;
    }
    cells
}

/// `I(mu) = sum_{i,j} m_i m_j log(1/|z_i - z_j|)` with the diagonal set by `mode`.
///
/// Distinct atoms at the same location give `+inf`.
pub fn energy<T: Real>(mu: &DiscreteMeasure<T>, mode: &EnergyMode<T>) -> Result<T> {
    check_univariate(mu)?;
    let atoms = mu.atoms();
    let ms = mu.masses();
    let m = atoms.len();
    let cells = match mode {
        EnergyMode::Offdiag => None,
        EnergyMode::Continuum(Some(c)) => {
            if c.len() != m {
                return Err(Error::Dimension { expected: m, found: c.len() });
            }
            Some(c.clone())
        }
        EnergyMode::Continuum(None) => Some(voronoi_cells(atoms)),
    };
    let mut e = T::zero();
    for i in 0..m {
        if ms[i] == T::zero() {
            continue;
        }
        let mut row = T::zero();
        for j in (i + 1)..m {
            if ms[j] > T::zero() {
                row += ms[j] * log_kernel(&atoms[i], &atoms[j]);
            }
        }
        e += T::lit(2.0) * ms[i] * row;
        if let Some(c) = &cells {
            e += ms[i] * ms[i] * segment_self_energy(c[i]);
        }
    }
    Ok(if e.is_nan() { T::infinity() } else { e })
}

/// `I^Q(mu) = I(mu) + 2 int Q dmu`.
pub fn weighted_energy<T: Real>(mu: &DiscreteMeasure<T>, q: &Weight, mode: &EnergyMode<T>) -> Result<T> {
    q.check_dim(1)?;
    let e = energy(mu, mode)?;
    let mut wq = T::zero();
    for (a, &m) in mu.atoms().iter().zip(mu.masses()) {
        if m > T::zero() {
            wq += m * q.eval(a);
        }
    }
    Ok(e + T::lit(2.0) * wq)
}

/// Continuum-mode kernel matrix on a grid: `-log|z_i - z_j|` off the
/// diagonal, `3/2 - log h_i` on it.
pub fn kernel_matrix<T: Real>(points: &[Point<T>], cells: &[T]) -> Result<SymMatrix<T>> {
    if cells.len() != points.len() {
        return Err(Error::Dimension { expected: points.len(), found: cells.len() });
    }
    if cells.iter().any(|&h| !(h > T::zero())) {
        return Err(Error::Geometry("every grid cell needs positive length".into()));
    }
    Ok(SymMatrix::from_fn(points.len(), |i, j| {
        if i == j {
            segment_self_energy(cells[i])
        } else {
            log_kernel(&points[i], &points[j])
        }
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumOptions {
    pub qp: QpOptions,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions { qp: QpOptions::default() }
    }
}

/// Discrete weighted equilibrium measure on a grid.
#[derive(Clone, Debug)]
pub struct EquilibriumResult<T> {
    /// `None` when solved on an explicit grid.
    pub spec: Option<CompactSetSpec>,
    /// Every candidate, zero masses included.
    pub mu_eq: DiscreteMeasure<T>,
    pub cells: Vec<T>,
    /// Robin-type constant: `p + Q = F` on the support.
    pub f_robin: T,
    /// `I^Q(mu_eq)`.
    pub iq_min: T,
    /// `p_{mu_eq}` at each candidate (continuum self-term included).
    pub potential: Vec<T>,
    /// `F - p_{mu_eq}` at each candidate.
    pub extremal_values: Vec<T>,
    pub kkt_residual: T,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimizer of `I^Q` over probability measures on the grid of `spec`.
pub fn equilibrium_measure<T: Real>(spec: &CompactSetSpec, q: &Weight, opts: &EquilibriumOptions) -> Result<EquilibriumResult<T>> {
    if spec.dim() != 1 {
        return Err(Error::Dimension { expected: 1, found: spec.dim() });
    }
    q.check_dim(1)?;
    let (points, cells) = spec.discretize_with_cells::<T>()?;
    let cells = cells.ok_or_else(|| Error::Geometry("grid cells unavailable".into()))?;
    let qv = q.values_on(&points)?;
    let mut r = equilibrium_on_grid(points, cells, &qv, opts)?;
    r.spec = Some(spec.clone());
    Ok(r)
}

/// As [`equilibrium_measure`] for explicit candidates, cells and weight values
/// (`+inf` excludes a candidate).
pub fn equilibrium_on_grid<T: Real>(
    points: Vec<Point<T>>,
    cells: Vec<T>,
    qvals: &[T],
    opts: &EquilibriumOptions,
) -> Result<EquilibriumResult<T>> {
    if qvals.len() != points.len() {
        return Err(Error::Dimension { expected: points.len(), found: qvals.len() });
    }
    if let Some(p) = points.iter().find(|p| p.dim() != 1) {
        return Err(Error::Dimension { expected: 1, found: p.dim() });
    }
    if qvals.iter().all(|v| !v.is_finite()) {
        return Err(Error::InadmissibleWeight);
    }
    let a = kernel_matrix(&points, &cells)?;
    let sol = solve_simplex_qp(&a, qvals, &opts.qp);
    let potential = a.apply(&sol.x);
    let extremal_values = potential.iter().map(|&p| sol.multiplier - p).collect();
    let mu_eq = DiscreteMeasure::normalize(points, sol.x)?;
    Ok(EquilibriumResult {
        spec: None,
        mu_eq,
        cells,
        f_robin: sol.multiplier,
        iq_min: sol.objective,
        potential,
        extremal_values,
        kkt_residual: sol.kkt_residual,
        converged: sol.converged,
        iterations: sol.iterations,
    })
}

#[derive(Serialize)]
struct EquilibriumJson {
    atoms: Vec<Vec<f64>>,
    masses: Vec<f64>,
    #[serde(rename = "F")]
    f: f64,
    #[serde(rename = "IQ_min")]
    iq_min: f64,
    kkt_residual: f64,
}

impl<T: Real> EquilibriumResult<T> {
    /// `{atoms, masses, F, IQ_min, kkt_residual}`.
    pub fn to_json(&self) -> serde_json::Value {
        let j = EquilibriumJson {
            atoms: self.mu_eq.atoms().iter().map(|a| a.to_flat()).collect(),
            masses: self.mu_eq.masses().iter().map(|m| m.as_f64()).collect(),
            f: self.f_robin.as_f64(),
            iq_min: self.iq_min.as_f64(),
            kkt_residual: self.kkt_residual.as_f64(),
        };
        serde_json::to_value(j).unwrap_or_else(|_| json!(null))
    }

    /// Columns `x, y, mass, density, cdf, potential, extremal`.
    pub fn density_table(&self) -> Table {
        let mut t = Table::new(&["x", "y", "mass", "density", "cdf", "potential", "extremal"]);
        let mut cdf = 0.0;
        for (i, (a, &m)) in self.mu_eq.atoms().iter().zip(self.mu_eq.masses()).enumerate() {
            let z = a.z();
            cdf += m.as_f64();
            t.push(vec![
                z.re.as_f64().into(),
                z.im.as_f64().into(),
                m.as_f64().into(),
                (m / self.cells[i]).as_f64().into(),
                cdf.into(),
                self.potential[i].as_f64().into(),
                self.extremal_values[i].as_f64().into(),
            ]);
        }
        t
    }

    /// Cell length of each atom of `mu`: grid cells for candidates, atom
    /// spacing when any atom is off the grid.
    fn cells_for(&self, mu: &DiscreteMeasure<T>) -> Vec<T> {
        let index: std::collections::HashMap<Vec<u64>, usize> =
            self.mu_eq.atoms().iter().enumerate().map(|(i, a)| (a.key(), i)).collect();
        let hits: Option<Vec<T>> = mu.atoms().iter().map(|a| index.get(&a.key()).map(|&i| self.cells[i])).collect();
        hits.unwrap_or_else(|| voronoi_cells(mu.atoms()))
    }
}

/// `1/2 [I^Q(mu) - I^Q(mu_eq)]`, both energies in continuum mode.
pub fn rate_function<T: Real>(mu: &DiscreteMeasure<T>, eq: &EquilibriumResult<T>, q: &Weight) -> Result<T> {
    check_univariate(mu)?;
    if let Some(spec) = &eq.spec {
        let off = mu.atoms().iter().zip(mu.masses()).any(|(a, &m)| m > T::zero() && !spec.contains(a, 1e-9));
        if off {
            return Err(Error::Measure("measure has atoms outside K".into()));
        }
    }
    let cells = eq.cells_for(mu);
    let iq = weighted_energy(mu, q, &EnergyMode::Continuum(Some(cells)))?;
    Ok((iq - eq.iq_min) / T::lit(2.0))
}

/// Fekete-side limit of the normalized weighted diameters against the
/// energy-side value `exp(-1/2 I^Q(mu_eq))`.
#[derive(Clone, Debug, Serialize)]
pub struct WIdentityReport {
    pub ks: Vec<usize>,
    pub normalized: Vec<f64>,
    /// Log-aware extrapolation of the normalized values.
    pub fekete_estimate: f64,
    pub richardson: f64,
    pub iq_min: f64,
    pub energy_estimate: f64,
    pub relative_gap: f64,
}

pub fn w_energy_identity_check<T: Real>(
    spec: &CompactSetSpec,
    q: &Weight,
    ks: &[usize],
    fekete: &FeketeOptions,
    opts: &EquilibriumOptions,
) -> Result<WIdentityReport> {
    let eq = equilibrium_measure::<T>(spec, q, opts)?;
    let td = transfinite_diameter_at::<T>(spec, q, ks, fekete)?;
    let energy_estimate = (-0.5 * eq.iq_min.as_f64()).exp();
    let fekete_estimate = td.log_fit.as_f64();
    Ok(WIdentityReport {
        ks: ks.to_vec(),
        normalized: td.reports.iter().map(|r| r.normalized.as_f64()).collect(),
        fekete_estimate,
        richardson: td.richardson.as_f64(),
        iq_min: eq.iq_min.as_f64(),
        energy_estimate,
        relative_gap: (fekete_estimate - energy_estimate).abs() / energy_estimate,
    })
}

/// One step `j` of the monotone weight approximation.
#[derive(Clone, Debug, Serialize)]
pub struct LaststepRow {
    pub j: usize,
    /// Robin constant of `Q_j`.
    pub f_j: f64,
    /// `I(mu_j)`.
    pub energy_j: f64,
    /// `int Q_j dmu_j`.
    pub weight_integral_j: f64,
    pub kkt_residual: f64,
    pub energy_gap: f64,
    pub weight_integral_gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LaststepTable {
    pub rows: Vec<LaststepRow>,
    /// `I(mu)` on the grid.
    pub energy_mu: f64,
    /// `int u dmu = -I(mu)`.
    pub weight_integral_mu: f64,
}

impl LaststepTable {
    /// Columns `j, F_j, I_mu_j, int_u_j, kkt_residual, energy_gap, u_gap`.
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["j", "F_j", "I_mu_j", "int_u_j", "kkt_residual", "energy_gap", "u_gap"]);
        for r in &self.rows {
            t.push(vec![
                r.j.into(),
                r.f_j.into(),
                r.energy_j.into(),
                r.weight_integral_j.into(),
                r.kkt_residual.into(),
                r.energy_gap.into(),
                r.weight_integral_gap.into(),
            ]);
        }
        t
    }
}

/// Masses of `mu` on the grid: exact when the atoms are candidates, nearest
/// candidate otherwise.
fn bin_onto<T: Real>(mu: &DiscreteMeasure<T>, grid: &[Point<T>]) -> Vec<T> {
    let index: std::collections::HashMap<Vec<u64>, usize> = grid.iter().enumerate().map(|(i, a)| (a.key(), i)).collect();
    let mut m = vec![T::zero(); grid.len()];
    for (a, &w) in mu.atoms().iter().zip(mu.masses()) {
        let i = index.get(&a.key()).copied().unwrap_or_else(|| {
            let mut best = (T::infinity(), 0);
            for (i, g) in grid.iter().enumerate() {
                let d = g.distance(a);
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        });
        m[i] += w;
    }
    m
}

/// Equilibrium measures of the weights `Q_j = max(u, c_j) + 1/j^2`, with
/// `u = -p_mu` on the grid and `c_j = min u + (max u - min u)/j^2`, for
/// `j = 1..=j_max`. `Q_j` decreases to `u`, so `F_j -> 0`,
/// `I(mu_j) -> I(mu)` and `int Q_j dmu_j -> int u dmu`.
pub fn monotone_weight_approximation<T: Real>(
    mu: &DiscreteMeasure<T>,
    spec: &CompactSetSpec,
    j_max: usize,
    opts: &EquilibriumOptions,
) -> Result<LaststepTable> {
    check_univariate(mu)?;
    if j_max == 0 {
        return Err(Error::InvalidArgument("j_max must be at least 1".into()));
    }
    let (points, cells) = spec.discretize_with_cells::<T>()?;
    let cells = cells.ok_or_else(|| Error::Geometry("grid cells unavailable".into()))?;
    let a = kernel_matrix(&points, &cells)?;
    let m = bin_onto(mu, &points);
    let p = a.apply(&m);
    let energy_mu: T = m.iter().zip(&p).map(|(&x, &y)| x * y).sum();
    if !energy_mu.is_finite() {
        return Err(Error::InfiniteEnergy);
    }
    let u: Vec<T> = p.iter().map(|&v| -v).collect();
    let umin = u.iter().copied().fold(T::infinity(), T::min);
    let umax = u.iter().copied().fold(T::neg_infinity(), T::max);
    let mut rows = Vec::with_capacity(j_max);
    for j in 1..=j_max {
        let jj = T::from_count(j * j);
        let c = umin + (umax - umin) / jj;
        let qj: Vec<T> = u.iter().map(|&v| v.max(c) + T::one() / jj).collect();
        let r = equilibrium_on_grid(points.clone(), cells.clone(), &qj, opts)?;
        let mj = r.mu_eq.masses();
        let wint: T = mj.iter().zip(&qj).map(|(&x, &y)| x * y).sum();
        let ej = r.iq_min - T::lit(2.0) * wint;
        rows.push(LaststepRow {
            j,
            f_j: r.f_robin.as_f64(),
            energy_j: ej.as_f64(),
            weight_integral_j: wint.as_f64(),
            kkt_residual: r.kkt_residual.as_f64(),
            energy_gap: (ej - energy_mu).as_f64(),
            weight_integral_gap: (wint + energy_mu).as_f64(),
        });
    }
    Ok(LaststepTable { rows, energy_mu: energy_mu.as_f64(), weight_integral_mu: -energy_mu.as_f64() })
}
