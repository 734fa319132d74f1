//! Weighted pluripotential theory on finite grids: weighted Fekete points and
//! transfinite diameters, Bernstein-Markov constants, determinantal ensembles
//! with exact partition functions, univariate equilibrium measures, and an
//! empirical check of the large-deviation rate.
//!
//! Everything is generic over `f32`/`f64` through [`scalar::Real`]; the
//! `*64` aliases below fix `f64`.

pub mod bernstein_markov;
pub mod energy;
pub mod ensembles;
pub mod error;
pub mod fekete;
pub mod geometry;
pub mod io;
pub mod ldp;
pub mod linalg;
pub mod measure;
pub mod polynomials;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod weight;

pub use error::{Error, Result};
pub use geometry::CompactSetSpec;
pub use weight::{parse_weight, Weight};

pub type Point64 = geometry::Point<f64>;
pub type Measure64 = measure::DiscreteMeasure<f64>;
pub type Configuration64 = polynomials::Configuration<f64>;
pub type EquilibriumResult64 = energy::EquilibriumResult<f64>;
pub type FeketeReport64 = fekete::FeketeReport<f64>;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
