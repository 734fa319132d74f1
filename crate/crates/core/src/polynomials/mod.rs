//! Monomial bases, log-domain Vandermonde determinants, Gram matrices and
//! weighted orthonormal systems.

mod basis;
mod orthonormal;
mod vandermonde;

pub use basis::{EvalBasis, Family, MonomialBasis, DEFAULT_BASIS_CAP};
pub use orthonormal::{
    bm_constant, bm_constant_detail, bm_constant_on, christoffel, gram_matrix, orthonormalize, polynomial_space_rank, BmConstant,
    Gram, OrthonormalSystem,
};
pub use vandermonde::{log_abs_vdm, log_abs_vdm_weighted, Configuration};
