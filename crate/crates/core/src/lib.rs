//! Sparse-grid and adaptive multiwavelet discontinuous Galerkin solver for
//! the 1D2V Vlasov-Maxwell and 2D2V Vlasov-Ampere systems.
//!
//! Phase space is the box `Omega_x x Omega_xi`, mapped affinely onto the unit
//! cube. The distribution function is stored in the tensor Alpert multiwavelet
//! basis, normalized to be orthonormal on the physical box, so Parseval holds
//! directly for physical L2 quantities.

pub mod adaptivity;
pub mod basis1d;
pub mod diagnostics;
pub mod error;
pub mod fullgrid;
pub mod hiergrid;
pub mod kron;
pub mod operators;
pub mod problems;
pub mod scalar;
pub mod timeint;

pub use error::{Error, Result};
pub use scalar::Real;

/// Scalar type used by the solver front end.
pub type Scalar = f64;
/// Distribution function over [`Scalar`].
pub type Distribution = operators::DistributionField<Scalar>;
/// Electromagnetic field over [`Scalar`].
pub type Fields = operators::EmField<Scalar>;
/// Joint state over [`Scalar`].
pub type State = operators::VmState<Scalar>;
/// Solver over [`Scalar`].
pub type Solver = operators::VlasovSolver<Scalar>;
