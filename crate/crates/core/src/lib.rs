//! Exact S-arithmetic lattices, quadratic forms over ℚ_S, lattice-point
//! counting near quadrics, quadric volumes and Siegel-transform moments.

// Index loops mirror the matrix formulas; `!(a < b)` comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod congruence;
pub mod counting;
pub mod error;
pub mod io;
pub mod matrix;
pub mod moments;
pub mod qspace;
pub mod rng;
pub mod sarith;
pub mod slattice;
pub mod volume;

pub use error::{Error, Result};
pub use matrix::QMat;
pub use num_bigint::BigInt;
pub use num_rational::BigRational;
pub use sarith::{Place, SConfig, SRational, SVector, TVector};
