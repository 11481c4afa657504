//! Spectral-Galerkin simulation of the primitive equations with horizontal
//! viscosity on `(−h, h) × (0, Lx) × (0, Ly)`, with lateral Dirichlet and
//! kinematic top/bottom conditions.

// `!(x > 0.0)` is used on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod checkpoint;
pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod beam;
pub mod error;
pub mod field;
pub mod periodic;
pub mod profiles;
pub mod quadrature;

pub use basis::{build_basis, DomainSpec, SpectralBasis};
pub use error::{Error, Result};
pub use field::{RawField, VelocityField};
