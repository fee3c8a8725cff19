//! Numerical laboratory for dually flat convex geometries.
//!
//! A strictly convex potential on an open domain induces the usual Hessian
//! structure: dual coordinates via the gradient map, a Riemannian metric from
//! the second derivatives, and the cubic tensor from the third. On top of
//! that structure this crate integrates the two natural gradient flows and
//! checks, to quantified tolerances, that their trajectories are
//! pre-geodesics of the mixture connection and of the Weyl integrable
//! structure obtained from the squared gradient-field norm.
//!
//! Modules:
//! - [`potentials`]: convex potential models, charts, derivatives.
//! - [`duality`]: Legendre transform, coordinate inversion, orthogonality.
//! - [`connections`]: alpha/mixture/Levi-Civita/Weyl connections, gauge
//!   transformations, parallel transport.
//! - [`flows`]: fixed and adaptive integration of both gradient flows,
//!   conserved quantities, rate identities.
//! - [`geodesics`]: pre-geodesic residuals, proper-time defect, step-halving
//!   convergence studies.

pub mod connections;
pub mod duality;
mod error;
pub mod fd;
pub mod flows;
pub mod geodesics;
mod linalg;
pub mod potentials;
pub mod tensor;

pub use error::{Error, Result};
pub use potentials::{Chart, Point, PotentialModel};
pub use tensor::Rank3;
