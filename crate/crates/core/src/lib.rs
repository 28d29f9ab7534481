//! Shallow networks whose neurons apply multivariate nonlinearities to
//! projections `A x - t`, with `A` an orthonormal-row matrix.
//!
//! The crate covers the whole chain behind these models: the regularizing
//! operator and its constants ([`operator`]), the Green's-function
//! nonlinearities ([`greens`]), the polynomial null space ([`polyspace`]), a
//! grid-based k-plane transform ([`kplane`]), the network model class
//! ([`network`]), convex and nonconvex fitting ([`solver`]) and reference
//! solutions for the limiting cases ([`oracles`]). [`verify`] bundles the
//! end-to-end numerical checks.

// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fourier;
pub mod greens;
pub mod grid;
pub mod kplane;
pub mod network;
pub mod operator;
pub mod oracles;
pub mod polyspace;
pub mod rng;
pub mod solver;
pub mod stiefel;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{GridFunction, UniformGrid};
pub use operator::OperatorSpec;
