//! Lattice cylinder-measure renormalization toolkit.
//!
//! Reference Lévy families on refining hypercube lattices, exact
//! conditional-expectation calculus, generalized Wick ordering, kinetic
//! energy renormalization and the connected-graph expansion of effective
//! Lagrangians, with a Monte Carlo oracle for weak checks.

pub mod condexp;
pub mod effective;
pub mod exact;
pub mod graphs;
pub mod kinetic;
pub mod lattice;
pub mod mc_oracle;
pub mod reference;
pub mod wick;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
