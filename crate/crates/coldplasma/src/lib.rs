//! Structure-preserving simulation of a cold relativistic electron fluid
//! coupled to relativistic macro-particles through Maxwell's equations.
//!
//! The spatial discretization uses compatible finite elements on structured
//! hexahedral meshes: continuous nodal, edge (curl-conforming), face
//! (div-conforming) and broken families that form a discrete de Rham
//! sequence.  Two semi-discrete formulations are provided, a flux-free one
//! with nodal density/momentum and a discontinuous-Galerkin one with upwind
//! face fluxes.  Both conserve total mass, total energy, the weak Gauss law
//! and the divergence constraint on the magnetic field.
//!
//! Time integration is either a fully implicit average-vector-field scheme
//! (conserves all invariants to solver tolerance) or explicit SSP-RK3 /
//! forward Euler (conserve mass, div B and, without particles, the Gauss
//! law; an exact projection-based cleaning step restores the Gauss law in
//! particle runs).
//!
//! The [`harness`] module drives the bundled experiments: a manufactured
//! solution convergence study, conservation studies and a scaled plasma
//! wake-field demo.  Runnable entry points live in `examples/`; the same
//! capabilities are reachable through the thin `coldplasma` binary.

pub mod diagnostics;
pub mod error;
pub mod fespace;
pub mod harness;
pub mod integrators;
pub mod mesh;
pub mod particles;
pub mod quadrature;
pub mod semidiscrete;
pub mod sequence;
pub mod solvers;
pub mod vec3;

pub use error::{Error, Result};
