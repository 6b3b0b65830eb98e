//! Finite element laboratory for second-order elliptic Neumann problems with
//! drift and reaction terms `-div(A grad u + b u) + c·grad u + d u`.
//!
//! The crate builds simplicial meshes of boxes and Lipschitz graph domains,
//! assembles the weak forms of the Neumann problem in direct, adjoint and
//! reduced-drift variants, constructs discrete Neumann Green functions from
//! mollified point sources, computes Lorentz quasi-norms from exact level-set
//! geometry, and runs a registry of named verification experiments
//! (kernel dimensions, Green symmetry and scaling, splitting lemmas,
//! counterexamples with drift fields that violate the boundary sign
//! condition).

pub mod config;
pub mod error;
pub mod expr;
pub mod fe;
pub mod geom;
pub mod green;
pub mod linalg;
pub mod mesh;
pub mod operator;
pub mod quad;
pub mod rearrange;
pub mod report;
pub mod split;

pub mod experiments;

pub use error::{Error, Result};
