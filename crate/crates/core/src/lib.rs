//! Quantum phase diagrams from reduced fidelity susceptibility (RFS) fields
//! and order-parameter discovery on spin chains.
//!
//! The pipeline: build a parametric Hamiltonian ([`models`]), sweep ground
//! states over a parameter lattice ([`eigensolver`]), reduce to a centered
//! window ([`qstate`]), turn neighbor fidelities into the RFS field and its
//! angle map ([`rfsfield`]), label phases by angle and solve for the
//! observable that separates them ([`ordparam`]), then check scaling with
//! chain length ([`fss`]).

pub mod cli;
pub mod eigensolver;
pub mod error;
pub mod fss;
pub mod linalg;
pub mod models;
pub mod ordparam;
pub mod qstate;
pub mod rfsfield;
pub mod sparse;

pub use error::{Error, Result};
