//! Two-site DMRG for the ladder Hamiltonians.
//!
//! Every ladder Hamiltonian built here is a real matrix (Y factors only occur
//! in `Y⊗Y` pairs), so states and operators are stored as `f64` tensors. The
//! non-Hermitian amplitude-damping ladders are solved for the right
//! eigenvector with the smallest real eigenvalue; no left state is tracked.

pub mod checkpoint;
pub mod krylov;
pub mod mpo;
pub mod mps;
pub mod sweep;

pub use mpo::{build_mpo, build_mpo_from_terms, expectation, sandwich, MatrixProductOperator};
pub use mps::{overlap, MatrixProductState};
pub use sweep::{
    ground_state, ground_state_from, identity_vector_state, initial_state, seeded_initial_state, solve_ladder,
    DmrgOptions, DmrgResult, PinningPattern, SolverKind,
};
