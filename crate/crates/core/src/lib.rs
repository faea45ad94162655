//! Classically exact simulation of quantum backtracking on trees with
//! multiple marked vertices.
//!
//! The crate builds the walk operator `R_B·R_A(η)` as a dense orthogonal
//! matrix, reads phase- and amplitude-estimation statistics off its spectral
//! decomposition, runs the resistance-estimation and marked-vertex search
//! algorithms on top of those statistics, and checks the results against
//! independent classical oracles (Laplacian effective resistance, the κ
//! assignment, and the κ²-descent Markov chain).

pub mod algorithms;
pub mod descent;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod report;
pub mod resistance;
pub mod tree;
pub mod walk;

pub use error::{Error, Result};
