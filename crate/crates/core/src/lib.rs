//! Entry-specific estimation of partially observed matrices.
//!
//! The observation pattern of an `n x m` matrix is viewed as a bipartite
//! graph with one vertex per row and per column and one edge per observed
//! cell. Everything else in the crate is built on that graph:
//!
//! - [`additive`]: the electrical flow estimator for matrices of the form
//!   `a_i + b_j`, its least-squares twin, and effective-resistance error
//!   certificates.
//! - [`rank1`]: the ratio-on-path estimator for `a_i * b_j` matrices that
//!   averages over a maximum set of edge-disjoint paths.
//! - [`panel`]: heterogeneous two-way fixed effects on panel data, with
//!   difference-in-differences as the length-3 special case.
//! - [`sim`]: pattern generators and a reproducible Monte-Carlo harness.

#[cfg(test)]
#[macro_use]
mod test_util;

pub mod additive;
pub mod electrical;
pub mod error;
pub mod graph;
pub mod grid;
pub mod io;
pub mod maxflow;
pub mod panel;
pub mod rank1;
pub mod sim;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use graph::{BipartiteGraph, ComponentLabeling, ObservationMask, Vertex};
pub use grid::Grid;

/// Data matrices are dense `n x m`; unobserved cells are ignored.
pub type DataMatrix = nalgebra::DMatrix<f64>;
