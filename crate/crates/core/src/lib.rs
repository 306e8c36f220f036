//! Few-step sampling of flow-matching ODEs with a bi-anchor interpolation
//! solver.
//!
//! The crate is a small laboratory around one idea: a cheap auxiliary network
//! (the [`sidenet`]) predicts how the backbone velocity changes over a time
//! offset, which lets a quadrature rule integrate each interval from velocities
//! the backbone never computed. The bi-anchor solver in [`solvers`] predicts
//! interior nodes from whichever interval endpoint is closer, and reuses the
//! terminal backbone evaluation as the next interval's start, so `N` intervals
//! cost exactly `N` backbone evaluations.
//!
//! Modules, bottom up:
//!
//! - [`nnet`]: dense tanh MLPs with hand-written backprop, Adam, JSON checkpoints.
//! - [`quadrature`]: Gauss-Legendre, Gauss-Lobatto, Simpson and trapezoid rules on `[0, 1]`.
//! - [`flow`]: the [`flow::VelocityField`] abstraction, analytic oracle fields and
//!   backbone training by flow matching.
//! - [`sidenet`]: the deviation model and its chain-based training.
//! - [`solvers`]: Euler, Heun, single-anchor and bi-anchor samplers.
//! - [`analysis`]: convergence-order fits and drift-error scans.
//! - [`datasets`] / [`metrics`]: 2-D toy data and sample-quality distances.
//! - [`cli`]: the `bianchor` command-line driver.
//!
//! Time runs from `t = 1` (noise) down to `t = 0` (data) throughout.

pub mod analysis;
pub mod cli;
pub mod datasets;
mod error;
pub mod flow;
pub mod metrics;
pub mod nnet;
pub mod quadrature;
pub mod rng;
pub mod sidenet;
pub mod solvers;

pub use error::{Error, Result};
pub use nnet::TensorBuffer;
