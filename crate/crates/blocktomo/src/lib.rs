//! Block-stochastic gradient descent for tomographic image reconstruction.
//!
//! The system matrix of a fan-beam or cone-beam scan is partitioned into a
//! grid of row blocks (groups of projection angles) and column blocks
//! (contiguous image tiles).  A master process keeps per-block partial
//! forward projections and partial gradients in memory and farms individual
//! block applications out to servant nodes, so an epoch touches only a
//! random subset of blocks while the update direction still aggregates every
//! stored partial gradient.  The crate also ships the classical and
//! stochastic baselines the block solver is compared against, a least-squares
//! oracle, an augmented-state recursion for fixed-point checks, and a small
//! experiment runner with a cost ledger that models the cluster traffic.

pub mod arrayio;
pub mod baselines;
pub mod block;
pub mod config;
pub mod error;
pub mod fixedpoint;
pub mod geometry;
pub mod importance;
pub mod ledger;
pub mod lsqr;
pub mod metrics;
pub mod partition;
pub mod phantom;
pub mod runner;
pub mod siddon;
pub mod solver;
pub mod system;
pub mod tv;

pub(crate) mod util;

pub use error::{Error, Result};
