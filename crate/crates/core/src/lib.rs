//! Conditional local independence testing for Itô processes.
//!
//! The pipeline mirrors how the test is used in practice:
//!
//! 1. [`sdesim`] generates multivariate Ornstein–Uhlenbeck trajectories (or
//!    [`io`] reads observed ones from CSV).
//! 2. [`ouest`] fits the drift and diffusion of an OU model on training folds.
//! 3. [`filter`] runs the optimal filtering equations for a query
//!    `α ↛ β | C`, producing the projections Π̂ and μ̂ on held-out folds.
//! 4. [`lcmtest`] turns those into the local covariance measure path γ̂, its
//!    variance, the sup-statistic and a p-value, optionally cross-fitted.
//! 5. [`ligraph`] sweeps all ordered pairs to recover a local independence
//!    graph and compares graphs by structural Hamming distance.
//!
//! Data-parallel loops (trajectories, folds, repetitions, pairs) run on rayon
//! when the `parallel` feature is enabled and sequentially otherwise. Results
//! are identical in both modes: every random stream is keyed by
//! `(seed, index)` and every reduction runs in index order.

pub mod error;
pub mod experiment;
pub mod filter;
pub mod io;
pub mod lcmtest;
pub mod ligraph;
pub mod matcore;
pub mod ouest;
pub mod par;
pub mod rng;
pub mod sdesim;

pub use error::{Error, Result};
pub use filter::QuerySpec;
pub use lcmtest::TestResult;
pub use ligraph::LIGraph;
pub use matcore::Matrix;
pub use ouest::{EstimatedOUModel, EstimationConfig};
pub use sdesim::{OUModel, TimeGrid, TrajectorySet};
