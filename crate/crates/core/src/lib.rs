//! Actor-critic learning for risk-constrained linear quadratic regulation.
//!
//! * [`matkit`]: symmetric vectorization, discrete Lyapunov solver, projections.
//! * [`plant`]: the stochastic LTI environment and its noise statistics.
//! * [`oracle`]: model-based closed forms and a reference primal-dual solver.
//! * [`learner`]: the model-free multi-time-scale actor-critic loop.
//!
//! The `parallel` feature (on by default) runs the Monte Carlo and batch
//! loops on rayon; see [`exec`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod learner;
pub mod matkit;
pub mod oracle;
pub mod plant;

pub use error::{Error, Result};
