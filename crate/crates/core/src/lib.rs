//! Generative policy networks for robot throwing.
//!
//! This crate holds the algorithmic core and needs only `alloc`:
//!
//! * [`kinematics`]: serial-link arm model, cubic launch trajectories,
//!   forward kinematics and end-effector velocity.
//! * [`world`]: drag-free ball flight, box obstacles, occlusion maps and
//!   collision predicates.
//! * [`repertoire`]: quality-diversity search over throwing policies and
//!   nearest-landing retrieval.
//! * [`neuralnet`]: dense networks with exact backpropagation and Adam.
//! * [`gpn`]: the conditional generative policy network and its sampling
//!   loops.
//! * [`baselines`]: lookup, noisy lookup, conditional KDE and Bayesian
//!   optimization.
//! * [`metrics`]: RMSE, trajectory diversity, harmonic mean, success
//!   proportion and Welch's t-test.
//!
//! File formats, configuration and the command line live in the `gpn`
//! companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod error;
pub mod gpn;
pub mod kinematics;
pub mod math;
pub mod metrics;
pub mod neuralnet;
pub mod repertoire;
pub mod rng;
pub mod world;

pub use error::{Error, Result};

/// Crate version, recorded in output file headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
