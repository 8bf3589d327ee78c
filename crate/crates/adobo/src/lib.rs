//! Task-driven tuning of linear dynamics models.
//!
//! Instead of identifying the true dynamics of an unknown plant, this crate
//! searches directly over linear models `(A, B)` with Bayesian optimization:
//! each candidate model is turned into an optimal controller (finite-horizon
//! LQR for quadratic costs, convex MPC for quadratic-plus-hinge costs), the
//! controller is run in closed loop on the real plant, and the measured task
//! cost drives a Gaussian-process surrogate that proposes the next model.
//! The model that wins is the one whose controller performs best on the real
//! system, which need not be a good one-step predictor of it.
//!
//! The crate ships the benchmark plants, the closed-loop tuning loop, a
//! trajectory-optimization oracle for the best achievable cost, four
//! comparison baselines, and a reproducible experiment harness. See the
//! `examples/` directory for runnable entry points per capability and the
//! `adobo` binary for the experiment CLI.

pub mod baselines;
pub mod bo;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod oracle;
pub mod plants;
pub mod qp;
pub mod rng;
pub mod runio;
pub mod types;

pub use error::{Error, Result};
