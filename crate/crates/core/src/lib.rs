//! Gaussian sum filtering for linear systems driven by Gaussian-mixture
//! process and measurement noise.
//!
//! The crate is organised bottom-up:
//!
//! - [`gaussian`]: Gaussian and Gaussian-mixture densities, moment matching
//!   and Monte-Carlo KL divergence.
//! - [`state_space`]: system models, the random-walk-velocity construction
//!   and a ground-truth simulator.
//! - [`kalman`]: the Kalman recursion and offline (preloaded / steady-state)
//!   gain schedules.
//! - [`gsf`]: the bank of mode-matched filters and its mixture posterior.
//! - [`reduction`]: merge, remove, matched and active-cluster reductions.
//! - [`runner`]: running a filtering method over a trajectory.
//! - [`bench`]: synthetic and packaged scenarios, KL calibration,
//!   RMSE / CEP metrics and the Monte-Carlo harness.

pub mod bench;
pub mod error;
pub mod gaussian;
pub mod gsf;
pub mod kalman;
pub mod reduction;
pub mod runner;
pub mod state_space;

pub use error::{Error, Result};
pub use gaussian::{Gaussian, GaussianMixture, KlEstimate};
pub use gsf::{gsf_step, ModelIndex, PosteriorMixture};
pub use kalman::{GainSchedule, GainSet, KalmanState};
pub use reduction::{InitEstimator, ReducedPosterior, ReductionScheme, SchemeKind};
pub use state_space::{SystemModel, TimeGrid, Trajectory, TICK};
