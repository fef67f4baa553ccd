//! Mean-square stability and L2-gain certificates for LPV time-delay systems
//! whose scheduling parameter is piecewise constant with Poisson jumps.
//!
//! The crate is organised bottom-up:
//!
//! * [`polymat`]: exact polynomial-matrix calculus in `rho` and `theta`.
//! * [`model`]: the plant, jump kernel, delay law and initial history.
//! * [`sdp`]: gridded LMI programs lowered to a conic interior-point solver.
//! * [`analysis`]: stability/performance programs with constant or
//!   parameter-dependent Lyapunov-Krasovskii weights.
//! * [`synthesis`]: slack-variable analysis and gain-scheduled memory
//!   state-feedback synthesis.
//! * [`sim`]: piecewise-deterministic Monte-Carlo simulation.
//! * [`cli`]: description files, reports and the command-line front end.

// Links the system OpenBLAS that the conic solver's PSD cone relies on.
extern crate openblas_src;

pub mod analysis;
pub mod benchmarks;
pub mod cli;
pub mod error;
pub mod expr;
pub mod model;
pub mod polymat;
pub mod sdp;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
