//! Sequential Bayesian filtering of traffic flow speed.
//!
//! A two-dimensional dynamic linear model (speed and its rate of change)
//! switches among three regimes — breakdown, free flow, recovery — driven by
//! a transition kernel over exogenous features. Filtering marginalizes the
//! Gaussian state with per-particle Kalman recursions, so particles carry a
//! regime and Gaussian moments rather than raw state draws; static
//! parameters can be learned online from conditional sufficient statistics.
//!
//! The crate is generic over the scalar type via [`scalar::Real`]; the
//! aliases below fix the common 64-bit instantiation.

pub mod baselines;
pub mod config;
pub mod error;
pub mod filter;
pub mod io;
pub mod kalman;
pub mod learning;
pub mod math;
pub mod model;
pub mod regime;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};

/// Double-precision aliases for the main public types.
pub type ModelSpec64 = model::ModelSpec<f64>;
pub type StateVec64 = model::StateVec<f64>;
pub type KalmanStats64 = kalman::KalmanStats<f64>;
pub type TransitionMatrix64 = regime::TransitionMatrix<f64>;
pub type RegimeKernel64 = regime::RegimeKernel<f64>;
pub type ExogenousFeatures64 = regime::ExogenousFeatures<f64>;
pub type FilterState64 = filter::FilterState<f64>;
pub type PosteriorSummary64 = filter::PosteriorSummary<f64>;
pub type SimulationOutput64 = io::SimulationOutput<f64>;

/// Single-precision aliases.
pub type ModelSpec32 = model::ModelSpec<f32>;
pub type FilterState32 = filter::FilterState<f32>;
