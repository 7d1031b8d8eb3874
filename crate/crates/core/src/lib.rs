//! Distributed generalized Nash equilibrium seeking over a communication graph,
//! with edge-based multiplier consensus.

pub mod asynch;
pub mod benchmarks;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod operators;
pub mod scalar;
pub mod stepsizes;
pub mod sync;

pub use error::{GneError, Result};
pub use graph::{edge_consensus_residual, CommGraph, Incidence, Side};
pub use model::{
    estimate_constants, AffineMap, GameBuilder, GradientOracle, Layout, MonotonicityConstants,
    PlayerSpec, StateRead,
};
pub use scalar::Real;

/// Double-precision instances; the default throughout the crate's tools.
pub type GameSpec = model::GameSpec<f64>;
pub type PrimalDualState = model::PrimalDualState<f64>;
