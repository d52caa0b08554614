//! Congestion games with movement uncertainty and mixed-rationality agent
//! populations.
//!
//! The crate is organised around [`model::DaapModel`], a finite-horizon game
//! in which each agent's transition and reward depend only on the aggregate
//! state distribution of the population. On top of it:
//!
//! - [`taxi`] instantiates the model for taxi fleets (hired vs voluntary moves),
//! - [`dynamics`] propagates expected distributions, evaluates values and
//!   potentials, and runs Monte Carlo welfare simulations,
//! - [`solver`] computes equilibrium policies with soft-max flow averaging,
//! - [`behavior`] builds quantal cognitive-hierarchy strategies,
//! - [`inference`] recovers reasoning-level mixes from observation logs,
//! - [`scenario`] generates and serialises synthetic taxi scenarios,
//! - [`experiment`] wires populations, solving and simulation together.

pub mod behavior;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod model;
pub mod scenario;
pub mod solver;
pub mod taxi;
mod util;

pub use error::{DaapError, Result};
pub use model::{
    uniform_policy, validate_model, AgentType, DaapModel, Kernel, PolicyTable, Rationality,
    StateDistribution, TransitionOutcome, Violation,
};
