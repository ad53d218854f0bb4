//! Electric taxi fleet simulation: demand, station siting, dispatch,
//! capacity-limited charging and fleet-level metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod config;
pub mod demand;
pub mod dispatch;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod geo;
pub mod metrics;
pub mod output;
pub mod rng;
pub mod siting;
pub mod station;

pub use config::{DemandSource, ScenarioConfig, StrategySpec};
pub use engine::{run, RunOutput, Simulation};
pub use error::{CoreError, Result};
