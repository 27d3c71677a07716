//! Simulation and policy optimization for multi-branch library holds systems.
//!
//! A title's copies sit at branches either in a browser-only reserve pool or
//! in an open pool that also serves hold requests from any branch. This crate
//! provides the near-optimal and tiered hold fulfillment rules, exact small-
//! instance oracles for them, a seeded day-by-day simulator, the usage and
//! browser-experience objectives, and a Pareto search over reserve fractions.

pub mod error;
pub mod fulfillment;
pub mod io;
pub mod model;
pub mod objectives;
pub mod optimizer;
pub mod oracles;
pub mod rng;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
