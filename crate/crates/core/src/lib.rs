//! Closed-loop individualized curricula for scenario-based driving policy
//! optimization.
//!
//! The crate is organised around the three stages of one training
//! iteration:
//!
//! * **evaluation** – replay a uniform sample of the static scenario library
//!   against the current policy ([`pipeline::evaluate_av`]) and collect
//!   accident labels;
//! * **selection** – fit a failure-probability predictor on those labels,
//!   score the whole library and draw a training curriculum with
//!   probability proportional to the predicted failure probability
//!   ([`curriculum`]);
//! * **training** – continue soft actor-critic training on the selected
//!   scenarios ([`sac`], [`pipeline::train_av`]).
//!
//! Supporting modules provide the scenario data model ([`scenario`]), the
//! deterministic replay simulator ([`sim`]), a small dense-network library
//! ([`nn`]), a synthetic library generator ([`gen`]) and the evaluation
//! metrics and analyses ([`metrics`]).

pub mod config;
pub mod curriculum;
pub mod error;
pub mod gen;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod road;
pub mod sac;
pub mod scenario;
pub mod seed;
pub mod sim;
pub mod util;

pub use config::Config;
pub use error::{Error, ErrorCategory, Result};
pub use road::{DynamicsLimits, RoadGeometry, VehicleDims};
pub use scenario::{AvAction, Scenario, ScenarioLibrary, VehicleState};
