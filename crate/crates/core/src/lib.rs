//! Simulation and analytic reference values for two-sided dynamic matching
//! markets.
//!
//! Agents (clients and providers) arrive on a rate-1 Poisson clock with a fair
//! coin deciding their side. A clearing schedule decides when the next couple
//! is matched, based only on how many agents sit on the short side of the
//! market. Each matching event either removes the cheapest present couple
//! (costs are exponential with pair-specific rates) or, for first-come
//! first-served, the two longest-waiting agents.
//!
//! The crate is organised bottom-up:
//!
//! * [`cost_model`]: match-cost rates and order-independent cost draws.
//! * [`arrival`]: the arrival stream plus random-walk / stopping-time tools.
//! * [`assignment`]: cheapest edge, FCFS pairing and optimal k-assignment.
//! * [`schedules`]: the clearing-schedule family and its thresholds.
//! * [`engine`]: the discrete-event loop producing a [`engine::RunTrace`].
//! * [`oracles`]: closed-form and series reference values.
//! * [`analysis`]: matching / waiting ratios and growth fits.
//! * [`experiment`] and [`validation`]: the runner behind the CLI.

pub mod analysis;
pub mod arrival;
pub mod assignment;
pub mod cost_model;
pub mod engine;
pub mod experiment;
pub mod oracles;
pub mod schedules;
pub mod seeding;
pub mod validation;

pub use analysis::{fit_growth, matching_ratio, waiting_ratio, GrowthFit, RatioEstimate};
pub use arrival::{Agent, PoissonStream, Side, TapeSource};
pub use assignment::{Assignment, CostMatrix};
pub use cost_model::RateModel;
pub use engine::{run, CostMode, DecayModel, RunConfig, RunTrace, StopRule};
pub use schedules::ScheduleSpec;
