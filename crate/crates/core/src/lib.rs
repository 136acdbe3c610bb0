//! Multi-user status-update scheduling under Age of Incorrect Information
//! (AoII) and query-aware AoII (QAoII) costs.
//!
//! - [`model`]: per-user source/channel/query model and the AoII kernel.
//! - [`analytics`]: closed-form threshold averages and Whittle indices, with
//!   the numerical oracles that check them.
//! - [`policies`]: round robin, greedy and index schedulers.
//! - [`sim`]: frame-synchronous Monte Carlo simulator.

pub mod analytics;
pub mod model;
pub mod policies;
pub mod sim;

pub use model::{Action, NetworkState, UserParams, UserSpec, UserState};
pub use policies::{Decision, Policy, PolicyKind, PolicyOptions, Scheduler};
pub use sim::{run, SimConfig, SimReport};
