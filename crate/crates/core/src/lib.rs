//! Subframe-granular simulator of C-V2X mode 4 decentralized resource
//! allocation.
//!
//! The crate models the sidelink resource grid, both the standard
//! sensing-based semi-persistent scheduler and an enhanced variant that
//! reserves resources through a subframe-shifting chain mapping and carries
//! the reselection counter in the control message, an SINR-threshold physical
//! layer, Manhattan-grid Krauss mobility, and the packet-delivery-ratio /
//! system-AoI metrics used to compare the two schedulers.
//!
//! Entry points: [`engine::ScenarioConfig`] describes a run, [`engine::run`]
//! executes it, [`engine::run_sweep`] covers a seed x mode x population grid.

pub mod engine;
pub mod grid;
pub mod metrics;
pub mod mobility;
pub mod phy;
pub mod scheduler;
pub mod sci;
pub mod sensing;

pub use engine::{run, run_sweep, RunReport, ScenarioConfig, SweepRun};
pub use grid::{PoolConfig, SsrCoord};
pub use phy::LinkBudget;
pub use scheduler::Mode;
