//! Protocol-level simulation of first-responder status updates over a
//! TETRA network, in trunked mode or in direct mode behind a gateway.

pub mod config;
pub mod dmo;
pub mod ledger;
pub mod network;
pub mod tmo;
pub mod traffic;

pub use config::{ConfigError, Mode, ScenarioConfig, SeedPolicy, SweepSpec, ValidateSpec};
pub use network::{run, run_traced, MacStats, NetError, NetRunResult, StreamCounts};
