//! Core building blocks for studying the freshness of TETRA short-data
//! status updates.
//!
//! - [`time`]: the TDMA slot/frame/multiframe time base.
//! - [`rng`]: seeded, splittable random streams.
//! - [`model`]: updates, model parameters and packet-management disciplines.
//! - [`analytic`]: closed-form mean peak age for the PR, PR-RT and NPR schemes.
//! - [`des`]: a deterministic discrete-event scheduler.
//! - [`metrics`]: per-source AoI bookkeeping, loss accounting and batch-means
//!   confidence intervals.
//! - [`queue`]: Monte-Carlo simulation of the single-server abstract model
//!   under every discipline.

pub mod analytic;
pub mod des;
pub mod error;
pub mod metrics;
pub mod model;
pub mod queue;
pub mod rng;
pub mod time;

pub use error::ParamError;
pub use model::{Discipline, EntityId, ModelParams, Update, UpdateId, UpdateKind};
pub use rng::{exp_sample, Purpose, RngStream, StreamId};
pub use time::{SlotClock, SlotCoords};
