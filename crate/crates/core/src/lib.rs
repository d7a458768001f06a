//! Offline schedule synthesis for Time-Triggered traffic on TTEthernet
//! networks.
//!
//! The pipeline routes every message over shortest paths ([`routing`]),
//! balances the first occurrence of each message across integration
//! cycles ([`icap`]), and places every message instance inside its cycles
//! by solving a project scheduling problem with time lags ([`scheduler`]).
//! Schedules are checked and measured by [`analysis`], which also bounds
//! the worst-case delay of Rate-Constrained traffic around them.

pub mod analysis;
pub mod cli;
pub mod generator;
pub mod icap;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod routing;
pub mod scheduler;
