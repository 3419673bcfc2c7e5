//! Digital-twin-aided joint association, power control and RIS phase
//! optimization for uplink user-centric cell-free networks.

pub mod aua;
pub mod config;
pub mod error;
pub mod iees;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod output;
pub mod rng;
pub mod snapshot;
pub mod td3;
pub mod topology;
pub mod twin;
pub mod validate;

pub use error::{Error, Result};
