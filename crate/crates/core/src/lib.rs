//! Queue clustering for packet scheduling with a fixed number of FIFO
//! queues, plus a single-port simulator and reference schedulers to
//! evaluate it against.

pub mod baseline;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod pda;
pub mod policy;
pub mod sim;
pub mod sketch;
pub mod workload;

pub use error::{Error, Result};
