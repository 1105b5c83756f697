//! Behavioral simulator of mixed-precision in-memory training.
//!
//! Weighted layers live on crossbar arrays of stochastic phase-change memory
//! devices that carry out the forward and backward matrix-vector products.
//! A high-precision digital accumulator collects weight updates and transfers
//! them to the devices as blind programming pulses once they exceed the device
//! update granularity.

pub mod calibrate;
pub mod config;
pub mod counters;
pub mod crossbar;
pub mod data;
pub mod device;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod quant;
pub mod registry;
pub mod rng;
pub mod train;

pub use error::{McaError, Result};
