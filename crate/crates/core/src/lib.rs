//! Multi-scale incremental optical flow: synthetic data, network, training,
//! chunked inference, 8-bit quantization emulation, metrics and a
//! latency-to-speed model.

pub mod bench;
pub mod chunker;
pub mod config;
pub mod datamodel;
pub mod error;
pub mod latency;
pub mod metrics;
pub mod model;
pub mod net;
pub mod par;
pub mod quantsim;
pub mod sweep;
pub mod synthgen;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
