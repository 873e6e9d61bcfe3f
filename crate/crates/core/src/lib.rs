//! Tracking time-varying magnetic fields from spin-noise measurements.
//!
//! The Larmor frequency is carried as an unknown parameter in an extended
//! Kalman filter over the spin state, and the measurement-noise variance is
//! re-estimated online from the innovation sequence. Around the filter sit a
//! Monte-Carlo spin-noise simulator, field-trajectory generators, a
//! spin-noise-spectroscopy baseline, an experiment runner and CSV ingestion
//! for recorded traces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod field;
pub mod filter;
pub mod ingest;
pub mod io;
pub mod sim;
pub mod sns;
pub mod types;

pub use error::{Error, Result};
pub use field::FieldModelSpec;
pub use filter::{run_filter, FilterConfig, FilterMode, FilterOutput};
pub use sim::{simulate_trace, Trace};
pub use types::{Covariance3, NoiseConfig, PhysicsParams, StateVector};
