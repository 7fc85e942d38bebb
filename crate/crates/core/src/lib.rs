//! Correlating BGP routing changes with RTT changepoints.
//!
//! The crate follows a probe/collector-peer pair through the whole workflow:
//! parse measurement files ([`ingest`]), clean and align RTT samples, find
//! changepoints ([`changepoint`]), filter and match BGP updates
//! ([`pipeline`]), aggregate factors into scores and parameter surfaces
//! ([`aggregate`]), and cross-check matches against traceroutes
//! ([`validate`]). [`synth`] produces scenarios with known ground truth.

pub mod aggregate;
pub mod changepoint;
pub mod cli;
pub mod error;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod validate;

pub use error::{Error, Result};
pub use model::*;
