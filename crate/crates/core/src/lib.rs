//! Benchmark harness for fog data-processing systems.
//!
//! The crate models a volcano-monitoring sensor network spread over six sites:
//! sensors feed local gateways, gateways feed an on-premise inference service,
//! and annotated records land in a cloud time-series store queried by offline
//! analysis clients. It provides
//!
//! * [`model`]: workload and infrastructure parameters plus the closed-form
//!   bandwidth model used as an oracle for simulation output,
//! * [`netsim`]: a deterministic discrete-event engine with link emulation and
//!   compute-capacity queueing,
//! * [`workload`]: seed-deterministic sensor and query generators,
//! * [`services`]: reference edge, inference and warning services,
//! * [`store`]: the reference cloud time-series store,
//! * [`adapter`]: the system-under-test boundary and its wire protocol,
//! * [`metrics`]: latency, staleness, SLO resource search and calibration,
//! * [`runner`]: configuration loading and run orchestration.

pub mod adapter;
pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod records;
pub mod rng;
pub mod runner;
pub mod services;
pub mod store;
pub mod workload;

pub use error::{ConfigError, Error, ModelError, Result, SutError};

/// Tool version embedded in every output artifact.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
