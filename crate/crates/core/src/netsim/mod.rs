//! Discrete-event simulation core with link emulation and compute queueing.
//!
//! Time is an integer count of nanoseconds since the start of a run. Events
//! fire in `(fire_time, seq)` order, so equal-time events dispatch in the
//! order they were scheduled and every run is reproducible bit for bit.

mod des;
mod link;
mod node;
mod trace;

pub use des::{Event, EventKind, EventQueue, EventStats};
pub use link::{
    propagation_nanos, serialization_nanos, DeliveryOutcome, Link, LinkStats, DEFAULT_MTU_BITS,
    DEFAULT_RTO_FACTOR,
};
pub use node::{NodeQueue, QueueMeter};
pub use trace::TraceSink;

/// Simulated nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

pub fn secs_to_nanos(s: f64) -> Nanos {
    (s * NANOS_PER_SEC as f64).round().max(0.0) as Nanos
}

pub fn nanos_to_secs(n: Nanos) -> f64 {
    n as f64 / NANOS_PER_SEC as f64
}
