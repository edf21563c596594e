//! Seed-deterministic generators for the sensor data stream and the offline
//! analysis clients. Both follow an open model: readings are produced on
//! every sampling tick and queries on every client timer tick, regardless of
//! how fast the system under test keeps up.

mod query;
mod sensor;

pub use query::{ClientState, QueryGenerator, QueryMix, HOUR};
pub use sensor::{tick_time, SensorBuffer, SensorState, EXCEED_OFFSET_SIGMA};
