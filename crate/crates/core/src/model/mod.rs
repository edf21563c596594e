//! Workload and infrastructure parameters and the closed-form rate model.

mod geo;
mod infra;
pub(crate) mod params;
mod rates;

pub use geo::{great_circle_km, Coordinates, CLOUD_REGION, HILO, VOLCANO_SITES};
pub use infra::{ComponentClass, ComputeSpec, LinkSpec, LinkType, Site, Topology, DEFAULT_SENSOR_DISTANCE_KM};
pub use params::WorkloadParams;
pub use rates::{
    derived_rates, edge_ingress_rate, mean_sensor_gateway_bandwidth, quorum_probability,
    quorum_threshold, sensor_raw_rate, RateSummary,
};

pub(crate) const fn params_max_channels() -> usize {
    params::MAX_CHANNELS
}
