use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

use super::geo::{great_circle_km, CLOUD_REGION, HILO, VOLCANO_SITES};

const MB: u64 = 1_000_000;
const GB: u64 = 1_000_000_000;
const TB: u64 = 1_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentClass {
    Sensor,
    Gateway,
    Onprem,
    Cloud,
}

impl fmt::Display for ComponentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ComponentClass::Sensor => "sensor",
            ComponentClass::Gateway => "gateway",
            ComponentClass::Onprem => "onprem",
            ComponentClass::Cloud => "cloud",
        };
        f.write_str(s)
    }
}

/// Compute capacity of one machine class. `resource_scale` multiplies CPU,
/// memory and disk together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeSpec {
    pub component_class: ComponentClass,
    pub cpu_cores: f64,
    pub mem_bytes: u64,
    pub disk_bytes: u64,
    #[serde(default = "one")]
    pub resource_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl ComputeSpec {
    pub fn preset(class: ComponentClass) -> Self {
        let (cpu_cores, mem_bytes, disk_bytes) = match class {
            ComponentClass::Sensor => (0.25, 256 * MB, 4 * GB),
            ComponentClass::Gateway => (4.0, 4 * GB, 256 * GB),
            ComponentClass::Onprem => (32.0, 48 * GB, 2 * TB),
            ComponentClass::Cloud => (48.0, 96 * GB, 4 * TB),
        };
        ComputeSpec {
            component_class: class,
            cpu_cores,
            mem_bytes,
            disk_bytes,
            resource_scale: 1.0,
        }
    }

    pub fn effective_cores(&self) -> f64 {
        self.cpu_cores * self.resource_scale
    }

    pub fn effective_mem_bytes(&self) -> f64 {
        self.mem_bytes as f64 * self.resource_scale
    }

    pub fn effective_disk_bytes(&self) -> f64 {
        self.disk_bytes as f64 * self.resource_scale
    }

    pub fn validate(&self, field: &str) -> Result<(), ConfigError> {
        if !(self.cpu_cores.is_finite() && self.cpu_cores > 0.0) {
            return Err(ConfigError::invalid(format!("{field}.cpu_cores"), "must be > 0"));
        }
        if self.mem_bytes == 0 {
            return Err(ConfigError::invalid(format!("{field}.mem_bytes"), "must be > 0"));
        }
        if self.disk_bytes == 0 {
            return Err(ConfigError::invalid(format!("{field}.disk_bytes"), "must be > 0"));
        }
        if !(self.resource_scale.is_finite() && self.resource_scale > 0.0) {
            return Err(ConfigError::invalid(format!("{field}.resource_scale"), "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkType {
    Lorawan,
    LteM,
    #[serde(rename = "fiber_1g")]
    Fiber1G,
    #[serde(rename = "fiber_10g")]
    Fiber10G,
}

impl LinkType {
    pub const ALL: [LinkType; 4] = [
        LinkType::Lorawan,
        LinkType::LteM,
        LinkType::Fiber1G,
        LinkType::Fiber10G,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkType::Lorawan => "lorawan",
            LinkType::LteM => "lte_m",
            LinkType::Fiber1G => "fiber_1g",
            LinkType::Fiber10G => "fiber_10g",
        }
    }
}

impl fmt::Display for LinkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkType {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LinkType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ConfigError::invalid("link_type", format!("unknown link type {s:?}")))
    }
}

/// Per-link-type network characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub link_type: LinkType,
    pub delay_per_km_ms: f64,
    /// Relative standard deviation of the propagation delay.
    pub jitter_frac: f64,
    pub bandwidth_bps: f64,
    pub loss_rate: f64,
    pub corrupt_rate: f64,
    pub reorder_rate: f64,
    pub dup_rate: f64,
}

impl LinkSpec {
    /// Values as published for each connection type. Note that the 10G fiber
    /// entry carries 1 Gbps, reproduced verbatim.
    pub fn preset(link_type: LinkType) -> Self {
        let (delay_per_km_ms, bandwidth_bps, impairment) = match link_type {
            LinkType::Lorawan => (0.021, 22e3, 0.05),
            LinkType::LteM => (0.017, 1e6, 0.01),
            LinkType::Fiber1G => (0.0085, 1e9, 0.001),
            LinkType::Fiber10G => (0.0085, 1e9, 0.001),
        };
        LinkSpec {
            link_type,
            delay_per_km_ms,
            jitter_frac: 0.10,
            bandwidth_bps,
            loss_rate: impairment,
            corrupt_rate: impairment,
            reorder_rate: impairment,
            dup_rate: impairment,
        }
    }

    /// Same link with jitter and every packet impairment switched off.
    pub fn ideal(mut self) -> Self {
        self.jitter_frac = 0.0;
        self.loss_rate = 0.0;
        self.corrupt_rate = 0.0;
        self.reorder_rate = 0.0;
        self.dup_rate = 0.0;
        self
    }

    pub fn validate(&self, field: &str) -> Result<(), ConfigError> {
        for (name, v) in [
            ("loss_rate", self.loss_rate),
            ("corrupt_rate", self.corrupt_rate),
            ("reorder_rate", self.reorder_rate),
            ("dup_rate", self.dup_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::invalid(format!("{field}.{name}"), "must lie in [0, 1]"));
            }
        }
        if self.loss_rate + self.corrupt_rate >= 1.0 {
            return Err(ConfigError::invalid(
                format!("{field}.loss_rate"),
                "loss_rate + corrupt_rate must be < 1 or no packet is ever delivered",
            ));
        }
        if !(self.bandwidth_bps.is_finite() && self.bandwidth_bps > 0.0) {
            return Err(ConfigError::invalid(format!("{field}.bandwidth_bps"), "must be > 0"));
        }
        if !(self.delay_per_km_ms.is_finite() && self.delay_per_km_ms >= 0.0) {
            return Err(ConfigError::invalid(format!("{field}.delay_per_km_ms"), "must be >= 0"));
        }
        if !(self.jitter_frac.is_finite() && self.jitter_frac >= 0.0) {
            return Err(ConfigError::invalid(format!("{field}.jitter_frac"), "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub site_id: u16,
    pub name: String,
    pub gateway_compute: ComputeSpec,
    /// Gateway to on-premise link.
    pub uplink: LinkSpec,
    pub uplink_distance_km: f64,
    /// Sensor to gateway link (one point-to-point link per sensor).
    pub sensor_link: LinkSpec,
    pub sensor_distance_km: f64,
    pub sensor_compute: ComputeSpec,
}

/// The fog infrastructure: sites with sensors and a gateway, one on-premise
/// data center and a cloud cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub sites: Vec<Site>,
    pub onprem: ComputeSpec,
    pub cloud: Vec<ComputeSpec>,
    pub onprem_cloud_link: LinkSpec,
    pub onprem_cloud_distance_km: f64,
}

impl Topology {
    /// Six volcano sites with distances derived from their coordinates.
    pub fn volcano_default(n_cloud: u32) -> Self {
        let sites = VOLCANO_SITES
            .iter()
            .enumerate()
            .map(|(i, v)| Site {
                site_id: i as u16,
                name: v.name.to_string(),
                gateway_compute: ComputeSpec::preset(ComponentClass::Gateway),
                uplink: LinkSpec::preset(v.uplink),
                uplink_distance_km: great_circle_km(v.coordinates, HILO),
                sensor_link: LinkSpec::preset(LinkType::Lorawan),
                sensor_distance_km: DEFAULT_SENSOR_DISTANCE_KM,
                sensor_compute: ComputeSpec::preset(ComponentClass::Sensor),
            })
            .collect();
        Topology {
            sites,
            onprem: ComputeSpec::preset(ComponentClass::Onprem),
            cloud: (0..n_cloud)
                .map(|_| ComputeSpec::preset(ComponentClass::Cloud))
                .collect(),
            onprem_cloud_link: LinkSpec::preset(LinkType::Fiber10G),
            onprem_cloud_distance_km: great_circle_km(HILO, CLOUD_REGION),
        }
    }

    pub fn site(&self, site_id: u16) -> Option<&Site> {
        self.sites.iter().find(|s| s.site_id == site_id)
    }

    pub fn site_index(&self, site_id: u16) -> Option<usize> {
        self.sites.iter().position(|s| s.site_id == site_id)
    }

    /// Applies `scale` to sensor and gateway compute of every site.
    pub fn scale_edge(&mut self, scale: f64) {
        for s in &mut self.sites {
            s.gateway_compute.resource_scale = scale;
            s.sensor_compute.resource_scale = scale;
        }
    }

    /// Applies a function to every link in the topology.
    pub fn map_links(&mut self, mut f: impl FnMut(&mut LinkSpec)) {
        for s in &mut self.sites {
            f(&mut s.uplink);
            f(&mut s.sensor_link);
        }
        f(&mut self.onprem_cloud_link);
    }

    pub fn validate(&self, n_cloud: u32) -> Result<(), ConfigError> {
        if self.sites.is_empty() {
            return Err(ConfigError::Topology("no sites configured".into()));
        }
        if self.cloud.len() != n_cloud as usize {
            return Err(ConfigError::Topology(format!(
                "{} cloud instances configured but workload.n_cloud = {n_cloud}",
                self.cloud.len()
            )));
        }
        let mut ids: Vec<u16> = self.sites.iter().map(|s| s.site_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.sites.len() {
            return Err(ConfigError::Topology("duplicate site_id".into()));
        }
        for s in &self.sites {
            let f = format!("topology.sites[{}]", s.site_id);
            s.gateway_compute.validate(&format!("{f}.gateway_compute"))?;
            s.sensor_compute.validate(&format!("{f}.sensor_compute"))?;
            s.uplink.validate(&format!("{f}.uplink"))?;
            s.sensor_link.validate(&format!("{f}.sensor_link"))?;
            for (name, d) in [
                ("uplink_distance_km", s.uplink_distance_km),
                ("sensor_distance_km", s.sensor_distance_km),
            ] {
                if !(d.is_finite() && d >= 0.0) {
                    return Err(ConfigError::invalid(format!("{f}.{name}"), "must be >= 0"));
                }
            }
        }
        self.onprem.validate("compute.onprem")?;
        for (i, c) in self.cloud.iter().enumerate() {
            c.validate(&format!("compute.cloud[{i}]"))?;
        }
        self.onprem_cloud_link.validate("topology.onprem_cloud_link")?;
        if !(self.onprem_cloud_distance_km.is_finite() && self.onprem_cloud_distance_km >= 0.0) {
            return Err(ConfigError::invalid(
                "topology.onprem_cloud_distance_km",
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

/// Sensors are assumed to sit within a kilometre of their gateway.
pub const DEFAULT_SENSOR_DISTANCE_KM: f64 = 1.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_tables() {
        let s = ComputeSpec::preset(ComponentClass::Sensor);
        assert_eq!((s.cpu_cores, s.mem_bytes, s.disk_bytes), (0.25, 256 * MB, 4 * GB));
        let c = ComputeSpec::preset(ComponentClass::Cloud);
        assert_eq!((c.cpu_cores, c.mem_bytes, c.disk_bytes), (48.0, 96 * GB, 4 * TB));

        let l = LinkSpec::preset(LinkType::Lorawan);
        assert_eq!(l.bandwidth_bps, 22_000.0);
        assert_eq!(l.delay_per_km_ms, 0.021);
        assert_eq!(l.loss_rate, 0.05);
        let f10 = LinkSpec::preset(LinkType::Fiber10G);
        assert_eq!(f10.bandwidth_bps, 1e9);
        assert_eq!(f10.jitter_frac, 0.10);
    }

    #[test]
    fn default_topology_is_valid() {
        let t = Topology::volcano_default(3);
        t.validate(3).unwrap();
        assert_eq!(t.sites.len(), 6);
        assert!(t.validate(2).is_err());
    }

    #[test]
    fn link_type_round_trips_through_str() {
        for t in LinkType::ALL {
            assert_eq!(t.as_str().parse::<LinkType>().unwrap(), t);
        }
        assert!("wifi".parse::<LinkType>().is_err());
    }
}
