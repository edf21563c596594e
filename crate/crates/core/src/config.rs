//! Experiment configuration: a single TOML document with sections
//! `workload`, `compute`, `network`, `topology` and `run`, resolved into a
//! fully explicit [`RunConfig`].
//!
//! Every section and key is optional; omitted values take the published
//! defaults. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::model::{
    great_circle_km, ComponentClass, ComputeSpec, LinkSpec, LinkType, Site, Topology, WorkloadParams, HILO,
    VOLCANO_SITES,
};
use crate::netsim::{secs_to_nanos, Nanos, DEFAULT_MTU_BITS, DEFAULT_RTO_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Sim,
    External,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sim => "sim",
            Mode::External => "external",
        })
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(Mode::Sim),
            "external" => Ok(Mode::External),
            other => Err(ConfigError::invalid("run.mode", format!("expected sim or external, got {other:?}"))),
        }
    }
}

/// Part of the pipeline an external system replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SutScope {
    #[default]
    Store,
}

impl fmt::Display for SutScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SutScope::Store => "store",
        })
    }
}

/// Per-operation compute costs, in core-seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Per reading, on the sensor.
    pub c_sense: f64,
    /// Per aggregate record, on the gateway.
    pub c_agg: f64,
    /// Per collected event report, on the gateway.
    pub c_event: f64,
    /// Per record, on the on-premise node.
    pub c_inf: f64,
    /// Per insert, on the owning cloud instance.
    pub c_ins: f64,
    pub c_q_base: f64,
    pub c_q_per_record: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            c_sense: 5e-4,
            c_agg: 1e-5,
            c_event: 1e-2,
            c_inf: 1e-3,
            c_ins: 1e-5,
            c_q_base: 1e-3,
            c_q_per_record: 1e-7,
        }
    }
}

impl CostModel {
    /// All costs zero.
    pub fn free() -> Self {
        CostModel {
            c_sense: 0.0,
            c_agg: 0.0,
            c_event: 0.0,
            c_inf: 0.0,
            c_ins: 0.0,
            c_q_base: 0.0,
            c_q_per_record: 0.0,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("c_sense", self.c_sense),
            ("c_agg", self.c_agg),
            ("c_event", self.c_event),
            ("c_inf", self.c_inf),
            ("c_ins", self.c_ins),
            ("c_q_base", self.c_q_base),
            ("c_q_per_record", self.c_q_per_record),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(format!("run.costs.{name}"), format!("must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Connection to an external system under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SutSettings {
    pub endpoint: String,
    pub scope: SutScope,
    pub timeout_s: f64,
    /// Connections kept open for queries; inserts use one more.
    pub pool_size: u32,
    pub supports_event_reports: bool,
    pub supports_scan: bool,
}

impl Default for SutSettings {
    fn default() -> Self {
        SutSettings {
            endpoint: "127.0.0.1:7878".into(),
            scope: SutScope::Store,
            timeout_s: 5.0,
            pool_size: 8,
            supports_event_reports: true,
            supports_scan: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub seed: u64,
    pub duration_s: f64,
    pub mode: Mode,
    /// Leading fraction of the run excluded from metrics.
    pub warmup_frac: f64,
    /// Absolute warm-up; takes precedence over `warmup_frac`.
    pub warmup_s: Option<f64>,
    pub verify: bool,
    pub trace: bool,
    /// Factor applied to `workload.n_sensors`.
    pub scale_sensors: f64,
    /// Fixed delay added before every cloud insert.
    pub injected_delay_s: f64,
    /// Memory and disk charged per queued or stored record.
    pub record_footprint_bytes: u64,
    pub warning_threshold: f64,
    pub scan_theta: f64,
    /// Scan lookback; absent scans all retained history.
    pub scan_lookback_s: Option<f64>,
    /// Simulated time after the end of generation during which in-flight
    /// work may still complete and be measured.
    pub drain_s: f64,
    pub costs: CostModel,
    pub sut: SutSettings,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            seed: 42,
            duration_s: 300.0,
            mode: Mode::Sim,
            warmup_frac: 0.1,
            warmup_s: None,
            verify: false,
            trace: false,
            scale_sensors: 1.0,
            injected_delay_s: 0.0,
            record_footprint_bytes: 1024,
            warning_threshold: 0.95,
            scan_theta: 0.9,
            scan_lookback_s: None,
            drain_s: 60.0,
            costs: CostModel::default(),
            sut: SutSettings::default(),
        }
    }
}

impl RunSettings {
    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(ConfigError::invalid("run.duration_s", format!("must be > 0, got {}", self.duration_s)));
        }
        if !(0.0..=0.5).contains(&self.warmup_frac) {
            return Err(ConfigError::invalid(
                "run.warmup_frac",
                format!("must lie in [0, 0.5], got {}", self.warmup_frac),
            ));
        }
        if let Some(w) = self.warmup_s {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ConfigError::invalid("run.warmup_s", "must be >= 0"));
            }
            if w >= self.duration_s {
                return Err(ConfigError::invalid(
                    "run.duration_s",
                    format!("run of {} s is not longer than its {w} s warm-up", self.duration_s),
                ));
            }
        }
        if !(self.scale_sensors.is_finite() && self.scale_sensors > 0.0) {
            return Err(ConfigError::invalid("run.scale_sensors", "must be > 0"));
        }
        if !(self.injected_delay_s.is_finite() && self.injected_delay_s >= 0.0) {
            return Err(ConfigError::invalid("run.injected_delay_s", "must be >= 0"));
        }
        if !(self.drain_s.is_finite() && self.drain_s >= 0.0) {
            return Err(ConfigError::invalid("run.drain_s", "must be >= 0"));
        }
        if self.record_footprint_bytes == 0 {
            return Err(ConfigError::invalid("run.record_footprint_bytes", "must be at least 1"));
        }
        for (name, v) in [("warning_threshold", self.warning_threshold), ("scan_theta", self.scan_theta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::invalid(format!("run.{name}"), format!("must lie in [0, 1], got {v}")));
            }
        }
        if let Some(l) = self.scan_lookback_s {
            if !(l.is_finite() && l > 0.0) {
                return Err(ConfigError::invalid("run.scan_lookback_s", "must be > 0"));
            }
        }
        if !(self.sut.timeout_s.is_finite() && self.sut.timeout_s > 0.0) {
            return Err(ConfigError::invalid("run.sut.timeout_s", "must be > 0"));
        }
        if self.sut.pool_size == 0 {
            return Err(ConfigError::invalid("run.sut.pool_size", "must be at least 1"));
        }
        if self.mode == Mode::External && self.sut.endpoint.trim().is_empty() {
            return Err(ConfigError::invalid("run.sut.endpoint", "required in external mode"));
        }
        self.costs.validate()
    }
}

/// Partial override of a compute class preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeOverride {
    pub cpu_cores: Option<f64>,
    pub mem_bytes: Option<u64>,
    pub disk_bytes: Option<u64>,
    pub resource_scale: Option<f64>,
}

impl ComputeOverride {
    fn apply(&self, mut spec: ComputeSpec) -> ComputeSpec {
        if let Some(v) = self.cpu_cores {
            spec.cpu_cores = v;
        }
        if let Some(v) = self.mem_bytes {
            spec.mem_bytes = v;
        }
        if let Some(v) = self.disk_bytes {
            spec.disk_bytes = v;
        }
        if let Some(v) = self.resource_scale {
            spec.resource_scale = v;
        }
        spec
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeSection {
    pub sensor: ComputeOverride,
    pub gateway: ComputeOverride,
    pub onprem: ComputeOverride,
    pub cloud: ComputeOverride,
}

impl ComputeSection {
    fn spec(&self, class: ComponentClass) -> ComputeSpec {
        let o = match class {
            ComponentClass::Sensor => &self.sensor,
            ComponentClass::Gateway => &self.gateway,
            ComponentClass::Onprem => &self.onprem,
            ComponentClass::Cloud => &self.cloud,
        };
        o.apply(ComputeSpec::preset(class))
    }
}

/// Partial override of a link type preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkOverride {
    pub delay_per_km_ms: Option<f64>,
    pub jitter_frac: Option<f64>,
    pub bandwidth_bps: Option<f64>,
    pub loss_rate: Option<f64>,
    pub corrupt_rate: Option<f64>,
    pub reorder_rate: Option<f64>,
    pub dup_rate: Option<f64>,
}

impl LinkOverride {
    fn apply(&self, mut spec: LinkSpec) -> LinkSpec {
        let fields = [
            (self.delay_per_km_ms, &mut spec.delay_per_km_ms),
            (self.jitter_frac, &mut spec.jitter_frac),
            (self.bandwidth_bps, &mut spec.bandwidth_bps),
            (self.loss_rate, &mut spec.loss_rate),
            (self.corrupt_rate, &mut spec.corrupt_rate),
            (self.reorder_rate, &mut spec.reorder_rate),
            (self.dup_rate, &mut spec.dup_rate),
        ];
        for (o, slot) in fields {
            if let Some(v) = o {
                *slot = v;
            }
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub mtu_bits: u64,
    pub rto_factor: u64,
    /// Zero jitter and every impairment on all link types.
    pub ideal: bool,
    pub lorawan: LinkOverride,
    pub lte_m: LinkOverride,
    pub fiber_1g: LinkOverride,
    pub fiber_10g: LinkOverride,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            mtu_bits: DEFAULT_MTU_BITS,
            rto_factor: DEFAULT_RTO_FACTOR,
            ideal: false,
            lorawan: LinkOverride::default(),
            lte_m: LinkOverride::default(),
            fiber_1g: LinkOverride::default(),
            fiber_10g: LinkOverride::default(),
        }
    }
}

impl NetworkSection {
    pub fn link(&self, t: LinkType) -> LinkSpec {
        let o = match t {
            LinkType::Lorawan => &self.lorawan,
            LinkType::LteM => &self.lte_m,
            LinkType::Fiber1G => &self.fiber_1g,
            LinkType::Fiber10G => &self.fiber_10g,
        };
        let base = if self.ideal {
            LinkSpec::preset(t).ideal()
        } else {
            LinkSpec::preset(t)
        };
        o.apply(base)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteEntry {
    pub name: String,
    pub uplink: Option<LinkType>,
    /// Required unless `name` is one of the built-in volcano sites.
    pub uplink_distance_km: Option<f64>,
    pub sensor_link: Option<LinkType>,
    pub sensor_distance_km: Option<f64>,
    pub gateway_compute: ComputeOverride,
    pub sensor_compute: ComputeOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    /// Absent means the six built-in volcano sites.
    pub sites: Option<Vec<SiteEntry>>,
    pub sensor_link: LinkType,
    pub sensor_distance_km: f64,
    pub onprem_cloud_link: LinkType,
    pub onprem_cloud_distance_km: Option<f64>,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            sites: None,
            sensor_link: LinkType::Lorawan,
            sensor_distance_km: crate::model::DEFAULT_SENSOR_DISTANCE_KM,
            onprem_cloud_link: LinkType::Fiber10G,
            onprem_cloud_distance_km: None,
        }
    }
}

/// The configuration document as written.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub workload: WorkloadParams,
    pub compute: ComputeSection,
    pub network: NetworkSection,
    pub topology: TopologySection,
    pub run: RunSettings,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fills in presets and derived distances, applies the sensor scale
    /// factor and validates the result.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        self.workload.validate()?;
        self.run.validate()?;
        if self.network.mtu_bits == 0 {
            return Err(ConfigError::invalid("network.mtu_bits", "must be at least 1"));
        }
        if self.network.rto_factor == 0 {
            return Err(ConfigError::invalid("network.rto_factor", "must be at least 1"));
        }
        let mut workload = self.workload.clone();
        if self.run.scale_sensors != 1.0 {
            workload.n_sensors = ((f64::from(workload.n_sensors) * self.run.scale_sensors).round() as u32).max(1);
        }
        let topology = self.build_topology()?;
        topology.validate(workload.n_cloud)?;
        Ok(RunConfig {
            workload,
            topology,
            mtu_bits: self.network.mtu_bits,
            rto_factor: self.network.rto_factor,
            run: self.run.clone(),
        })
    }

    fn build_topology(&self) -> Result<Topology, ConfigError> {
        let t = &self.topology;
        let entries: Vec<SiteEntry> = match &t.sites {
            Some(s) => s.clone(),
            None => VOLCANO_SITES
                .iter()
                .map(|v| SiteEntry {
                    name: v.name.to_string(),
                    ..Default::default()
                })
                .collect(),
        };
        let mut sites = Vec::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let known = VOLCANO_SITES.iter().find(|v| v.name.eq_ignore_ascii_case(&e.name));
            let field = format!("topology.sites[{i}]");
            let uplink = e.uplink.or(known.map(|v| v.uplink)).ok_or_else(|| {
                ConfigError::invalid(format!("{field}.uplink"), format!("required for unknown site {:?}", e.name))
            })?;
            let uplink_distance_km = match (e.uplink_distance_km, known) {
                (Some(d), _) => d,
                (None, Some(v)) => great_circle_km(v.coordinates, HILO),
                (None, None) => {
                    return Err(ConfigError::invalid(
                        format!("{field}.uplink_distance_km"),
                        format!("required for unknown site {:?}", e.name),
                    ))
                }
            };
            let sensor_link = e.sensor_link.unwrap_or(t.sensor_link);
            sites.push(Site {
                site_id: i as u16,
                name: e.name.clone(),
                gateway_compute: e.gateway_compute.apply(self.compute.spec(ComponentClass::Gateway)),
                uplink: self.network.link(uplink),
                uplink_distance_km,
                sensor_link: self.network.link(sensor_link),
                sensor_distance_km: e.sensor_distance_km.unwrap_or(t.sensor_distance_km),
                sensor_compute: e.sensor_compute.apply(self.compute.spec(ComponentClass::Sensor)),
            });
        }
        Ok(Topology {
            sites,
            onprem: self.compute.spec(ComponentClass::Onprem),
            cloud: (0..self.workload.n_cloud)
                .map(|_| self.compute.spec(ComponentClass::Cloud))
                .collect(),
            onprem_cloud_link: self.network.link(t.onprem_cloud_link),
            onprem_cloud_distance_km: t
                .onprem_cloud_distance_km
                .unwrap_or_else(|| great_circle_km(HILO, crate::model::CLOUD_REGION)),
        })
    }
}

/// A fully resolved experiment. Its JSON form is hashed into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub workload: WorkloadParams,
    pub topology: Topology,
    pub mtu_bits: u64,
    pub rto_factor: u64,
    pub run: RunSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        ConfigFile::default().resolve().expect("default configuration is valid")
    }
}

impl RunConfig {
    /// Re-checks a configuration that was modified after resolution.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.workload.validate()?;
        self.run.validate()?;
        self.topology.validate(self.workload.n_cloud)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn duration(&self) -> Nanos {
        secs_to_nanos(self.run.duration_s)
    }

    pub fn warmup(&self) -> Nanos {
        match self.run.warmup_s {
            Some(w) => secs_to_nanos(w),
            None => secs_to_nanos(self.run.duration_s * self.run.warmup_frac),
        }
    }

    /// The measured part of the run, `[warmup, end)`.
    pub fn measure_window(&self) -> (Nanos, Nanos) {
        (self.warmup(), self.duration())
    }
}
