use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::RateSummary;
use crate::netsim::{EventStats, LinkStats};

use super::latency::{LatencySample, LatencySummary};

/// Per link class, averaged over the links of that class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub links: u64,
    /// Payload bits offered per second per link during the measured window.
    pub mean_payload_bps: f64,
    pub mean_wire_bps: f64,
    /// Analytical expectation of `mean_payload_bps`, where one exists.
    pub model_bps: Option<f64>,
    pub capacity_bps: f64,
    pub totals: LinkStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub utilization: f64,
    pub mean_queue_first_half: f64,
    pub mean_queue_second_half: f64,
    pub admitted: u64,
    pub drops: u64,
    pub max_queue: u64,
    pub queue_limit: u64,
}

/// Time-averaged total queue length of all sensors and gateways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStability {
    pub first_half_queue: f64,
    pub second_half_queue: f64,
    pub drops: u64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessReport {
    pub threshold_s: f64,
    pub recent_queries: u64,
    pub violations: u64,
    /// Absent when no recent reads were checked.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub ingest_attempts: u64,
    pub ingest_failures: u64,
    pub ingest_failure_rate: f64,
    pub query_attempts: u64,
    pub query_failures: u64,
    pub query_failure_rate: f64,
    /// Requests skipped because the SUT lacks the capability.
    pub unsupported: u64,
}

impl FailureReport {
    pub fn finish(&mut self) {
        let rate = |f: u64, n: u64| if n == 0 { 0.0 } else { f as f64 / n as f64 };
        self.ingest_failure_rate = rate(self.ingest_failures, self.ingest_attempts);
        self.query_failure_rate = rate(self.query_failures, self.query_attempts);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExceedReport {
    pub readings: u64,
    pub exceeding: u64,
    pub fraction: f64,
    /// Site-ticks observed and collection triggers among them.
    pub site_ticks: u64,
    pub triggers: u64,
    pub trigger_frequency: f64,
    pub model_trigger_probability: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked_queries: u64,
    pub mismatched_queries: u64,
    pub failures: Vec<String>,
    pub passed: bool,
}

/// Everything a run produces, written to `report.json`. Contains no
/// wall-clock data in simulation mode, so equal (config hash, seed, tool
/// version) triples yield identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: String,
    pub sut_scope: Option<String>,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub n_sensors_per_site: u32,
    pub sites: u64,
    /// Latency summaries: `e2e_insert_raw`, `e2e_insert_corrected`,
    /// `query`, `query_<kind>` and `event_report`.
    pub latency: BTreeMap<String, LatencySummary>,
    pub staleness: StalenessReport,
    pub failures: FailureReport,
    pub query_mix: BTreeMap<String, u64>,
    pub bandwidth: BTreeMap<String, BandwidthReport>,
    pub nodes: BTreeMap<String, NodeReport>,
    pub edge_stability: EdgeStability,
    pub cloud_utilization: f64,
    pub exceed: ExceedReport,
    pub counters: BTreeMap<String, u64>,
    pub model: RateSummary,
    pub propagation_offset_ns: BTreeMap<String, u64>,
    pub events: EventStats,
    pub slo_min_scale: Option<f64>,
    pub calibrated_request_rate_hz: Option<f64>,
    pub verify: Option<VerifyReport>,
    /// SHA-256 over every materialized query result, in issue order.
    pub result_digest: Option<String>,
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_samples(path: &Path, samples: &[LatencySample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "kind,issue_time_ns,raw_ns,corrected_ns,subject")?;
    for s in samples {
        match s.corrected_ns {
            Some(c) => writeln!(w, "{},{},{},{},{}", s.kind.as_str(), s.issue_time, s.raw_ns, c, s.subject)?,
            None => writeln!(w, "{},{},{},,{}", s.kind.as_str(), s.issue_time, s.raw_ns, s.subject)?,
        }
    }
    w.flush()?;
    Ok(())
}
