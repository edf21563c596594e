//! Run orchestration: simulated and external runs, configuration checks,
//! workload export, SLO resource search and request-rate calibration.

mod external;
mod sim;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use crate::adapter::{spawn_server, Capabilities, ExternalBinding, InProcessBinding};
use crate::config::{Mode, RunConfig};
use crate::error::{ConfigError, Result};
use crate::metrics::{
    calibrate_request_rate, slo_search, write_report, write_samples, Calibration, LatencySample, MetricsReport,
    ProbeLog, ProbeRecord, SearchOutcome,
};
use crate::model::{derived_rates, edge_ingress_rate, mean_sensor_gateway_bandwidth, RateSummary};
use crate::netsim::TraceSink;
use crate::records::{Query, SensorReading};
use crate::rng::{stream, Domain};
use crate::store::TimeSeriesStore;
use crate::workload::{tick_time, ClientState, QueryGenerator, SensorState};

use sim::World;

#[derive(Default)]
pub struct RunOptions {
    /// Serve the reference store on a loopback socket and reach it through
    /// the wire protocol instead of direct calls. Simulation mode only.
    pub loopback: bool,
    /// Destination for the event trace.
    pub trace: Option<Box<dyn Write + Send>>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub samples: Vec<LatencySample>,
}

/// The reference store sized from the cloud instances of `cfg`.
pub fn reference_store(cfg: &RunConfig) -> TimeSeriesStore {
    let caps: Vec<u64> = cfg.topology.cloud.iter().map(|c| c.effective_disk_bytes() as u64).collect();
    let mut store = TimeSeriesStore::new(&caps, cfg.run.record_footprint_bytes);
    store.track_threshold(cfg.run.scan_theta);
    store
}

pub fn run(cfg: &RunConfig, opts: RunOptions) -> Result<RunOutput> {
    let (report, samples) = match cfg.run.mode {
        Mode::Sim => {
            let trace = opts.trace.map(TraceSink::new).transpose()?;
            if opts.loopback {
                let server = spawn_server("127.0.0.1:0", reference_store(cfg))?;
                let timeout = Duration::from_secs_f64(cfg.run.sut.timeout_s);
                let binding = ExternalBinding::connect(&server.addr.to_string(), timeout, Capabilities::default())?;
                let out = World::new(cfg, Box::new(binding), trace).and_then(World::run);
                server.shutdown();
                out?
            } else {
                let binding = InProcessBinding::new(reference_store(cfg));
                World::new(cfg, Box::new(binding), trace)?.run()?
            }
        }
        Mode::External => external::run(cfg)?,
    };
    Ok(RunOutput { report, samples })
}

/// Writes `report.json` and `samples.csv` into `dir`, creating it.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_report(&dir.join("report.json"), &out.report)?;
    write_samples(&dir.join("samples.csv"), &out.samples)
}

#[derive(Debug, Clone, Serialize)]
pub struct Validation {
    pub config_hash: String,
    pub rates: RateSummary,
    /// Links or nodes whose mean demand meets or exceeds their capacity.
    pub warnings: Vec<String>,
}

fn kbps(bps: f64) -> String {
    format!("{:.1} kbit/s", bps / 1e3)
}

/// Derived rates plus a feasibility check of every link and node against
/// its mean demand.
pub fn validate(cfg: &RunConfig) -> Result<Validation> {
    cfg.validate()?;
    let w = &cfg.workload;
    let n_sites = cfg.topology.sites.len();
    let rates = derived_rates(w, n_sites);
    let costs = &cfg.run.costs;
    let mut warnings = Vec::new();
    let mut check = |what: String, demand: f64, capacity: f64, unit: fn(f64) -> String| {
        if demand >= capacity {
            warnings.push(format!("{what}: demand {} exceeds capacity {}", unit(demand), unit(capacity)));
        }
    };
    let cores = |x: f64| format!("{x:.3} cores");
    let per_sensor = mean_sensor_gateway_bandwidth(w);
    let per_site = edge_ingress_rate(w);
    for s in &cfg.topology.sites {
        check(
            format!("{} sensor link ({})", s.name, s.sensor_link.link_type.as_str()),
            per_sensor,
            s.sensor_link.bandwidth_bps,
            kbps,
        );
        check(
            format!("{} uplink ({})", s.name, s.uplink.link_type.as_str()),
            per_site,
            s.uplink.bandwidth_bps,
            kbps,
        );
        check(
            format!("{} sensor compute", s.name),
            costs.c_sense * w.sampling_rate_hz,
            s.sensor_compute.effective_cores(),
            cores,
        );
        check(
            format!("{} gateway compute", s.name),
            costs.c_agg * rates.aggregate_rate_per_site + costs.c_event * rates.collection_rate_per_site,
            s.gateway_compute.effective_cores(),
            cores,
        );
    }
    check(
        format!("on-premise to cloud link ({})", cfg.topology.onprem_cloud_link.link_type.as_str()),
        per_site * n_sites as f64,
        cfg.topology.onprem_cloud_link.bandwidth_bps,
        kbps,
    );
    check(
        "on-premise compute".to_string(),
        costs.c_inf * rates.total_insert_rate,
        cfg.topology.onprem.effective_cores(),
        cores,
    );
    if let Some(cloud) = cfg.topology.cloud.first() {
        let n = cfg.topology.cloud.len() as f64;
        check(
            "cloud instance compute (lower bound)".to_string(),
            costs.c_ins * rates.total_insert_rate / n + costs.c_q_base * rates.query_rate,
            cloud.effective_cores(),
            cores,
        );
    }
    Ok(Validation {
        config_hash: cfg.config_hash(),
        rates,
        warnings,
    })
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceItem<'a> {
    Reading(&'a SensorReading),
    Query(&'a Query),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GenerateSummary {
    pub readings: u64,
    pub queries: u64,
}

/// Writes the run's sensor readings and queries as NDJSON in time order.
/// Streams are seeded exactly as in a simulated run.
pub fn generate(cfg: &RunConfig, out: &mut dyn Write) -> Result<GenerateSummary> {
    cfg.validate()?;
    let w = &cfg.workload;
    let seed = cfg.run.seed;
    let end = cfg.duration();
    let mut sensors: Vec<SensorState> = cfg
        .topology
        .sites
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            let base = (si as u64) << 32;
            (0..w.n_sensors).map(move |i| SensorState::new(s.site_id, i, w, stream(seed, Domain::Sensor, base | u64::from(i))))
        })
        .collect();
    let qgen = QueryGenerator::new(w, cfg.run.scan_theta, cfg.run.scan_lookback_s)?;
    let mut clients: Vec<ClientState> = (0..w.n_clients)
        .map(|c| ClientState::new(c, stream(seed, Domain::Client, u64::from(c))))
        .collect();
    let mut timers: BinaryHeap<Reverse<(u64, usize)>> = (0..w.n_clients)
        .map(|c| Reverse((qgen.first_tick(c, w.n_clients), c as usize)))
        .collect();
    let mut summary = GenerateSummary::default();
    let mut emit_queries = |until: u64, out: &mut dyn Write, summary: &mut GenerateSummary| -> Result<()> {
        while let Some(&Reverse((t, c))) = timers.peek() {
            if t >= until {
                break;
            }
            timers.pop();
            let q = qgen.next_query(&mut clients[c], t);
            timers.push(Reverse((t + qgen.period, c)));
            serde_json::to_writer(&mut *out, &TraceItem::Query(&q))?;
            out.write_all(b"\n")?;
            summary.queries += 1;
        }
        Ok(())
    };
    let mut k = 0;
    loop {
        let t = tick_time(k, w.sampling_rate_hz);
        if t >= end {
            break;
        }
        emit_queries(t, out, &mut summary)?;
        for s in &mut sensors {
            let r = s.next_reading(t);
            serde_json::to_writer(&mut *out, &TraceItem::Reading(&r))?;
            out.write_all(b"\n")?;
            summary.readings += 1;
        }
        k += 1;
    }
    emit_queries(end, out, &mut summary)?;
    out.flush()?;
    Ok(summary)
}

/// Minimal edge resource scale in `[lo, hi]` at which the edge stays
/// stable. Every probe is a fresh simulated run of `cfg` with sensor and
/// gateway compute scaled.
pub fn search_min_scale(cfg: &RunConfig, lo: f64, hi: f64, tol: f64, log: &mut ProbeLog) -> Result<SearchOutcome> {
    let probe = |scale: f64| -> Result<ProbeRecord> {
        let mut c = cfg.clone();
        c.topology.scale_edge(scale);
        c.run.mode = Mode::Sim;
        c.run.verify = false;
        c.run.trace = false;
        let out = run(&c, RunOptions::default())?;
        let es = out.report.edge_stability;
        Ok(ProbeRecord::evaluate(scale, es.first_half_queue, es.second_half_queue, es.drops))
    };
    slo_search(probe, lo, hi, tol, log)
}

/// Per-client request rate that drives mean cloud utilization to
/// `target ± tol`, measured by simulated runs of `cfg`.
pub fn calibrate(cfg: &RunConfig, target: f64, tol: f64, ceiling: f64) -> Result<Calibration> {
    let measure = |rate: f64| -> Result<f64> {
        let mut c = cfg.clone();
        c.workload.request_rate_hz = rate;
        c.run.mode = Mode::Sim;
        c.run.verify = false;
        c.run.trace = false;
        let u = run(&c, RunOptions::default())?.report.cloud_utilization;
        log::info!("calibration probe {rate} Hz: utilization {u:.4}");
        Ok(u)
    };
    calibrate_request_rate(measure, cfg.workload.request_rate_hz, target, tol, ceiling)
}

/// Rewrites a configuration document with `workload.request_rate_hz` set,
/// keeping every other key.
pub fn with_request_rate(source: &str, rate: f64) -> Result<String> {
    let mut doc: toml::Table = source.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let workload = doc
        .entry("workload")
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(t) = workload else {
        return Err(ConfigError::invalid("workload", "must be a table").into());
    };
    t.insert("request_rate_hz".to_string(), toml::Value::Float(rate));
    toml::to_string(&doc).map_err(|e| ConfigError::Parse(e.to_string()).into())
}
