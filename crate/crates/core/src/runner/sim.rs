use std::collections::{BTreeMap, HashMap};
use std::io;

use sha2::{Digest, Sha256};

use crate::adapter::{Capabilities, IngestItem, SutBinding};
use crate::config::RunConfig;
use crate::error::Result;
use crate::metrics::{
    propagation_offset, BandwidthReport, EdgeStability, ExceedReport, FailureReport, LatencySample,
    LatencySummary, LogEntry, MetricsReport, NodeReport, ProbeRecord, QueryLogEntry, SampleKind,
    StalenessIndex, StalenessReport, VerifyReport,
};
use crate::model::{derived_rates, edge_ingress_rate, mean_sensor_gateway_bandwidth, quorum_probability};
use crate::netsim::{
    nanos_to_secs, secs_to_nanos, EventKind, EventQueue, EventStats, Link, LinkStats, Nanos, NodeQueue,
    TraceSink,
};
use crate::records::{AggregateRecord, AnnotatedRecord, EventReport, Query, QueryKind, RecordKey};
use crate::rng::{stream, Domain};
use crate::services::{ForwardAction, GatewayService, InferenceOutcome, InferenceService, QuorumCounter};
use crate::store::{partition, CloudCluster, QueryCosts};
use crate::workload::{tick_time, ClientState, QueryGenerator, SensorState};
use crate::TOOL_VERSION;

#[derive(Debug)]
enum Ev {
    SiteTick { site: usize, k: u64 },
    AggregateAtGateway { site: usize, record: AggregateRecord },
    ReportAtGateway { site: usize, report: EventReport },
    AggregateAtOnprem(AggregateRecord),
    ReportAtOnprem(EventReport),
    RecordAtCloud(AnnotatedRecord),
    ReportAtCloud(EventReport),
    InsertCommit(AnnotatedRecord),
    ReportCommit(EventReport),
    ClientTick(usize),
}

struct SiteState {
    site_id: u16,
    name: String,
    sensors: Vec<SensorState>,
    sensor_nodes: Vec<NodeQueue>,
    sensor_links: Vec<Link>,
    quorum: QuorumCounter,
    gateway: GatewayService,
    uplink: Link,
    offset: Nanos,
}

#[derive(Default)]
struct Flow {
    readings: u64,
    reading_drops: u64,
    aggregates: u64,
    gateway_in: u64,
    gateway_forwarded: u64,
    gateway_drops: u64,
    reports_triggered: u64,
    reports_forwarded: u64,
    reports_dropped: u64,
    onprem_in: u64,
    annotated: u64,
    inference_drops: u64,
    cloud_in: u64,
    cloud_admitted: u64,
    cloud_drops: u64,
    committed: u64,
    evicted: u64,
    reports_archived: u64,
    queries_issued: u64,
    routing_errors: u64,
}

pub(crate) struct World {
    cfg: RunConfig,
    warmup: Nanos,
    end: Nanos,
    sites: Vec<SiteState>,
    inference: InferenceService,
    cloud_link: Link,
    cluster: CloudCluster,
    binding: Box<dyn SutBinding>,
    caps: Capabilities,
    qgen: QueryGenerator,
    clients: Vec<ClientState>,
    materialize: bool,
    op_seq: u64,
    log: Vec<LogEntry>,
    log_index: HashMap<RecordKey, usize>,
    oracle: BTreeMap<(Nanos, RecordKey), usize>,
    queries: Vec<QueryLogEntry>,
    samples: Vec<LatencySample>,
    flow: Flow,
    exceed: ExceedReport,
    failures: FailureReport,
    mix: BTreeMap<String, u64>,
    verify_failures: Vec<String>,
    checked_queries: u64,
    mismatched_queries: u64,
    digest: Sha256,
    trace: Option<TraceSink>,
    trace_error: Option<io::Error>,
}

impl World {
    pub(crate) fn new(cfg: &RunConfig, binding: Box<dyn SutBinding>, trace: Option<TraceSink>) -> Result<Self> {
        cfg.validate()?;
        let w = &cfg.workload;
        let seed = cfg.run.seed;
        let warmup = cfg.warmup();
        let end = cfg.duration();
        let mid = warmup + (end - warmup) / 2;
        let queue_windows = vec![(warmup, mid), (mid, end)];
        let busy_windows = vec![(warmup, end)];
        let footprint = cfg.run.record_footprint_bytes;
        let costs = &cfg.run.costs;
        let metered = |n: NodeQueue| n.with_meters(queue_windows.clone(), busy_windows.clone());
        let link = |spec, km, index| {
            Link::new(spec, km, cfg.mtu_bits, stream(seed, Domain::Link, index))
                .with_window(warmup, end)
                .with_rto_factor(cfg.rto_factor)
        };

        let mut sites = Vec::with_capacity(cfg.topology.sites.len());
        for (si, site) in cfg.topology.sites.iter().enumerate() {
            let n = w.n_sensors;
            let base = (si as u64) << 32;
            let sensors = (0..n)
                .map(|i| SensorState::new(site.site_id, i, w, stream(seed, Domain::Sensor, base | u64::from(i))))
                .collect();
            let sensor_nodes = (0..n)
                .map(|i| {
                    metered(NodeQueue::from_spec(
                        format!("{}/sensor-{i}", site.name),
                        &site.sensor_compute,
                        footprint,
                    ))
                })
                .collect();
            let sensor_links = (0..n)
                .map(|i| link(site.sensor_link.clone(), site.sensor_distance_km, base | u64::from(i)))
                .collect();
            let gw_node = metered(NodeQueue::from_spec(
                format!("{}/gateway", site.name),
                &site.gateway_compute,
                footprint,
            ));
            sites.push(SiteState {
                site_id: site.site_id,
                name: site.name.clone(),
                sensors,
                sensor_nodes,
                sensor_links,
                quorum: QuorumCounter::new(site.site_id, n, w.quorum_ratio),
                gateway: GatewayService::new(site.site_id, gw_node, costs.c_agg, costs.c_event),
                uplink: link(site.uplink.clone(), site.uplink_distance_km, (1 << 40) | si as u64),
                offset: propagation_offset(&cfg.topology, site.site_id)?,
            });
        }

        let onprem = metered(NodeQueue::from_spec("onprem", &cfg.topology.onprem, footprint));
        let inference = InferenceService::new(
            onprem,
            secs_to_nanos(w.lstm_window_s),
            costs.c_inf,
            cfg.run.warning_threshold,
        );
        let cloud_link = link(
            cfg.topology.onprem_cloud_link.clone(),
            cfg.topology.onprem_cloud_distance_km,
            1 << 41,
        );
        let cluster = CloudCluster::new(
            &cfg.topology.cloud,
            footprint,
            QueryCosts {
                c_ins: costs.c_ins,
                c_q_base: costs.c_q_base,
                c_q_per_record: costs.c_q_per_record,
            },
            queue_windows.clone(),
            busy_windows.clone(),
        );
        let qgen = QueryGenerator::new(w, cfg.run.scan_theta, cfg.run.scan_lookback_s)?;
        let clients = (0..w.n_clients)
            .map(|c| ClientState::new(c, stream(seed, Domain::Client, u64::from(c))))
            .collect();
        let mut caps = binding.capabilities();
        caps.supports_event_reports &= cfg.run.sut.supports_event_reports;
        caps.supports_scan &= cfg.run.sut.supports_scan;

        Ok(World {
            cfg: cfg.clone(),
            warmup,
            end,
            sites,
            inference,
            cloud_link,
            cluster,
            binding,
            caps,
            qgen,
            clients,
            materialize: cfg.run.verify,
            op_seq: 0,
            log: Vec::new(),
            log_index: HashMap::new(),
            oracle: BTreeMap::new(),
            queries: Vec::new(),
            samples: Vec::new(),
            flow: Flow::default(),
            exceed: ExceedReport::default(),
            failures: FailureReport::default(),
            mix: BTreeMap::new(),
            verify_failures: Vec::new(),
            checked_queries: 0,
            mismatched_queries: 0,
            digest: Sha256::new(),
            trace,
            trace_error: None,
        })
    }

    /// Runs generation to the configured end plus the drain period and
    /// assembles the report.
    pub(crate) fn run(mut self) -> Result<(MetricsReport, Vec<LatencySample>)> {
        let mut q = EventQueue::new();
        let f = self.cfg.workload.sampling_rate_hz;
        if tick_time(0, f) < self.end {
            for site in 0..self.sites.len() {
                q.schedule(tick_time(0, f), EventKind::GeneratorTick, Ev::SiteTick { site, k: 0 });
            }
        }
        let n_clients = self.cfg.workload.n_clients;
        for c in 0..n_clients {
            let t = self.qgen.first_tick(c, n_clients);
            if t < self.end {
                q.schedule(t, EventKind::Timer, Ev::ClientTick(c as usize));
            }
        }
        let horizon = self.end + secs_to_nanos(self.cfg.run.drain_s);
        let stats = q.run_until(horizon, |q, ev| self.dispatch(q, ev));
        let in_flight = q.len() as u64;
        if let Some(t) = self.trace.as_mut() {
            if let Err(e) = t.flush() {
                self.trace_error.get_or_insert(e);
            }
        }
        if let Some(e) = self.trace_error.take() {
            return Err(e.into());
        }
        Ok(self.finish(stats, in_flight))
    }

    fn trace(&mut self, time: Nanos, kind: EventKind, node: &str, detail: &str) {
        if let Some(t) = self.trace.as_mut() {
            if let Err(e) = t.record(time, kind, node, detail) {
                self.trace_error.get_or_insert(e);
            }
        }
    }

    fn measured(&self, t: Nanos) -> bool {
        t >= self.warmup && t < self.end
    }

    fn dispatch(&mut self, q: &mut EventQueue<Ev>, ev: crate::netsim::Event<Ev>) {
        let now = ev.fire_time;
        if self.trace.is_some() {
            let (node, detail) = self.describe(&ev.payload);
            self.trace(now, ev.kind, &node, &detail);
        }
        match ev.payload {
            Ev::SiteTick { site, k } => self.on_tick(q, now, site, k),
            Ev::AggregateAtGateway { site, record } => self.on_gateway_aggregate(q, now, site, record),
            Ev::ReportAtGateway { site, report } => self.on_gateway_report(q, now, site, report),
            Ev::AggregateAtOnprem(rec) => self.on_onprem_aggregate(q, now, rec),
            Ev::ReportAtOnprem(report) => {
                let out = self.cloud_link.transmit(now, report.size_bits(), report.payload_bits());
                q.schedule(out.delivered_at, EventKind::MessageArrival, Ev::ReportAtCloud(report));
            }
            Ev::RecordAtCloud(rec) => self.on_cloud_record(q, now, rec),
            Ev::ReportAtCloud(report) => self.on_cloud_report(q, now, report),
            Ev::InsertCommit(rec) => self.on_commit(now, rec),
            Ev::ReportCommit(report) => self.on_report_commit(now, report),
            Ev::ClientTick(c) => self.on_client(q, now, c),
        }
    }

    fn describe(&self, ev: &Ev) -> (String, String) {
        let site_name = |site_id: u16| {
            self.sites
                .iter()
                .find(|s| s.site_id == site_id)
                .map_or_else(|| format!("site-{site_id}"), |s| s.name.clone())
        };
        match ev {
            Ev::SiteTick { site, k } => (self.sites[*site].name.clone(), format!("tick {k}")),
            Ev::AggregateAtGateway { site, record } => (
                format!("{}/gateway", self.sites[*site].name),
                format!("aggregate {}:{}", record.sensor_id, record.window_seq),
            ),
            Ev::ReportAtGateway { site, report } => (
                format!("{}/gateway", self.sites[*site].name),
                format!("event report exceed={}", report.exceed_count),
            ),
            Ev::AggregateAtOnprem(r) => (
                "onprem".into(),
                format!("aggregate {}:{}:{}", site_name(r.site_id), r.sensor_id, r.window_seq),
            ),
            Ev::ReportAtOnprem(r) => ("onprem".into(), format!("event report {}", site_name(r.site_id))),
            Ev::RecordAtCloud(r) | Ev::InsertCommit(r) => (
                format!("cloud-{}", partition(r.record.site_id, self.cluster.nodes.len())),
                format!(
                    "{} {}:{}:{}",
                    if matches!(ev, Ev::InsertCommit(_)) { "commit" } else { "arrival" },
                    site_name(r.record.site_id),
                    r.record.sensor_id,
                    r.record.window_seq
                ),
            ),
            Ev::ReportAtCloud(r) | Ev::ReportCommit(r) => (
                format!("cloud-{}", partition(r.site_id, self.cluster.nodes.len())),
                format!(
                    "{} event report {}",
                    if matches!(ev, Ev::ReportCommit(_)) { "archive" } else { "arrival" },
                    site_name(r.site_id)
                ),
            ),
            Ev::ClientTick(c) => (format!("client-{c}"), "query".into()),
        }
    }

    fn on_tick(&mut self, q: &mut EventQueue<Ev>, now: Nanos, si: usize, k: u64) {
        let measured = self.measured(now);
        let c_sense = self.cfg.run.costs.c_sense;
        let r_bits = u64::from(self.cfg.workload.resolution_bits);
        let site = &mut self.sites[si];
        let mut trigger = None;
        for i in 0..site.sensors.len() {
            let reading = site.sensors[i].next_reading(now);
            self.flow.readings += 1;
            if measured {
                self.exceed.readings += 1;
                self.exceed.exceeding += u64::from(reading.exceeds);
            }
            let Some(done) = site.sensor_nodes[i].execute(now, c_sense) else {
                self.flow.reading_drops += 1;
                continue;
            };
            if reading.exceeds {
                if let Some(t) = site.quorum.on_exceed(i as u32, k) {
                    trigger = Some(t);
                }
            }
            if let Some(rec) = site.sensors[i].maybe_aggregate() {
                self.flow.aggregates += 1;
                let out = site.sensor_links[i].transmit(done, rec.size_bits, r_bits);
                q.schedule(
                    out.delivered_at,
                    EventKind::MessageArrival,
                    Ev::AggregateAtGateway { site: si, record: rec },
                );
            }
        }
        if measured {
            self.exceed.site_ticks += 1;
        }
        if trigger.is_some() {
            self.flow.reports_triggered += 1;
            if measured {
                self.exceed.triggers += 1;
            }
            let mut dumps = Vec::with_capacity(site.sensors.len());
            let mut assembled = now;
            for (sensor, link) in site.sensors.iter().zip(site.sensor_links.iter_mut()) {
                let dump = sensor.dump_summary();
                let out = link.transmit(now, dump.size_bits(), dump.payload_bits);
                assembled = assembled.max(out.delivered_at);
                dumps.push(dump);
            }
            let report = EventReport {
                site_id: site.site_id,
                trigger_time: now,
                exceed_count: site.quorum.count(),
                dumps,
            };
            q.schedule(assembled, EventKind::MessageArrival, Ev::ReportAtGateway { site: si, report });
        }
        let next = tick_time(k + 1, self.cfg.workload.sampling_rate_hz);
        if next < self.end {
            q.schedule(next, EventKind::GeneratorTick, Ev::SiteTick { site: si, k: k + 1 });
        }
    }

    fn on_gateway_aggregate(&mut self, q: &mut EventQueue<Ev>, now: Nanos, si: usize, record: AggregateRecord) {
        self.flow.gateway_in += 1;
        let r_bits = u64::from(self.cfg.workload.resolution_bits);
        let site = &mut self.sites[si];
        match site.gateway.on_aggregate(now, record) {
            Ok(ForwardAction::Forward { item, ready_at }) => {
                self.flow.gateway_forwarded += 1;
                let out = site.uplink.transmit(ready_at, item.size_bits, r_bits);
                q.schedule(out.delivered_at, EventKind::MessageArrival, Ev::AggregateAtOnprem(item));
            }
            Ok(ForwardAction::Dropped) => self.flow.gateway_drops += 1,
            Err(e) => {
                self.flow.routing_errors += 1;
                self.verify_failures
                    .push(format!("gateway {} received record for site {}", e.expected, e.got));
            }
        }
    }

    fn on_gateway_report(&mut self, q: &mut EventQueue<Ev>, now: Nanos, si: usize, report: EventReport) {
        let site = &mut self.sites[si];
        match site.gateway.on_event_report(now, report) {
            Ok(ForwardAction::Forward { item, ready_at }) => {
                self.flow.reports_forwarded += 1;
                let out = site.uplink.transmit(ready_at, item.size_bits(), item.payload_bits());
                q.schedule(out.delivered_at, EventKind::MessageArrival, Ev::ReportAtOnprem(item));
            }
            Ok(ForwardAction::Dropped) => self.flow.reports_dropped += 1,
            Err(e) => {
                self.flow.routing_errors += 1;
                self.verify_failures
                    .push(format!("gateway {} received report for site {}", e.expected, e.got));
            }
        }
    }

    fn on_onprem_aggregate(&mut self, q: &mut EventQueue<Ev>, now: Nanos, rec: AggregateRecord) {
        self.flow.onprem_in += 1;
        match self.inference.on_record(now, rec) {
            InferenceOutcome::Annotated { record, .. } => {
                self.flow.annotated += 1;
                let key = record.key();
                let idx = self.log.len();
                self.log.push(LogEntry {
                    key,
                    gen_time: record.gen_time(),
                    event_probability: record.event_probability,
                    commit: None,
                    evict: None,
                });
                if self.log_index.insert(key, idx).is_some() {
                    self.verify_failures.push(format!("record {key:?} annotated twice"));
                }
                if self.materialize {
                    self.oracle.insert((record.gen_time(), key), idx);
                }
                let r_bits = u64::from(self.cfg.workload.resolution_bits);
                let out = self.cloud_link.transmit(record.inference_time, record.size_bits(), r_bits);
                let at = out.delivered_at + secs_to_nanos(self.cfg.run.injected_delay_s);
                q.schedule(at, EventKind::MessageArrival, Ev::RecordAtCloud(record));
            }
            InferenceOutcome::Dropped => self.flow.inference_drops += 1,
        }
    }

    fn on_cloud_record(&mut self, q: &mut EventQueue<Ev>, now: Nanos, rec: AnnotatedRecord) {
        self.flow.cloud_in += 1;
        let measured = self.measured(rec.record.created_at);
        if measured {
            self.failures.ingest_attempts += 1;
        }
        let instance = partition(rec.record.site_id, self.cluster.nodes.len());
        match self.cluster.admit_insert(instance, now) {
            Some(t) => {
                self.flow.cloud_admitted += 1;
                q.schedule(t, EventKind::ServiceCompletion, Ev::InsertCommit(rec));
            }
            None => {
                self.flow.cloud_drops += 1;
                if measured {
                    self.failures.ingest_failures += 1;
                }
            }
        }
    }

    fn on_cloud_report(&mut self, q: &mut EventQueue<Ev>, now: Nanos, report: EventReport) {
        if !self.caps.supports_event_reports {
            self.failures.unsupported += 1;
            return;
        }
        let instance = partition(report.site_id, self.cluster.nodes.len());
        if let Some(t) = self.cluster.admit_insert(instance, now) {
            q.schedule(t, EventKind::ServiceCompletion, Ev::ReportCommit(report));
        } else {
            self.flow.reports_dropped += 1;
        }
    }

    fn site_index(&self, site_id: u16) -> usize {
        self.sites
            .iter()
            .position(|s| s.site_id == site_id)
            .expect("records only come from configured sites")
    }

    fn on_commit(&mut self, now: Nanos, rec: AnnotatedRecord) {
        let measured = self.measured(rec.record.created_at);
        let key = rec.key();
        self.op_seq += 1;
        let seq = self.op_seq;
        let si = self.site_index(rec.record.site_id);
        let created_at = rec.record.created_at;
        match self.binding.ingest(&IngestItem::Record(rec)) {
            Ok(ack) => {
                self.flow.committed += 1;
                match self.log_index.get(&key).map(|&i| &mut self.log[i]) {
                    Some(e) if e.commit.is_none() => e.commit = Some(seq),
                    _ => self.verify_failures.push(format!("record {key:?} committed twice or unknown")),
                }
                for k in ack.evicted {
                    self.flow.evicted += 1;
                    match self.log_index.get(&k).map(|&i| &mut self.log[i]) {
                        Some(e) if e.commit.is_some() && e.evict.is_none() => e.evict = Some(seq),
                        _ => self.verify_failures.push(format!("eviction of uncommitted record {k:?}")),
                    }
                }
                if measured {
                    let raw = now - created_at;
                    self.samples.push(LatencySample {
                        kind: SampleKind::E2eInsert,
                        issue_time: created_at,
                        raw_ns: raw,
                        corrected_ns: Some(raw.saturating_sub(self.sites[si].offset)),
                        subject: self.sites[si].name.clone(),
                    });
                }
            }
            Err(e) => {
                log::debug!("insert failed: {e}");
                if measured {
                    self.failures.ingest_failures += 1;
                }
            }
        }
    }

    fn on_report_commit(&mut self, now: Nanos, report: EventReport) {
        let si = self.site_index(report.site_id);
        let trigger = report.trigger_time;
        match self.binding.ingest(&IngestItem::EventReport(report)) {
            Ok(_) => {
                self.flow.reports_archived += 1;
                if self.measured(trigger) {
                    let raw = now - trigger;
                    self.samples.push(LatencySample {
                        kind: SampleKind::EventReport,
                        issue_time: trigger,
                        raw_ns: raw,
                        corrected_ns: Some(raw.saturating_sub(self.sites[si].offset)),
                        subject: self.sites[si].name.clone(),
                    });
                }
            }
            Err(e) => log::debug!("event report archive failed: {e}"),
        }
    }

    fn on_client(&mut self, q: &mut EventQueue<Ev>, now: Nanos, c: usize) {
        let query = self.qgen.next_query(&mut self.clients[c], now);
        let next = now + self.qgen.period;
        if next < self.end {
            q.schedule(next, EventKind::Timer, Ev::ClientTick(c));
        }
        self.flow.queries_issued += 1;
        let measured = self.measured(now);
        if measured {
            *self.mix.entry(query.kind.as_str().to_string()).or_default() += 1;
        }
        if query.kind == QueryKind::ScanFilter && !self.caps.supports_scan {
            if measured {
                self.failures.unsupported += 1;
            }
            return;
        }
        if measured {
            self.failures.query_attempts += 1;
        }
        self.op_seq += 1;
        let eval = self.op_seq;
        let succeeded = match self.binding.query(&query, self.materialize) {
            Ok(res) => {
                if self.materialize {
                    self.check_result(&query, eval, &res.sorted_keys(), res.count);
                    self.digest.update(query.query_id.to_le_bytes());
                    for k in res.sorted_keys() {
                        self.digest.update(k.site_id.to_le_bytes());
                        self.digest.update(k.sensor_id.to_le_bytes());
                        self.digest.update(k.window_seq.to_le_bytes());
                    }
                }
                match self.cluster.charge_query(now, &res.served_by) {
                    Some(done) => {
                        if measured {
                            self.samples.push(LatencySample {
                                kind: SampleKind::Query,
                                issue_time: now,
                                raw_ns: done - now,
                                corrected_ns: None,
                                subject: query.kind.as_str().to_string(),
                            });
                        }
                        true
                    }
                    None => false,
                }
            }
            Err(e) => {
                log::debug!("query {} failed: {e}", query.query_id);
                false
            }
        };
        if measured && !succeeded {
            self.failures.query_failures += 1;
        }
        self.queries.push(QueryLogEntry {
            query_id: query.query_id,
            kind: query.kind,
            issue_time: now,
            start: query.interval.map(|iv| iv.start),
            eval,
            succeeded,
        });
    }

    /// Compares a result against a brute-force evaluation of the
    /// omniscient log at the same point in the store-operation order.
    fn check_result(&mut self, query: &Query, eval: u64, got: &[RecordKey], count: u64) {
        let (lo, hi) = match (query.kind, query.interval) {
            (QueryKind::ScanFilter, _) => (query.lookback_start.unwrap_or(0), query.issue_time),
            (_, Some(iv)) => (iv.start, iv.end),
            (_, None) => (0, 0),
        };
        let lo_key = RecordKey {
            site_id: 0,
            sensor_id: 0,
            window_seq: 0,
        };
        let mut expected: Vec<RecordKey> = if hi > lo {
            self.oracle
                .range((lo, lo_key)..(hi, lo_key))
                .map(|(_, &i)| &self.log[i])
                .filter(|e| e.visible_at(eval) && query.matches(e.gen_time, e.event_probability))
                .map(|e| e.key)
                .collect()
        } else {
            Vec::new()
        };
        expected.sort_unstable();
        self.checked_queries += 1;
        if expected != got || count != expected.len() as u64 {
            self.mismatched_queries += 1;
            if self.verify_failures.len() < 20 {
                self.verify_failures.push(format!(
                    "query {} ({}) returned {} records, oracle expects {}",
                    query.query_id,
                    query.kind.as_str(),
                    got.len(),
                    expected.len()
                ));
            }
        }
    }

    fn finish(mut self, events: EventStats, in_flight: u64) -> (MetricsReport, Vec<LatencySample>) {
        let cfg = self.cfg.clone();
        let w = &cfg.workload;
        let window_s = nanos_to_secs(self.end - self.warmup);

        let mut latency = BTreeMap::new();
        let mut raw = Vec::new();
        let mut corrected = Vec::new();
        let mut query_all = Vec::new();
        let mut by_kind: BTreeMap<String, Vec<Nanos>> = BTreeMap::new();
        let mut reports = Vec::new();
        for s in &self.samples {
            match s.kind {
                SampleKind::E2eInsert => {
                    raw.push(s.raw_ns);
                    corrected.extend(s.corrected_ns);
                }
                SampleKind::Query => {
                    query_all.push(s.raw_ns);
                    by_kind.entry(format!("query_{}", s.subject)).or_default().push(s.raw_ns);
                }
                SampleKind::EventReport => reports.push(s.raw_ns),
            }
        }
        for (name, mut v) in [
            ("e2e_insert_raw".to_string(), raw),
            ("e2e_insert_corrected".to_string(), corrected),
            ("query".to_string(), query_all),
            ("event_report".to_string(), reports),
        ]
        .into_iter()
        .chain(by_kind)
        {
            if let Some(summary) = LatencySummary::from_values(&mut v) {
                latency.insert(name, summary);
            }
        }

        let index = StalenessIndex::new(&self.log);
        let t_stale = secs_to_nanos(w.stale_threshold_s);
        let (checked, violations) = index.count(&self.queries, t_stale, self.warmup);
        let staleness = StalenessReport {
            threshold_s: w.stale_threshold_s,
            recent_queries: checked,
            violations,
            ratio: (checked > 0).then(|| violations as f64 / checked as f64),
        };

        let mut bandwidth = BTreeMap::new();
        let class = |links: Vec<&Link>, model: Option<f64>| {
            let mut totals = LinkStats::default();
            for l in &links {
                totals.merge(l.stats());
            }
            let n = links.len() as f64;
            let per = |bits: u64| if window_s > 0.0 && n > 0.0 { bits as f64 / window_s / n } else { 0.0 };
            BandwidthReport {
                links: links.len() as u64,
                mean_payload_bps: per(totals.window_payload_bits),
                mean_wire_bps: per(totals.window_wire_bits),
                model_bps: model,
                capacity_bps: links.iter().map(|l| l.spec().bandwidth_bps).sum::<f64>() / n.max(1.0),
                totals,
            }
        };
        let n_sites = self.sites.len();
        bandwidth.insert(
            "sensor_gateway".to_string(),
            class(
                self.sites.iter().flat_map(|s| s.sensor_links.iter()).collect(),
                Some(mean_sensor_gateway_bandwidth(w)),
            ),
        );
        bandwidth.insert(
            "gateway_onprem".to_string(),
            class(self.sites.iter().map(|s| &s.uplink).collect(), Some(edge_ingress_rate(w))),
        );
        bandwidth.insert(
            "onprem_cloud".to_string(),
            class(vec![&self.cloud_link], Some(edge_ingress_rate(w) * n_sites as f64)),
        );

        let node_report = |n: &NodeQueue| NodeReport {
            utilization: n.utilization(0),
            mean_queue_first_half: n.queue_meter().mean(0),
            mean_queue_second_half: n.queue_meter().mean(1),
            admitted: n.admitted(),
            drops: n.drops(),
            max_queue: n.max_queue_seen() as u64,
            queue_limit: n.max_queue() as u64,
        };
        let mut nodes = BTreeMap::new();
        let (mut first, mut second, mut edge_drops) = (0.0, 0.0, 0);
        for s in &self.sites {
            let g = node_report(&s.gateway.node);
            let mut agg = NodeReport {
                utilization: 0.0,
                mean_queue_first_half: 0.0,
                mean_queue_second_half: 0.0,
                admitted: 0,
                drops: 0,
                max_queue: 0,
                queue_limit: s.sensor_nodes.first().map_or(0, |n| n.max_queue() as u64),
            };
            for n in &s.sensor_nodes {
                let r = node_report(n);
                agg.utilization += r.utilization / s.sensor_nodes.len() as f64;
                agg.mean_queue_first_half += r.mean_queue_first_half;
                agg.mean_queue_second_half += r.mean_queue_second_half;
                agg.admitted += r.admitted;
                agg.drops += r.drops;
                agg.max_queue = agg.max_queue.max(r.max_queue);
            }
            first += g.mean_queue_first_half + agg.mean_queue_first_half;
            second += g.mean_queue_second_half + agg.mean_queue_second_half;
            edge_drops += g.drops + agg.drops;
            for r in [&g, &agg] {
                if r.max_queue > r.queue_limit {
                    self.verify_failures.push(format!("queue bound exceeded at {}", s.name));
                }
            }
            nodes.insert(format!("{}/gateway", s.name), g);
            nodes.insert(format!("{}/sensors", s.name), agg);
        }
        nodes.insert("onprem".to_string(), node_report(&self.inference.node));
        for n in &self.cluster.nodes {
            nodes.insert(n.label.clone(), node_report(n));
        }
        let probe = ProbeRecord::evaluate(1.0, first, second, edge_drops);
        let edge_stability = EdgeStability {
            first_half_queue: first,
            second_half_queue: second,
            drops: edge_drops,
            stable: probe.stable,
        };

        let mut exceed = self.exceed.clone();
        exceed.fraction = ratio(exceed.exceeding, exceed.readings);
        exceed.trigger_frequency = ratio(exceed.triggers, exceed.site_ticks);
        exceed.model_trigger_probability = quorum_probability(w.n_sensors, w.quorum_ratio, w.exceed_prob).unwrap_or(0.0);

        let fl = &self.flow;
        let counters: BTreeMap<String, u64> = [
            ("readings", fl.readings),
            ("reading_drops", fl.reading_drops),
            ("aggregates", fl.aggregates),
            ("gateway_in", fl.gateway_in),
            ("gateway_forwarded", fl.gateway_forwarded),
            ("gateway_drops", fl.gateway_drops),
            ("event_reports_triggered", fl.reports_triggered),
            ("event_reports_forwarded", fl.reports_forwarded),
            ("event_reports_dropped", fl.reports_dropped),
            ("event_reports_archived", fl.reports_archived),
            ("onprem_in", fl.onprem_in),
            ("annotated", fl.annotated),
            ("inference_drops", fl.inference_drops),
            ("warnings", self.inference.warnings()),
            ("cloud_in", fl.cloud_in),
            ("cloud_admitted", fl.cloud_admitted),
            ("cloud_drops", fl.cloud_drops),
            ("committed", fl.committed),
            ("evicted", fl.evicted),
            ("queries_issued", fl.queries_issued),
            ("routing_errors", fl.routing_errors),
            ("in_flight_at_end", in_flight),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();

        self.check_invariants(&latency, &staleness);
        let verify = cfg.run.verify.then(|| VerifyReport {
            checked_queries: self.checked_queries,
            mismatched_queries: self.mismatched_queries,
            passed: self.verify_failures.is_empty() && self.mismatched_queries == 0,
            failures: self.verify_failures.clone(),
        });
        let mut failures = self.failures.clone();
        failures.finish();

        let report = MetricsReport {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: cfg.config_hash(),
            seed: cfg.run.seed,
            mode: cfg.run.mode.to_string(),
            sut_scope: None,
            duration_s: cfg.run.duration_s,
            warmup_s: nanos_to_secs(self.warmup),
            n_sensors_per_site: w.n_sensors,
            sites: n_sites as u64,
            latency,
            staleness,
            failures,
            query_mix: self.mix.clone(),
            bandwidth,
            nodes,
            edge_stability,
            cloud_utilization: self.cluster.mean_utilization(0),
            exceed,
            counters,
            model: derived_rates(w, n_sites),
            propagation_offset_ns: self.sites.iter().map(|s| (s.name.clone(), s.offset)).collect(),
            events,
            slo_min_scale: None,
            calibrated_request_rate_hz: None,
            verify,
            result_digest: self.materialize.then(|| hex::encode(self.digest.clone().finalize())),
        };
        (report, self.samples)
    }

    fn check_invariants(&mut self, latency: &BTreeMap<String, LatencySummary>, staleness: &StalenessReport) {
        let fl = &self.flow;
        let mut fails = Vec::new();
        if fl.gateway_in != fl.gateway_forwarded + fl.gateway_drops + fl.routing_errors {
            fails.push("gateway flow not conserved".to_string());
        }
        if fl.onprem_in != fl.annotated + fl.inference_drops {
            fails.push("inference flow not conserved".to_string());
        }
        if fl.cloud_in != fl.cloud_admitted + fl.cloud_drops {
            fails.push("cloud admission flow not conserved".to_string());
        }
        if fl.committed > fl.cloud_admitted || fl.evicted > fl.committed {
            fails.push("more commits or evictions than admitted records".to_string());
        }
        let links = self
            .sites
            .iter()
            .flat_map(|s| s.sensor_links.iter().chain(std::iter::once(&s.uplink)))
            .chain(std::iter::once(&self.cloud_link));
        for l in links {
            if !l.stats().conserved() {
                fails.push(format!("packet conservation violated on a {} link", l.spec().link_type.as_str()));
                break;
            }
        }
        for (name, s) in latency {
            if !(s.p50_ns <= s.p90_ns && s.p90_ns <= s.p99_ns && s.p99_ns <= s.max_ns) {
                fails.push(format!("latency percentiles of {name} out of order"));
            }
        }
        if staleness.ratio.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
            fails.push("staleness ratio outside [0, 1]".to_string());
        }
        self.verify_failures.extend(fails);
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
