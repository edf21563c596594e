use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::adapter::{Capabilities, ExternalBinding, IngestItem, SutBinding};
use crate::config::RunConfig;
use crate::error::Result;
use crate::metrics::{
    BandwidthReport, EdgeStability, ExceedReport, FailureReport, LatencySample, LatencySummary, LogEntry,
    MetricsReport, QueryLogEntry, SampleKind, StalenessIndex, StalenessReport, VerifyReport,
};
use crate::model::{derived_rates, edge_ingress_rate, mean_sensor_gateway_bandwidth, quorum_probability};
use crate::netsim::{nanos_to_secs, secs_to_nanos, EventStats, LinkStats, Nanos, NodeQueue};
use crate::records::{EventReport, Query, QueryKind, RecordKey};
use crate::rng::{stream, Domain};
use crate::services::{InferenceOutcome, InferenceService, QuorumCounter};
use crate::workload::{tick_time, ClientState, QueryGenerator, SensorState};
use crate::TOOL_VERSION;

#[derive(Clone, Copy)]
struct Clock(Instant);

impl Clock {
    fn now(self) -> Nanos {
        self.0.elapsed().as_nanos() as Nanos
    }

    fn sleep_until(self, t: Nanos) {
        let now = self.now();
        if t > now {
            thread::sleep(Duration::from_nanos(t - now));
        }
    }
}

enum Outcome {
    Record {
        key: RecordKey,
        gen_time: Nanos,
        probability: f64,
        created_at: Nanos,
        site_id: u16,
        ack: Option<(Nanos, Vec<RecordKey>)>,
    },
    Report {
        trigger_time: Nanos,
        site_id: u16,
        ack: Option<Nanos>,
    },
    Query {
        query_id: u64,
        kind: QueryKind,
        issue_time: Nanos,
        start: Option<Nanos>,
        sent: Nanos,
        done: Option<Nanos>,
    },
}

#[derive(Default)]
struct GenCounts {
    exceed: ExceedReport,
    aggregates: u64,
    reports: u64,
    unsupported: u64,
    sensor_bits: u64,
    edge_bits: u64,
}

fn generator(cfg: &RunConfig, caps: Capabilities, clock: Clock, tx: Sender<IngestItem>) -> GenCounts {
    let w = &cfg.workload;
    let seed = cfg.run.seed;
    let (warmup, end) = cfg.measure_window();
    let r_bits = u64::from(w.resolution_bits);
    let mut sites: Vec<(Vec<SensorState>, QuorumCounter)> = cfg
        .topology
        .sites
        .iter()
        .enumerate()
        .map(|(si, s)| {
            let base = (si as u64) << 32;
            let sensors = (0..w.n_sensors)
                .map(|i| SensorState::new(s.site_id, i, w, stream(seed, Domain::Sensor, base | u64::from(i))))
                .collect();
            (sensors, QuorumCounter::new(s.site_id, w.n_sensors, w.quorum_ratio))
        })
        .collect();
    let node = NodeQueue::new("onprem", cfg.topology.onprem.effective_cores(), usize::MAX);
    let mut inference = InferenceService::new(node, secs_to_nanos(w.lstm_window_s), 0.0, cfg.run.warning_threshold);
    let mut c = GenCounts::default();
    let mut k = 0u64;
    loop {
        let t = tick_time(k, w.sampling_rate_hz);
        if t >= end {
            break;
        }
        clock.sleep_until(t);
        let measured = t >= warmup;
        for (sensors, quorum) in &mut sites {
            let mut trigger = false;
            for (i, sensor) in sensors.iter_mut().enumerate() {
                let reading = sensor.next_reading(t);
                if measured {
                    c.exceed.readings += 1;
                    c.exceed.exceeding += u64::from(reading.exceeds);
                }
                if reading.exceeds && quorum.on_exceed(i as u32, k).is_some() {
                    trigger = true;
                }
                if let Some(rec) = sensor.maybe_aggregate() {
                    c.aggregates += 1;
                    if measured {
                        c.sensor_bits += r_bits;
                        c.edge_bits += r_bits;
                    }
                    if let InferenceOutcome::Annotated { record, .. } = inference.on_record(t, rec) {
                        if tx.send(IngestItem::Record(record)).is_err() {
                            return c;
                        }
                    }
                }
            }
            if measured {
                c.exceed.site_ticks += 1;
            }
            if trigger {
                let report = EventReport {
                    site_id: sensors[0].site_id,
                    trigger_time: t,
                    exceed_count: quorum.count(),
                    dumps: sensors.iter().map(SensorState::dump_summary).collect(),
                };
                c.reports += 1;
                if measured {
                    c.exceed.triggers += 1;
                    c.sensor_bits += report.payload_bits();
                    c.edge_bits += report.payload_bits();
                }
                if !caps.supports_event_reports {
                    c.unsupported += 1;
                } else if tx.send(IngestItem::EventReport(report)).is_err() {
                    return c;
                }
            }
        }
        k += 1;
    }
    c
}

fn ingest_worker(mut binding: ExternalBinding, rx: Receiver<IngestItem>, out: Sender<Outcome>, clock: Clock) {
    for item in rx {
        let result = binding.ingest(&item);
        let at = clock.now();
        if let Err(e) = &result {
            log::debug!("insert failed: {e}");
        }
        let outcome = match item {
            IngestItem::Record(r) => Outcome::Record {
                key: r.key(),
                gen_time: r.gen_time(),
                probability: r.event_probability,
                created_at: r.record.created_at,
                site_id: r.record.site_id,
                ack: result.ok().map(|a| (at, a.evicted)),
            },
            IngestItem::EventReport(e) => Outcome::Report {
                trigger_time: e.trigger_time,
                site_id: e.site_id,
                ack: result.ok().map(|_| at),
            },
        };
        if out.send(outcome).is_err() {
            return;
        }
    }
}

fn query_worker(mut binding: ExternalBinding, rx: Arc<Mutex<Receiver<Query>>>, out: Sender<Outcome>, clock: Clock) {
    loop {
        let q = match rx.lock().expect("query channel lock").recv() {
            Ok(q) => q,
            Err(_) => return,
        };
        let sent = clock.now();
        let done = match binding.query(&q, false) {
            Ok(_) => Some(clock.now()),
            Err(e) => {
                log::debug!("query {} failed: {e}", q.query_id);
                None
            }
        };
        let outcome = Outcome::Query {
            query_id: q.query_id,
            kind: q.kind,
            issue_time: q.issue_time,
            start: q.interval.map(|iv| iv.start),
            sent,
            done,
        };
        if out.send(outcome).is_err() {
            return;
        }
    }
}

/// Drives a real SUT over the wire in wall-clock time. The harness plays the
/// sensors and edge services itself; the SUT replaces the cloud store.
pub(crate) fn run(cfg: &RunConfig) -> Result<(MetricsReport, Vec<LatencySample>)> {
    cfg.validate()?;
    let sut = &cfg.run.sut;
    let caps = Capabilities {
        supports_event_reports: sut.supports_event_reports,
        supports_scan: sut.supports_scan,
    };
    let timeout = Duration::from_secs_f64(sut.timeout_s);
    let ingest = ExternalBinding::connect(&sut.endpoint, timeout, caps)?;
    let pool = (0..sut.pool_size)
        .map(|_| ExternalBinding::connect(&sut.endpoint, timeout, caps))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (warmup, end) = cfg.measure_window();
    let w = &cfg.workload;

    let clock = Clock(Instant::now());
    let (out_tx, out_rx) = mpsc::channel();
    let (ingest_tx, ingest_rx) = mpsc::channel();
    let (query_tx, query_rx) = mpsc::channel::<Query>();
    let query_rx = Arc::new(Mutex::new(query_rx));

    let gen_cfg = cfg.clone();
    let gen = thread::spawn(move || generator(&gen_cfg, caps, clock, ingest_tx));
    let ingest_out = out_tx.clone();
    let ingester = thread::spawn(move || ingest_worker(ingest, ingest_rx, ingest_out, clock));
    let workers: Vec<_> = pool
        .into_iter()
        .map(|b| {
            let rx = Arc::clone(&query_rx);
            let out = out_tx.clone();
            thread::spawn(move || query_worker(b, rx, out, clock))
        })
        .collect();
    drop(out_tx);

    let qgen = QueryGenerator::new(w, cfg.run.scan_theta, cfg.run.scan_lookback_s)?;
    let mut clients: Vec<ClientState> = (0..w.n_clients)
        .map(|c| ClientState::new(c, stream(cfg.run.seed, Domain::Client, u64::from(c))))
        .collect();
    let mut timers: BinaryHeap<Reverse<(Nanos, usize)>> = (0..w.n_clients)
        .map(|c| Reverse((qgen.first_tick(c, w.n_clients), c as usize)))
        .collect();
    let mut mix: BTreeMap<String, u64> = BTreeMap::new();
    let mut issued = 0u64;
    let mut unsupported = 0u64;
    while let Some(Reverse((t, c))) = timers.pop() {
        if t >= end {
            break;
        }
        clock.sleep_until(t);
        let q = qgen.next_query(&mut clients[c], t);
        timers.push(Reverse((t + qgen.period, c)));
        issued += 1;
        let measured = t >= warmup;
        if measured {
            *mix.entry(q.kind.as_str().to_string()).or_default() += 1;
        }
        if q.kind == QueryKind::ScanFilter && !caps.supports_scan {
            unsupported += u64::from(measured);
            continue;
        }
        if query_tx.send(q).is_err() {
            break;
        }
    }
    drop(query_tx);
    let counts = gen.join().expect("generator thread panicked");
    ingester.join().expect("ingest thread panicked");
    for h in workers {
        h.join().expect("query worker panicked");
    }
    let outcomes: Vec<Outcome> = out_rx.into_iter().collect();
    Ok(assemble(cfg, counts, outcomes, mix, issued, unsupported))
}

fn assemble(
    cfg: &RunConfig,
    counts: GenCounts,
    outcomes: Vec<Outcome>,
    query_mix: BTreeMap<String, u64>,
    issued: u64,
    unsupported: u64,
) -> (MetricsReport, Vec<LatencySample>) {
    let w = &cfg.workload;
    let (warmup, end) = cfg.measure_window();
    let measured = |t: Nanos| t >= warmup && t < end;
    let names: HashMap<u16, String> = cfg.topology.sites.iter().map(|s| (s.site_id, s.name.clone())).collect();
    let mut failures = FailureReport {
        unsupported: unsupported + counts.unsupported,
        ..FailureReport::default()
    };
    let mut samples = Vec::new();
    let mut log: Vec<LogEntry> = Vec::new();
    let mut index: HashMap<RecordKey, usize> = HashMap::new();
    let mut queries = Vec::new();
    let mut committed = 0u64;
    let mut evicted = 0u64;
    let mut archived = 0u64;
    for o in outcomes {
        match o {
            Outcome::Record {
                key,
                gen_time,
                probability,
                created_at,
                site_id,
                ack,
            } => {
                let m = measured(created_at);
                failures.ingest_attempts += u64::from(m);
                let commit = ack.as_ref().map(|a| a.0);
                index.insert(key, log.len());
                log.push(LogEntry {
                    key,
                    gen_time,
                    event_probability: probability,
                    commit,
                    evict: None,
                });
                match ack {
                    Some((at, ev)) => {
                        committed += 1;
                        for k in ev {
                            evicted += 1;
                            if let Some(&i) = index.get(&k) {
                                log[i].evict.get_or_insert(at);
                            }
                        }
                        if m {
                            let raw = at.saturating_sub(created_at);
                            samples.push(LatencySample {
                                kind: SampleKind::E2eInsert,
                                issue_time: created_at,
                                raw_ns: raw,
                                corrected_ns: Some(raw),
                                subject: names[&site_id].clone(),
                            });
                        }
                    }
                    None => failures.ingest_failures += u64::from(m),
                }
            }
            Outcome::Report {
                trigger_time,
                site_id,
                ack,
            } => {
                if let Some(at) = ack {
                    archived += 1;
                    if measured(trigger_time) {
                        let raw = at.saturating_sub(trigger_time);
                        samples.push(LatencySample {
                            kind: SampleKind::EventReport,
                            issue_time: trigger_time,
                            raw_ns: raw,
                            corrected_ns: Some(raw),
                            subject: names[&site_id].clone(),
                        });
                    }
                }
            }
            Outcome::Query {
                query_id,
                kind,
                issue_time,
                start,
                sent,
                done,
            } => {
                let m = measured(issue_time);
                failures.query_attempts += u64::from(m);
                match done {
                    Some(d) if m => samples.push(LatencySample {
                        kind: SampleKind::Query,
                        issue_time,
                        raw_ns: d.saturating_sub(issue_time),
                        corrected_ns: None,
                        subject: kind.as_str().to_string(),
                    }),
                    None if m => failures.query_failures += 1,
                    _ => {}
                }
                queries.push(QueryLogEntry {
                    query_id,
                    kind,
                    issue_time,
                    start,
                    eval: sent,
                    succeeded: done.is_some(),
                });
            }
        }
    }
    failures.finish();

    let mut latency = BTreeMap::new();
    let mut groups: BTreeMap<String, Vec<Nanos>> = BTreeMap::new();
    for s in &samples {
        match s.kind {
            SampleKind::E2eInsert => {
                groups.entry("e2e_insert_raw".into()).or_default().push(s.raw_ns);
                groups.entry("e2e_insert_corrected".into()).or_default().extend(s.corrected_ns);
            }
            SampleKind::Query => {
                groups.entry("query".into()).or_default().push(s.raw_ns);
                groups.entry(format!("query_{}", s.subject)).or_default().push(s.raw_ns);
            }
            SampleKind::EventReport => groups.entry("event_report".into()).or_default().push(s.raw_ns),
        }
    }
    for (name, mut v) in groups {
        if let Some(summary) = LatencySummary::from_values(&mut v) {
            latency.insert(name, summary);
        }
    }

    let t_stale = secs_to_nanos(w.stale_threshold_s);
    let (checked, violations) = StalenessIndex::new(&log).count(&queries, t_stale, warmup);
    let staleness = StalenessReport {
        threshold_s: w.stale_threshold_s,
        recent_queries: checked,
        violations,
        ratio: (checked > 0).then(|| violations as f64 / checked as f64),
    };

    let window_s = nanos_to_secs(end - warmup);
    let n_sites = cfg.topology.sites.len();
    let offered = |links: u64, bits: u64, model: f64, capacity: f64| BandwidthReport {
        links,
        mean_payload_bps: bits as f64 / window_s / links as f64,
        mean_wire_bps: 0.0,
        model_bps: Some(model),
        capacity_bps: capacity,
        totals: LinkStats {
            payload_bits: bits,
            window_payload_bits: bits,
            ..LinkStats::default()
        },
    };
    let mean_cap = |f: fn(&crate::model::Site) -> f64| {
        cfg.topology.sites.iter().map(f).sum::<f64>() / n_sites as f64
    };
    let mut bandwidth = BTreeMap::new();
    bandwidth.insert(
        "sensor_gateway".to_string(),
        offered(
            u64::from(w.n_sensors) * n_sites as u64,
            counts.sensor_bits,
            mean_sensor_gateway_bandwidth(w),
            mean_cap(|s| s.sensor_link.bandwidth_bps),
        ),
    );
    bandwidth.insert(
        "gateway_onprem".to_string(),
        offered(n_sites as u64, counts.edge_bits, edge_ingress_rate(w), mean_cap(|s| s.uplink.bandwidth_bps)),
    );
    bandwidth.insert(
        "onprem_cloud".to_string(),
        offered(
            1,
            counts.edge_bits,
            edge_ingress_rate(w) * n_sites as f64,
            cfg.topology.onprem_cloud_link.bandwidth_bps,
        ),
    );

    let mut exceed = counts.exceed;
    exceed.fraction = if exceed.readings == 0 { 0.0 } else { exceed.exceeding as f64 / exceed.readings as f64 };
    exceed.trigger_frequency = if exceed.site_ticks == 0 {
        0.0
    } else {
        exceed.triggers as f64 / exceed.site_ticks as f64
    };
    exceed.model_trigger_probability = quorum_probability(w.n_sensors, w.quorum_ratio, w.exceed_prob).unwrap_or(0.0);

    let counters: BTreeMap<String, u64> = [
        ("aggregates", counts.aggregates),
        ("event_reports_triggered", counts.reports),
        ("event_reports_archived", archived),
        ("committed", committed),
        ("evicted", evicted),
        ("queries_issued", issued),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();

    let mut invariant_failures = Vec::new();
    for (name, s) in &latency {
        if !(s.p50_ns <= s.p90_ns && s.p90_ns <= s.p99_ns && s.p99_ns <= s.max_ns) {
            invariant_failures.push(format!("latency percentiles of {name} out of order"));
        }
    }
    let verify = cfg.run.verify.then(|| VerifyReport {
        checked_queries: 0,
        mismatched_queries: 0,
        passed: invariant_failures.is_empty(),
        failures: invariant_failures,
    });

    let report = MetricsReport {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: cfg.config_hash(),
        seed: cfg.run.seed,
        mode: cfg.run.mode.to_string(),
        sut_scope: Some(cfg.run.sut.scope.to_string()),
        duration_s: cfg.run.duration_s,
        warmup_s: nanos_to_secs(warmup),
        n_sensors_per_site: w.n_sensors,
        sites: n_sites as u64,
        latency,
        staleness,
        failures,
        query_mix,
        bandwidth,
        nodes: BTreeMap::new(),
        edge_stability: EdgeStability {
            first_half_queue: 0.0,
            second_half_queue: 0.0,
            drops: 0,
            stable: true,
        },
        cloud_utilization: 0.0,
        exceed,
        counters,
        model: derived_rates(w, n_sites),
        propagation_offset_ns: names.values().map(|n| (n.clone(), 0)).collect(),
        events: EventStats::default(),
        slo_min_scale: None,
        calibrated_request_rate_hz: None,
        verify,
        result_digest: None,
    };
    (report, samples)
}
