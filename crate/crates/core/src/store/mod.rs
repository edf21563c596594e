//! Reference cloud time-series store: annotated records partitioned by site
//! over a set of instances, each kept sorted by generation time.

mod cluster;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::netsim::Nanos;
use crate::records::{AnnotatedRecord, EventReport, InstanceWork, Query, QueryKind, QueryResult, RecordKey};

pub use cluster::{CloudCluster, QueryCosts};

/// Instance owning a site's records.
pub fn partition(site_id: u16, n_instances: usize) -> usize {
    usize::from(site_id) % n_instances.max(1)
}

/// Outcome of one insert.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InsertAck {
    pub instance: u32,
    /// Records evicted to stay within the disk bound.
    #[serde(default)]
    pub evicted: Vec<RecordKey>,
}

#[derive(Debug, Clone, Default)]
struct Instance {
    records: VecDeque<AnnotatedRecord>,
    /// Records above each tracked scan threshold, also sorted by gen_time.
    hot: BTreeMap<u64, VecDeque<AnnotatedRecord>>,
    bytes: u64,
    capacity_bytes: u64,
    evictions: u64,
    archived_reports: u64,
    archived_bits: u64,
}

fn sorted_insert(log: &mut VecDeque<AnnotatedRecord>, rec: AnnotatedRecord) {
    let t = rec.gen_time();
    if log.back().is_none_or(|b| b.gen_time() <= t) {
        log.push_back(rec);
    } else {
        let pos = log.partition_point(|r| r.gen_time() <= t);
        log.insert(pos, rec);
    }
}

fn range(log: &VecDeque<AnnotatedRecord>, start: Nanos, end: Nanos) -> (usize, usize) {
    let lo = log.partition_point(|r| r.gen_time() < start);
    let hi = log.partition_point(|r| r.gen_time() < end).max(lo);
    (lo, hi)
}

impl Instance {
    fn insert(&mut self, rec: AnnotatedRecord, footprint: u64) -> Vec<RecordKey> {
        let p = rec.event_probability;
        for (theta, hot) in self.hot.iter_mut() {
            if p > f64::from_bits(*theta) {
                sorted_insert(hot, rec.clone());
            }
        }
        sorted_insert(&mut self.records, rec);
        self.bytes += footprint;
        let mut evicted = Vec::new();
        while self.bytes > self.capacity_bytes {
            let Some(old) = self.records.pop_front() else { break };
            self.bytes -= footprint;
            self.evictions += 1;
            let key = old.key();
            for hot in self.hot.values_mut() {
                let (lo, hi) = range(hot, old.gen_time(), old.gen_time() + 1);
                if let Some(i) = (lo..hi).find(|&i| hot[i].key() == key) {
                    hot.remove(i);
                }
            }
            evicted.push(key);
        }
        evicted
    }
}

/// Per-instance contents summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub records: u64,
    pub bytes: u64,
    pub capacity_bytes: u64,
    pub evictions: u64,
    pub archived_reports: u64,
    pub archived_bits: u64,
}

/// The store's data plane. Compute costs are charged separately by
/// [`CloudCluster`], so the same store can back a simulated or a served SUT.
#[derive(Debug, Clone)]
pub struct TimeSeriesStore {
    instances: Vec<Instance>,
    footprint: u64,
    watermark: Option<Nanos>,
}

impl TimeSeriesStore {
    /// One instance per capacity entry; `footprint_bytes` is charged against
    /// disk for every stored record.
    pub fn new(capacities_bytes: &[u64], footprint_bytes: u64) -> Self {
        assert!(!capacities_bytes.is_empty(), "store needs at least one instance");
        TimeSeriesStore {
            instances: capacities_bytes
                .iter()
                .map(|&c| Instance {
                    capacity_bytes: c,
                    ..Default::default()
                })
                .collect(),
            footprint: footprint_bytes.max(1),
            watermark: None,
        }
    }

    /// Keeps a presorted list of records whose probability exceeds `theta`
    /// so that scans with that threshold skip the full pass. Must be called
    /// before inserting.
    pub fn track_threshold(&mut self, theta: f64) {
        for inst in &mut self.instances {
            inst.hot.entry(theta.to_bits()).or_default();
        }
    }

    pub fn n_instances(&self) -> usize {
        self.instances.len()
    }

    /// Newest generation time ingested so far.
    pub fn watermark(&self) -> Option<Nanos> {
        self.watermark
    }

    pub fn len(&self) -> usize {
        self.instances.iter().map(|i| i.records.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evictions(&self) -> u64 {
        self.instances.iter().map(|i| i.evictions).sum()
    }

    pub fn stats(&self) -> Vec<InstanceStats> {
        self.instances
            .iter()
            .map(|i| InstanceStats {
                records: i.records.len() as u64,
                bytes: i.bytes,
                capacity_bytes: i.capacity_bytes,
                evictions: i.evictions,
                archived_reports: i.archived_reports,
                archived_bits: i.archived_bits,
            })
            .collect()
    }

    /// Records of one instance, oldest first.
    pub fn instance_records(&self, instance: usize) -> impl Iterator<Item = &AnnotatedRecord> {
        self.instances[instance].records.iter()
    }

    pub fn insert(&mut self, record: AnnotatedRecord) -> InsertAck {
        let idx = partition(record.record.site_id, self.instances.len());
        let t = record.gen_time();
        self.watermark = Some(self.watermark.map_or(t, |w| w.max(t)));
        let evicted = self.instances[idx].insert(record, self.footprint);
        InsertAck {
            instance: idx as u32,
            evicted,
        }
    }

    /// Archives a collected event report. Reports are kept as opaque blobs
    /// and are not visible to queries.
    pub fn archive(&mut self, report: &EventReport) -> u32 {
        let idx = partition(report.site_id, self.instances.len());
        let inst = &mut self.instances[idx];
        inst.archived_reports += 1;
        inst.archived_bits += report.size_bits();
        idx as u32
    }

    /// Evaluates a query against the current contents. With `materialize`
    /// the matching records are returned, sorted by (gen_time, key);
    /// otherwise only counts. `completion_time` is left at the issue time for
    /// the caller to fill in from its cost model.
    pub fn query(&self, q: &Query, materialize: bool) -> QueryResult {
        let mut count = 0u64;
        let mut newest: Option<Nanos> = None;
        let mut records = Vec::new();
        let mut served_by = Vec::with_capacity(self.instances.len());
        for (i, inst) in self.instances.iter().enumerate() {
            let (touched, lo, hi, source) = match q.kind {
                QueryKind::Recent1h | QueryKind::Random1h => {
                    let iv = q.interval.unwrap_or(crate::records::Interval { start: 0, end: 0 });
                    let (lo, hi) = range(&inst.records, iv.start, iv.end);
                    (hi - lo, lo, hi, Some(&inst.records))
                }
                QueryKind::ScanFilter => {
                    let start = q.lookback_start.unwrap_or(0);
                    let (lo, hi) = range(&inst.records, start, q.issue_time);
                    let theta = q.threshold.unwrap_or(1.0);
                    match inst.hot.get(&theta.to_bits()) {
                        Some(hot) => {
                            let (hlo, hhi) = range(hot, start, q.issue_time);
                            (hi - lo, hlo, hhi, Some(hot))
                        }
                        None => {
                            let mut matched = 0u64;
                            for r in inst.records.range(lo..hi) {
                                if r.event_probability > theta {
                                    matched += 1;
                                    newest = Some(newest.map_or(r.gen_time(), |n| n.max(r.gen_time())));
                                    if materialize {
                                        records.push(r.clone());
                                    }
                                }
                            }
                            count += matched;
                            (hi - lo, 0, 0, None)
                        }
                    }
                }
            };
            if let Some(log) = source {
                count += (hi - lo) as u64;
                if hi > lo {
                    let t = log[hi - 1].gen_time();
                    newest = Some(newest.map_or(t, |n| n.max(t)));
                    if materialize {
                        records.extend(log.range(lo..hi).cloned());
                    }
                }
            }
            served_by.push(InstanceWork {
                instance: i as u32,
                touched: touched as u64,
            });
        }
        if materialize {
            records.sort_by_key(|r| (r.gen_time(), r.key()));
        }
        QueryResult {
            query_id: q.query_id,
            count,
            records,
            newest_gen_time: newest,
            completion_time: q.issue_time,
            served_by,
        }
    }
}
