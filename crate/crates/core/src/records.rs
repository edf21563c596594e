//! Data items flowing from the sensors to the cloud store, and the queries
//! offline clients send against it.

use serde::{Deserialize, Serialize};

use crate::netsim::Nanos;

/// Channels carried per reading (values beyond `resolution_channels` stay 0).
pub const CHANNELS: usize = crate::model::params_max_channels();

/// Fixed per-message header for aggregate records and buffer dumps, bits.
pub const RECORD_HEADER_BITS: u64 = 128;
/// Extra bits an annotation adds to an aggregate record.
pub const ANNOTATION_BITS: u64 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor_id: u32,
    pub site_id: u16,
    pub seq: u64,
    pub gen_time: Nanos,
    pub channels: [f64; CHANNELS],
    pub exceeds: bool,
}

/// Identity of an aggregate record across the whole pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub site_id: u16,
    pub sensor_id: u32,
    pub window_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub site_id: u16,
    pub sensor_id: u32,
    pub window_seq: u64,
    /// Generation time of the first reading in the window.
    pub gen_time: Nanos,
    /// Generation time of the last reading, i.e. when the aggregate exists.
    pub created_at: Nanos,
    pub channel_means: [f64; CHANNELS],
    pub size_bits: u64,
}

impl AggregateRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            site_id: self.site_id,
            sensor_id: self.sensor_id,
            window_seq: self.window_seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    #[serde(flatten)]
    pub record: AggregateRecord,
    pub event_probability: f64,
    pub inference_time: Nanos,
}

impl AnnotatedRecord {
    pub fn key(&self) -> RecordKey {
        self.record.key()
    }

    pub fn gen_time(&self) -> Nanos {
        self.record.gen_time
    }

    pub fn size_bits(&self) -> u64 {
        self.record.size_bits + ANNOTATION_BITS
    }
}

/// One sensor's buffer contents. `readings` is empty when only the summary
/// travels (the simulator accounts bits without copying samples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferDump {
    pub sensor_id: u32,
    pub site_id: u16,
    pub first_seq: u64,
    pub count: u32,
    pub payload_bits: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub readings: Vec<SensorReading>,
}

impl BufferDump {
    pub fn size_bits(&self) -> u64 {
        self.payload_bits + RECORD_HEADER_BITS
    }
}

/// Buffers collected from every sensor at a site after a quorum of exceedances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub site_id: u16,
    pub trigger_time: Nanos,
    pub exceed_count: u32,
    pub dumps: Vec<BufferDump>,
}

impl EventReport {
    pub fn payload_bits(&self) -> u64 {
        self.dumps.iter().map(|d| d.payload_bits).sum()
    }

    pub fn size_bits(&self) -> u64 {
        self.dumps.iter().map(BufferDump::size_bits).sum::<u64>() + RECORD_HEADER_BITS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryKind {
    #[serde(rename = "recent_1h")]
    Recent1h,
    #[serde(rename = "random_1h")]
    Random1h,
    #[serde(rename = "scan_filter")]
    ScanFilter,
}

impl QueryKind {
    pub const ALL: [QueryKind; 3] = [QueryKind::Recent1h, QueryKind::Random1h, QueryKind::ScanFilter];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryKind::Recent1h => "recent_1h",
            QueryKind::Random1h => "random_1h",
            QueryKind::ScanFilter => "scan_filter",
        }
    }
}

/// Half-open `[start, end)` range of generation times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: Nanos,
    pub end: Nanos,
}

impl Interval {
    pub fn contains(&self, t: Nanos) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: u64,
    pub client_id: u32,
    pub kind: QueryKind,
    pub issue_time: Nanos,
    /// Requested range; absent for scans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
    /// Scan predicate: keep records with `event_probability > threshold`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Oldest generation time a scan examines; absent means full history.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookback_start: Option<Nanos>,
}

impl Query {
    /// Whether a record with this generation time and probability satisfies
    /// the query.
    pub fn matches(&self, gen_time: Nanos, probability: f64) -> bool {
        match self.kind {
            QueryKind::Recent1h | QueryKind::Random1h => {
                self.interval.is_some_and(|iv| iv.contains(gen_time))
            }
            QueryKind::ScanFilter => {
                gen_time < self.issue_time
                    && self.lookback_start.is_none_or(|s| gen_time >= s)
                    && probability > self.threshold.unwrap_or(1.0)
            }
        }
    }
}

/// Work one store instance performed for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceWork {
    pub instance: u32,
    /// Records read (interval queries) or scanned (filters).
    pub touched: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: u64,
    pub count: u64,
    /// Materialized records; empty when the caller asked only for counts.
    #[serde(default)]
    pub records: Vec<AnnotatedRecord>,
    pub newest_gen_time: Option<Nanos>,
    pub completion_time: Nanos,
    pub served_by: Vec<InstanceWork>,
}

impl QueryResult {
    pub fn sorted_keys(&self) -> Vec<RecordKey> {
        let mut keys: Vec<RecordKey> = self.records.iter().map(AnnotatedRecord::key).collect();
        keys.sort_unstable();
        keys
    }
}
