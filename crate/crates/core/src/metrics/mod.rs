//! Metric families: offset-corrected end-to-end latency, cloud request
//! latency, staleness violations, and the two search procedures (minimal
//! edge resources meeting the stability SLO, request-rate calibration).

mod latency;
mod offset;
mod report;
mod search;
mod staleness;

pub use latency::{percentile, LatencySample, LatencySummary, SampleKind};
pub use offset::propagation_offset;
pub use report::{
    write_report, write_samples, BandwidthReport, EdgeStability, ExceedReport, FailureReport, MetricsReport,
    NodeReport, StalenessReport, VerifyReport,
};
pub use search::{calibrate_request_rate, slo_search, Calibration, ProbeLog, ProbeRecord, SearchOutcome};
pub use staleness::{due_range, staleness_materialized, LogEntry, QueryLogEntry, StalenessIndex};
