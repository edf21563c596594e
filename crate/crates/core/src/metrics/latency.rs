use serde::{Deserialize, Serialize};

use crate::netsim::Nanos;

/// Nearest-rank percentile of an ascending slice; `None` when empty.
pub fn percentile(sorted: &[Nanos], q: f64) -> Option<Nanos> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    E2eInsert,
    Query,
    EventReport,
}

impl SampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::E2eInsert => "e2e_insert",
            SampleKind::Query => "query",
            SampleKind::EventReport => "event_report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub kind: SampleKind,
    pub issue_time: Nanos,
    pub raw_ns: Nanos,
    /// Raw latency minus the path's propagation offset (end-to-end only).
    pub corrected_ns: Option<Nanos>,
    pub subject: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_ns: f64,
    pub p50_ns: Nanos,
    pub p90_ns: Nanos,
    pub p99_ns: Nanos,
    pub max_ns: Nanos,
}

impl LatencySummary {
    /// Sorts `values` in place; `None` when empty.
    pub fn from_values(values: &mut [Nanos]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_unstable();
        let sum: u128 = values.iter().map(|&v| u128::from(v)).sum();
        Some(LatencySummary {
            count: values.len() as u64,
            mean_ns: sum as f64 / values.len() as f64,
            p50_ns: percentile(values, 50.0)?,
            p90_ns: percentile(values, 90.0)?,
            p99_ns: percentile(values, 99.0)?,
            max_ns: *values.last()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank_definition() {
        assert_eq!(percentile(&[1, 2, 3, 4], 50.0), Some(2));
        assert_eq!(percentile(&[1, 2, 3, 4], 75.0), Some(3));
        assert_eq!(percentile(&[1, 2, 3, 4], 100.0), Some(4));
        assert_eq!(percentile(&[1, 2, 3, 4], 0.0), Some(1));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn single_sample_fills_every_percentile() {
        let s = LatencySummary::from_values(&mut [7]).unwrap();
        assert_eq!((s.p50_ns, s.p90_ns, s.p99_ns, s.max_ns), (7, 7, 7, 7));
    }

    #[test]
    fn matches_full_sort_oracle_on_random_samples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut v: Vec<Nanos> = (0..100_000).map(|_| rng.random_range(0..1_000_000_000)).collect();
        let mut oracle = v.clone();
        oracle.sort();
        let s = LatencySummary::from_values(&mut v).unwrap();
        // rank k = ceil(q n / 100) computed in integers.
        let n = oracle.len() as u64;
        for (q, got) in [(50, s.p50_ns), (90, s.p90_ns), (99, s.p99_ns)] {
            let k = (q * n).div_ceil(100);
            assert_eq!(got, oracle[(k - 1) as usize]);
        }
        assert_eq!(s.max_ns, *oracle.last().unwrap());
    }

    proptest! {
        #[test]
        fn percentiles_are_monotone(mut v in proptest::collection::vec(0u64..1_000, 1..500)) {
            let s = LatencySummary::from_values(&mut v).unwrap();
            prop_assert!(s.p50_ns <= s.p90_ns && s.p90_ns <= s.p99_ns && s.p99_ns <= s.max_ns);
        }
    }
}
