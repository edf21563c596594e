use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::netsim::Nanos;
use crate::records::{QueryKind, RecordKey};

/// Ground-truth history of one annotated record. `commit` and `evict` are
/// positions in a single total order shared with [`QueryLogEntry::eval`]:
/// a store operation counter in simulation, wall-clock nanoseconds at the
/// boundary of an external system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub key: RecordKey,
    pub gen_time: Nanos,
    pub event_probability: f64,
    pub commit: Option<u64>,
    pub evict: Option<u64>,
}

impl LogEntry {
    /// Whether the record was readable at order position `at`.
    pub fn visible_at(&self, at: u64) -> bool {
        self.commit.is_some_and(|c| c <= at) && self.evict.is_none_or(|e| e > at)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLogEntry {
    pub query_id: u64,
    pub kind: QueryKind,
    pub issue_time: Nanos,
    /// Interval start for interval reads.
    pub start: Option<Nanos>,
    /// Order position at which the store evaluated the query.
    pub eval: u64,
    pub succeeded: bool,
}

/// Generation-time range `[start, issue - t_stale]` of records a recent read
/// must contain. `None` when empty.
pub fn due_range(start: Nanos, issue_time: Nanos, t_stale: Nanos) -> Option<(Nanos, Nanos)> {
    let last = issue_time.checked_sub(t_stale)?;
    (start <= last).then_some((start, last))
}

/// Checks a materialized result: true if a due record is missing.
pub fn staleness_materialized(
    log: &[LogEntry],
    start: Nanos,
    issue_time: Nanos,
    t_stale: Nanos,
    result: &[RecordKey],
) -> bool {
    let Some((lo, hi)) = due_range(start, issue_time, t_stale) else {
        return false;
    };
    let have: HashSet<&RecordKey> = result.iter().collect();
    log.iter()
        .filter(|e| e.gen_time >= lo && e.gen_time <= hi)
        .any(|e| !have.contains(&e.key))
}

struct SegTree {
    n: usize,
    data: Vec<u64>,
    identity: u64,
    op: fn(u64, u64) -> u64,
}

impl SegTree {
    fn new(values: &[u64], identity: u64, op: fn(u64, u64) -> u64) -> Self {
        let n = values.len().max(1);
        let mut data = vec![identity; 2 * n];
        data[n..n + values.len()].copy_from_slice(values);
        for i in (1..n).rev() {
            data[i] = op(data[2 * i], data[2 * i + 1]);
        }
        SegTree { n, data, identity, op }
    }

    /// Fold over `[l, r)`.
    fn query(&self, mut l: usize, mut r: usize) -> u64 {
        let mut acc = self.identity;
        l += self.n;
        r += self.n;
        while l < r {
            if l & 1 == 1 {
                acc = (self.op)(acc, self.data[l]);
                l += 1;
            }
            if r & 1 == 1 {
                r -= 1;
                acc = (self.op)(acc, self.data[r]);
            }
            l >>= 1;
            r >>= 1;
        }
        acc
    }
}

/// Range-max of commit positions and range-min of eviction positions over
/// records sorted by generation time, answering "was every due record
/// visible" in logarithmic time.
pub struct StalenessIndex {
    gen_times: Vec<Nanos>,
    commits: SegTree,
    evicts: SegTree,
}

impl StalenessIndex {
    pub fn new(log: &[LogEntry]) -> Self {
        let mut rows: Vec<(Nanos, u64, u64)> = log
            .iter()
            .map(|e| (e.gen_time, e.commit.unwrap_or(u64::MAX), e.evict.unwrap_or(u64::MAX)))
            .collect();
        rows.sort_unstable();
        let commits: Vec<u64> = rows.iter().map(|r| r.1).collect();
        let evicts: Vec<u64> = rows.iter().map(|r| r.2).collect();
        StalenessIndex {
            gen_times: rows.iter().map(|r| r.0).collect(),
            commits: SegTree::new(&commits, 0, u64::max),
            evicts: SegTree::new(&evicts, u64::MAX, u64::min),
        }
    }

    /// True if some record due for a recent read evaluated at `eval` was not
    /// visible then.
    pub fn violates(&self, start: Nanos, issue_time: Nanos, t_stale: Nanos, eval: u64) -> bool {
        let Some((lo_t, hi_t)) = due_range(start, issue_time, t_stale) else {
            return false;
        };
        let lo = self.gen_times.partition_point(|&t| t < lo_t);
        let hi = self.gen_times.partition_point(|&t| t <= hi_t);
        if lo >= hi {
            return false;
        }
        self.commits.query(lo, hi) > eval || self.evicts.query(lo, hi) <= eval
    }

    /// Violations among successful recent reads issued at or after
    /// `warmup`: (checked, violations).
    pub fn count(&self, queries: &[QueryLogEntry], t_stale: Nanos, warmup: Nanos) -> (u64, u64) {
        let mut checked = 0;
        let mut violations = 0;
        for q in queries {
            if q.kind != QueryKind::Recent1h || !q.succeeded || q.issue_time < warmup {
                continue;
            }
            checked += 1;
            if self.violates(q.start.unwrap_or(0), q.issue_time, t_stale, q.eval) {
                violations += 1;
            }
        }
        (checked, violations)
    }
}
