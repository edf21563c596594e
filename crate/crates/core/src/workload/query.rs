use rand::Rng;

use crate::error::ModelError;
use crate::model::WorkloadParams;
use crate::netsim::{secs_to_nanos, Nanos};
use crate::records::{Interval, Query, QueryKind};
use crate::rng::SimRng;

/// One hour in nanoseconds, the span of interval reads.
pub const HOUR: Nanos = 3_600_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryMix {
    pub recent: f64,
    pub random: f64,
    pub scan: f64,
}

impl QueryMix {
    pub fn from_params(p: &WorkloadParams) -> Self {
        QueryMix {
            recent: p.q_recent,
            random: p.q_random,
            scan: p.q_scan,
        }
    }

    fn pick(&self, u: f64) -> QueryKind {
        if u < self.recent {
            QueryKind::Recent1h
        } else if u < self.recent + self.random || self.scan <= 0.0 {
            QueryKind::Random1h
        } else {
            QueryKind::ScanFilter
        }
    }
}

/// Shared, immutable query parameters.
#[derive(Debug, Clone)]
pub struct QueryGenerator {
    pub mix: QueryMix,
    pub scan_theta: f64,
    /// Lookback of scans; `None` scans the whole retained history.
    pub scan_lookback: Option<Nanos>,
    /// Period of each client's open-loop timer.
    pub period: Nanos,
}

impl QueryGenerator {
    pub fn new(
        params: &WorkloadParams,
        scan_theta: f64,
        scan_lookback_s: Option<f64>,
    ) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&scan_theta) {
            return Err(ModelError::InvalidParameter {
                name: "scan_theta",
                reason: format!("must lie in [0, 1], got {scan_theta}"),
            });
        }
        if !(params.request_rate_hz.is_finite() && params.request_rate_hz > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "request_rate_hz",
                reason: format!("must be > 0, got {}", params.request_rate_hz),
            });
        }
        Ok(QueryGenerator {
            mix: QueryMix::from_params(params),
            scan_theta,
            scan_lookback: scan_lookback_s.map(secs_to_nanos),
            period: secs_to_nanos(1.0 / params.request_rate_hz).max(1),
        })
    }

    /// First timer tick of client `client_id`; clients are spread evenly over
    /// one period so that they do not fire in lockstep.
    pub fn first_tick(&self, client_id: u32, n_clients: u32) -> Nanos {
        (u128::from(self.period) * u128::from(client_id) / u128::from(n_clients.max(1))) as Nanos
    }

    /// Draws the query a client issues on its timer tick at `now`.
    pub fn next_query(&self, client: &mut ClientState, now: Nanos) -> Query {
        let kind = self.mix.pick(client.rng.random::<f64>());
        let query_id = (u64::from(client.client_id) << 32) | client.issued;
        client.issued += 1;
        let mut q = Query {
            query_id,
            client_id: client.client_id,
            kind,
            issue_time: now,
            interval: None,
            threshold: None,
            lookback_start: None,
        };
        match kind {
            QueryKind::Recent1h => {
                q.interval = Some(Interval {
                    start: now.saturating_sub(HOUR),
                    end: now,
                });
            }
            QueryKind::Random1h => {
                let latest_start = now.saturating_sub(HOUR);
                let start = if latest_start == 0 {
                    0
                } else {
                    client.rng.random_range(0..=latest_start)
                };
                q.interval = Some(Interval {
                    start,
                    end: (start + HOUR).min(now),
                });
            }
            QueryKind::ScanFilter => {
                q.threshold = Some(self.scan_theta);
                q.lookback_start = self.scan_lookback.map(|l| now.saturating_sub(l));
            }
        }
        q
    }
}

/// Per-client generator state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: u32,
    issued: u64,
    rng: SimRng,
}

impl ClientState {
    pub fn new(client_id: u32, rng: SimRng) -> Self {
        ClientState {
            client_id,
            issued: 0,
            rng,
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn gen(p: &WorkloadParams) -> QueryGenerator {
        QueryGenerator::new(p, 0.9, None).unwrap()
    }

    fn client(id: u32, seed: u64) -> ClientState {
        ClientState::new(id, stream(seed, Domain::Client, u64::from(id)))
    }

    #[test]
    fn recent_only_mix() {
        let p = WorkloadParams { q_recent: 1.0, q_random: 0.0, q_scan: 0.0, ..Default::default() };
        let g = gen(&p);
        let mut c = client(0, 1);
        for k in 0..1000 {
            let q = g.next_query(&mut c, HOUR + k * 1_000_000_000);
            assert_eq!(q.kind, QueryKind::Recent1h);
            let iv = q.interval.unwrap();
            assert_eq!(iv.end, q.issue_time);
            assert_eq!(iv.end - iv.start, HOUR);
        }
    }

    #[test]
    fn mix_fractions_over_ten_thousand_queries() {
        let p = WorkloadParams::default();
        let g = gen(&p);
        let mut counts = [0usize; 3];
        let mut clients: Vec<ClientState> = (0..100).map(|i| client(i, 42)).collect();
        for tick in 0..100u64 {
            for c in clients.iter_mut() {
                let q = g.next_query(c, tick * g.period);
                counts[q.kind as usize] += 1;
            }
        }
        let total = counts.iter().sum::<usize>() as f64;
        assert_eq!(total, 10_000.0);
        for (n, want) in counts.iter().zip([0.5, 0.3, 0.2]) {
            assert!((*n as f64 / total - want).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn random_interval_within_history() {
        let g = gen(&WorkloadParams::default());
        let mut c = client(3, 5);
        let now = 2 * HOUR;
        let mut seen = 0;
        while seen < 2000 {
            let q = g.next_query(&mut c, now);
            if q.kind != QueryKind::Random1h {
                continue;
            }
            seen += 1;
            let iv = q.interval.unwrap();
            assert!(iv.start < iv.end && iv.end <= now);
            assert_eq!(iv.end - iv.start, HOUR);
        }
    }

    #[test]
    fn short_history_yields_everything_available() {
        let g = gen(&WorkloadParams::default());
        let mut c = client(3, 5);
        let now = 600_000_000_000;
        for _ in 0..200 {
            let q = g.next_query(&mut c, now);
            if let Some(iv) = q.interval {
                assert_eq!((iv.start, iv.end), (0, now));
            }
        }
    }

    #[test]
    fn scan_fields_and_ids() {
        let p = WorkloadParams { q_recent: 0.0, q_random: 0.0, q_scan: 1.0, ..Default::default() };
        let g = QueryGenerator::new(&p, 0.9, Some(60.0)).unwrap();
        let mut c = client(7, 1);
        let q0 = g.next_query(&mut c, 100_000_000_000);
        let q1 = g.next_query(&mut c, 101_000_000_000);
        assert_eq!(q0.kind, QueryKind::ScanFilter);
        assert_eq!(q0.threshold, Some(0.9));
        assert_eq!(q0.lookback_start, Some(40_000_000_000));
        assert!(q0.interval.is_none());
        assert_eq!(q0.query_id, 7 << 32);
        assert_eq!(q1.query_id, (7 << 32) | 1);
    }

    #[test]
    fn first_ticks_are_staggered_within_one_period() {
        let g = gen(&WorkloadParams::default());
        let ticks: Vec<Nanos> = (0..100).map(|i| g.first_tick(i, 100)).collect();
        assert_eq!(ticks[0], 0);
        assert_eq!(ticks[1], 10_000_000);
        assert!(ticks.windows(2).all(|w| w[0] < w[1]));
        assert!(*ticks.last().unwrap() < g.period);
    }

    #[test]
    fn rejects_bad_theta() {
        assert!(QueryGenerator::new(&WorkloadParams::default(), 1.5, None).is_err());
    }
}
