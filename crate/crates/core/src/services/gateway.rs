use thiserror::Error;

use crate::netsim::{Nanos, NodeQueue};
use crate::records::{AggregateRecord, EventReport};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("routing error: record from site {got} reached the gateway of site {expected}")]
pub struct RoutingError {
    pub expected: u16,
    pub got: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForwardAction<T> {
    /// Ready to leave the gateway at `ready_at`.
    Forward { item: T, ready_at: Nanos },
    /// Rejected because the gateway queue was full.
    Dropped,
}

/// Aggregation and preprocessing at a site gateway.
#[derive(Debug, Clone)]
pub struct GatewayService {
    pub site_id: u16,
    pub node: NodeQueue,
    c_agg: f64,
    c_event: f64,
}

impl GatewayService {
    pub fn new(site_id: u16, node: NodeQueue, c_agg: f64, c_event: f64) -> Self {
        GatewayService {
            site_id,
            node,
            c_agg,
            c_event,
        }
    }

    /// Charges `c_agg` and forwards the record upstream.
    pub fn on_aggregate(
        &mut self,
        now: Nanos,
        record: AggregateRecord,
    ) -> Result<ForwardAction<AggregateRecord>, RoutingError> {
        self.check_site(record.site_id)?;
        Ok(match self.node.execute(now, self.c_agg) {
            Some(ready_at) => ForwardAction::Forward { item: record, ready_at },
            None => ForwardAction::Dropped,
        })
    }

    /// Charges `c_event` for assembling a collected event report.
    pub fn on_event_report(
        &mut self,
        now: Nanos,
        report: EventReport,
    ) -> Result<ForwardAction<EventReport>, RoutingError> {
        self.check_site(report.site_id)?;
        Ok(match self.node.execute(now, self.c_event) {
            Some(ready_at) => ForwardAction::Forward { item: report, ready_at },
            None => ForwardAction::Dropped,
        })
    }

    fn check_site(&self, got: u16) -> Result<(), RoutingError> {
        if got == self.site_id {
            Ok(())
        } else {
            Err(RoutingError {
                expected: self.site_id,
                got,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::NANOS_PER_SEC;

    fn record(site_id: u16, window_seq: u64) -> AggregateRecord {
        AggregateRecord {
            site_id,
            sensor_id: 0,
            window_seq,
            gen_time: 0,
            created_at: 0,
            channel_means: [0.0; 3],
            size_bits: 320,
        }
    }

    #[test]
    fn idle_gateway_forwards_after_service_time() {
        let mut g = GatewayService::new(2, NodeQueue::new("gw", 4.0, 100), 1e-5, 0.01);
        match g.on_aggregate(1_000, record(2, 0)).unwrap() {
            ForwardAction::Forward { ready_at, .. } => assert_eq!(ready_at, 1_000 + 2_500),
            ForwardAction::Dropped => panic!("dropped"),
        }
    }

    #[test]
    fn unknown_site_is_rejected() {
        let mut g = GatewayService::new(2, NodeQueue::new("gw", 4.0, 100), 1e-5, 0.01);
        assert_eq!(
            g.on_aggregate(0, record(3, 0)).unwrap_err(),
            RoutingError { expected: 2, got: 3 }
        );
    }

    #[test]
    fn saturated_gateway_grows_then_drops() {
        // capacity / c_agg = 1000 records/s; offer 2000/s.
        let mut g = GatewayService::new(0, NodeQueue::new("gw", 0.01, 500), 1e-5, 0.01);
        let mut lens = Vec::new();
        for k in 0..4_000u64 {
            let now = k * NANOS_PER_SEC / 2_000;
            g.on_aggregate(now, record(0, k)).unwrap();
            if k % 500 == 0 {
                lens.push(g.node.queue_len(now));
            }
        }
        assert!(lens.windows(2).take(2).all(|w| w[1] > w[0]), "{lens:?}");
        assert!(g.node.drops() > 0);
        assert_eq!(g.node.admitted() + g.node.drops(), 4_000);
    }
}
