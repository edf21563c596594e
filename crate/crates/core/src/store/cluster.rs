use serde::{Deserialize, Serialize};

use crate::model::ComputeSpec;
use crate::netsim::{Nanos, NodeQueue};
use crate::records::InstanceWork;

/// Cost model of the cloud store, in core-seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryCosts {
    pub c_ins: f64,
    pub c_q_base: f64,
    pub c_q_per_record: f64,
}

impl QueryCosts {
    pub fn query_cost(&self, touched: u64) -> f64 {
        self.c_q_base + self.c_q_per_record * touched as f64
    }
}

/// Simulated compute of the cloud instances.
#[derive(Debug, Clone)]
pub struct CloudCluster {
    pub nodes: Vec<NodeQueue>,
    pub costs: QueryCosts,
}

impl CloudCluster {
    pub fn new(
        specs: &[ComputeSpec],
        footprint_bytes: u64,
        costs: QueryCosts,
        queue_windows: Vec<(Nanos, Nanos)>,
        busy_windows: Vec<(Nanos, Nanos)>,
    ) -> Self {
        let nodes = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                NodeQueue::from_spec(format!("cloud-{i}"), s, footprint_bytes)
                    .with_meters(queue_windows.clone(), busy_windows.clone())
            })
            .collect();
        CloudCluster { nodes, costs }
    }

    /// Charges an insert on `instance`; returns the commit time.
    pub fn admit_insert(&mut self, instance: usize, at: Nanos) -> Option<Nanos> {
        self.nodes[instance].execute(at, self.costs.c_ins)
    }

    /// Charges every instance that served part of a query; the query
    /// completes when the slowest part does. `None` if any part was dropped.
    pub fn charge_query(&mut self, at: Nanos, served_by: &[InstanceWork]) -> Option<Nanos> {
        let mut done = at;
        let mut dropped = false;
        for w in served_by {
            let cost = self.costs.query_cost(w.touched);
            match self.nodes[w.instance as usize].execute(at, cost) {
                Some(t) => done = done.max(t),
                None => dropped = true,
            }
        }
        (!dropped).then_some(done)
    }

    /// Mean busy fraction over busy-window `i`, across instances.
    pub fn mean_utilization(&self, i: usize) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        self.nodes.iter().map(|n| n.utilization(i)).sum::<f64>() / self.nodes.len() as f64
    }

    pub fn drops(&self) -> u64 {
        self.nodes.iter().map(NodeQueue::drops).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ComponentClass;
    use crate::netsim::NANOS_PER_SEC;

    #[test]
    fn fan_out_completes_with_slowest_instance() {
        let spec = ComputeSpec::preset(ComponentClass::Cloud);
        let costs = QueryCosts { c_ins: 0.0, c_q_base: 0.048, c_q_per_record: 0.0048 };
        let mut c = CloudCluster::new(&[spec.clone(), spec], 1024, costs, vec![], vec![]);
        let work = [InstanceWork { instance: 0, touched: 0 }, InstanceWork { instance: 1, touched: 10 }];
        // 0.048 / 48 = 1 ms; (0.048 + 0.048) / 48 = 2 ms.
        assert_eq!(c.charge_query(0, &work), Some(2_000_000));
    }

    #[test]
    fn utilization_tracks_linear_cost() {
        let spec = ComputeSpec::preset(ComponentClass::Cloud);
        let costs = QueryCosts { c_ins: 0.0, c_q_base: 0.24, c_q_per_record: 0.0 };
        let window = (0, 10 * NANOS_PER_SEC);
        let mut c = CloudCluster::new(&[spec], 1024, costs, vec![window], vec![window]);
        // 100 queries/s x 0.24 core-s / 48 cores = 0.5.
        for k in 0..1_000u64 {
            c.charge_query(k * NANOS_PER_SEC / 100, &[InstanceWork { instance: 0, touched: 0 }]);
        }
        assert!((c.mean_utilization(0) - 0.5).abs() < 1e-6);
    }
}
