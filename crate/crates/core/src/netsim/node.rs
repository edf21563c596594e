use std::collections::VecDeque;

use serde::Serialize;

use crate::model::ComputeSpec;

use super::{Nanos, NANOS_PER_SEC};

/// Time-integral of a step function over a fixed set of windows.
#[derive(Debug, Clone, Default, Serialize)]
pub struct QueueMeter {
    windows: Vec<(Nanos, Nanos)>,
    /// Integral in job-nanoseconds (or busy nanoseconds) per window.
    areas: Vec<u128>,
}

impl QueueMeter {
    pub fn new(windows: Vec<(Nanos, Nanos)>) -> Self {
        let areas = vec![0; windows.len()];
        QueueMeter { windows, areas }
    }

    /// Adds an interval during which the metered quantity is one higher.
    pub fn add(&mut self, from: Nanos, to: Nanos) {
        for (area, &(ws, we)) in self.areas.iter_mut().zip(&self.windows) {
            let lo = from.max(ws);
            let hi = to.min(we);
            if hi > lo {
                *area += u128::from(hi - lo);
            }
        }
    }

    /// Time average over window `i`.
    pub fn mean(&self, i: usize) -> f64 {
        let (ws, we) = self.windows[i];
        if we <= ws {
            return 0.0;
        }
        self.areas[i] as f64 / (we - ws) as f64
    }

    pub fn area(&self, i: usize) -> u128 {
        self.areas[i]
    }

    pub fn window(&self, i: usize) -> (Nanos, Nanos) {
        self.windows[i]
    }
}

/// A compute node serving work FIFO at a rate of `cpu_capacity` cores.
///
/// Jobs have a known cost in core-seconds, so a job's completion time is
/// fixed the moment it is admitted. The number of jobs in the system
/// (waiting or in service) is bounded by a memory-derived limit; work that
/// arrives at a full queue is dropped and counted.
#[derive(Debug, Clone)]
pub struct NodeQueue {
    pub label: String,
    cpu_capacity: f64,
    max_queue: usize,
    busy_until: Nanos,
    in_system: VecDeque<Nanos>,
    admitted: u64,
    drops: u64,
    max_seen: usize,
    queue_meter: QueueMeter,
    busy_meter: QueueMeter,
}

impl NodeQueue {
    pub fn new(label: impl Into<String>, cpu_capacity: f64, max_queue: usize) -> Self {
        assert!(cpu_capacity > 0.0, "capacity must be positive");
        NodeQueue {
            label: label.into(),
            cpu_capacity,
            max_queue: max_queue.max(1),
            busy_until: 0,
            in_system: VecDeque::new(),
            admitted: 0,
            drops: 0,
            max_seen: 0,
            queue_meter: QueueMeter::default(),
            busy_meter: QueueMeter::default(),
        }
    }

    /// Node sized from a compute spec; memory bounds the queue at
    /// `mem / record_footprint` jobs.
    pub fn from_spec(label: impl Into<String>, spec: &ComputeSpec, record_footprint_bytes: u64) -> Self {
        let max_queue = (spec.effective_mem_bytes() / record_footprint_bytes.max(1) as f64).floor() as usize;
        NodeQueue::new(label, spec.effective_cores(), max_queue)
    }

    /// Meters queue length over `queue_windows` and busy time over
    /// `busy_windows`.
    pub fn with_meters(mut self, queue_windows: Vec<(Nanos, Nanos)>, busy_windows: Vec<(Nanos, Nanos)>) -> Self {
        self.queue_meter = QueueMeter::new(queue_windows);
        self.busy_meter = QueueMeter::new(busy_windows);
        self
    }

    pub fn cpu_capacity(&self) -> f64 {
        self.cpu_capacity
    }

    pub fn max_queue(&self) -> usize {
        self.max_queue
    }

    pub fn service_nanos(&self, work_cost: f64) -> Nanos {
        (work_cost / self.cpu_capacity * NANOS_PER_SEC as f64).round() as Nanos
    }

    /// Jobs waiting or in service at `now`.
    pub fn queue_len(&mut self, now: Nanos) -> usize {
        while self.in_system.front().is_some_and(|&c| c <= now) {
            self.in_system.pop_front();
        }
        self.in_system.len()
    }

    /// Admits a job costing `work_cost` core-seconds at `now`. Returns its
    /// completion time, or `None` if the queue was full and it was dropped.
    pub fn execute(&mut self, now: Nanos, work_cost: f64) -> Option<Nanos> {
        debug_assert!(work_cost >= 0.0);
        if self.queue_len(now) >= self.max_queue {
            self.drops += 1;
            return None;
        }
        let start = now.max(self.busy_until);
        let done = start + self.service_nanos(work_cost);
        self.busy_until = done;
        self.admitted += 1;
        if done > now {
            self.in_system.push_back(done);
            self.max_seen = self.max_seen.max(self.in_system.len());
            self.queue_meter.add(now, done);
            self.busy_meter.add(start, done);
        }
        Some(done)
    }

    pub fn busy_until(&self) -> Nanos {
        self.busy_until
    }

    pub fn admitted(&self) -> u64 {
        self.admitted
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn max_queue_seen(&self) -> usize {
        self.max_seen
    }

    pub fn queue_meter(&self) -> &QueueMeter {
        &self.queue_meter
    }

    pub fn busy_meter(&self) -> &QueueMeter {
        &self.busy_meter
    }

    /// Fraction of busy-window `i` the node spent serving work.
    pub fn utilization(&self, i: usize) -> f64 {
        self.busy_meter.mean(i).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: u64 = NANOS_PER_SEC;

    #[test]
    fn zero_cost_completes_now() {
        let mut n = NodeQueue::new("n", 1.0, 10);
        assert_eq!(n.execute(42, 0.0), Some(42));
        assert_eq!(n.queue_len(42), 0);
    }

    #[test]
    fn two_cores_halve_service_time() {
        let mut n = NodeQueue::new("n", 2.0, 10);
        assert_eq!(n.execute(0, 1.0), Some(S / 2));
    }

    #[test]
    fn fifo_behind_queued_work() {
        let mut n = NodeQueue::new("n", 1.0, 10);
        assert_eq!(n.execute(0, 1.0), Some(S));
        assert_eq!(n.execute(0, 1.0), Some(2 * S));
        assert_eq!(n.queue_len(S), 1);
        assert_eq!(n.execute(3 * S, 0.5), Some(3 * S + S / 2));
    }

    #[test]
    fn overflow_is_counted_not_silent() {
        let mut n = NodeQueue::new("n", 1.0, 2);
        assert!(n.execute(0, 1.0).is_some());
        assert!(n.execute(0, 1.0).is_some());
        assert!(n.execute(0, 1.0).is_none());
        assert_eq!(n.drops(), 1);
        assert_eq!(n.admitted(), 2);
        assert!(n.queue_len(0) <= n.max_queue());
    }

    #[test]
    fn overload_grows_queue_without_bound() {
        // Arrivals every 10 ms, each needing 20 ms of the single core:
        // lambda = 100/s exceeds mu = 50/s.
        let mut n = NodeQueue::new("n", 1.0, usize::MAX);
        let mut lens = Vec::new();
        for i in 0..10_000u64 {
            let t = i * 10_000_000;
            n.execute(t, 0.02);
            if i % 1000 == 999 {
                lens.push(n.queue_len(t));
            }
        }
        assert!(lens.windows(2).all(|w| w[1] > w[0]), "{lens:?}");
        assert!(*lens.last().unwrap() > 4_000);
    }

    #[test]
    fn underload_queue_average_stabilizes() {
        let halves = vec![(0, 50 * S), (50 * S, 100 * S)];
        let mut n = NodeQueue::new("n", 1.0, usize::MAX).with_meters(halves, vec![(0, 100 * S)]);
        for i in 0..10_000u64 {
            n.execute(i * 10_000_000, 0.008);
        }
        let (a, b) = (n.queue_meter().mean(0), n.queue_meter().mean(1));
        assert!((b - a).abs() <= 1e-9 * a.max(1.0), "{a} {b}");
        assert!((n.utilization(0) - 0.8).abs() < 1e-6);
    }

    #[test]
    fn memory_derived_limit() {
        let spec = ComputeSpec::preset(crate::model::ComponentClass::Sensor);
        let n = NodeQueue::from_spec("s", &spec, 1024);
        assert_eq!(n.max_queue(), 256_000_000 / 1024);
    }
}
