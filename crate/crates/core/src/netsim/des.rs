use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::Nanos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    MessageArrival,
    ServiceCompletion,
    Timer,
    GeneratorTick,
}

impl EventKind {
    fn index(self) -> usize {
        match self {
            EventKind::MessageArrival => 0,
            EventKind::ServiceCompletion => 1,
            EventKind::Timer => 2,
            EventKind::GeneratorTick => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::MessageArrival => "message_arrival",
            EventKind::ServiceCompletion => "service_completion",
            EventKind::Timer => "timer",
            EventKind::GeneratorTick => "generator_tick",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_time: Nanos,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.fire_time, self.seq) == (other.fire_time, other.seq)
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.fire_time, self.seq).cmp(&(other.fire_time, other.seq))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStats {
    pub processed: u64,
    pub message_arrival: u64,
    pub service_completion: u64,
    pub timer: u64,
    pub generator_tick: u64,
}

impl EventStats {
    fn count(&mut self, kind: EventKind) {
        self.processed += 1;
        let slot = match kind.index() {
            0 => &mut self.message_arrival,
            1 => &mut self.service_completion,
            2 => &mut self.timer,
            _ => &mut self.generator_tick,
        };
        *slot += 1;
    }
}

/// Pending events plus the simulation clock.
pub struct EventQueue<P> {
    now: Nanos,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Event<P>>>,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            now: 0,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues an event and returns its sequence number.
    ///
    /// # Panics
    ///
    /// Scheduling before the current clock is a logic error in the caller.
    pub fn schedule(&mut self, fire_time: Nanos, kind: EventKind, payload: P) -> u64 {
        assert!(
            fire_time >= self.now,
            "event scheduled into the past: {fire_time} < now {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event {
            fire_time,
            seq,
            kind,
            payload,
        }));
        seq
    }

    /// Removes the next event if it fires no later than `t_end`, advancing
    /// the clock to its fire time.
    pub fn pop_due(&mut self, t_end: Nanos) -> Option<Event<P>> {
        if self.heap.peek()?.0.fire_time > t_end {
            return None;
        }
        let Reverse(ev) = self.heap.pop()?;
        self.now = ev.fire_time;
        Some(ev)
    }

    /// Dispatches every event with `fire_time <= t_end` in order, then sets
    /// the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: Nanos, mut handler: F) -> EventStats
    where
        F: FnMut(&mut Self, Event<P>),
    {
        assert!(t_end >= self.now, "run_until into the past");
        let mut stats = EventStats::default();
        while let Some(ev) = self.pop_due(t_end) {
            stats.count(ev.kind);
            handler(self, ev);
        }
        self.now = t_end;
        stats
    }

    /// Payloads still pending, in no particular order.
    pub fn pending(&self) -> impl Iterator<Item = &Event<P>> {
        self.heap.iter().map(|r| &r.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn empty_queue_jumps_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        let stats = q.run_until(5_000, |_, _| unreachable!());
        assert_eq!(stats.processed, 0);
        assert_eq!(q.now(), 5_000);
    }

    #[test]
    fn event_at_end_is_processed() {
        let mut q = EventQueue::new();
        q.schedule(100, EventKind::Timer, ());
        q.schedule(101, EventKind::Timer, ());
        let stats = q.run_until(100, |_, _| {});
        assert_eq!(stats.processed, 1);
        assert_eq!(stats.timer, 1);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn now_event_fires_before_later_and_ties_break_by_seq() {
        let mut q = EventQueue::new();
        q.schedule(10, EventKind::Timer, "later");
        q.schedule(0, EventKind::Timer, "now");
        q.schedule(10, EventKind::Timer, "later-2");
        let mut order = Vec::new();
        q.run_until(10, |_, ev| order.push((ev.seq, ev.payload)));
        assert_eq!(order, vec![(1, "now"), (0, "later"), (2, "later-2")]);
    }

    #[test]
    #[should_panic(expected = "into the past")]
    fn scheduling_into_past_is_fatal() {
        let mut q = EventQueue::new();
        q.schedule(10, EventKind::Timer, ());
        q.run_until(10, |q, _| {
            q.schedule(5, EventKind::Timer, ());
        });
    }

    #[test]
    fn random_schedules_dispatch_in_sorted_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut q = EventQueue::new();
        let mut expected = Vec::with_capacity(1_000_000);
        for _ in 0..1_000_000 {
            let t: u64 = rng.random_range(0..50_000);
            let seq = q.schedule(t, EventKind::Timer, ());
            expected.push((t, seq));
        }
        expected.sort_unstable();
        let mut got = Vec::with_capacity(expected.len());
        q.run_until(u64::MAX, |_, ev| got.push((ev.fire_time, ev.seq)));
        assert_eq!(got, expected);
    }

    #[test]
    fn tick_chain_counts_exactly() {
        // 100 Hz generator ticks for 10 s; tick k fires at round(k * 1e9 / f).
        let f = 100.0;
        let t_end = 10 * super::super::NANOS_PER_SEC;
        let mut q = EventQueue::new();
        q.schedule(0, EventKind::GeneratorTick, 0u64);
        let stats = q.run_until(t_end - 1, |q, ev| {
            let next = ev.payload + 1;
            q.schedule((next as f64 * 1e9 / f).round() as u64, EventKind::GeneratorTick, next);
        });
        assert_eq!(stats.generator_tick, 1000);
    }
}
