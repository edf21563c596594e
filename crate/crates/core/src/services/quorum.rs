use crate::model::quorum_threshold;

/// Emitted once per tick when a site's distinct exceed count passes the
/// quorum threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollectionTrigger {
    pub site_id: u16,
    pub tick: u64,
    pub exceed_count: u32,
}

/// Per-tick, per-site count of distinct sensors reporting an exceedance.
#[derive(Debug, Clone)]
pub struct QuorumCounter {
    site_id: u16,
    threshold: u64,
    tick: u64,
    count: u32,
    fired: bool,
    /// Tick in which each sensor last reported, offset by one (0 = never).
    last_report: Vec<u64>,
}

impl QuorumCounter {
    pub fn new(site_id: u16, n_sensors: u32, quorum_ratio: f64) -> Self {
        QuorumCounter {
            site_id,
            threshold: u64::from(quorum_threshold(n_sensors, quorum_ratio)),
            tick: 0,
            count: 0,
            fired: false,
            last_report: vec![0; n_sensors as usize],
        }
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    /// Distinct reporters in the current tick.
    pub fn count(&self) -> u32 {
        self.count
    }

    /// Registers an exceed notification. Duplicates within a tick count once;
    /// a new tick resets the counter.
    pub fn on_exceed(&mut self, sensor_id: u32, tick: u64) -> Option<CollectionTrigger> {
        if tick != self.tick {
            self.tick = tick;
            self.count = 0;
            self.fired = false;
        }
        let slot = self.last_report.get_mut(sensor_id as usize)?;
        if *slot == tick + 1 {
            return None;
        }
        *slot = tick + 1;
        self.count += 1;
        if !self.fired && u64::from(self.count) > self.threshold {
            self.fired = true;
            return Some(CollectionTrigger {
                site_id: self.site_id,
                tick,
                exceed_count: self.count,
            });
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sixty_first_report_triggers() {
        let mut q = QuorumCounter::new(0, 300, 0.2);
        for s in 0..60 {
            assert_eq!(q.on_exceed(s, 5), None);
        }
        let t = q.on_exceed(60, 5).unwrap();
        assert_eq!((t.tick, t.exceed_count), (5, 61));
        for s in 61..300 {
            assert_eq!(q.on_exceed(s, 5), None);
        }
        assert_eq!(q.count(), 300);
    }

    #[test]
    fn unanimous_quorum_never_triggers() {
        let mut q = QuorumCounter::new(0, 300, 1.0);
        assert!((0..300).all(|s| q.on_exceed(s, 0).is_none()));
    }

    #[test]
    fn duplicates_count_once_and_tick_resets() {
        let mut q = QuorumCounter::new(0, 10, 0.2);
        for _ in 0..5 {
            assert_eq!(q.on_exceed(1, 0), None);
            assert_eq!(q.on_exceed(2, 0), None);
        }
        assert_eq!(q.count(), 2);
        assert!(q.on_exceed(3, 0).is_some());
        assert_eq!(q.on_exceed(3, 1), None);
        assert_eq!(q.count(), 1);
    }

    proptest! {
        #[test]
        fn trigger_is_permutation_invariant(
            reporters in proptest::collection::vec(0u32..50, 0..120),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let run = |order: &[u32]| {
                let mut q = QuorumCounter::new(0, 50, 0.3);
                let fired = order.iter().filter_map(|&s| q.on_exceed(s, 9)).count();
                (fired, q.count())
            };
            let mut shuffled = reporters.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = run(&reporters);
            prop_assert_eq!(a, run(&shuffled));
            prop_assert!(a.0 <= 1);
            let distinct = reporters.iter().collect::<std::collections::BTreeSet<_>>().len() as u64;
            prop_assert_eq!(a.0 == 1, distinct > 15);
        }
    }
}
