use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::WorkloadParams;
use crate::netsim::Nanos;
use crate::records::{AggregateRecord, BufferDump, SensorReading, CHANNELS, RECORD_HEADER_BITS};
use crate::rng::SimRng;

/// Channel 0 of an exceeding reading sits this many standard deviations
/// above its baseline.
pub const EXCEED_OFFSET_SIGMA: f64 = 6.0;

/// Generation time of sampling tick `k` at `rate_hz`, without cumulative drift.
pub fn tick_time(k: u64, rate_hz: f64) -> Nanos {
    (k as f64 * 1e9 / rate_hz).round() as Nanos
}

/// Ring of the most recent readings of one sensor.
#[derive(Debug, Clone)]
pub struct SensorBuffer {
    capacity: usize,
    readings: VecDeque<SensorReading>,
}

impl SensorBuffer {
    pub fn new(capacity: usize) -> Self {
        SensorBuffer {
            capacity,
            readings: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, reading: SensorReading) {
        if self.readings.len() == self.capacity {
            self.readings.pop_front();
        }
        self.readings.push_back(reading);
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn last(&self) -> Option<&SensorReading> {
        self.readings.back()
    }

    /// Readings oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &SensorReading> {
        self.readings.iter()
    }
}

/// Generator state of one sensor: its random stream, buffer and the running
/// aggregation window.
#[derive(Debug, Clone)]
pub struct SensorState {
    pub sensor_id: u32,
    pub site_id: u16,
    next_seq: u64,
    exceed_prob: f64,
    channels: usize,
    resolution_bits: u64,
    n_agg: u32,
    buffer: SensorBuffer,
    rng: SimRng,
    window_sum: [f64; CHANNELS],
    window_len: u32,
    window_start: Nanos,
    window_seq: u64,
}

impl SensorState {
    pub fn new(site_id: u16, sensor_id: u32, params: &WorkloadParams, rng: SimRng) -> Self {
        SensorState {
            sensor_id,
            site_id,
            next_seq: 0,
            exceed_prob: params.exceed_prob,
            channels: params.resolution_channels as usize,
            resolution_bits: u64::from(params.resolution_bits),
            n_agg: params.n_agg,
            buffer: SensorBuffer::new(params.buffer_size as usize),
            rng,
            window_sum: [0.0; CHANNELS],
            window_len: 0,
            window_start: 0,
            window_seq: 0,
        }
    }

    pub fn buffer(&self) -> &SensorBuffer {
        &self.buffer
    }

    /// Samples the next reading: unit Gaussian noise on every channel, with
    /// channel 0 shifted up by [`EXCEED_OFFSET_SIGMA`] when the reading
    /// exceeds (Bernoulli with the configured probability). The reading is
    /// appended to the buffer.
    pub fn next_reading(&mut self, gen_time: Nanos) -> SensorReading {
        let mut channels = [0.0; CHANNELS];
        for c in channels.iter_mut().take(self.channels) {
            *c = self.rng.sample(StandardNormal);
        }
        let exceeds = self.exceed_prob > 0.0 && self.rng.random::<f64>() < self.exceed_prob;
        if exceeds {
            channels[0] += EXCEED_OFFSET_SIGMA;
        }
        let reading = SensorReading {
            sensor_id: self.sensor_id,
            site_id: self.site_id,
            seq: self.next_seq,
            gen_time,
            channels,
            exceeds,
        };
        self.next_seq += 1;
        self.buffer.push(reading.clone());
        reading
    }

    /// Folds the newest reading into the aggregation window; every `n_agg`-th
    /// reading closes the window and yields per-channel means.
    pub fn maybe_aggregate(&mut self) -> Option<AggregateRecord> {
        let last = self.buffer.last()?;
        if self.window_len == 0 {
            self.window_start = last.gen_time;
        }
        for (sum, v) in self.window_sum.iter_mut().zip(&last.channels) {
            *sum += v;
        }
        self.window_len += 1;
        if self.window_len < self.n_agg {
            return None;
        }
        let n = f64::from(self.window_len);
        let mut channel_means = [0.0; CHANNELS];
        for (m, s) in channel_means.iter_mut().zip(&self.window_sum) {
            *m = s / n;
        }
        let rec = AggregateRecord {
            site_id: self.site_id,
            sensor_id: self.sensor_id,
            window_seq: self.window_seq,
            gen_time: self.window_start,
            created_at: last.gen_time,
            channel_means,
            size_bits: self.resolution_bits + RECORD_HEADER_BITS,
        };
        self.window_seq += 1;
        self.window_sum = [0.0; CHANNELS];
        self.window_len = 0;
        Some(rec)
    }

    /// Copies out the whole buffer, oldest first. Non-destructive.
    pub fn dump_buffer(&self) -> BufferDump {
        let mut dump = self.dump_summary();
        dump.readings = self.buffer.iter().cloned().collect();
        dump
    }

    /// Same as [`dump_buffer`](Self::dump_buffer) without copying readings.
    pub fn dump_summary(&self) -> BufferDump {
        let count = self.buffer.len() as u32;
        BufferDump {
            sensor_id: self.sensor_id,
            site_id: self.site_id,
            first_seq: self.buffer.iter().next().map_or(self.next_seq, |r| r.seq),
            count,
            payload_bits: u64::from(count) * self.resolution_bits,
            readings: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn sensor(params: &WorkloadParams, seed: u64) -> SensorState {
        SensorState::new(0, 7, params, stream(seed, Domain::Sensor, 7))
    }

    fn run(s: &mut SensorState, n: u64, f: f64) -> (Vec<SensorReading>, Vec<AggregateRecord>) {
        let mut readings = Vec::new();
        let mut aggs = Vec::new();
        for k in 0..n {
            readings.push(s.next_reading(tick_time(k, f)));
            aggs.extend(s.maybe_aggregate());
        }
        (readings, aggs)
    }

    #[test]
    fn exceed_extremes() {
        let p0 = WorkloadParams { exceed_prob: 0.0, ..Default::default() };
        let (r, _) = run(&mut sensor(&p0, 1), 5_000, 100.0);
        assert!(r.iter().all(|r| !r.exceeds));
        let p1 = WorkloadParams { exceed_prob: 1.0, ..Default::default() };
        let (r, _) = run(&mut sensor(&p1, 1), 5_000, 100.0);
        assert!(r.iter().all(|r| r.exceeds));
    }

    #[test]
    fn exceed_fraction_matches_probability() {
        // sd of the fraction over 1e5 draws is ~0.0011; the band is 4.4 sd.
        let p = WorkloadParams::default();
        let (r, _) = run(&mut sensor(&p, 9), 100_000, 100.0);
        let frac = r.iter().filter(|r| r.exceeds).count() as f64 / r.len() as f64;
        assert!((frac - 0.15).abs() <= 0.005, "{frac}");
    }

    #[test]
    fn seq_strictly_increasing_and_buffer_bounded() {
        let p = WorkloadParams { buffer_size: 50, n_agg: 10, ..Default::default() };
        let mut s = sensor(&p, 2);
        let (r, _) = run(&mut s, 500, 100.0);
        assert!(r.windows(2).all(|w| w[1].seq == w[0].seq + 1));
        assert_eq!(s.buffer().len(), 50);
        let dump = s.dump_buffer();
        assert_eq!(dump.readings.first().unwrap().seq, 450);
        assert!(dump.readings.windows(2).all(|w| w[0].gen_time < w[1].gen_time));
    }

    #[test]
    fn aggregates_every_n_agg_readings() {
        let p = WorkloadParams::default();
        let (_, aggs) = run(&mut sensor(&p, 3), 100, 100.0);
        assert_eq!(aggs.len(), 4);
        assert_eq!(aggs[1].gen_time, tick_time(25, 100.0));
        assert_eq!(aggs[1].created_at, tick_time(49, 100.0));
        assert!(aggs.windows(2).all(|w| w[0].gen_time < w[1].gen_time));
        assert_eq!(aggs[0].size_bits, 192 + RECORD_HEADER_BITS);
    }

    #[test]
    fn constant_channel_mean_is_exact() {
        let p = WorkloadParams { n_agg: 4, buffer_size: 4, ..Default::default() };
        let mut s = sensor(&p, 4);
        let mut last = None;
        for k in 0..4u64 {
            s.next_reading(k);
            let mut r = s.buffer.readings.pop_back().unwrap();
            r.channels = [2.5, -1.0, 0.125];
            s.buffer.push(r);
            last = s.maybe_aggregate();
        }
        assert_eq!(last.unwrap().channel_means, [2.5, -1.0, 0.125]);
    }

    #[test]
    fn aggregate_mean_matches_recomputation_over_dump() {
        let p = WorkloadParams { n_agg: 25, buffer_size: 25, ..Default::default() };
        let mut s = sensor(&p, 5);
        let mut agg = None;
        for k in 0..25u64 {
            s.next_reading(tick_time(k, 100.0));
            agg = s.maybe_aggregate();
        }
        let agg = agg.unwrap();
        let dump = s.dump_buffer();
        for c in 0..CHANNELS {
            let mean = dump.readings.iter().map(|r| r.channels[c]).sum::<f64>() / 25.0;
            let ulp = f64::EPSILON * mean.abs().max(f64::MIN_POSITIVE);
            assert!((mean - agg.channel_means[c]).abs() <= ulp, "{mean} {}", agg.channel_means[c]);
        }
    }

    #[test]
    fn dump_sizes_and_non_destructive() {
        let p = WorkloadParams::default();
        let mut s = sensor(&p, 6);
        run(&mut s, 10, 100.0);
        let d = s.dump_buffer();
        assert_eq!(d.readings.len(), 10);
        assert_eq!(d.payload_bits, 1_920);
        assert_eq!(d, s.dump_buffer());
        run(&mut s, 2_000, 100.0);
        let full = s.dump_summary();
        assert_eq!(full.count, 1000);
        assert_eq!(full.payload_bits, 192_000);
        assert!(full.size_bits() <= 192 * 1000 + RECORD_HEADER_BITS);
    }

    #[test]
    fn same_seed_same_stream() {
        let p = WorkloadParams::default();
        let (a, _) = run(&mut sensor(&p, 11), 300, 100.0);
        let (b, _) = run(&mut sensor(&p, 11), 300, 100.0);
        let (c, _) = run(&mut sensor(&p, 12), 300, 100.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn whole_second_windows_hold_exactly_f_ticks() {
        for f in [100.0, 3.0, 7.0, 250.0] {
            let in_window = (0..10_000u64)
                .map(|k| tick_time(k, f))
                .filter(|&t| (2_000_000_000..3_000_000_000).contains(&t))
                .count();
            assert_eq!(in_window as f64, f, "f={f}");
        }
    }
}
