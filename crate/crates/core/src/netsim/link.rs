use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::LinkSpec;
use crate::rng::SimRng;

use super::{Nanos, NANOS_PER_SEC};

/// Conventional Ethernet MTU, 1500 bytes.
pub const DEFAULT_MTU_BITS: u64 = 12_000;
pub const DEFAULT_RTO_FACTOR: u64 = 2;

/// Jitter-free propagation delay over `distance_km`, rounded to whole ns.
pub fn propagation_nanos(spec: &LinkSpec, distance_km: f64) -> Nanos {
    (distance_km * spec.delay_per_km_ms * 1e6).round().max(0.0) as Nanos
}

pub fn serialization_nanos(bits: u64, bandwidth_bps: f64) -> Nanos {
    (bits as f64 / bandwidth_bps * NANOS_PER_SEC as f64).round() as Nanos
}

/// What happened to one message handed to a link.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeliveryOutcome {
    pub send_time: Nanos,
    /// When the first fragment started serializing (after prior traffic).
    pub start_time: Nanos,
    /// When the last fragment arrived; the message is usable from here on.
    pub delivered_at: Nanos,
    pub packets: u64,
    pub transmissions: u64,
    pub retransmissions: u64,
    pub duplicates: u64,
    pub reordered: u64,
}

impl DeliveryOutcome {
    pub fn delay(&self) -> Nanos {
        self.delivered_at - self.send_time
    }
}

/// Per-link counters. Every transmitted packet (originals, retransmissions
/// and duplicates) ends up in exactly one of `delivered`, `lost`, `corrupted`
/// or `duplicates_discarded`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub messages: u64,
    pub payload_bits: u64,
    pub wire_bits: u64,
    /// Payload bits of messages sent inside the measurement window.
    pub window_payload_bits: u64,
    pub window_wire_bits: u64,
    pub packets_generated: u64,
    pub delivered: u64,
    pub lost: u64,
    pub corrupted: u64,
    pub duplicates_discarded: u64,
    pub retransmissions: u64,
    pub reordered: u64,
}

impl LinkStats {
    pub fn conserved(&self) -> bool {
        self.packets_generated
            == self.delivered + self.lost + self.corrupted + self.duplicates_discarded
    }

    pub fn merge(&mut self, other: &LinkStats) {
        self.messages += other.messages;
        self.payload_bits += other.payload_bits;
        self.wire_bits += other.wire_bits;
        self.window_payload_bits += other.window_payload_bits;
        self.window_wire_bits += other.window_wire_bits;
        self.packets_generated += other.packets_generated;
        self.delivered += other.delivered;
        self.lost += other.lost;
        self.corrupted += other.corrupted;
        self.duplicates_discarded += other.duplicates_discarded;
        self.retransmissions += other.retransmissions;
        self.reordered += other.reordered;
    }
}

/// A unidirectional point-to-point link with a FIFO transmit queue.
///
/// Transport on top is reliable and in order: messages are split into
/// MTU-sized packets serialized back to back; a lost or corrupted packet is
/// resent one retransmission timeout (`2 * (propagation + serialization)`)
/// after it finished serializing, adding its serialization time to the
/// link's occupancy without idling the link in between; a duplicated packet occupies the link a
/// second time and is dropped by the receiver; a reordered packet arrives one
/// packet slot late. A message is delivered when its last fragment arrives.
pub struct Link {
    spec: LinkSpec,
    distance_km: f64,
    mtu_bits: u64,
    base_propagation: Nanos,
    busy_until: Nanos,
    rng: SimRng,
    window: (Nanos, Nanos),
    rto_factor: u64,
    stats: LinkStats,
}

impl Link {
    pub fn new(spec: LinkSpec, distance_km: f64, mtu_bits: u64, rng: SimRng) -> Self {
        assert!(mtu_bits > 0, "mtu must be positive");
        let base_propagation = propagation_nanos(&spec, distance_km);
        Link {
            spec,
            distance_km,
            mtu_bits,
            base_propagation,
            busy_until: 0,
            rng,
            window: (0, Nanos::MAX),
            rto_factor: DEFAULT_RTO_FACTOR,
            stats: LinkStats::default(),
        }
    }

    /// Only messages sent within `[start, end)` count toward window bits.
    pub fn with_window(mut self, start: Nanos, end: Nanos) -> Self {
        self.window = (start, end);
        self
    }

    /// Retransmission timeout as a multiple of propagation plus serialization.
    pub fn with_rto_factor(mut self, factor: u64) -> Self {
        self.rto_factor = factor;
        self
    }

    pub fn spec(&self) -> &LinkSpec {
        &self.spec
    }

    pub fn distance_km(&self) -> f64 {
        self.distance_km
    }

    pub fn base_propagation(&self) -> Nanos {
        self.base_propagation
    }

    pub fn busy_until(&self) -> Nanos {
        self.busy_until
    }

    pub fn stats(&self) -> &LinkStats {
        &self.stats
    }

    fn draw(&mut self, rate: f64) -> bool {
        rate > 0.0 && self.rng.random::<f64>() < rate
    }

    fn propagation_sample(&mut self) -> Nanos {
        let sigma = self.spec.jitter_frac;
        if sigma == 0.0 || self.base_propagation == 0 {
            return self.base_propagation;
        }
        let z = loop {
            let z: f64 = self.rng.sample(StandardNormal);
            if z.abs() <= 3.0 {
                break z;
            }
        };
        (self.base_propagation as f64 * (1.0 + sigma * z)).round().max(0.0) as Nanos
    }

    /// Hands a message of `size_bits` (of which `payload_bits` are payload)
    /// to the link at `send_time`.
    pub fn transmit(&mut self, send_time: Nanos, size_bits: u64, payload_bits: u64) -> DeliveryOutcome {
        assert!(size_bits > 0, "message size must be positive");
        self.stats.messages += 1;
        self.stats.payload_bits += payload_bits;
        self.stats.wire_bits += size_bits;
        if send_time >= self.window.0 && send_time < self.window.1 {
            self.stats.window_payload_bits += payload_bits;
            self.stats.window_wire_bits += size_bits;
        }

        let start = send_time.max(self.busy_until);
        let full = size_bits / self.mtu_bits;
        let rem = size_bits % self.mtu_bits;
        let packets = full + u64::from(rem > 0);
        let mtu = self.mtu_bits;
        let frag_bits = move |i: u64| if i < full { mtu } else { rem };
        let slot = serialization_nanos(self.mtu_bits.min(size_bits), self.spec.bandwidth_bps);

        let mut out = DeliveryOutcome {
            send_time,
            start_time: start,
            packets,
            ..Default::default()
        };
        let mut cursor = start;
        let mut retry: Vec<(Nanos, u64)> = Vec::new();
        for i in 0..packets {
            cursor += serialization_nanos(frag_bits(i), self.spec.bandwidth_bps);
            cursor += self.send_fragment(i, frag_bits(i), cursor, slot, &mut out, &mut retry);
        }
        while !retry.is_empty() {
            retry.sort_unstable();
            let batch = std::mem::take(&mut retry);
            out.retransmissions += batch.len() as u64;
            self.stats.retransmissions += batch.len() as u64;
            for (ready, i) in batch {
                let ser = serialization_nanos(frag_bits(i), self.spec.bandwidth_bps);
                cursor += ser;
                cursor += self.send_fragment(i, frag_bits(i), ready + ser, slot, &mut out, &mut retry);
            }
        }
        self.busy_until = cursor;
        out
    }

    /// Accounts one fragment that finished serializing at `sent`. Returns
    /// extra link occupancy caused by a duplicate.
    fn send_fragment(
        &mut self,
        index: u64,
        bits: u64,
        sent: Nanos,
        slot: Nanos,
        out: &mut DeliveryOutcome,
        retry: &mut Vec<(Nanos, u64)>,
    ) -> Nanos {
        let ser = serialization_nanos(bits, self.spec.bandwidth_bps);
        self.stats.packets_generated += 1;
        out.transmissions += 1;
        let prop = self.propagation_sample();
        let rto = self.rto_factor * (self.base_propagation + ser);
        if self.draw(self.spec.loss_rate) {
            self.stats.lost += 1;
            retry.push((sent + rto, index));
        } else if self.draw(self.spec.corrupt_rate) {
            self.stats.corrupted += 1;
            retry.push((sent + rto, index));
        } else {
            let mut arrival = sent + prop;
            if self.draw(self.spec.reorder_rate) {
                arrival += slot;
                self.stats.reordered += 1;
                out.reordered += 1;
            }
            self.stats.delivered += 1;
            out.delivered_at = out.delivered_at.max(arrival);
        }
        if self.draw(self.spec.dup_rate) {
            self.stats.packets_generated += 1;
            self.stats.duplicates_discarded += 1;
            out.duplicates += 1;
            ser
        } else {
            0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinkSpec, LinkType};
    use crate::rng::{stream, Domain};

    fn ideal(t: LinkType) -> LinkSpec {
        LinkSpec::preset(t).ideal()
    }

    #[test]
    fn fiber_megabit_over_100km() {
        let mut link = Link::new(ideal(LinkType::Fiber1G), 100.0, DEFAULT_MTU_BITS, stream(1, Domain::Link, 0));
        let out = link.transmit(0, 1_000_000, 1_000_000);
        assert_eq!(out.packets, 84);
        assert_eq!(out.delivered_at, 1_850_000);
        assert_eq!(link.busy_until(), 1_000_000);
    }

    #[test]
    fn zero_distance_is_serialization_only() {
        let mut link = Link::new(ideal(LinkType::LteM), 0.0, DEFAULT_MTU_BITS, stream(1, Domain::Link, 0));
        let out = link.transmit(5, 1_000, 1_000);
        assert_eq!(out.delay(), serialization_nanos(1_000, 1e6));
        assert_eq!(out.delay(), 1_000_000);
    }

    #[test]
    fn fifo_behind_prior_traffic() {
        let mut link = Link::new(ideal(LinkType::Fiber1G), 0.0, DEFAULT_MTU_BITS, stream(1, Domain::Link, 0));
        let a = link.transmit(0, 12_000, 12_000);
        let b = link.transmit(0, 12_000, 12_000);
        assert_eq!(a.delivered_at, 12_000);
        assert_eq!(b.start_time, 12_000);
        assert_eq!(b.delivered_at, 24_000);
        // An idle gap resets the queue.
        let c = link.transmit(1_000_000, 12_000, 12_000);
        assert_eq!(c.start_time, 1_000_000);
    }

    #[test]
    fn ideal_link_is_deterministic() {
        let run = |seed| {
            let mut link = Link::new(ideal(LinkType::Lorawan), 3.0, DEFAULT_MTU_BITS, stream(seed, Domain::Link, 0));
            (0..20).map(|i| link.transmit(i * 1_000_000, 50_000, 50_000)).collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn loss_retransmissions_follow_geometric_mean() {
        // 10^6 single-packet messages: the 2% band sits beyond 4 standard
        // errors of the geometric mean q/(1-q).
        let spec = LinkSpec {
            loss_rate: 0.05,
            ..ideal(LinkType::Fiber1G)
        };
        let mut link = Link::new(spec, 10.0, DEFAULT_MTU_BITS, stream(42, Domain::Link, 0));
        let n = 1_000_000u64;
        for i in 0..n {
            link.transmit(i * 100_000, 8_000, 8_000);
        }
        let mean = link.stats().retransmissions as f64 / n as f64;
        let want = 1.0 / (1.0 - 0.05) - 1.0;
        assert!(((mean - want) / want).abs() < 0.02, "{mean} vs {want}");
        assert!(link.stats().conserved());
    }

    #[test]
    fn retransmission_delays_its_message_not_the_queue() {
        let spec = LinkSpec {
            loss_rate: 0.3,
            ..ideal(LinkType::Fiber1G)
        };
        let mut link = Link::new(spec, 1_000.0, DEFAULT_MTU_BITS, stream(7, Domain::Link, 0));
        let prop = link.base_propagation();
        let rto = DEFAULT_RTO_FACTOR * (prop + 12_000);
        let mut transmissions = 0;
        for _ in 0..1_000 {
            let out = link.transmit(0, 12_000, 12_000);
            transmissions += out.transmissions;
            let sent = out.start_time + 12_000;
            assert_eq!(out.delivered_at, sent + prop + out.retransmissions * (rto + 12_000));
        }
        assert!(link.stats().retransmissions > 300);
        assert_eq!(link.busy_until(), transmissions * 12_000);
    }

    #[test]
    fn impaired_link_conserves_packets_and_respects_causality() {
        let spec = LinkSpec::preset(LinkType::Lorawan);
        let dist = 40.0;
        let mut link = Link::new(spec.clone(), dist, DEFAULT_MTU_BITS, stream(3, Domain::Link, 1));
        let floor = (dist * spec.delay_per_km_ms * 1e6 * (1.0 - 3.0 * spec.jitter_frac)).floor() as u64;
        for i in 0..2_000u64 {
            let send = i * 10_000_000_000;
            let out = link.transmit(send, 30_000, 29_000);
            assert!(out.delivered_at >= send + floor);
        }
        let s = link.stats();
        assert!(s.conserved(), "{s:?}");
        assert!(s.lost > 0 && s.corrupted > 0 && s.duplicates_discarded > 0 && s.reordered > 0);
    }

    #[test]
    fn window_accounting() {
        let mut link = Link::new(ideal(LinkType::Fiber1G), 0.0, DEFAULT_MTU_BITS, stream(1, Domain::Link, 0))
            .with_window(100, 200);
        link.transmit(50, 1_000, 900);
        link.transmit(150, 1_000, 900);
        link.transmit(200, 1_000, 900);
        assert_eq!(link.stats().window_payload_bits, 900);
        assert_eq!(link.stats().payload_bits, 2_700);
    }
}
