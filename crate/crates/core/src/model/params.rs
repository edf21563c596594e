use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Every knob that governs data generation and the offline query mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadParams {
    /// Sensors per volcano site.
    pub n_sensors: u32,
    /// Readings kept in each sensor's local ring buffer.
    pub buffer_size: u32,
    /// Readings combined into one aggregate record.
    pub n_agg: u32,
    /// Fraction of a site's sensors that must exceed before buffers are collected.
    pub quorum_ratio: f64,
    /// Bits per reading, summed over all channels.
    pub resolution_bits: u32,
    /// Channels per reading; `resolution_bits / resolution_channels` bits each.
    pub resolution_channels: u32,
    pub sampling_rate_hz: f64,
    /// Probability that a single reading exceeds its threshold.
    pub exceed_prob: f64,
    /// Span of data the inference model looks at, per site.
    pub lstm_window_s: f64,
    pub q_recent: f64,
    pub q_random: f64,
    pub q_scan: f64,
    pub n_clients: u32,
    /// Open-loop request rate of each offline client.
    pub request_rate_hz: f64,
    pub stale_threshold_s: f64,
    pub n_cloud: u32,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            n_sensors: 300,
            buffer_size: 1000,
            n_agg: 25,
            quorum_ratio: 0.2,
            resolution_bits: 3 * 64,
            resolution_channels: 3,
            sampling_rate_hz: 100.0,
            exceed_prob: 0.15,
            lstm_window_s: 10.0,
            q_recent: 0.5,
            q_random: 0.3,
            q_scan: 0.2,
            n_clients: 100,
            request_rate_hz: 1.0,
            stale_threshold_s: 5.0,
            n_cloud: 3,
        }
    }
}

/// Channels a reading can carry.
pub const MAX_CHANNELS: usize = 3;

impl WorkloadParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = |name: &str| format!("workload.{name}");
        for (name, v) in [
            ("n_sensors", self.n_sensors),
            ("buffer_size", self.buffer_size),
            ("n_agg", self.n_agg),
            ("n_clients", self.n_clients),
            ("n_cloud", self.n_cloud),
        ] {
            if v < 1 {
                return Err(ConfigError::invalid(f(name), "must be at least 1"));
            }
        }
        if self.resolution_channels < 1 || self.resolution_channels as usize > MAX_CHANNELS {
            return Err(ConfigError::invalid(
                f("resolution_channels"),
                format!("must be between 1 and {MAX_CHANNELS}"),
            ));
        }
        if self.n_agg > self.buffer_size {
            return Err(ConfigError::invalid(
                f("n_agg"),
                format!("{} exceeds buffer_size {}", self.n_agg, self.buffer_size),
            ));
        }
        for (name, v) in [
            ("sampling_rate_hz", self.sampling_rate_hz),
            ("request_rate_hz", self.request_rate_hz),
            ("lstm_window_s", self.lstm_window_s),
            ("stale_threshold_s", self.stale_threshold_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(f(name), format!("must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.exceed_prob) {
            return Err(ConfigError::invalid(
                f("exceed_prob"),
                format!("must lie in [0, 1], got {}", self.exceed_prob),
            ));
        }
        if !(self.quorum_ratio > 0.0 && self.quorum_ratio <= 1.0) {
            return Err(ConfigError::invalid(
                f("quorum_ratio"),
                format!("must lie in (0, 1], got {}", self.quorum_ratio),
            ));
        }
        for (name, v) in [
            ("q_recent", self.q_recent),
            ("q_random", self.q_random),
            ("q_scan", self.q_scan),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::invalid(f(name), format!("must lie in [0, 1], got {v}")));
            }
        }
        let mix = self.q_recent + self.q_random + self.q_scan;
        if (mix - 1.0).abs() > 1e-9 {
            return Err(ConfigError::invalid(
                "workload.q_recent+q_random+q_scan",
                format!("query mix must sum to 1, got {mix}"),
            ));
        }
        Ok(())
    }

    /// Bits carried per channel of one reading.
    pub fn bits_per_channel(&self) -> u32 {
        self.resolution_bits / self.resolution_channels.max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        WorkloadParams::default().validate().unwrap();
        assert_eq!(WorkloadParams::default().bits_per_channel(), 64);
    }

    #[test]
    fn rejects_bad_mix() {
        let p = WorkloadParams {
            q_scan: 0.1,
            ..Default::default()
        };
        let err = p.validate().unwrap_err();
        assert!(err.to_string().contains("sum to 1"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_fields() {
        let cases: Vec<(WorkloadParams, &str)> = vec![
            (WorkloadParams { exceed_prob: 1.5, ..Default::default() }, "exceed_prob"),
            (WorkloadParams { quorum_ratio: 0.0, ..Default::default() }, "quorum_ratio"),
            (WorkloadParams { n_agg: 2000, ..Default::default() }, "n_agg"),
            (WorkloadParams { n_sensors: 0, ..Default::default() }, "n_sensors"),
            (WorkloadParams { sampling_rate_hz: 0.0, ..Default::default() }, "sampling_rate_hz"),
        ];
        for (p, field) in cases {
            let err = p.validate().unwrap_err().to_string();
            assert!(err.contains(field), "{err} should mention {field}");
        }
    }
}
