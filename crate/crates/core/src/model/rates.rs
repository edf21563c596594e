//! Closed-form data rates of the sensor workload.
//!
//! A site's gateway collects every sensor's buffer when strictly more than
//! `ceil(N * y)` of its `N` sensors exceed their threshold within one sampling
//! tick, so the per-sensor event traffic is `P[X > ceil(N*y)] * r * S_b * f`
//! with `X ~ Binomial(N, p)`, on top of the aggregate stream `r * f / N_agg`.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

use super::WorkloadParams;

/// Raw reading rate of one sensor in bits per second.
pub fn sensor_raw_rate(params: &WorkloadParams) -> f64 {
    params.resolution_bits as f64 * params.sampling_rate_hz
}

/// `ceil(n * y)`, tolerant of representation error in `y` (e.g. 30 * 0.1).
pub fn quorum_threshold(n: u32, y: f64) -> u32 {
    let x = n as f64 * y;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest as u32
    } else {
        x.ceil() as u32
    }
}

/// Probability that more than `ceil(n * y)` of `n` sensors exceed, each
/// independently with probability `p`.
///
/// The binomial terms are built in log space with the ratio recurrence
/// `pmf(k+1)/pmf(k) = (n-k)/(k+1) * p/(1-p)` and summed over the upper tail
/// with a log-sum-exp, so `n` in the hundreds neither overflows nor cancels.
pub fn quorum_probability(n: u32, y: f64, p: f64) -> Result<f64, ModelError> {
    if n < 1 {
        return Err(ModelError::InvalidParameter {
            name: "n",
            reason: "must be at least 1".into(),
        });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(ModelError::InvalidParameter {
            name: "p",
            reason: format!("{p} not in [0, 1]"),
        });
    }
    if !(y > 0.0 && y <= 1.0) {
        return Err(ModelError::InvalidParameter {
            name: "y",
            reason: format!("{y} not in (0, 1]"),
        });
    }
    let m = quorum_threshold(n, y);
    if m >= n {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }

    let log_odds = p.ln() - (-p).ln_1p();
    let mut log_pmf = Vec::with_capacity(n as usize + 1);
    let mut cur = n as f64 * (-p).ln_1p();
    log_pmf.push(cur);
    for k in 0..n {
        cur += ((n - k) as f64 / (k + 1) as f64).ln() + log_odds;
        log_pmf.push(cur);
    }
    // Sum whichever tail is smaller and complement if needed; the smaller
    // tail carries only relative rounding error.
    let (lower, upper) = log_pmf.split_at((m + 1) as usize);
    let log_upper = log_sum_exp(upper);
    let q = if log_upper < 0.5f64.ln() {
        log_upper.exp()
    } else {
        1.0 - log_sum_exp(lower).exp()
    };
    Ok(q.clamp(0.0, 1.0))
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = terms.iter().map(|l| (l - max).exp()).sum();
    max + sum.ln()
}

/// Mean bits per second a single sensor sends to its gateway: the aggregate
/// stream plus the expected buffer-collection traffic.
pub fn mean_sensor_gateway_bandwidth(params: &WorkloadParams) -> f64 {
    let r = params.resolution_bits as f64;
    let f = params.sampling_rate_hz;
    let aggregate = r * f / params.n_agg as f64;
    let q = quorum_probability(params.n_sensors, params.quorum_ratio, params.exceed_prob)
        .unwrap_or(0.0);
    aggregate + q * r * params.buffer_size as f64 * f
}

/// Mean bits per second arriving at one site's gateway.
pub fn edge_ingress_rate(params: &WorkloadParams) -> f64 {
    params.n_sensors as f64 * mean_sensor_gateway_bandwidth(params)
}

/// Roll-up of every analytical rate for a workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub sensor_raw_bps: f64,
    pub quorum_threshold: u32,
    pub quorum_probability: f64,
    pub mean_sensor_gateway_bps: f64,
    pub edge_ingress_bps: f64,
    /// Aggregate records per second produced by one sensor.
    pub aggregate_rate_per_sensor: f64,
    pub aggregate_rate_per_site: f64,
    /// Buffer collections per second at one site.
    pub collection_rate_per_site: f64,
    /// Records per second inserted into the cloud store over all sites.
    pub total_insert_rate: f64,
    pub query_rate: f64,
    pub recent_query_rate: f64,
    pub random_query_rate: f64,
    pub scan_query_rate: f64,
    /// Records one site's inference window holds in steady state.
    pub inference_window_records: f64,
}

pub fn derived_rates(params: &WorkloadParams, n_sites: usize) -> RateSummary {
    let q = quorum_probability(params.n_sensors, params.quorum_ratio, params.exceed_prob)
        .unwrap_or(0.0);
    let per_sensor = params.sampling_rate_hz / params.n_agg as f64;
    let per_site = per_sensor * params.n_sensors as f64;
    let query_rate = params.n_clients as f64 * params.request_rate_hz;
    RateSummary {
        sensor_raw_bps: sensor_raw_rate(params),
        quorum_threshold: quorum_threshold(params.n_sensors, params.quorum_ratio),
        quorum_probability: q,
        mean_sensor_gateway_bps: mean_sensor_gateway_bandwidth(params),
        edge_ingress_bps: edge_ingress_rate(params),
        aggregate_rate_per_sensor: per_sensor,
        aggregate_rate_per_site: per_site,
        collection_rate_per_site: q * params.sampling_rate_hz,
        total_insert_rate: per_site * n_sites as f64,
        query_rate,
        recent_query_rate: query_rate * params.q_recent,
        random_query_rate: query_rate * params.q_random,
        scan_query_rate: query_rate * params.q_scan,
        inference_window_records: params.lstm_window_s * per_site,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        ((a - b) / b).abs() <= rel
    }

    /// Exhaustive enumeration of all 2^n exceed patterns.
    fn enumerate(n: u32, y: f64, p: f64) -> f64 {
        let m = quorum_threshold(n, y);
        let weight: Vec<f64> = (0..=n)
            .map(|k| p.powi(k as i32) * (1.0 - p).powi((n - k) as i32))
            .collect();
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for mask in 0u32..(1u32 << n) {
            let k = mask.count_ones();
            if k > m {
                // Neumaier summation keeps 2^20 terms accurate to ~1e-16.
                let w = weight[k as usize];
                let t = sum + w;
                if sum.abs() >= w.abs() {
                    comp += (sum - t) + w;
                } else {
                    comp += (w - t) + sum;
                }
                sum = t;
            }
        }
        sum + comp
    }

    #[test]
    fn raw_rate_examples() {
        let d = WorkloadParams::default();
        assert_eq!(sensor_raw_rate(&d), 19_200.0);
        let zero = WorkloadParams { resolution_bits: 0, ..d.clone() };
        assert_eq!(sensor_raw_rate(&zero), 0.0);
        let unit = WorkloadParams { resolution_bits: 64, sampling_rate_hz: 1.0, ..d };
        assert_eq!(sensor_raw_rate(&unit), 64.0);
    }

    #[test]
    fn threshold_is_robust_to_float_error() {
        assert_eq!(quorum_threshold(300, 0.2), 60);
        assert_eq!(quorum_threshold(30, 0.1), 3);
        assert_eq!(quorum_threshold(20, 0.25), 5);
        assert_eq!(quorum_threshold(7, 0.5), 4);
        assert_eq!(quorum_threshold(10, 1.0), 10);
    }

    #[test]
    fn quorum_edge_cases() {
        assert_eq!(quorum_probability(300, 0.2, 0.0).unwrap(), 0.0);
        assert_eq!(quorum_probability(300, 0.2, 1.0).unwrap(), 1.0);
        assert_eq!(quorum_probability(10, 1.0, 1.0).unwrap(), 0.0);
        assert!(quorum_probability(0, 0.2, 0.1).is_err());
        assert!(quorum_probability(10, 0.0, 0.1).is_err());
        assert!(quorum_probability(10, 0.2, 1.1).is_err());
    }

    #[test]
    fn quorum_matches_enumeration_example() {
        let got = quorum_probability(20, 0.25, 0.3).unwrap();
        let want = enumerate(20, 0.25, 0.3);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn quorum_monotone_in_p_and_y() {
        let ps: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        for n in [5u32, 20, 300] {
            for y in [0.1, 0.2, 0.5] {
                let vals: Vec<f64> = ps.iter().map(|&p| quorum_probability(n, y, p).unwrap()).collect();
                assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-14), "n={n} y={y} {vals:?}");
            }
            for p in [0.1, 0.15, 0.5] {
                let vals: Vec<f64> = (1..=20)
                    .map(|i| quorum_probability(n, i as f64 / 20.0, p).unwrap())
                    .collect();
                assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-14), "n={n} p={p} {vals:?}");
            }
        }
    }

    #[test]
    fn published_bandwidths() {
        let d = WorkloadParams::default();
        assert!(close(mean_sensor_gateway_bandwidth(&d), 149_500.0, 0.01));
        assert!(close(edge_ingress_rate(&d), 44.84e6, 0.01));
    }

    #[test]
    fn aggregate_only_when_nothing_exceeds() {
        let d = WorkloadParams { exceed_prob: 0.0, ..Default::default() };
        assert_eq!(mean_sensor_gateway_bandwidth(&d), 768.0);
        assert_eq!(edge_ingress_rate(&d), 230_400.0);
        let one = WorkloadParams { n_sensors: 1, ..Default::default() };
        assert_eq!(edge_ingress_rate(&one), mean_sensor_gateway_bandwidth(&one));
    }

    #[test]
    fn composed_bandwidth_matches_oracle() {
        let p = WorkloadParams {
            n_sensors: 20,
            quorum_ratio: 0.25,
            exceed_prob: 0.3,
            ..Default::default()
        };
        let want = 768.0 + enumerate(20, 0.25, 0.3) * 192.0 * 1000.0 * 100.0;
        let got = mean_sensor_gateway_bandwidth(&p);
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    }

    #[test]
    fn derived_defaults() {
        let r = derived_rates(&WorkloadParams::default(), 6);
        assert_eq!(r.aggregate_rate_per_sensor, 4.0);
        assert_eq!(r.query_rate, 100.0);
        assert!((r.scan_query_rate - 20.0).abs() < 1e-12);
        assert_eq!(r.total_insert_rate, 7200.0);
        assert_eq!(r.inference_window_records, 12_000.0);
        // Pure: repeated evaluation is identical.
        assert_eq!(r, derived_rates(&WorkloadParams::default(), 6));
    }
}
