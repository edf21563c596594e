use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stability probe at a given edge resource scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub scale: f64,
    pub stable: bool,
    pub first_half_queue: f64,
    pub second_half_queue: f64,
    pub drops: u64,
}

impl ProbeRecord {
    /// Stable when the second-half time-averaged queue stays within 5% of
    /// the first half and nothing overflowed.
    pub fn evaluate(scale: f64, first_half_queue: f64, second_half_queue: f64, drops: u64) -> Self {
        ProbeRecord {
            scale,
            stable: drops == 0 && second_half_queue <= 1.05 * first_half_queue,
            first_half_queue,
            second_half_queue,
            drops,
        }
    }
}

/// Append-only probe log, optionally persisted as JSON lines so that an
/// interrupted search can resume without repeating probes.
#[derive(Debug, Default)]
pub struct ProbeLog {
    records: Vec<ProbeRecord>,
    file: Option<(PathBuf, File)>,
}

impl ProbeLog {
    pub fn in_memory() -> Self {
        ProbeLog::default()
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    records.push(serde_json::from_str(&line)?);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ProbeLog {
            records,
            file: Some((path.to_path_buf(), file)),
        })
    }

    pub fn records(&self) -> &[ProbeRecord] {
        &self.records
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    fn lookup(&self, scale: f64) -> Option<&ProbeRecord> {
        self.records.iter().find(|r| r.scale.to_bits() == scale.to_bits())
    }

    fn append(&mut self, rec: ProbeRecord) -> Result<()> {
        if let Some((_, f)) = &mut self.file {
            writeln!(f, "{}", serde_json::to_string(&rec)?)?;
            f.flush()?;
        }
        self.records.push(rec);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub min_scale: f64,
    /// Probes consulted by this search, in order.
    pub probes: Vec<ProbeRecord>,
    /// Probes actually executed (not served from the log).
    pub executed: usize,
    /// Upper bound on the number of probes for this bracket.
    pub probe_bound: usize,
}

fn table(probes: &[ProbeRecord]) -> String {
    let mut s = String::from("scale,stable,first_half_queue,second_half_queue,drops");
    for p in probes {
        s.push_str(&format!(
            "\n{},{},{:.6},{:.6},{}",
            p.scale, p.stable, p.first_half_queue, p.second_half_queue, p.drops
        ));
    }
    s
}

/// Bisection bound on the number of probes.
pub fn probe_bound(lo: f64, hi: f64, tol: f64) -> usize {
    let steps = ((hi - lo) / (lo * tol)).log2().ceil();
    steps.max(0.0) as usize + 2
}

/// Minimal stable edge resource scale in `[lo, hi]`, to relative tolerance
/// `tol`. `probe(scale)` runs a fresh experiment at that scale.
pub fn slo_search(
    mut probe: impl FnMut(f64) -> Result<ProbeRecord>,
    lo: f64,
    hi: f64,
    tol: f64,
    log: &mut ProbeLog,
) -> Result<SearchOutcome> {
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Search(format!("invalid bracket [{lo}, {hi}]")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Search(format!("tolerance must be > 0, got {tol}")));
    }
    let mut used: Vec<ProbeRecord> = Vec::new();
    let mut executed = 0;
    let mut run = |scale: f64, log: &mut ProbeLog, used: &mut Vec<ProbeRecord>| -> Result<bool> {
        let rec = match log.lookup(scale) {
            Some(r) => r.clone(),
            None => {
                let mut r = probe(scale)?;
                r.scale = scale;
                executed += 1;
                info!("probe scale {scale}: stable={} ({:.3} -> {:.3}, drops {})", r.stable, r.first_half_queue, r.second_half_queue, r.drops);
                log.append(r.clone())?;
                r
            }
        };
        used.push(rec.clone());
        let worst_stable = used.iter().filter(|p| p.stable).map(|p| p.scale).fold(f64::INFINITY, f64::min);
        if used.iter().any(|p| !p.stable && p.scale > worst_stable) {
            return Err(Error::Search(format!(
                "non-monotone stability observations:\n{}",
                table(used)
            )));
        }
        Ok(rec.stable)
    };

    if !run(hi, log, &mut used)? {
        // Probing lo as well reports a stable lower end as non-monotone.
        run(lo, log, &mut used)?;
        return Err(Error::Search(format!("unstable at the upper scale {hi}:\n{}", table(&used))));
    }
    let bound = probe_bound(lo, hi, tol);
    if run(lo, log, &mut used)? {
        return Ok(SearchOutcome {
            min_scale: lo,
            probes: used,
            executed,
            probe_bound: bound,
        });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol * a {
        let mid = 0.5 * (a + b);
        if run(mid, log, &mut used)? {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(SearchOutcome {
        min_scale: b,
        probes: used,
        executed,
        probe_bound: bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub rate: f64,
    pub utilization: f64,
    /// Every (rate, utilization) evaluated, in order.
    pub iterations: Vec<(f64, f64)>,
}

const MAX_CALIBRATION_STEPS: usize = 40;

/// Finds a per-client request rate at which `measure(rate)` (mean cloud
/// busy fraction) lies within `target ± tol`. Starts at `initial`, expands
/// by doubling up to `ceiling`, then refines by secant steps with a
/// bisection fallback.
pub fn calibrate_request_rate(
    mut measure: impl FnMut(f64) -> Result<f64>,
    initial: f64,
    target: f64,
    tol: f64,
    ceiling: f64,
) -> Result<Calibration> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Search(format!("target utilization must lie in (0, 1), got {target}")));
    }
    if !(tol > 0.0 && tol < target) {
        return Err(Error::Search(format!("tolerance must lie in (0, target), got {tol}")));
    }
    if !(initial > 0.0 && ceiling >= initial && ceiling.is_finite()) {
        return Err(Error::Search(format!("invalid rate range [{initial}, {ceiling}]")));
    }
    let mut iterations = Vec::new();
    let mut eval = |r: f64, iterations: &mut Vec<(f64, f64)>| -> Result<f64> {
        let u = measure(r)?;
        info!("calibration: rate {r} -> utilization {u:.4}");
        iterations.push((r, u));
        Ok(u)
    };
    let done = |r: f64, u: f64, iterations: Vec<(f64, f64)>| Calibration {
        rate: r,
        utilization: u,
        iterations,
    };

    let u0 = eval(initial, &mut iterations)?;
    if (u0 - target).abs() <= tol {
        return Ok(done(initial, u0, iterations));
    }
    let (mut lo, mut hi);
    if u0 < target {
        lo = (initial, u0);
        loop {
            let r = (lo.0 * 2.0).min(ceiling);
            let u = eval(r, &mut iterations)?;
            if (u - target).abs() <= tol {
                return Ok(done(r, u, iterations));
            }
            if u > target {
                hi = (r, u);
                break;
            }
            if r >= ceiling {
                let max = iterations.iter().map(|x| x.1).fold(0.0, f64::max);
                return Err(Error::Search(format!(
                    "target utilization {target} unreachable below rate ceiling {ceiling}; achieved max {max:.4}"
                )));
            }
            lo = (r, u);
        }
    } else {
        hi = (initial, u0);
        loop {
            let r = hi.0 / 2.0;
            if r < initial * 1e-9 {
                return Err(Error::Search(format!("utilization stays above {target} at every rate")));
            }
            let u = eval(r, &mut iterations)?;
            if (u - target).abs() <= tol {
                return Ok(done(r, u, iterations));
            }
            if u < target {
                lo = (r, u);
                break;
            }
            hi = (r, u);
        }
    }

    let mut last_side = 0i8;
    for _ in 0..MAX_CALIBRATION_STEPS {
        let secant = lo.0 + (target - lo.1) * (hi.0 - lo.0) / (hi.1 - lo.1);
        let r = if hi.1 > lo.1 && secant > lo.0 && secant < hi.0 && last_side.abs() < 2 {
            secant
        } else {
            0.5 * (lo.0 + hi.0)
        };
        let u = eval(r, &mut iterations)?;
        if (u - target).abs() <= tol {
            return Ok(done(r, u, iterations));
        }
        if u < target {
            lo = (r, u);
            last_side = if last_side < 0 { last_side - 1 } else { -1 };
        } else {
            hi = (r, u);
            last_side = if last_side > 0 { last_side + 1 } else { 1 };
        }
    }
    Err(Error::Search(format!(
        "calibration did not converge in {MAX_CALIBRATION_STEPS} steps; bracket [{}, {}]",
        lo.0, hi.0
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn threshold_probe(crossing: f64) -> impl FnMut(f64) -> Result<ProbeRecord> {
        move |s| Ok(ProbeRecord::evaluate(s, 1.0, if s > crossing { 1.0 } else { 2.0 }, 0))
    }

    #[test]
    fn stability_predicate() {
        assert!(ProbeRecord::evaluate(1.0, 10.0, 10.5, 0).stable);
        assert!(!ProbeRecord::evaluate(1.0, 10.0, 10.6, 0).stable);
        assert!(!ProbeRecord::evaluate(1.0, 10.0, 5.0, 1).stable);
        assert!(ProbeRecord::evaluate(1.0, 0.0, 0.0, 0).stable);
    }

    #[test]
    fn everything_stable_returns_lower_bound() {
        let out = slo_search(|s| Ok(ProbeRecord::evaluate(s, 0.0, 0.0, 0)), 0.1, 4.0, 0.05, &mut ProbeLog::in_memory()).unwrap();
        assert_eq!(out.min_scale, 0.1);
        assert_eq!(out.executed, 2);
    }

    #[test]
    fn converges_just_above_crossing_within_bound() {
        let out = slo_search(threshold_probe(1.0), 0.5, 2.0, 0.05, &mut ProbeLog::in_memory()).unwrap();
        assert!(out.min_scale > 1.0 && out.min_scale <= 1.05, "{}", out.min_scale);
        assert!(out.executed <= out.probe_bound, "{} > {}", out.executed, out.probe_bound);
        assert_eq!(out.probe_bound, probe_bound(0.5, 2.0, 0.05));
    }

    #[test]
    fn result_brackets_crossing_for_any_bracket() {
        for crossing in [0.73, 1.0, 1.9] {
            for (lo, hi) in [(0.25, 2.0), (0.5, 8.0), (0.7, 2.5), (0.1, 3.3)] {
                let out = slo_search(threshold_probe(crossing), lo, hi, 0.05, &mut ProbeLog::in_memory()).unwrap();
                assert!(out.min_scale > crossing && out.min_scale <= crossing * 1.05, "{crossing} {lo} {hi} -> {}", out.min_scale);
            }
        }
    }

    #[test]
    fn unstable_upper_bound_and_non_monotone_are_errors() {
        let err = slo_search(threshold_probe(5.0), 0.5, 2.0, 0.05, &mut ProbeLog::in_memory()).unwrap_err();
        assert!(err.to_string().contains("unstable at the upper scale"), "{err}");
        // Stable only below 1.0.
        let banded = |s: f64| Ok(ProbeRecord::evaluate(s, 1.0, if s < 1.0 { 1.0 } else { 2.0 }, 0));
        let err = slo_search(banded, 0.5, 2.0, 0.05, &mut ProbeLog::in_memory()).unwrap_err();
        assert!(err.to_string().contains("non-monotone"), "{err}");
        assert!(err.to_string().contains("scale,stable"), "{err}");
    }

    #[test]
    fn resumes_from_persisted_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probes.jsonl");
        let full = slo_search(threshold_probe(1.0), 0.5, 2.0, 0.05, &mut ProbeLog::open(&path).unwrap()).unwrap();
        // Simulate an interruption after three probes.
        let lines: Vec<String> = std::fs::read_to_string(&path).unwrap().lines().take(3).map(String::from).collect();
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let mut calls = 0;
        let resumed = slo_search(
            |s| {
                calls += 1;
                threshold_probe(1.0)(s)
            },
            0.5,
            2.0,
            0.05,
            &mut ProbeLog::open(&path).unwrap(),
        )
        .unwrap();
        assert_eq!(resumed.min_scale, full.min_scale);
        assert_eq!(calls, full.executed - 3);
        assert_eq!(ProbeLog::open(&path).unwrap().records().len(), full.executed);
    }

    #[test]
    fn linear_utilization_calibrates_to_closed_form() {
        let k = 0.0123;
        let out = calibrate_request_rate(|r| Ok((k * r).min(1.0)), 1.0, 0.8, 0.05, 1e6).unwrap();
        assert!((out.utilization - 0.8).abs() <= 0.05);
        assert!((out.rate - 0.8 / k).abs() <= 0.05 / k);
        let again = calibrate_request_rate(|r| Ok((k * r).min(1.0)), 1.0, 0.8, 0.05, 1e6).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn calibration_from_above_and_saturating_curve() {
        let out = calibrate_request_rate(|r| Ok(1.0 - (-r / 50.0).exp()), 1000.0, 0.8, 0.01, 1e6).unwrap();
        assert!((out.utilization - 0.8).abs() <= 0.01);
    }

    #[test]
    fn zero_cost_is_unreachable_and_degenerate_targets_rejected() {
        let err = calibrate_request_rate(|_| Ok(0.0), 1.0, 0.8, 0.05, 1e4).unwrap_err();
        assert!(err.to_string().contains("unreachable"), "{err}");
        assert!(err.to_string().contains("achieved max 0.0000"), "{err}");
        assert!(calibrate_request_rate(|_| Ok(0.0), 1.0, 0.0, 0.05, 1e4).is_err());
        assert!(calibrate_request_rate(|_| Ok(0.0), 1.0, 1.0, 0.05, 1e4).is_err());
    }
}
