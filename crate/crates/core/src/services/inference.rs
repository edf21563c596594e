use std::collections::{BTreeMap, VecDeque};

use log::warn;

use crate::netsim::{Nanos, NodeQueue};
use crate::records::{AggregateRecord, AnnotatedRecord};

/// Fixed-point scale of window z-values. Summing integers keeps the window
/// mean independent of insertion and eviction order.
pub const Z_SCALE: f64 = 4_294_967_296.0;

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Records of one site within the last `t_lstm` of generation time, ordered
/// by generation time.
#[derive(Debug, Clone, Default)]
pub struct SiteWindow {
    entries: VecDeque<(Nanos, i64)>,
    sum: i128,
}

impl SiteWindow {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn newest(&self) -> Option<Nanos> {
        self.entries.back().map(|e| e.0)
    }

    pub fn oldest(&self) -> Option<Nanos> {
        self.entries.front().map(|e| e.0)
    }

    /// Mean channel-0 z-score over the window (0 when empty).
    pub fn mean_z(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.sum as f64 / self.entries.len() as f64 / Z_SCALE
    }

    /// Generation times and z-values, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = (Nanos, f64)> + '_ {
        self.entries.iter().map(|&(t, z)| (t, z as f64 / Z_SCALE))
    }

    fn insert(&mut self, gen_time: Nanos, z: f64, span: Nanos) {
        let fixed = (z * Z_SCALE).round() as i64;
        let pos = self.entries.partition_point(|e| e.0 <= gen_time);
        self.entries.insert(pos, (gen_time, fixed));
        self.sum += i128::from(fixed);
        let newest = self.entries.back().map_or(0, |e| e.0);
        let horizon = newest.saturating_sub(span);
        while self
            .entries
            .front()
            .is_some_and(|e| e.0 <= horizon && newest >= span)
        {
            let (_, old) = self.entries.pop_front().unwrap();
            self.sum -= i128::from(old);
        }
    }
}

/// Maps a site window to an event probability in [0, 1].
pub trait Annotator: Send {
    fn probability(&self, window: &SiteWindow) -> f64;
}

/// Logistic over the window's mean channel-0 z-score.
#[derive(Debug, Clone, Copy)]
pub struct LogisticSurrogate {
    pub a: f64,
    pub b: f64,
}

impl Default for LogisticSurrogate {
    fn default() -> Self {
        LogisticSurrogate { a: 2.0, b: -4.0 }
    }
}

impl Annotator for LogisticSurrogate {
    fn probability(&self, window: &SiteWindow) -> f64 {
        logistic(self.a * window.mean_z() + self.b).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InferenceOutcome {
    Annotated {
        record: AnnotatedRecord,
        /// Probability exceeded the warning threshold.
        warning: bool,
    },
    Dropped,
}

/// Windowed annotation on the on-premise node.
pub struct InferenceService {
    pub node: NodeQueue,
    span: Nanos,
    c_inf: f64,
    warning_threshold: f64,
    annotator: Box<dyn Annotator>,
    windows: BTreeMap<u16, SiteWindow>,
    warnings: u64,
}

impl std::fmt::Debug for InferenceService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InferenceService")
            .field("node", &self.node.label)
            .field("span", &self.span)
            .field("warnings", &self.warnings)
            .finish_non_exhaustive()
    }
}

impl InferenceService {
    pub fn new(node: NodeQueue, span: Nanos, c_inf: f64, warning_threshold: f64) -> Self {
        Self::with_annotator(node, span, c_inf, warning_threshold, Box::new(LogisticSurrogate::default()))
    }

    pub fn with_annotator(
        node: NodeQueue,
        span: Nanos,
        c_inf: f64,
        warning_threshold: f64,
        annotator: Box<dyn Annotator>,
    ) -> Self {
        InferenceService {
            node,
            span,
            c_inf,
            warning_threshold,
            annotator,
            windows: BTreeMap::new(),
            warnings: 0,
        }
    }

    pub fn window(&self, site_id: u16) -> Option<&SiteWindow> {
        self.windows.get(&site_id)
    }

    pub fn warnings(&self) -> u64 {
        self.warnings
    }

    /// Appends the record to its site window, annotates it and charges
    /// `c_inf`. The annotation time is the service completion time.
    pub fn on_record(&mut self, now: Nanos, record: AggregateRecord) -> InferenceOutcome {
        let Some(done) = self.node.execute(now, self.c_inf) else {
            return InferenceOutcome::Dropped;
        };
        let window = self.windows.entry(record.site_id).or_default();
        window.insert(record.gen_time, record.channel_means[0], self.span);
        let p = self.annotator.probability(window);
        let warning = p > self.warning_threshold;
        if warning {
            self.warnings += 1;
            warn!(
                "event warning: site {} probability {:.3} at {} ns",
                record.site_id, p, done
            );
        }
        InferenceOutcome::Annotated {
            record: AnnotatedRecord {
                record,
                event_probability: p,
                inference_time: done,
            },
            warning,
        }
    }
}
