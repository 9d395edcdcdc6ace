//! Sudden drift detection over a stream of traces.
//!
//! Two adjacent windows of `w` runs slide over the stream. Each window keeps
//! its own directly-precedes counts, so a trace is converted into a run under
//! the concurrency relation of the window it currently sits in. Every step
//! runs a chi-square test of independence on the run frequencies of the two
//! windows; a drift is confirmed once `φ = ⌈w / phi_divisor⌉` consecutive
//! tests stay below the threshold.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::concurrency::ConcurrencyState;
use crate::error::ConfigError;
use crate::log::Trace;
use crate::run::{run_key, RunInterner};
use crate::scalar::Scalar;
use crate::stats::{chi2_independence_counts, min_window_for_test};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DetectorConfig<T> {
    /// Initial size of each of the two windows, in traces.
    pub init_window: usize,
    /// Trace buffer capacity; defaults to `20 · init_window`.
    pub max_buffer: Option<usize>,
    pub chi_threshold: T,
    /// φ = ⌈w / phi_divisor⌉.
    pub phi_divisor: usize,
    /// Lower bound for the adaptive window. When absent it is derived from
    /// the first detection window with [`min_window_for_test`], capped at
    /// `init_window`.
    pub min_window: Option<usize>,
    /// Upper bound for the adaptive window; defaults to `max_buffer / 2`.
    pub max_window: Option<usize>,
    /// Resize windows by the evolution ratio of distinct runs.
    pub adaptive: bool,
}

impl<T: Scalar> Default for DetectorConfig<T> {
    fn default() -> Self {
        DetectorConfig {
            init_window: 100,
            max_buffer: None,
            chi_threshold: T::lit(0.05),
            phi_divisor: 3,
            min_window: None,
            max_window: None,
            adaptive: true,
        }
    }
}

impl<T: Scalar> DetectorConfig<T> {
    pub fn max_buffer(&self) -> usize {
        self.max_buffer.unwrap_or(20 * self.init_window)
    }

    pub fn max_window(&self) -> usize {
        self.max_window.unwrap_or(self.max_buffer() / 2)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.init_window == 0 {
            return bad("init_window must be positive".into());
        }
        if self.phi_divisor == 0 {
            return bad("phi_divisor must be positive".into());
        }
        if !(self.chi_threshold > T::zero() && self.chi_threshold < T::one()) {
            return bad(format!("threshold {} outside (0, 1)", self.chi_threshold));
        }
        if let Some(min) = self.min_window {
            if min == 0 || min > self.init_window {
                return bad(format!(
                    "min_window {min} must lie in [1, init_window = {}]",
                    self.init_window
                ));
            }
        }
        if self.max_window() < self.init_window {
            return bad(format!(
                "max_window {} below init_window {}",
                self.max_window(),
                self.init_window
            ));
        }
        if 2 * self.max_window() > self.max_buffer() {
            return bad(format!(
                "buffer {} cannot hold two windows of {}",
                self.max_buffer(),
                self.max_window()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuddenDrift {
    /// Stream index of the trace that produced the first sub-threshold test.
    pub position: usize,
    /// Start of the detection window at that first test.
    pub juxtaposition: usize,
    /// Stream index of the trace whose test confirmed the drift.
    pub confirmed_at: usize,
    /// `confirmed_at − position`.
    pub delay: usize,
    /// Window size when the candidate was opened.
    pub window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PValue<T> {
    pub stream_index: usize,
    pub p_value: T,
    pub window_size: usize,
}

/// `clamp(round_half_up(w · new / prev), min, max)`.
pub fn adapt_window(prev_distinct: usize, new_distinct: usize, w: usize, min: usize, max: usize) -> usize {
    materialize(evolve(w as f64, prev_distinct, new_distinct), min, max)
}

/// Scales a window size by the evolution ratio `new / prev`.
fn evolve<T: Scalar>(size: T, prev_distinct: usize, new_distinct: usize) -> T {
    assert!(prev_distinct >= 1, "previous composite window has no runs");
    size * T::from_size(new_distinct) / T::from_size(prev_distinct)
}

/// Rounds half-up and clamps.
fn materialize<T: Scalar>(size: T, min: usize, max: usize) -> usize {
    let rounded = (size + T::lit(0.5)).floor();
    if rounded >= T::from_size(max) {
        max
    } else {
        rounded.to_usize().unwrap_or(min).clamp(min, max)
    }
}

/// Traces of the stream between two drift points. Long intervals keep only
/// the `cap` traces nearest to each end.
#[derive(Debug, Clone, Default)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
    pub traces: Vec<Arc<Trace>>,
}

impl Interval {
    pub fn from_traces(start: usize, traces: Vec<Trace>) -> Self {
        Interval {
            start,
            end: start + traces.len(),
            traces: traces.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn is_truncated(&self) -> bool {
        self.traces.len() < self.len()
    }
}

#[derive(Debug)]
struct Segment {
    start: usize,
    end: usize,
    cap: usize,
    head: Vec<Arc<Trace>>,
    tail: VecDeque<(usize, Arc<Trace>)>,
}

impl Segment {
    fn new(start: usize, cap: usize) -> Self {
        Segment {
            start,
            end: start,
            cap,
            head: Vec::new(),
            tail: VecDeque::new(),
        }
    }

    fn push(&mut self, trace: Arc<Trace>) {
        let idx = self.end;
        self.end += 1;
        if self.head.len() < self.cap {
            self.head.push(trace);
        } else {
            self.tail.push_back((idx, trace));
            if self.tail.len() > self.cap {
                self.tail.pop_front();
            }
        }
    }

    fn entries(&self) -> impl Iterator<Item = (usize, &Arc<Trace>)> {
        self.head
            .iter()
            .enumerate()
            .map(|(i, t)| (self.start + i, t))
            .chain(self.tail.iter().map(|(i, t)| (*i, t)))
    }

    /// Closes `[start, at)` and keeps `[at, end)` as the open segment.
    fn split(&mut self, at: usize) -> Interval {
        let mut rest = Segment::new(at, self.cap);
        let mut closed = Vec::new();
        for (idx, t) in self.entries() {
            if idx < at {
                closed.push(Arc::clone(t));
            } else {
                rest.end = idx;
                rest.push(Arc::clone(t));
            }
        }
        rest.end = self.end;
        let interval = Interval {
            start: self.start,
            end: at,
            traces: closed,
        };
        *self = rest;
        interval
    }

    fn close(&mut self) -> Interval {
        let end = self.end;
        self.split(end)
    }
}

const PENDING: u32 = u32::MAX;

/// One of the two sliding windows: its traces, their runs, run frequencies
/// and the directly-precedes counts that induce those runs.
#[derive(Debug, Default)]
struct Window {
    start: usize,
    traces: VecDeque<Arc<Trace>>,
    runs: VecDeque<u32>,
    counts: HashMap<u32, u64>,
    state: ConcurrencyState,
    converted_at: Option<u64>,
}

impl Window {
    fn end(&self) -> usize {
        self.start + self.traces.len()
    }

    fn clear(&mut self) {
        *self = Window::default();
    }

    fn uncount(&mut self, run: u32) {
        if run == PENDING {
            return;
        }
        let c = self.counts.get_mut(&run).expect("counted run");
        *c -= 1;
        if *c == 0 {
            self.counts.remove(&run);
        }
    }

    fn convert(&mut self, idx: usize, interner: &mut RunInterner) {
        let id = interner.intern(run_key(&self.traces[idx], &self.state));
        self.runs[idx] = id;
        *self.counts.entry(id).or_insert(0) += 1;
    }

    /// Moves the window to `[start, end)`, reading entering traces from
    /// `buffer` (which starts at stream index `buffer_start`).
    fn slide_to(
        &mut self,
        start: usize,
        end: usize,
        buffer: &VecDeque<Arc<Trace>>,
        buffer_start: usize,
        interner: &mut RunInterner,
    ) {
        let at = |i: usize| Arc::clone(&buffer[i - buffer_start]);
        if self.traces.is_empty() || start >= self.end() || end <= self.start {
            self.clear();
            self.start = start;
        }
        while self.start < start {
            let t = self.traces.pop_front().expect("non-empty");
            self.state.remove_trace(&t).expect("trace was added");
            let r = self.runs.pop_front().expect("aligned");
            self.uncount(r);
            self.start += 1;
        }
        while self.end() > end {
            let t = self.traces.pop_back().expect("non-empty");
            self.state.remove_trace(&t).expect("trace was added");
            let r = self.runs.pop_back().expect("aligned");
            self.uncount(r);
        }
        let mut front_added = 0;
        while self.start > start {
            self.start -= 1;
            let t = at(self.start);
            self.state.add_trace(&t);
            self.traces.push_front(t);
            self.runs.push_front(PENDING);
            front_added += 1;
        }
        let mut back_added = 0;
        while self.end() < end {
            let t = at(self.end());
            self.state.add_trace(&t);
            self.traces.push_back(t);
            self.runs.push_back(PENDING);
            back_added += 1;
        }

        let n = self.traces.len();
        if self.converted_at != Some(self.state.version()) {
            // the relation changed: every run in the window is re-derived
            self.counts.clear();
            for i in 0..n {
                self.convert(i, interner);
            }
            self.converted_at = Some(self.state.version());
        } else {
            for i in (0..front_added).chain(n - back_added..n) {
                self.convert(i, interner);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    d_trace: usize,
    juxtaposition: usize,
    d_len: usize,
    phi: usize,
    window: usize,
}

/// A confirmed drift together with the interval it closes.
#[derive(Debug, Clone)]
pub struct DriftEvent {
    pub drift: SuddenDrift,
    /// Traces from the previous drift (or stream start) up to `drift.position`.
    pub before: Interval,
}

/// Streaming sudden drift detector. Feed traces in completion order with
/// [`observe`](Self::observe).
#[derive(Debug)]
pub struct SuddenDetector<T: Scalar> {
    cfg: DetectorConfig<T>,
    max_buffer: usize,
    max_window: usize,
    min_window: Option<usize>,
    w: usize,
    buffer: VecDeque<Arc<Trace>>,
    buffer_start: usize,
    observed: usize,
    interner: RunInterner,
    reference: Window,
    detection: Window,
    prev_distinct: Option<usize>,
    /// Window size before rounding and clamping. Successive evolution
    /// ratios multiply here so that a run entering and later leaving the
    /// composite window cancels out, even at the clamp bounds.
    target: T,
    candidate: Option<Candidate>,
    p_series: Vec<PValue<T>>,
    segment: Segment,
    events: VecDeque<DriftEvent>,
    drifts: Vec<SuddenDrift>,
    inapplicable: usize,
}

impl<T: Scalar> SuddenDetector<T> {
    pub fn new(cfg: DetectorConfig<T>) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let max_buffer = cfg.max_buffer();
        Ok(SuddenDetector {
            max_window: cfg.max_window(),
            min_window: cfg.min_window,
            w: cfg.init_window,
            max_buffer,
            buffer: VecDeque::with_capacity(max_buffer),
            buffer_start: 0,
            observed: 0,
            interner: RunInterner::default(),
            reference: Window::default(),
            detection: Window::default(),
            prev_distinct: None,
            target: T::from_size(cfg.init_window),
            candidate: None,
            p_series: Vec::new(),
            segment: Segment::new(0, max_buffer),
            events: VecDeque::new(),
            drifts: Vec::new(),
            inapplicable: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &DetectorConfig<T> {
        &self.cfg
    }

    pub fn window(&self) -> usize {
        self.w
    }

    pub fn observed(&self) -> usize {
        self.observed
    }

    pub fn p_series(&self) -> &[PValue<T>] {
        &self.p_series
    }

    pub fn drifts(&self) -> &[SuddenDrift] {
        &self.drifts
    }

    /// Tests that could not run (single category) and counted as p = 1.
    pub fn inapplicable_tests(&self) -> usize {
        self.inapplicable
    }

    /// Distinct runs interned so far.
    pub fn distinct_runs(&self) -> usize {
        self.interner.len()
    }

    /// Next confirmed drift with the interval preceding it.
    pub fn pop_event(&mut self) -> Option<DriftEvent> {
        self.events.pop_front()
    }

    /// Closes the trailing interval after the last drift.
    pub fn finish(&mut self) -> Interval {
        self.segment.close()
    }

    pub fn observe(&mut self, trace: impl Into<Arc<Trace>>) -> Option<SuddenDrift> {
        let trace = trace.into();
        let index = self.observed;
        self.observed += 1;
        if self.buffer.len() == self.max_buffer {
            self.buffer.pop_front();
            self.buffer_start += 1;
        }
        self.buffer.push_back(Arc::clone(&trace));
        self.segment.push(trace);

        let w = self.w;
        if self.buffer.len() < 2 * w {
            return None;
        }
        let end = self.observed;
        self.reference.slide_to(
            end - 2 * w,
            end - w,
            &self.buffer,
            self.buffer_start,
            &mut self.interner,
        );
        self.detection.slide_to(
            end - w,
            end,
            &self.buffer,
            self.buffer_start,
            &mut self.interner,
        );
        debug_assert_eq!(self.reference.traces.len(), w);
        debug_assert_eq!(self.detection.traces.len(), w);

        let min_window = *self.min_window.get_or_insert_with(|| {
            let counts: Vec<u64> = self.detection.counts.values().copied().collect();
            min_window_for_test(&counts).clamp(1, self.cfg.init_window)
        });

        // a fixed category order keeps the floating point sum reproducible
        let mut categories: Vec<u32> = self
            .reference
            .counts
            .keys()
            .chain(self.detection.counts.keys())
            .copied()
            .collect();
        categories.sort_unstable();
        categories.dedup();
        let distinct = categories.len();
        let rows = categories.iter().map(|id| {
            (
                self.reference.counts.get(id).copied().unwrap_or(0),
                self.detection.counts.get(id).copied().unwrap_or(0),
            )
        });
        let p_value = match chi2_independence_counts::<T>(rows) {
            Ok(outcome) => outcome.p_value,
            Err(err) => {
                self.inapplicable += 1;
                debug!("trace {index}: {err}; treated as p = 1");
                T::one()
            }
        };
        self.p_series.push(PValue {
            stream_index: index,
            p_value,
            window_size: w,
        });

        let drop = p_value < self.cfg.chi_threshold;
        if self.cfg.adaptive {
            if let Some(prev) = self.prev_distinct {
                self.target = evolve(self.target, prev, distinct);
            }
            // a pending candidate keeps the window it was latched with
            if !drop {
                self.w = materialize(self.target, min_window, self.max_window);
            }
        }
        self.prev_distinct = Some(distinct);

        if drop {
            let divisor = self.cfg.phi_divisor;
            let c = self.candidate.get_or_insert(Candidate {
                d_trace: index,
                juxtaposition: end - w,
                d_len: 0,
                phi: w.div_ceil(divisor),
                window: w,
            });
            c.d_len += 1;
            if c.d_len == c.phi {
                let c = *c;
                return Some(self.confirm(c, index));
            }
        } else {
            self.candidate = None;
        }
        None
    }

    /// Reports the drift and restarts both windows at its position and at the
    /// initial size, so the next test compares populations drawn entirely
    /// after the drift.
    fn confirm(&mut self, c: Candidate, index: usize) -> SuddenDrift {
        let drift = SuddenDrift {
            position: c.d_trace,
            juxtaposition: c.juxtaposition,
            confirmed_at: index,
            delay: index - c.d_trace,
            window: c.window,
        };
        debug!("sudden drift {drift:?}");
        self.candidate = None;
        while self.buffer_start < drift.position && !self.buffer.is_empty() {
            self.buffer.pop_front();
            self.buffer_start += 1;
        }
        self.reference.clear();
        self.detection.clear();
        self.target = T::from_size(self.cfg.init_window);
        self.w = self.cfg.init_window;
        self.prev_distinct = None;
        let before = self.segment.split(drift.position);
        self.events.push_back(DriftEvent { drift, before });
        self.drifts.push(drift);
        drift
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(labels: &[&str]) -> Trace {
        Trace::from_labels("c", labels)
    }

    fn fixed(w: usize, phi_divisor: usize) -> DetectorConfig<f64> {
        DetectorConfig {
            init_window: w,
            phi_divisor,
            adaptive: false,
            ..Default::default()
        }
    }

    #[test]
    fn adapt_window_examples() {
        assert_eq!(adapt_window(10, 10, 100, 40, 1000), 100);
        assert_eq!(adapt_window(10, 12, 100, 40, 1000), 120);
        assert_eq!(adapt_window(10, 1, 100, 40, 1000), 40);
        assert_eq!(adapt_window(10, 30, 100, 40, 200), 200);
        // half-up rounding: 100 * 3 / 8 = 37.5
        assert_eq!(adapt_window(8, 3, 100, 1, 1000), 38);
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::<f64>::default().validate().is_ok());
        let mut c = DetectorConfig::<f64>::default();
        c.max_buffer = Some(150);
        assert!(c.validate().is_err());
        let mut c = DetectorConfig::<f64>::default();
        c.min_window = Some(200);
        assert!(c.validate().is_err());
        let mut c = DetectorConfig::<f64>::default();
        c.chi_threshold = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn identical_runs_never_drift() {
        let mut d = SuddenDetector::new(fixed(10, 3)).unwrap();
        for _ in 0..100 {
            assert!(d.observe(t(&["a", "b", "c"])).is_none());
        }
        assert_eq!(d.p_series().len(), 100 - 19);
        assert!(d.p_series().iter().all(|p| p.p_value == 1.0));
        assert!(d.drifts().is_empty());
    }

    #[test]
    fn abrupt_switch_is_confirmed_after_phi_tests() {
        // 20 traces of run R1 then 30 of run R2; fixed w = 10, φ = ⌈10/3⌉ = 4
        let mut d = SuddenDetector::new(fixed(10, 3)).unwrap();
        let mut found = Vec::new();
        for i in 0..50 {
            let tr = if i < 20 { t(&["a", "b"]) } else { t(&["a", "c"]) };
            found.extend(d.observe(tr));
        }
        assert_eq!(found.len(), 1);
        let drift = found[0];
        // hand trace: ref{R1:10}, det{R1:10-k, R2:k}; the statistic is 20k/(20-k),
        // first below 0.05 at k = 4, i.e. stream index 23
        assert_eq!(drift.position, 23);
        assert_eq!(drift.juxtaposition, 14);
        assert_eq!(drift.confirmed_at, 26);
        assert_eq!(drift.delay, 3);
        assert!(drift.position.abs_diff(20) <= 4);
        let p_at = |i: usize| d.p_series().iter().find(|p| p.stream_index == i).unwrap().p_value;
        assert!(p_at(22) >= 0.05);
        assert!(p_at(23) < 0.05);
        // table ref{R1:10}, det{R2:10} happens at index 29 in the unbroken stream;
        // after the reset the windows refill with R2 only
        assert!(d.p_series().iter().filter(|p| p.stream_index > 26).all(|p| p.p_value == 1.0));
    }

    #[test]
    fn window_holds_during_candidate_and_restarts_after_drift() {
        let cfg = DetectorConfig {
            init_window: 10,
            min_window: Some(5),
            ..Default::default()
        };
        let mut d = SuddenDetector::<f64>::new(cfg).unwrap();
        let tails = ["c", "d", "e", "f", "g"];
        let mut found = Vec::new();
        for i in 0..60 {
            let tr = if i < 20 { t(&["a", "b"]) } else { t(&["a", tails[i % 5]]) };
            found.extend(d.observe(tr));
        }
        let drift = found[0];
        let series = d.p_series();
        let pending: Vec<_> = series
            .iter()
            .filter(|p| p.stream_index >= drift.position && p.stream_index <= drift.confirmed_at)
            .collect();
        assert!(pending.iter().all(|p| p.p_value < 0.05 && p.window_size == drift.window));
        let next = series.iter().find(|p| p.stream_index > drift.confirmed_at).unwrap();
        assert_eq!(next.window_size, 10);
    }

    #[test]
    fn oscillation_resets_candidate() {
        // a short burst of R2 inside a stable R1 stream; φ = w needs ten
        // consecutive low tests
        let mut d = SuddenDetector::new(fixed(10, 1)).unwrap();
        let mut drifts = 0;
        for i in 0..80 {
            let tr = if (30..34).contains(&i) { t(&["a", "c"]) } else { t(&["a", "b"]) };
            drifts += d.observe(tr).is_some() as usize;
        }
        assert_eq!(drifts, 0);
        assert_eq!(d.p_series().len(), 80 - 19);
        let mut longest = 0;
        let mut current = 0;
        for p in d.p_series() {
            current = if p.p_value < 0.05 { current + 1 } else { 0 };
            longest = longest.max(current);
        }
        assert!(longest > 0 && longest < 10, "{longest}");
    }

    #[test]
    fn windows_track_relation_changes() {
        // b and c become concurrent only once both orders sit in one window
        let mut d = SuddenDetector::new(fixed(5, 3)).unwrap();
        for i in 0..40 {
            let tr = if i % 2 == 0 { t(&["a", "b", "c", "d"]) } else { t(&["a", "c", "b", "d"]) };
            assert!(d.observe(tr).is_none());
        }
        assert!(d.p_series().iter().all(|p| p.p_value == 1.0));
        assert_eq!(d.inapplicable_tests(), d.p_series().len());
    }

    #[test]
    fn window_slide_matches_rebuild() {
        let traces: Vec<Arc<Trace>> = (0..60)
            .map(|i| {
                Arc::new(match i % 7 {
                    0 | 3 => t(&["a", "c", "b"]),
                    1 => t(&["a", "b", "c"]),
                    2 => t(&["x", "y"]),
                    _ => t(&["y", "x", "a"]),
                })
            })
            .collect();
        let buffer: VecDeque<Arc<Trace>> = traces.iter().cloned().collect();
        let mut interner = RunInterner::default();
        let mut sliding = Window::default();
        let ranges = [(0, 10), (2, 14), (1, 9), (5, 5 + 12), (30, 40), (31, 39), (20, 50)];
        for &(s, e) in &ranges {
            sliding.slide_to(s, e, &buffer, 0, &mut interner);
            let mut fresh = Window::default();
            fresh.slide_to(s, e, &buffer, 0, &mut interner);
            assert_eq!(sliding.counts, fresh.counts, "range {s}..{e}");
            assert_eq!(sliding.runs, fresh.runs);
            assert_eq!(sliding.state, fresh.state);
        }
    }

    #[test]
    fn segment_split_and_cap() {
        let mut s = Segment::new(0, 3);
        for i in 0..10 {
            s.push(Arc::new(Trace::from_labels(i.to_string(), &["a"])));
        }
        let closed = s.split(8);
        assert_eq!((closed.start, closed.end), (0, 8));
        // head 0..3 and tail 5..8 kept (tail held 7,8,9 plus cap drop)
        let ids: Vec<&str> = closed.traces.iter().map(|t| t.case_id.as_str()).collect();
        assert_eq!(ids, ["0", "1", "2", "7"]);
        assert!(closed.is_truncated());
        let rest = s.close();
        assert_eq!((rest.start, rest.end), (8, 10));
        assert_eq!(rest.traces.len(), 2);
    }
}
