//! Gradual drift detection: two consecutive sudden drifts delimit an interval
//! that may be a probabilistic mixture of the behaviour before the first and
//! after the second.
//!
//! The fit minimises the Pearson statistic `f(x, y) = Σ (o − e)² / e` with
//! `e = x·before + y·after` over unnormalised weights. `f` is jointly convex
//! on the positive quadrant, so a coarse grid followed by coordinate-wise
//! golden-section descent lands on the global minimum.

use std::collections::VecDeque;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::concurrency::{AlphaOracle, ConcurrencyOracle, ConcurrentPairs};
use crate::run::{run_key, Histogram};
use crate::scalar::Scalar;
use crate::stats::{align, chi2_critical, chi2_independence_counts, chi2_sf, AlignedHistograms};
use crate::sudden::{Interval, SuddenDrift};

pub const GRID_POINTS: usize = 64;
pub const MAX_DESCENT_ITERS: usize = 200;
const DESCENT_TOL: f64 = 1e-9;
const GOLDEN_ITERS: usize = 64;
/// Smallest normalised weight either side must carry for a mixture to count.
pub const MIN_COMPONENT_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureFit<T> {
    pub x: T,
    pub y: T,
    pub gof: T,
    pub iterations: usize,
}

/// The search box `[ε, x_max]²`. `x_max = 2·n_in / min positive column
/// total` lets either component explain twice the interval on its own.
pub fn search_bound(n_in: u64, n_before: u64, n_after: u64) -> f64 {
    let smallest = [n_before, n_after].into_iter().filter(|&n| n > 0).min().unwrap_or(1);
    2.0 * n_in as f64 / smallest.max(1) as f64
}

/// Pearson statistic for a candidate weighting; infinite when a category is
/// observed but has zero expectation.
pub fn mixture_gof<T: Scalar>(x: T, y: T, before: &[u64], inside: &[u64], after: &[u64]) -> T {
    let mut sum = T::zero();
    for ((&b, &o), &a) in before.iter().zip(inside).zip(after) {
        let e = x * T::from_count(b) + y * T::from_count(a);
        let o = T::from_count(o);
        if e > T::zero() {
            let d = o - e;
            sum = sum + d * d / e;
        } else if o > T::zero() {
            return T::infinity();
        }
    }
    sum
}

fn golden<T: Scalar>(mut lo: T, mut hi: T, f: impl Fn(T) -> T) -> T {
    let inv_phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let tol = (hi - lo) * T::lit(1e-10);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    // 0.618^60 is far below the tolerance; the cap only matters when the
    // scalar runs out of precision first
    for _ in 0..GOLDEN_ITERS {
        if !(hi - lo > tol) {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / T::lit(2.0)
}

/// Minimises [`mixture_gof`] over `[ε, x_max]²`.
pub fn fit_mixture<T: Scalar>(before: &[u64], inside: &[u64], after: &[u64]) -> MixtureFit<T> {
    let total = |h: &[u64]| h.iter().sum::<u64>();
    let x_max = search_bound(total(inside), total(before), total(after));
    let eps = 1e-6_f64.min(x_max / 2.0);
    let f = |x: T, y: T| mixture_gof(x, y, before, inside, after);

    let ratio = (x_max / eps).ln() / (GRID_POINTS - 1) as f64;
    let grid: Vec<T> = (0..GRID_POINTS)
        .map(|i| T::lit(eps * (ratio * i as f64).exp()))
        .collect();
    let (mut x, mut y, mut best) = (grid[0], grid[0], T::infinity());
    for &gx in &grid {
        for &gy in &grid {
            let v = f(gx, gy);
            if v < best {
                (x, y, best) = (gx, gy, v);
            }
        }
    }
    if !best.is_finite() {
        return MixtureFit {
            x,
            y,
            gof: best,
            iterations: 0,
        };
    }

    let (lo, hi) = (T::lit(eps), T::lit(x_max));
    let mut iterations = 0;
    while iterations < MAX_DESCENT_ITERS {
        iterations += 1;
        let nx = golden(lo, hi, |v| f(v, y));
        if f(nx, y) < best {
            x = nx;
        }
        let ny = golden(lo, hi, |v| f(x, v));
        if f(x, ny) < f(x, y) {
            y = ny;
        }
        let value = f(x, y);
        let gain = best - value;
        best = best.min(value);
        if gain < T::lit(DESCENT_TOL) {
            break;
        }
    }
    MixtureFit {
        x,
        y,
        gof: best,
        iterations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GradualDrift<T> {
    /// Position of the sudden drift that opened the interval.
    pub start: usize,
    /// Position of the sudden drift that closed it.
    pub end: usize,
    pub confirmed_at: usize,
    /// `confirmed_at − end`.
    pub delay: usize,
    pub x: T,
    pub y: T,
    pub weight_before: T,
    pub weight_after: T,
    pub gof: T,
    pub critical: T,
    pub df: usize,
    pub p_value: T,
    /// Occurrences inside the interval that were pooled into the rare bucket.
    pub pooled_mass: u64,
}

/// Result of testing one pair of consecutive sudden drifts.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict<T> {
    Gradual(GradualDrift<T>),
    /// The best mixture fits worse than the critical value.
    Rejected { gof: T, critical: T, df: usize },
    /// The interval is consistent with one of its neighbours on its own.
    Indistinct { p_before: T, p_after: T },
    /// One side carries less than [`MIN_COMPONENT_WEIGHT`] of the fit.
    Lopsided { minority: T },
    /// Fewer than two categories after pooling.
    Degenerate,
}

/// Run histograms of the three intervals under the pairs that are concurrent
/// both before and after. A pair that only one side runs concurrently stays
/// ordered, so the two sides keep distinct runs.
pub fn interval_histograms(before: &Interval, inside: &Interval, after: &Interval) -> [Histogram; 3] {
    let relation_of = |iv: &Interval| AlphaOracle.relation(iv.traces.iter().map(|t| t.as_ref()));
    let (b, a) = (relation_of(before), relation_of(after));
    let relation = ConcurrentPairs(b.0.intersection(&a.0).cloned().collect());
    let hist = |iv: &Interval| -> Histogram {
        iv.traces
            .iter()
            .map(|t| (run_key(t, &relation), 1))
            .collect()
    };
    [hist(before), hist(inside), hist(after)]
}

/// p-value of the independence test between a neighbour and the interval;
/// 1 when the table is too small to test.
pub fn neighbour_p_value<T: Scalar>(neighbour: &[u64], inside: &[u64]) -> T {
    let rows = neighbour.iter().copied().zip(inside.iter().copied());
    chi2_independence_counts::<T>(rows).map_or(T::one(), |o| o.p_value)
}

/// Fits the mixture on aligned histograms and applies the GOF decision.
pub fn test_aligned<T: Scalar>(aligned: &AlignedHistograms, alpha: T) -> Option<(MixtureFit<T>, T, T)> {
    if aligned.is_degenerate() {
        return None;
    }
    let fit = fit_mixture::<T>(&aligned.h_before, &aligned.h_in, &aligned.h_after);
    let critical = chi2_critical(alpha, aligned.df);
    let p_value = if fit.gof.is_finite() {
        chi2_sf(fit.gof, aligned.df)
    } else {
        T::zero()
    };
    Some((fit, critical, p_value))
}

/// Two consecutive sudden drifts with the run histograms of the intervals
/// before, between and after them.
#[derive(Debug, Clone, PartialEq)]
pub struct GradualCandidate {
    pub drift_a: SuddenDrift,
    pub drift_b: SuddenDrift,
    pub h_before: Histogram,
    pub h_in: Histogram,
    pub h_after: Histogram,
}

impl GradualCandidate {
    pub fn from_intervals(
        drift_a: SuddenDrift,
        drift_b: SuddenDrift,
        before: &Interval,
        inside: &Interval,
        after: &Interval,
    ) -> Self {
        let [h_before, h_in, h_after] = interval_histograms(before, inside, after);
        GradualCandidate {
            drift_a,
            drift_b,
            h_before,
            h_in,
            h_after,
        }
    }
}

/// Minimiser of the mixture statistic when it falls below `critical`.
pub fn solve_mixture<T: Scalar>(before: &[u64], inside: &[u64], after: &[u64], critical: T) -> Option<(T, T)> {
    let fit = fit_mixture::<T>(before, inside, after);
    (fit.gof < critical).then_some((fit.x, fit.y))
}

/// Tests whether the interval between the two drifts is a mixture of its
/// neighbours.
pub fn test_gradual<T: Scalar>(c: &GradualCandidate, alpha: T) -> Verdict<T> {
    let (first, second) = (&c.drift_a, &c.drift_b);
    let aligned = align(&c.h_before, &c.h_in, &c.h_after);
    let Some((fit, critical, p_value)) = test_aligned(&aligned, alpha) else {
        warn!(
            "interval [{}, {}) has a single category after pooling; no gradual test",
            first.position, second.position
        );
        return Verdict::Degenerate;
    };
    debug!(
        "interval [{}, {}): gof {} vs critical {} (df {})",
        first.position, second.position, fit.gof, critical, aligned.df
    );
    if !(fit.gof < critical) {
        return Verdict::Rejected {
            gof: fit.gof,
            critical,
            df: aligned.df,
        };
    }
    // an interval that one neighbour already explains is not a transition
    let p_before = neighbour_p_value::<T>(&aligned.h_before, &aligned.h_in);
    let p_after = neighbour_p_value::<T>(&aligned.h_after, &aligned.h_in);
    if !(p_before < alpha && p_after < alpha) {
        debug!(
            "interval [{}, {}) matches a neighbour: p {p_before} / {p_after}",
            first.position, second.position
        );
        return Verdict::Indistinct { p_before, p_after };
    }
    let sum = fit.x + fit.y;
    let minority = (fit.x / sum).min(fit.y / sum);
    if minority < T::lit(MIN_COMPONENT_WEIGHT) {
        debug!(
            "interval [{}, {}) is {minority} mixed; treated as an edge of one neighbour",
            first.position, second.position
        );
        return Verdict::Lopsided { minority };
    }
    Verdict::Gradual(GradualDrift {
        start: first.position,
        end: second.position,
        confirmed_at: second.confirmed_at,
        delay: second.confirmed_at - second.position,
        x: fit.x,
        y: fit.y,
        weight_before: fit.x / sum,
        weight_after: fit.y / sum,
        gof: fit.gof,
        critical,
        df: aligned.df,
        p_value,
        pooled_mass: aligned.pooled_mass(),
    })
}

/// What the detector finally reports for a sudden drift.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome<T> {
    Sudden(SuddenDrift),
    Gradual(GradualDrift<T>),
}

/// Consumes sudden drifts in stream order and pairs consecutive ones.
///
/// Only the two most recent drifts and the three intervals around them are
/// held. A drift that already closed a gradual interval is not used to open
/// another one.
#[derive(Debug)]
pub struct GradualDetector<T> {
    alpha: T,
    drifts: VecDeque<(SuddenDrift, bool)>,
    intervals: VecDeque<Interval>,
    outcomes: Vec<Outcome<T>>,
}

impl<T: Scalar> GradualDetector<T> {
    pub fn new(alpha: T) -> Self {
        GradualDetector {
            alpha,
            drifts: VecDeque::new(),
            intervals: VecDeque::new(),
            outcomes: Vec::new(),
        }
    }

    /// A drift and the interval that ends at it.
    pub fn push_drift(&mut self, drift: SuddenDrift, before: Interval) {
        self.intervals.push_back(before);
        self.drifts.push_back((drift, false));
        self.evaluate();
    }

    /// Closes the stream with the interval after the last drift and returns
    /// every outcome in stream order.
    pub fn finish(mut self, last: Interval) -> Vec<Outcome<T>> {
        self.intervals.push_back(last);
        self.evaluate();
        while let Some((drift, consumed)) = self.drifts.pop_front() {
            if !consumed {
                self.outcomes.push(Outcome::Sudden(drift));
            }
        }
        self.outcomes
    }

    fn evaluate(&mut self) {
        while self.drifts.len() >= 2 && self.intervals.len() >= 3 {
            let (first, consumed) = self.drifts[0];
            if !consumed {
                let second = self.drifts[1].0;
                let candidate = GradualCandidate::from_intervals(
                    first,
                    second,
                    &self.intervals[0],
                    &self.intervals[1],
                    &self.intervals[2],
                );
                let verdict = test_gradual(&candidate, self.alpha);
                match verdict {
                    Verdict::Gradual(g) => {
                        self.outcomes.push(Outcome::Gradual(g));
                        self.drifts[1].1 = true;
                    }
                    _ => self.outcomes.push(Outcome::Sudden(first)),
                }
            }
            self.drifts.pop_front();
            self.intervals.pop_front();
        }
    }
}
