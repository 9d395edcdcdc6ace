//! Scoring detections against a gold standard.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gradual::GradualDrift;
use crate::sudden::SuddenDrift;

/// A reported sudden drift, reduced to what scoring needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointDetection {
    pub position: usize,
    pub confirmed_at: usize,
}

impl From<&SuddenDrift> for PointDetection {
    fn from(d: &SuddenDrift) -> Self {
        PointDetection {
            position: d.position,
            confirmed_at: d.confirmed_at,
        }
    }
}

/// A reported gradual interval, reduced to what scoring needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalDetection {
    pub start: usize,
    pub end: usize,
    pub confirmed_at: usize,
}

impl<T> From<&GradualDrift<T>> for IntervalDetection {
    fn from(d: &GradualDrift<T>) -> Self {
        IntervalDetection {
            start: d.start,
            end: d.end,
            confirmed_at: d.confirmed_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftMatch {
    /// Gold position, or the gold interval's start.
    pub gold: usize,
    /// Position (or interval start) of the matched detection.
    pub detected: Option<usize>,
    pub delay: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub mean_delay: f64,
    pub per_drift: Vec<DriftMatch>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl EvalResult {
    fn from_matches(per_drift: Vec<DriftMatch>, detected: usize) -> Self {
        let tp = per_drift.iter().filter(|m| m.detected.is_some()).count();
        let fn_ = per_drift.len() - tp;
        let fp = detected - tp;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let delays: Vec<usize> = per_drift.iter().filter_map(|m| m.delay).collect();
        let mean_delay = ratio(delays.iter().sum(), delays.len());
        EvalResult {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_score,
            mean_delay,
            per_drift,
        }
    }
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tp {:>3}  fp {:>3}  fn {:>3}  precision {:.3}  recall {:.3}  f {:.3}  delay {:.1}",
            self.tp, self.fp, self.fn_, self.precision, self.recall, self.f_score, self.mean_delay
        )
    }
}

/// A detection matches gold `g` when its position lies in `[g, g_next)` and
/// it is the earliest such detection. Delay is `confirmed_at − g`.
pub fn score_sudden(detected: &[PointDetection], gold: &[usize]) -> EvalResult {
    let mut detected = detected.to_vec();
    detected.sort_by_key(|d| (d.position, d.confirmed_at));
    let mut gold = gold.to_vec();
    gold.sort_unstable();

    let per_drift = gold
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            let next = gold.get(k + 1).copied().unwrap_or(usize::MAX);
            let hit = detected.iter().find(|d| d.position >= g && d.position < next);
            DriftMatch {
                gold: g,
                detected: hit.map(|d| d.position),
                delay: hit.map(|d| d.confirmed_at.saturating_sub(g)),
            }
        })
        .collect();
    EvalResult::from_matches(per_drift, detected.len())
}

/// A detected interval is a true positive when it contains the midpoint
/// `⌊(start + end) / 2⌋` of an unmatched gold interval. Delay is the
/// confirmation of the interval end minus the gold end.
pub fn score_gradual(detected: &[IntervalDetection], gold: &[(usize, usize)]) -> EvalResult {
    let mut detected = detected.to_vec();
    detected.sort_by_key(|d| (d.start, d.end));
    let mut gold = gold.to_vec();
    gold.sort_unstable();

    let mut used = vec![false; detected.len()];
    let per_drift = gold
        .iter()
        .map(|&(gs, ge)| {
            let center = (gs + ge) / 2;
            let hit = detected
                .iter()
                .enumerate()
                .find(|(i, d)| !used[*i] && d.start <= center && center <= d.end);
            if let Some((i, _)) = hit {
                used[i] = true;
            }
            DriftMatch {
                gold: gs,
                detected: hit.map(|(_, d)| d.start),
                delay: hit.map(|(_, d)| d.confirmed_at.saturating_sub(ge)),
            }
        })
        .collect();
    EvalResult::from_matches(per_drift, detected.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(position: usize, confirmed_at: usize) -> PointDetection {
        PointDetection { position, confirmed_at }
    }

    fn iv(start: usize, end: usize, confirmed_at: usize) -> IntervalDetection {
        IntervalDetection { start, end, confirmed_at }
    }

    #[test]
    fn exact_sudden_detections() {
        let gold = [500, 1000];
        let r = score_sudden(&[p(500, 530), p(1000, 1040)], &gold);
        assert_eq!((r.tp, r.fp, r.fn_), (2, 0, 0));
        assert_eq!(r.f_score, 1.0);
        assert_eq!(r.mean_delay, 35.0);
    }

    #[test]
    fn missing_and_duplicate_sudden() {
        let gold: Vec<usize> = (1..10).map(|i| i * 500).collect();
        let r = score_sudden(&[], &gold);
        assert_eq!((r.recall, r.f_score, r.fn_), (0.0, 0.0, 9));
        let r = score_sudden(&[p(510, 530), p(700, 720)], &[500]);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
        // a detection before the first gold is a false positive
        let r = score_sudden(&[p(400, 420), p(900, 930)], &[500, 1000]);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 1));
        assert_eq!(r.per_drift[1].detected, None);
    }

    #[test]
    fn gradual_center_rule() {
        let gold = [(751, 1250)];
        let r = score_gradual(&[iv(800, 1300, 1320)], &gold);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 0));
        assert_eq!(r.mean_delay, 70.0);
        let r = score_gradual(&[iv(1200, 1500, 1520)], &gold);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
        let r = score_gradual(&[], &gold);
        assert_eq!(r.f_score, 0.0);
    }

    #[test]
    fn counts_add_up_and_order_does_not_matter() {
        let gold = [100, 300, 700];
        let dets = [p(650, 700), p(120, 140), p(310, 330), p(320, 340)];
        let a = score_sudden(&dets, &gold);
        let mut rev = dets;
        rev.reverse();
        let b = score_sudden(&rev, &gold);
        assert_eq!(a, b);
        assert_eq!(a.tp + a.fn_, gold.len());
        assert_eq!(a.tp + a.fp, dets.len());
    }
}
