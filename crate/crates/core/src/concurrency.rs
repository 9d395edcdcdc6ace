//! Windowed alpha concurrency: directly-precedes multiplicities and the
//! symmetric relation derived from them.

use std::collections::{BTreeSet, HashMap};

use crate::error::InvariantViolation;
use crate::log::Trace;

/// Unordered label pair, stored with the lexicographically smaller label first.
pub type LabelPair = (String, String);

pub fn unordered(a: &str, b: &str) -> LabelPair {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Anything that can answer "are these two labels concurrent?".
pub trait ConcurrencyRelation {
    fn is_concurrent(&self, a: &str, b: &str) -> bool;
}

/// A fixed symmetric set of label pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConcurrentPairs(pub BTreeSet<LabelPair>);

impl ConcurrentPairs {
    pub fn new<A: AsRef<str>, B: AsRef<str>>(pairs: impl IntoIterator<Item = (A, B)>) -> Self {
        ConcurrentPairs(
            pairs
                .into_iter()
                .filter(|(a, b)| a.as_ref() != b.as_ref())
                .map(|(a, b)| unordered(a.as_ref(), b.as_ref()))
                .collect(),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

impl ConcurrencyRelation for ConcurrentPairs {
    fn is_concurrent(&self, a: &str, b: &str) -> bool {
        // BTreeSet lookup with borrowed tuple is not possible; the sets are tiny
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        self.0.iter().any(|(p, q)| p == x && q == y)
    }
}

/// Derives a concurrency relation from a population of traces. Alternative
/// oracles (alpha+, heuristics) plug in here.
pub trait ConcurrencyOracle {
    fn relation<'a>(&self, traces: impl IntoIterator<Item = &'a Trace>) -> ConcurrentPairs;
}

/// The plain alpha oracle: A and B are concurrent iff each directly precedes
/// the other somewhere in the population.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlphaOracle;

impl ConcurrencyOracle for AlphaOracle {
    fn relation<'a>(&self, traces: impl IntoIterator<Item = &'a Trace>) -> ConcurrentPairs {
        let mut state = ConcurrencyState::default();
        for t in traces {
            state.add_trace(t);
        }
        state.concurrent_pairs()
    }
}

/// Directly-precedes counts over a window of traces.
///
/// The concurrent pair set is maintained incrementally alongside the counts,
/// and `version` changes whenever that set does.
#[derive(Debug, Clone, Default)]
pub struct ConcurrencyState {
    dp_counts: HashMap<(String, String), u64>,
    concurrent: BTreeSet<LabelPair>,
    version: u64,
}

impl PartialEq for ConcurrencyState {
    fn eq(&self, other: &Self) -> bool {
        self.dp_counts == other.dp_counts
    }
}

impl ConcurrencyState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, from: &str, to: &str) -> u64 {
        self.dp_counts
            .get(&(from.to_string(), to.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn dp_counts(&self) -> &HashMap<(String, String), u64> {
        &self.dp_counts
    }

    pub fn is_empty(&self) -> bool {
        self.dp_counts.is_empty()
    }

    /// Bumped every time the concurrent pair set changes.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn add_trace(&mut self, trace: &Trace) {
        for w in trace.events.windows(2) {
            let (a, b) = (&w[0].label, &w[1].label);
            let c = self.dp_counts.entry((a.clone(), b.clone())).or_insert(0);
            *c += 1;
            if *c == 1 && a != b && self.count(b, a) > 0 {
                self.concurrent.insert(unordered(a, b));
                self.version += 1;
            }
        }
    }

    /// Undoes a previous [`add_trace`](Self::add_trace). On a precondition
    /// breach the state is left untouched.
    pub fn remove_trace(&mut self, trace: &Trace) -> Result<(), InvariantViolation> {
        let mut needed: HashMap<(&str, &str), u64> = HashMap::new();
        for w in trace.events.windows(2) {
            *needed
                .entry((w[0].label.as_str(), w[1].label.as_str()))
                .or_insert(0) += 1;
        }
        for (&(a, b), &n) in &needed {
            if self.count(a, b) < n {
                return Err(InvariantViolation {
                    from: a.to_string(),
                    to: b.to_string(),
                });
            }
        }
        for ((a, b), n) in needed {
            let key = (a.to_string(), b.to_string());
            let c = self.dp_counts.get_mut(&key).expect("checked above");
            *c -= n;
            if *c == 0 {
                self.dp_counts.remove(&key);
                if a != b && self.count(b, a) > 0 {
                    self.concurrent.remove(&unordered(a, b));
                    self.version += 1;
                }
            }
        }
        Ok(())
    }

    /// Recomputes the relation from the counts.
    pub fn concurrent_pairs(&self) -> ConcurrentPairs {
        ConcurrentPairs(
            self.dp_counts
                .keys()
                .filter(|(a, b)| a != b && self.count(b, a) > 0)
                .map(|(a, b)| unordered(a, b))
                .collect(),
        )
    }

    /// The incrementally maintained relation; always equal to
    /// [`concurrent_pairs`](Self::concurrent_pairs).
    pub fn tracked_pairs(&self) -> &BTreeSet<LabelPair> {
        &self.concurrent
    }
}

impl ConcurrencyRelation for ConcurrencyState {
    fn is_concurrent(&self, a: &str, b: &str) -> bool {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        x != y && self.concurrent.iter().any(|(p, q)| p == x && q == y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(labels: &[&str]) -> Trace {
        Trace::from_labels("c", labels)
    }

    #[test]
    fn counts_directly_precedes() {
        let mut s = ConcurrencyState::new();
        s.add_trace(&t(&["a", "b", "c", "d"]));
        assert_eq!(s.dp_counts().len(), 3);
        assert_eq!(s.count("a", "b"), 1);
        s.add_trace(&t(&["a", "c", "b", "d"]));
        for (x, y) in [("a", "b"), ("b", "c"), ("c", "d"), ("a", "c"), ("c", "b"), ("b", "d")] {
            assert_eq!(s.count(x, y), 1, "({x},{y})");
        }
        assert_eq!(s.dp_counts().len(), 6);
        assert_eq!(s.concurrent_pairs(), ConcurrentPairs::new([("b", "c")]));
    }

    #[test]
    fn remove_restores_and_rejects_unknown() {
        let mut s = ConcurrencyState::new();
        s.add_trace(&t(&["a", "b"]));
        s.add_trace(&t(&["a", "b"]));
        s.remove_trace(&t(&["a", "b"])).unwrap();
        assert_eq!(s.count("a", "b"), 1);
        s.remove_trace(&t(&["a", "b"])).unwrap();
        assert!(s.is_empty());
        assert_eq!(s, ConcurrencyState::new());
        let err = s.remove_trace(&t(&["x", "y"])).unwrap_err();
        assert_eq!(err.from, "x");
    }

    #[test]
    fn no_self_concurrency() {
        let mut s = ConcurrencyState::new();
        s.add_trace(&t(&["a", "a"]));
        assert!(s.concurrent_pairs().is_empty());
        assert!(!s.is_concurrent("a", "a"));
        s.add_trace(&t(&["a", "b"]));
        assert!(s.concurrent_pairs().is_empty());
    }

    fn arb_trace() -> impl Strategy<Value = Trace> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..7)
            .prop_map(|l| t(&l))
    }

    proptest! {
        #[test]
        fn windowed_consistency(
            keep in prop::collection::vec(arb_trace(), 0..8),
            churn in prop::collection::vec(arb_trace(), 0..8),
        ) {
            let mut direct = ConcurrencyState::new();
            for tr in &keep { direct.add_trace(tr); }

            let mut s = ConcurrencyState::new();
            for (i, tr) in keep.iter().enumerate() {
                if let Some(c) = churn.get(i) { s.add_trace(c); }
                s.add_trace(tr);
            }
            for c in churn.iter().take(keep.len()) { s.remove_trace(c).unwrap(); }
            for c in churn.iter().skip(keep.len()) { s.add_trace(c); }
            for c in churn.iter().skip(keep.len()) { s.remove_trace(c).unwrap(); }

            prop_assert_eq!(&s, &direct);
            prop_assert_eq!(s.concurrent_pairs(), direct.concurrent_pairs());
            prop_assert_eq!(s.tracked_pairs(), &direct.concurrent_pairs().0);
        }

        #[test]
        fn adding_never_removes_pairs(base in prop::collection::vec(arb_trace(), 0..6), extra in arb_trace()) {
            let mut s = ConcurrencyState::new();
            for tr in &base { s.add_trace(tr); }
            let before = s.concurrent_pairs();
            s.add_trace(&extra);
            prop_assert!(before.0.is_subset(&s.concurrent_pairs().0));
            for (a, b) in &s.concurrent_pairs().0 {
                prop_assert!(s.is_concurrent(a, b) && s.is_concurrent(b, a));
            }
        }
    }
}
