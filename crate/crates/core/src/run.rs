//! Partially ordered runs: the canonical DAG a trace induces under a
//! concurrency relation, and histograms over runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::concurrency::ConcurrencyRelation;
use crate::log::Trace;

/// A run over occurrence-indexed events.
///
/// `nodes` are `(label, k)` for the k-th occurrence (1-based) of `label`,
/// listed in canonical order; `edges` index into `nodes` and form the
/// transitive reduction of the causality order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Run {
    pub nodes: Vec<(String, usize)>,
    pub edges: Vec<(usize, usize)>,
    pub canonical_key: String,
}

/// Fixed-width bit row used for closure and reduction.
#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn or_assign(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
    fn and_not_assign(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a &= !b;
        }
    }
    fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &bits)| {
            (0..64).filter(move |b| bits >> b & 1 == 1).map(move |b| w * 64 + b)
        })
    }
}

fn escape_label(label: &str, out: &mut String) {
    for ch in label.chars() {
        if matches!(ch, '\\' | ';' | '|' | '>') {
            out.push('\\');
        }
        out.push(ch);
    }
}

/// Causality over trace positions: `succ[i]` holds every `j > i` that `i`
/// causally precedes.
fn causality<R: ConcurrencyRelation + ?Sized>(labels: &[&str], concurrent: &R) -> Vec<Bits> {
    let n = labels.len();
    let mut succ = vec![Bits::new(n); n];
    // the closure of the directly-precedes chain is the total order i < j;
    // removing concurrent label pairs and closing again yields causality
    for i in (0..n).rev() {
        for j in i + 1..n {
            if !succ[i].get(j) && !concurrent.is_concurrent(labels[i], labels[j]) {
                let reach = succ[j].clone();
                succ[i].set(j);
                succ[i].or_assign(&reach);
            }
        }
    }
    succ
}

/// Converts a trace into its canonical run under `concurrent`.
pub fn trace_to_run<R: ConcurrencyRelation + ?Sized>(trace: &Trace, concurrent: &R) -> Run {
    let labels: Vec<&str> = trace.labels().collect();
    let n = labels.len();
    let succ = causality(&labels, concurrent);

    // transitive reduction: drop i->j whenever some k with i->k also reaches j
    let mut cover = succ.clone();
    for i in 0..n {
        let mut implied = Bits::new(n);
        for k in succ[i].ones() {
            implied.or_assign(&succ[k]);
        }
        cover[i].and_not_assign(&implied);
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    let occurrence: Vec<usize> = labels
        .iter()
        .map(|l| {
            let k = seen.entry(l).or_insert(0);
            *k += 1;
            *k
        })
        .collect();

    let names: Vec<String> = (0..n)
        .map(|i| {
            let mut s = String::new();
            escape_label(labels[i], &mut s);
            let _ = write!(s, "#{}", occurrence[i]);
            s
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]));
    let mut rank = vec![0; n];
    for (r, &pos) in order.iter().enumerate() {
        rank[pos] = r;
    }

    let mut edge_names: Vec<(String, (usize, usize))> = Vec::new();
    for i in 0..n {
        for j in cover[i].ones() {
            edge_names.push((format!("{}>{}", names[i], names[j]), (rank[i], rank[j])));
        }
    }
    edge_names.sort();

    let mut key = String::new();
    for (idx, &pos) in order.iter().enumerate() {
        if idx > 0 {
            key.push(';');
        }
        key.push_str(&names[pos]);
    }
    key.push('|');
    for (idx, (name, _)) in edge_names.iter().enumerate() {
        if idx > 0 {
            key.push(';');
        }
        key.push_str(name);
    }

    Run {
        nodes: order
            .iter()
            .map(|&pos| (labels[pos].to_string(), occurrence[pos]))
            .collect(),
        edges: edge_names.into_iter().map(|(_, e)| e).collect(),
        canonical_key: key,
    }
}

/// Canonical key only, without materializing the run.
pub fn run_key<R: ConcurrencyRelation + ?Sized>(trace: &Trace, concurrent: &R) -> String {
    trace_to_run(trace, concurrent).canonical_key
}

/// Frequency of each distinct run, keyed by canonical key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl Histogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: impl Into<String>, n: u64) {
        if n == 0 {
            return;
        }
        *self.counts.entry(key.into()).or_insert(0) += n;
        self.total += n;
    }

    pub fn get(&self, key: &str) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Every count multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Histogram {
        let mut h = Histogram::new();
        for (k, &c) in &self.counts {
            h.add(k.clone(), c * factor);
        }
        h
    }
}

impl<K: Into<String>> FromIterator<(K, u64)> for Histogram {
    fn from_iter<I: IntoIterator<Item = (K, u64)>>(iter: I) -> Self {
        let mut h = Histogram::new();
        for (k, c) in iter {
            h.add(k, c);
        }
        h
    }
}

pub fn run_histogram<'a>(runs: impl IntoIterator<Item = &'a Run>) -> Histogram {
    let mut h = Histogram::new();
    for r in runs {
        h.add(r.canonical_key.as_str(), 1);
    }
    h
}

/// Dense ids for canonical keys, so windows can count runs cheaply.
#[derive(Debug, Default, Clone)]
pub struct RunInterner {
    ids: HashMap<String, u32>,
    keys: Vec<String>,
}

impl RunInterner {
    pub fn intern(&mut self, key: String) -> u32 {
        if let Some(&id) = self.ids.get(&key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.clone());
        self.ids.insert(key, id);
        id
    }

    pub fn key(&self, id: u32) -> &str {
        &self.keys[id as usize]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concurrency::ConcurrentPairs;
    use proptest::prelude::*;

    fn t(labels: &[&str]) -> Trace {
        Trace::from_labels("c", labels)
    }

    fn edge_labels(run: &Run) -> Vec<(String, String)> {
        let mut v: Vec<_> = run
            .edges
            .iter()
            .map(|&(a, b)| (run.nodes[a].0.clone(), run.nodes[b].0.clone()))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn diamond_from_both_interleavings() {
        let bc = ConcurrentPairs::new([("b", "c")]);
        let r1 = trace_to_run(&t(&["a", "b", "c", "d"]), &bc);
        let r2 = trace_to_run(&t(&["a", "c", "b", "d"]), &bc);
        let expected: Vec<(String, String)> = [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]
            .iter()
            .map(|(x, y)| (x.to_string(), y.to_string()))
            .collect();
        assert_eq!(edge_labels(&r1), expected);
        assert_eq!(r1, r2);
        assert_eq!(r1.canonical_key, "a#1;b#1;c#1;d#1|a#1>b#1;a#1>c#1;b#1>d#1;c#1>d#1");
    }

    #[test]
    fn chain_without_concurrency() {
        let r = trace_to_run(&t(&["a", "b", "c", "d"]), &ConcurrentPairs::default());
        assert_eq!(r.canonical_key, "a#1;b#1;c#1;d#1|a#1>b#1;b#1>c#1;c#1>d#1");
    }

    #[test]
    fn repeated_labels_are_occurrence_indexed() {
        let r = trace_to_run(&t(&["a", "b", "a"]), &ConcurrentPairs::default());
        assert_eq!(r.canonical_key, "a#1;a#2;b#1|a#1>b#1;b#1>a#2");
        assert_eq!(r.nodes.len(), 3);
    }

    #[test]
    fn special_characters_are_escaped() {
        let r = trace_to_run(&t(&["x;y", "p>q"]), &ConcurrentPairs::default());
        assert_eq!(r.canonical_key, "p\\>q#1;x\\;y#1|x\\;y#1>p\\>q#1");
    }

    #[test]
    fn histogram_of_runs() {
        let bc = ConcurrentPairs::new([("b", "c")]);
        let s1 = t(&["a", "b", "c", "d"]);
        let s2 = t(&["a", "c", "b", "d"]);
        let log = [&s1, &s1, &s2, &s2, &s2];
        let runs: Vec<Run> = log.iter().map(|tr| trace_to_run(tr, &bc)).collect();
        let h = run_histogram(&runs);
        assert_eq!(h.distinct(), 1);
        assert_eq!(h.total, 5);

        let r1 = trace_to_run(&s1, &ConcurrentPairs::default());
        let r2 = trace_to_run(&s2, &ConcurrentPairs::default());
        let h = run_histogram([&r1, &r1, &r2]);
        assert_eq!(h.get(&r1.canonical_key), 2);
        assert_eq!(h.get(&r2.canonical_key), 1);
        assert_eq!(run_histogram(std::iter::empty()), Histogram::new());
    }

    /// Brute-force causality: reflexive-transitive closure of the total order
    /// minus concurrent label pairs, by Floyd-Warshall on a boolean matrix.
    fn brute_causality(labels: &[&str], conc: &ConcurrentPairs) -> Vec<Vec<bool>> {
        let n = labels.len();
        let mut m = vec![vec![false; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                m[i][j] = !conc.is_concurrent(labels[i], labels[j]);
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if m[i][k] && m[k][j] {
                        m[i][j] = true;
                    }
                }
            }
        }
        m
    }

    fn arb_labels() -> impl Strategy<Value = Vec<&'static str>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..=8)
    }

    fn arb_pairs() -> impl Strategy<Value = ConcurrentPairs> {
        prop::collection::vec(
            (
                prop::sample::select(vec!["a", "b", "c", "d", "e"]),
                prop::sample::select(vec!["a", "b", "c", "d", "e"]),
            ),
            0..5,
        )
        .prop_map(ConcurrentPairs::new)
    }

    proptest! {
        #[test]
        fn reduction_closes_back_to_causality(labels in arb_labels(), conc in arb_pairs()) {
            let trace = t(&labels);
            let run = trace_to_run(&trace, &conc);
            // map canonical node order back to trace positions
            let mut seen = HashMap::new();
            let pos_of: Vec<(String, usize)> = labels.iter().map(|l| {
                let k = seen.entry(*l).or_insert(0usize); *k += 1; (l.to_string(), *k)
            }).collect();
            let idx = |node: &(String, usize)| pos_of.iter().position(|p| p == node).unwrap();
            let n = labels.len();
            let mut m = vec![vec![false; n]; n];
            for &(a, b) in &run.edges {
                m[idx(&run.nodes[a])][idx(&run.nodes[b])] = true;
            }
            for k in 0..n { for i in 0..n { for j in 0..n {
                if m[i][k] && m[k][j] { m[i][j] = true; }
            }}}
            let expected = brute_causality(&labels, &conc);
            prop_assert_eq!(&m, &expected);
            // reduced: no edge implied by a two-step path
            for &(a, b) in &run.edges {
                let (i, j) = (idx(&run.nodes[a]), idx(&run.nodes[b]));
                prop_assert!(!(0..n).any(|k| expected[i][k] && expected[k][j]));
            }
            // order embedding
            for i in 0..n { for j in i + 1..n {
                if !conc.is_concurrent(labels[i], labels[j]) { prop_assert!(m[i][j]); }
            }}
        }

        #[test]
        fn concurrent_block_permutations_collapse(perm in Just(vec!["b", "c", "d"]).prop_shuffle()) {
            let conc = ConcurrentPairs::new([("b", "c"), ("b", "d"), ("c", "d")]);
            let mut labels = vec!["a"];
            labels.extend(perm.iter().copied());
            labels.push("e");
            let key = run_key(&t(&labels), &conc);
            prop_assert_eq!(key, run_key(&t(&["a", "b", "c", "d", "e"]), &conc));
        }

        #[test]
        fn deterministic(labels in arb_labels(), conc in arb_pairs()) {
            let trace = t(&labels);
            prop_assert_eq!(trace_to_run(&trace, &conc), trace_to_run(&trace, &conc));
        }
    }
}
