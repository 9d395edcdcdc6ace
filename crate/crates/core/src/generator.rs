//! Synthetic logs with known drifts: block-structured process models, edits
//! that emulate simple change patterns, and composition of model segments
//! into sudden or gradual drift streams.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, SpecError};
use crate::log::{Event, EventLog, Trace};

const PROB_TOL: f64 = 1e-9;

/// A block-structured process model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Act(String),
    Seq(Vec<Node>),
    And(Vec<Node>),
    Xor(Vec<Branch>),
    Loop { body: Box<Node>, repeat: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub p: f64,
    pub node: Node,
}

pub fn act(label: &str) -> Node {
    Node::Act(label.to_string())
}

pub fn seq(children: Vec<Node>) -> Node {
    Node::Seq(children)
}

pub fn and(children: Vec<Node>) -> Node {
    Node::And(children)
}

pub fn xor(branches: Vec<(f64, Node)>) -> Node {
    Node::Xor(branches.into_iter().map(|(p, node)| Branch { p, node }).collect())
}

pub fn looped(body: Node, repeat: f64) -> Node {
    Node::Loop {
        body: Box::new(body),
        repeat,
    }
}

impl Node {
    pub fn kind(&self) -> &'static str {
        match self {
            Node::Act(_) => "act",
            Node::Seq(_) => "seq",
            Node::And(_) => "and",
            Node::Xor(_) => "xor",
            Node::Loop { .. } => "loop",
        }
    }

    /// Checks XOR probabilities and loop repeat probabilities.
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Node::Act(_) => Ok(()),
            Node::Seq(c) | Node::And(c) => c.iter().try_for_each(Node::validate),
            Node::Xor(branches) => {
                if branches.is_empty() {
                    return Err(ModelError::Invalid("xor without branches".into()));
                }
                let sum: f64 = branches.iter().map(|b| b.p).sum();
                if branches.iter().any(|b| !(0.0..=1.0).contains(&b.p)) || (sum - 1.0).abs() > PROB_TOL {
                    return Err(ModelError::Invalid(format!("xor probabilities sum to {sum}")));
                }
                branches.iter().try_for_each(|b| b.node.validate())
            }
            Node::Loop { body, repeat } => {
                if !(0.0..1.0).contains(repeat) {
                    return Err(ModelError::Invalid(format!("loop repeat {repeat} outside [0, 1)")));
                }
                body.validate()
            }
        }
    }

    fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut Vec<String>) {
        match self {
            Node::Act(label) => out.push(label.clone()),
            Node::Seq(children) => {
                for c in children {
                    c.sample_into(rng, out);
                }
            }
            Node::And(children) => {
                let parts: Vec<Vec<String>> = children
                    .iter()
                    .map(|c| {
                        let mut v = Vec::new();
                        c.sample_into(rng, &mut v);
                        v
                    })
                    .collect();
                interleave(parts, rng, out);
            }
            Node::Xor(branches) => {
                let mut u: f64 = rng.gen();
                let last = branches.len() - 1;
                for (i, b) in branches.iter().enumerate() {
                    if u < b.p || i == last {
                        b.node.sample_into(rng, out);
                        break;
                    }
                    u -= b.p;
                }
            }
            Node::Loop { body, repeat } => loop {
                body.sample_into(rng, out);
                if rng.gen::<f64>() >= *repeat {
                    break;
                }
            },
        }
    }

    fn child_mut(&mut self, i: usize) -> Option<&mut Node> {
        match self {
            Node::Seq(c) | Node::And(c) => c.get_mut(i),
            Node::Xor(b) => b.get_mut(i).map(|b| &mut b.node),
            Node::Loop { body, .. } if i == 0 => Some(body),
            _ => None,
        }
    }

    fn at_mut(&mut self, path: &[usize]) -> Result<&mut Node, ModelError> {
        let mut node = self;
        for &i in path {
            node = node
                .child_mut(i)
                .ok_or_else(|| ModelError::InvalidPath(path.to_vec()))?;
        }
        Ok(node)
    }
}

/// Uniformly random merge: the next label comes from a part with
/// probability proportional to its remaining length.
fn interleave<R: Rng>(parts: Vec<Vec<String>>, rng: &mut R, out: &mut Vec<String>) {
    let mut cursors: Vec<std::vec::IntoIter<String>> = parts.into_iter().map(Vec::into_iter).collect();
    let mut remaining: usize = cursors.iter().map(|c| c.len()).sum();
    while remaining > 0 {
        let mut pick = rng.gen_range(0..remaining);
        for c in cursors.iter_mut() {
            if pick < c.len() {
                out.push(c.next().expect("non-empty part"));
                break;
            }
            pick -= c.len();
        }
        remaining -= 1;
    }
}

pub fn sample_trace<R: Rng>(model: &Node, rng: &mut R) -> Vec<String> {
    let mut out = Vec::new();
    model.sample_into(rng, &mut out);
    out
}

/// A block-tree edit. Paths are child indices from the root; a loop's body
/// is child 0 and an XOR branch's node is the child at the branch index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    /// Inserts `fragment` into the SEQ or AND at `path`.
    InsertFragment {
        path: Vec<usize>,
        fragment: Node,
        #[serde(default)]
        index: usize,
    },
    RemoveFragment { path: Vec<usize> },
    Parallelize { path: Vec<usize> },
    Sequentialize { path: Vec<usize> },
    MakeLoopable { path: Vec<usize>, repeat: f64 },
    MakeSkippable { path: Vec<usize> },
    /// Swaps children `i` and `j` of the SEQ or AND at `path`.
    SwapFragments { path: Vec<usize>, i: usize, j: usize },
    /// Copies the node at `path` to the front of its parent SEQ.
    DuplicateFragment { path: Vec<usize> },
    SubstituteFragment { path: Vec<usize>, fragment: Node },
    ChangeBranchProbability { path: Vec<usize>, probs: Vec<f64> },
}

fn split_parent(path: &[usize]) -> Result<(&[usize], usize), ModelError> {
    match path.split_last() {
        Some((&last, parent)) => Ok((parent, last)),
        None => Err(ModelError::InvalidPath(Vec::new())),
    }
}

fn wrong(edit: &'static str, node: &Node) -> ModelError {
    ModelError::WrongKind {
        edit,
        kind: node.kind(),
    }
}

pub fn apply_edit(model: &Node, edit: &Edit) -> Result<Node, ModelError> {
    let mut out = model.clone();
    match edit {
        Edit::InsertFragment { path, fragment, index } => match out.at_mut(path)? {
            Node::Seq(c) | Node::And(c) => {
                if *index > c.len() {
                    return Err(ModelError::InvalidPath(path.clone()));
                }
                c.insert(*index, fragment.clone());
            }
            other => return Err(wrong("insert_fragment", other)),
        },
        Edit::RemoveFragment { path } => {
            let (parent, i) = split_parent(path)?;
            let invalid = || ModelError::InvalidPath(path.clone());
            match out.at_mut(parent)? {
                Node::Seq(c) | Node::And(c) => {
                    if i >= c.len() {
                        return Err(invalid());
                    }
                    c.remove(i);
                }
                Node::Xor(b) => {
                    if i >= b.len() || b.len() == 1 {
                        return Err(invalid());
                    }
                    b.remove(i);
                    let sum: f64 = b.iter().map(|b| b.p).sum();
                    for br in b.iter_mut() {
                        br.p /= sum;
                    }
                }
                other => return Err(wrong("remove_fragment", other)),
            }
        }
        Edit::Parallelize { path } => {
            let node = out.at_mut(path)?;
            match node {
                Node::Seq(c) => *node = Node::And(std::mem::take(c)),
                other => return Err(wrong("parallelize", other)),
            }
        }
        Edit::Sequentialize { path } => {
            let node = out.at_mut(path)?;
            match node {
                Node::And(c) => *node = Node::Seq(std::mem::take(c)),
                other => return Err(wrong("sequentialize", other)),
            }
        }
        Edit::MakeLoopable { path, repeat } => {
            let node = out.at_mut(path)?;
            let body = std::mem::replace(node, Node::Seq(Vec::new()));
            *node = looped(body, *repeat);
        }
        Edit::MakeSkippable { path } => {
            let node = out.at_mut(path)?;
            let inner = std::mem::replace(node, Node::Seq(Vec::new()));
            *node = xor(vec![(0.5, inner), (0.5, seq(vec![]))]);
        }
        Edit::SwapFragments { path, i, j } => match out.at_mut(path)? {
            Node::Seq(c) | Node::And(c) if *i < c.len() && *j < c.len() => c.swap(*i, *j),
            Node::Seq(_) | Node::And(_) => return Err(ModelError::InvalidPath(path.clone())),
            other => return Err(wrong("swap_fragments", other)),
        },
        Edit::DuplicateFragment { path } => {
            let (parent, _) = split_parent(path)?;
            let copy = out.at_mut(path)?.clone();
            match out.at_mut(parent)? {
                Node::Seq(c) => c.insert(0, copy),
                other => return Err(wrong("duplicate_fragment", other)),
            }
        }
        Edit::SubstituteFragment { path, fragment } => {
            *out.at_mut(path)? = fragment.clone();
        }
        Edit::ChangeBranchProbability { path, probs } => match out.at_mut(path)? {
            Node::Xor(b) if b.len() == probs.len() => {
                for (br, &p) in b.iter_mut().zip(probs) {
                    br.p = p;
                }
            }
            Node::Xor(b) => {
                return Err(ModelError::Invalid(format!(
                    "{} probabilities for {} branches",
                    probs.len(),
                    b.len()
                )))
            }
            other => return Err(wrong("change_branch_probability", other)),
        },
    }
    out.validate()?;
    Ok(out)
}

pub fn apply_edits(model: &Node, edits: &[Edit]) -> Result<Node, ModelError> {
    edits.iter().try_fold(model.clone(), |m, e| apply_edit(&m, e))
}

/// The bundled loan-application model: a rework loop, an AND block and
/// nested XOR choices over fifteen distinct activities.
pub fn base_model() -> Node {
    serde_json::from_str(include_str!("../fixtures/base_model.json")).expect("bundled model parses")
}

/// Simple change patterns applied to [`base_model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// remove an activity
    Re,
    /// parallelise two sequential activities
    Pl,
    /// make an activity loopable
    Lp,
    /// make an activity skippable
    Cb,
    /// swap two activities
    Sw,
    /// change branch frequencies
    Fr,
}

impl Pattern {
    pub const ALL: [Pattern; 6] = [Pattern::Re, Pattern::Pl, Pattern::Lp, Pattern::Cb, Pattern::Sw, Pattern::Fr];

    pub fn code(self) -> &'static str {
        match self {
            Pattern::Re => "re",
            Pattern::Pl => "pl",
            Pattern::Lp => "lp",
            Pattern::Cb => "cb",
            Pattern::Sw => "sw",
            Pattern::Fr => "fr",
        }
    }

    pub fn edits(self) -> Vec<Edit> {
        match self {
            Pattern::Re => vec![Edit::RemoveFragment { path: vec![3, 1] }],
            Pattern::Pl => vec![Edit::Parallelize { path: vec![5, 1, 0] }],
            Pattern::Lp => vec![Edit::MakeLoopable {
                path: vec![4],
                repeat: 0.5,
            }],
            Pattern::Cb => vec![Edit::MakeSkippable { path: vec![3, 0, 0] }],
            Pattern::Sw => vec![Edit::SwapFragments {
                path: vec![5, 1],
                i: 2,
                j: 3,
            }],
            Pattern::Fr => vec![Edit::ChangeBranchProbability {
                path: vec![5],
                probs: vec![0.8, 0.2],
            }],
        }
    }

    pub fn altered(self) -> Node {
        apply_edits(&base_model(), &self.edits()).expect("pattern edits fit the base model")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldStandard {
    pub sudden: Vec<usize>,
    /// Half-open `[start, end)` transition intervals.
    pub gradual: Vec<(usize, usize)>,
}

fn trace_at(index: usize, labels: Vec<String>) -> Trace {
    // one synthetic second per completed case keeps completion order explicit
    let ts = index as i64 * 1000;
    let n = labels.len() as i64;
    let events = labels
        .into_iter()
        .enumerate()
        .map(|(k, l)| Event::at(l, ts - (n - 1 - k as i64)))
        .collect();
    Trace::new(format!("case_{index}"), events)
}

/// Concatenates segments; a drift sits at every segment boundary.
pub fn compose_sudden<R: Rng>(segments: &[(&Node, usize)], rng: &mut R) -> (EventLog, GoldStandard) {
    let mut traces = Vec::new();
    let mut gold = GoldStandard::default();
    for (k, (model, count)) in segments.iter().enumerate() {
        if k > 0 {
            gold.sudden.push(traces.len());
        }
        for _ in 0..*count {
            let labels = sample_trace(model, rng);
            traces.push(trace_at(traces.len(), labels));
        }
    }
    (EventLog::new(traces), gold)
}

/// Length of the linear transition, `⌈1 / slope⌉`.
pub fn transition_len(slope: f64) -> usize {
    (1.0 / slope - 1e-9).ceil().max(1.0) as usize
}

/// `pre` traces of `a`, a linear fade from `a` to `b`, then `post` traces of `b`.
pub fn compose_gradual<R: Rng>(
    a: &Node,
    b: &Node,
    pre: usize,
    post: usize,
    slope: f64,
    rng: &mut R,
) -> (EventLog, GoldStandard) {
    let mut traces = Vec::new();
    let mut gold = GoldStandard::default();
    append_gradual(&mut traces, &mut gold, a, b, pre, slope, rng);
    for _ in 0..post {
        let labels = sample_trace(b, rng);
        traces.push(trace_at(traces.len(), labels));
    }
    (EventLog::new(traces), gold)
}

fn append_gradual<R: Rng>(
    traces: &mut Vec<Trace>,
    gold: &mut GoldStandard,
    a: &Node,
    b: &Node,
    pre: usize,
    slope: f64,
    rng: &mut R,
) {
    for _ in 0..pre {
        let labels = sample_trace(a, rng);
        traces.push(trace_at(traces.len(), labels));
    }
    let start = traces.len();
    let len = transition_len(slope);
    for i in 0..len {
        let p_a = (1.0 - slope * i as f64).max(0.0);
        let model = if rng.gen::<f64>() < p_a { a } else { b };
        let labels = sample_trace(model, rng);
        traces.push(trace_at(traces.len(), labels));
    }
    gold.gradual.push((start, start + len));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftKind {
    Sudden,
    Gradual,
}

/// How a named model is obtained in a [`DriftSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelDef {
    Builtin { builtin: String },
    Derived { from: String, edits: Vec<Edit> },
    Inline(Node),
}

fn default_slope() -> f64 {
    0.002
}

/// Generation spec: named models and the ordered segments built from them.
/// For gradual specs every boundary between consecutive segments becomes a
/// linear transition appended after the earlier segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub kind: DriftKind,
    pub models: BTreeMap<String, ModelDef>,
    pub segments: Vec<(String, usize)>,
    #[serde(default = "default_slope")]
    pub slope: f64,
}

impl DriftSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        Ok(serde_json::from_str(text)?)
    }

    fn resolve(&self, name: &str, depth: usize) -> Result<Node, SpecError> {
        if depth > self.models.len() {
            return Err(SpecError::Invalid(format!("model '{name}' is defined in a cycle")));
        }
        let def = self
            .models
            .get(name)
            .ok_or_else(|| SpecError::Invalid(format!("unknown model '{name}'")))?;
        let node = match def {
            ModelDef::Builtin { builtin } => match builtin.as_str() {
                "loan" | "base" => base_model(),
                other => return Err(SpecError::Invalid(format!("unknown builtin model '{other}'"))),
            },
            ModelDef::Derived { from, edits } => apply_edits(&self.resolve(from, depth + 1)?, edits)?,
            ModelDef::Inline(node) => node.clone(),
        };
        node.validate()?;
        Ok(node)
    }

    /// Resolved models of each segment, in order.
    pub fn segment_models(&self) -> Result<Vec<(Node, usize)>, SpecError> {
        if self.segments.is_empty() {
            return Err(SpecError::Invalid("no segments".into()));
        }
        if !(self.slope > 0.0 && self.slope <= 1.0) {
            return Err(SpecError::Invalid(format!("slope {} outside (0, 1]", self.slope)));
        }
        self.segments
            .iter()
            .map(|(name, count)| {
                if *count == 0 {
                    return Err(SpecError::Invalid(format!("segment '{name}' has no traces")));
                }
                Ok((self.resolve(name, 0)?, *count))
            })
            .collect()
    }

    pub fn generate(&self, seed: u64) -> Result<(EventLog, GoldStandard), SpecError> {
        let models = self.segment_models()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match self.kind {
            DriftKind::Sudden => {
                let segs: Vec<(&Node, usize)> = models.iter().map(|(m, c)| (m, *c)).collect();
                compose_sudden(&segs, &mut rng)
            }
            DriftKind::Gradual => {
                let mut traces = Vec::new();
                let mut gold = GoldStandard::default();
                for pair in models.windows(2) {
                    append_gradual(&mut traces, &mut gold, &pair[0].0, &pair[1].0, pair[0].1, self.slope, &mut rng);
                }
                let (last, count) = models.last().expect("non-empty");
                for _ in 0..*count {
                    let labels = sample_trace(last, &mut rng);
                    traces.push(trace_at(traces.len(), labels));
                }
                (EventLog::new(traces), gold)
            }
        })
    }
}

/// Sudden benchmark log: segments of `segment` traces alternating between
/// the base model and the pattern's altered model.
pub fn sudden_benchmark(pattern: Pattern, segments: usize, segment: usize, seed: u64) -> (EventLog, GoldStandard) {
    let (base, altered) = (base_model(), pattern.altered());
    let segs: Vec<(&Node, usize)> = (0..segments)
        .map(|i| (if i % 2 == 0 { &base } else { &altered }, segment))
        .collect();
    compose_sudden(&segs, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Gradual benchmark log: base model fading into the pattern's altered model.
pub fn gradual_benchmark(pattern: Pattern, pre: usize, post: usize, slope: f64, seed: u64) -> (EventLog, GoldStandard) {
    compose_gradual(
        &base_model(),
        &pattern.altered(),
        pre,
        post,
        slope,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}
