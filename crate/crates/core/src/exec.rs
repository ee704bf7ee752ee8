//! Topological execution of an instantiated system.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DagStructure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Vector(Vec<f64>),
    Text(String),
}

impl Payload {
    fn kind(&self) -> &'static str {
        match self {
            Payload::Vector(_) => "vector",
            Payload::Text(_) => "text",
        }
    }
}

/// A node output or the task input (`origin == None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub payload: Payload,
    pub origin: Option<usize>,
}

impl Message {
    pub fn task_vector(v: Vec<f64>) -> Self {
        Self { payload: Payload::Vector(v), origin: None }
    }

    pub fn task_text(s: impl Into<String>) -> Self {
        Self { payload: Payload::Text(s.into()), origin: None }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match &self.payload {
            Payload::Vector(v) => Some(v),
            Payload::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match &self.payload {
            Payload::Text(s) => Some(s),
            Payload::Vector(_) => None,
        }
    }
}

/// Expert occupying each graph position: `slots[k]` indexes the pool.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    /// Position `k` holds expert `k`.
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn slots(&self) -> &[usize] {
        &self.0
    }

    /// Occurrences of each expert in this assignment.
    pub fn counts(&self, pool_size: usize) -> Vec<usize> {
        let mut c = vec![0; pool_size];
        for &e in &self.0 {
            c[e] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionKind {
    Entry,
    Middle,
    End,
}

impl PositionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PositionKind::Entry => "entry",
            PositionKind::Middle => "middle",
            PositionKind::End => "end",
        }
    }
}

/// Where a node sits in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeContext {
    pub node: usize,
    /// `Entry` for any node without predecessors (including a lone end
    /// node), `End` for the end node otherwise, `Middle` for the rest.
    pub kind: PositionKind,
    pub is_end: bool,
}

/// Anything that can sit at a graph position.
pub trait Expert: Clone + Send + Sync {
    /// The tunable parameter vector, if the expert has one.
    fn parameters(&self) -> Option<&[f64]>;

    /// A copy with replaced parameters, if the expert is tunable.
    fn with_parameters(&self, params: Vec<f64>) -> Option<Self>;
}

impl Expert for Vec<f64> {
    fn parameters(&self) -> Option<&[f64]> {
        Some(self)
    }

    fn with_parameters(&self, params: Vec<f64>) -> Option<Self> {
        Some(params)
    }
}

/// Computes one node's output.
pub trait NodeEvaluator: Send + Sync {
    type Expert: Expert;

    fn evaluate(
        &self,
        ctx: &NodeContext,
        expert: &Self::Expert,
        inputs: &[Message],
        task_input: &Message,
    ) -> Result<Message>;
}

impl<E: NodeEvaluator + ?Sized> NodeEvaluator for &E {
    type Expert = E::Expert;

    fn evaluate(
        &self,
        ctx: &NodeContext,
        expert: &Self::Expert,
        inputs: &[Message],
        task_input: &Message,
    ) -> Result<Message> {
        (**self).evaluate(ctx, expert, inputs, task_input)
    }
}

/// Runs every node once in topological order and returns the end node's output.
///
/// Nodes without predecessors see only the task input; the rest also see
/// their predecessors' outputs, ordered topologically.
pub fn execute<E: NodeEvaluator + ?Sized>(
    dag: &DagStructure,
    assignment: &Assignment,
    pool: &[E::Expert],
    task_input: &Message,
    evaluator: &E,
) -> Result<Message> {
    if assignment.slots().len() != dag.n {
        return Err(Error::contract(format!(
            "assignment has {} slots for a {}-node graph",
            assignment.slots().len(),
            dag.n
        )));
    }
    if pool.is_empty() {
        return Err(Error::contract("expert pool is empty"));
    }
    if let Some(&bad) = assignment.slots().iter().find(|&&e| e >= pool.len()) {
        return Err(Error::contract(format!("assignment references expert {bad}, pool has {}", pool.len())));
    }
    let kind = task_input.payload.kind();

    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); dag.n];
    for &(u, v) in &dag.edges {
        preds[v].push(u);
    }
    let mut position = vec![0; dag.n];
    for (k, &v) in dag.topo_order.iter().enumerate() {
        position[v] = k;
    }
    for p in &mut preds {
        p.sort_by_key(|&u| position[u]);
    }

    let mut outputs: Vec<Option<Message>> = vec![None; dag.n];
    for &node in &dag.topo_order {
        let inputs: Vec<Message> = preds[node]
            .iter()
            .map(|&u| {
                outputs[u]
                    .clone()
                    .ok_or_else(|| Error::contract(format!("node {node} scheduled before predecessor {u}")))
            })
            .collect::<Result<_>>()?;
        let is_end = node == dag.end_node;
        let ctx = NodeContext {
            node,
            kind: if inputs.is_empty() {
                PositionKind::Entry
            } else if is_end {
                PositionKind::End
            } else {
                PositionKind::Middle
            },
            is_end,
        };
        let expert = &pool[assignment.slots()[node]];
        let mut out = evaluator.evaluate(&ctx, expert, &inputs, task_input).map_err(|e| match e {
            Error::Execution { .. } | Error::Remote { .. } => e,
            other => Error::Execution { node, message: other.to_string() },
        })?;
        if out.payload.kind() != kind {
            return Err(Error::contract(format!(
                "node {node} produced a {} payload in a {kind} execution",
                out.payload.kind()
            )));
        }
        out.origin = Some(node);
        outputs[node] = Some(out);
    }
    outputs[dag.end_node].take().ok_or_else(|| Error::contract("end node missing from topo_order"))
}

/// `y = W · mean(task_input, inputs…) + b` with `params = [W row-major | b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineEvaluator {
    pub dim: usize,
}

impl AffineEvaluator {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    /// Parameter count for message dimension `dim`.
    pub fn param_len(dim: usize) -> usize {
        dim * dim + dim
    }

    /// Identity weights with zero bias.
    pub fn identity_params(dim: usize) -> Vec<f64> {
        let mut p = vec![0.0; Self::param_len(dim)];
        for i in 0..dim {
            p[i * dim + i] = 1.0;
        }
        p
    }
}

/// Synthetic affine node map.
pub fn synth_affine_evaluator(params: &[f64], inputs: &[Message], task_input: &Message) -> Result<Message> {
    let d = task_input.as_vector().ok_or_else(|| Error::contract("affine evaluator needs vector payloads"))?.len();
    if params.len() != AffineEvaluator::param_len(d) {
        return Err(Error::contract(format!(
            "affine params have length {}, dimension {d} needs {}",
            params.len(),
            AffineEvaluator::param_len(d)
        )));
    }
    let mut mean = vec![0.0; d];
    let all = std::iter::once(task_input).chain(inputs);
    let mut count = 0.0;
    for m in all {
        let v = m.as_vector().ok_or_else(|| Error::contract("affine evaluator needs vector payloads"))?;
        if v.len() != d {
            return Err(Error::contract(format!("input of dimension {} , expected {d}", v.len())));
        }
        for (acc, x) in mean.iter_mut().zip(v) {
            *acc += x;
        }
        count += 1.0;
    }
    mean.iter_mut().for_each(|m| *m /= count);

    let (w, b) = params.split_at(d * d);
    let out = (0..d).map(|r| b[r] + w[r * d..(r + 1) * d].iter().zip(&mean).map(|(a, x)| a * x).sum::<f64>()).collect();
    Ok(Message { payload: Payload::Vector(out), origin: None })
}

impl NodeEvaluator for AffineEvaluator {
    type Expert = Vec<f64>;

    fn evaluate(
        &self,
        _ctx: &NodeContext,
        expert: &Vec<f64>,
        inputs: &[Message],
        task_input: &Message,
    ) -> Result<Message> {
        if task_input.as_vector().map(<[f64]>::len) != Some(self.dim) {
            return Err(Error::contract(format!("task input does not match evaluator dimension {}", self.dim)));
        }
        synth_affine_evaluator(expert, inputs, task_input)
    }
}

/// Wraps an evaluator and counts its calls.
#[derive(Debug, Default)]
pub struct CountingEvaluator<E> {
    inner: E,
    calls: AtomicU64,
}

impl<E> CountingEvaluator<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: NodeEvaluator> NodeEvaluator for CountingEvaluator<E> {
    type Expert = E::Expert;

    fn evaluate(
        &self,
        ctx: &NodeContext,
        expert: &Self::Expert,
        inputs: &[Message],
        task_input: &Message,
    ) -> Result<Message> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(ctx, expert, inputs, task_input)
    }
}
