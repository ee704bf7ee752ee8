//! Utility functions: score an instantiated system, higher is better.

use std::collections::BTreeSet;
use std::marker::PhantomData;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{execute, AffineEvaluator, Assignment, CountingEvaluator, Expert, Message, NodeEvaluator};
use crate::graph::{g_decode, init_adjacency_swarm, DagStructure};
use crate::rng::{stream, Purpose};

/// Scores a DAG instantiated with an assignment from a pool.
pub trait Utility: Send + Sync {
    type Expert: Expert;

    fn evaluate(&self, dag: &DagStructure, assignment: &Assignment, pool: &[Self::Expert]) -> Result<f64>;

    /// Number of task inputs one evaluation runs (`|f|`).
    fn dataset_size(&self) -> usize;

    /// Node-evaluator calls made so far.
    fn evaluator_calls(&self) -> u64 {
        0
    }
}

/// Always returns the same value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantUtility<E = Vec<f64>> {
    pub value: f64,
    _expert: PhantomData<fn() -> E>,
}

impl<E> ConstantUtility<E> {
    pub fn new(value: f64) -> Self {
        Self { value, _expert: PhantomData }
    }
}

impl<E: Expert> Utility for ConstantUtility<E> {
    type Expert = E;

    fn evaluate(&self, _: &DagStructure, _: &Assignment, _: &[E]) -> Result<f64> {
        Ok(self.value)
    }

    fn dataset_size(&self) -> usize {
        1
    }
}

/// Number of ordered node pairs on which two edge sets disagree.
pub fn edge_edit_distance(a: &DagStructure, b: &DagStructure) -> usize {
    let ea: BTreeSet<_> = a.edges.iter().copied().collect();
    let eb: BTreeSet<_> = b.edges.iter().copied().collect();
    ea.symmetric_difference(&eb).count()
}

/// `1 − d / (n(n−1))` where `d` is the edge edit distance to a hidden DAG.
#[derive(Debug, Clone)]
pub struct HiddenDagUtility {
    pub target: DagStructure,
}

impl HiddenDagUtility {
    pub fn new(target: DagStructure) -> Self {
        Self { target }
    }

    /// Four nodes: 0 fans out to 1 and 2, which both feed 3.
    pub fn diamond() -> Self {
        Self::new(DagStructure::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]).expect("diamond is a valid dag"))
    }

    pub fn score(&self, dag: &DagStructure) -> Result<f64> {
        if dag.n != self.target.n {
            return Err(Error::contract(format!("dag has {} nodes, hidden dag has {}", dag.n, self.target.n)));
        }
        let pairs = dag.n * (dag.n - 1);
        if pairs == 0 {
            return Ok(1.0);
        }
        Ok(1.0 - edge_edit_distance(dag, &self.target) as f64 / pairs as f64)
    }
}

impl Utility for HiddenDagUtility {
    type Expert = Vec<f64>;

    fn evaluate(&self, dag: &DagStructure, _: &Assignment, _: &[Vec<f64>]) -> Result<f64> {
        self.score(dag)
    }

    fn dataset_size(&self) -> usize {
        1
    }
}

/// Settings of the synthetic affine-target task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffineTaskSpec {
    /// Message dimension.
    pub dim: usize,
    /// Task inputs per evaluation (`|f|`).
    pub samples: usize,
    /// Diagonal of the shared base weight matrix.
    pub base_gain: f64,
    /// Std-dev of the shared base weights around `base_gain · I`.
    pub base_spread: f64,
    /// Std-dev of each teacher expert around the shared base.
    pub teacher_spread: f64,
    /// Std-dev of the offset shared by every pool expert.
    pub pool_bias: f64,
    /// Std-dev of the per-expert noise on top of the shared offset.
    pub pool_noise: f64,
}

impl Default for AffineTaskSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            samples: 8,
            base_gain: 0.5,
            base_spread: 0.2,
            teacher_spread: 0.05,
            pool_bias: 0.0,
            pool_noise: 0.3,
        }
    }
}

/// Regression onto the output of a hidden teacher system.
///
/// The teacher is a random DAG over `n` affine experts that are small
/// perturbations of one shared base map. Utility is
/// `−mean_k ‖system(x_k) − teacher(x_k)‖²` over fixed inputs `x_k`.
#[derive(Debug)]
pub struct AffineTargetUtility {
    pub spec: AffineTaskSpec,
    pub teacher_dag: DagStructure,
    pub teacher_experts: Vec<Vec<f64>>,
    inputs: Vec<Message>,
    targets: Vec<Vec<f64>>,
    evaluator: CountingEvaluator<AffineEvaluator>,
}

fn normal(key: &str, std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::config(key, e.to_string()))
}

impl AffineTargetUtility {
    /// Draws a teacher with `n` experts and the task inputs from `seed`.
    pub fn generate(spec: AffineTaskSpec, n: usize, seed: u64) -> Result<Self> {
        if spec.dim == 0 || spec.samples == 0 || n == 0 {
            return Err(Error::config("task", "dim, samples and n_experts must be >= 1"));
        }
        let d = spec.dim;
        let mut rng = stream(seed, Purpose::Task, 0, 0);
        let base_noise = normal("task.base_spread", spec.base_spread)?;
        let spread = normal("task.teacher_spread", spec.teacher_spread)?;
        normal("task.pool_bias", spec.pool_bias)?;
        normal("task.pool_noise", spec.pool_noise)?;

        let matrix = init_adjacency_swarm(n, 1, &mut rng)?.remove(0);
        let teacher_dag = g_decode(&matrix, 0.8, &mut rng)?;
        let mut base = AffineEvaluator::identity_params(d);
        for w in &mut base[..d * d] {
            *w = *w * spec.base_gain + base_noise.sample(&mut rng);
        }
        for b in &mut base[d * d..] {
            *b = rng.random_range(-1.0..1.0);
        }
        let teacher_experts: Vec<Vec<f64>> =
            (0..n).map(|_| base.iter().map(|w| w + spread.sample(&mut rng)).collect()).collect();
        let inputs: Vec<Message> = (0..spec.samples)
            .map(|_| Message::task_vector((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let teacher_eval = AffineEvaluator::new(d);
        let targets = inputs
            .iter()
            .map(|x| {
                let out = execute(&teacher_dag, &Assignment::identity(n), &teacher_experts, x, &teacher_eval)?;
                Ok(out.as_vector().map(<[f64]>::to_vec).unwrap_or_default())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            spec,
            teacher_dag,
            teacher_experts,
            inputs,
            targets,
            evaluator: CountingEvaluator::new(AffineEvaluator::new(d)),
        })
    }

    /// Initial pool of `distinct × repeats` experts: the first `distinct`
    /// teacher experts moved by one shared offset plus per-expert noise,
    /// each repeated.
    pub fn initial_pool(&self, distinct: usize, repeats: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if distinct == 0 || repeats == 0 || distinct > self.teacher_experts.len() {
            return Err(Error::config(
                "pool",
                format!("pool {distinct}x{repeats} does not fit {} teacher experts", self.teacher_experts.len()),
            ));
        }
        let mut rng = stream(seed, Purpose::InitExperts, 0, 0);
        let bias = normal("task.pool_bias", self.spec.pool_bias)?;
        let noise = normal("task.pool_noise", self.spec.pool_noise)?;
        let offset: Vec<f64> = (0..self.teacher_experts[0].len()).map(|_| bias.sample(&mut rng)).collect();
        let mut pool = Vec::with_capacity(distinct * repeats);
        for teacher in &self.teacher_experts[..distinct] {
            let expert: Vec<f64> = teacher.iter().zip(&offset).map(|(w, o)| w + o + noise.sample(&mut rng)).collect();
            pool.extend(std::iter::repeat_n(expert, repeats));
        }
        Ok(pool)
    }
}

impl Utility for AffineTargetUtility {
    type Expert = Vec<f64>;

    fn evaluate(&self, dag: &DagStructure, assignment: &Assignment, pool: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let out = execute(dag, assignment, pool, x, &self.evaluator)?;
            let out = out.as_vector().unwrap_or_default();
            total += out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(-total / self.inputs.len() as f64)
    }

    fn dataset_size(&self) -> usize {
        self.inputs.len()
    }

    fn evaluator_calls(&self) -> u64 {
        self.evaluator.calls()
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetItem {
    pub input: String,
    pub answer: String,
}

/// Reads a JSONL file of `{"input": ..., "answer": ...}` records.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>> {
    let text = std::fs::read_to_string(path)?;
    let items = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<Vec<DatasetItem>, _>>()?;
    if items.is_empty() {
        return Err(Error::config("task.path", "dataset is empty"));
    }
    Ok(items)
}

/// Fraction of dataset items whose end-node text equals the answer after trimming.
#[derive(Debug)]
pub struct ExactMatchUtility<E> {
    items: Vec<DatasetItem>,
    evaluator: CountingEvaluator<E>,
}

impl<E: NodeEvaluator> ExactMatchUtility<E> {
    pub fn new(items: Vec<DatasetItem>, evaluator: E) -> Self {
        Self { items, evaluator: CountingEvaluator::new(evaluator) }
    }

    /// Per-item correctness of one system.
    pub fn correctness(&self, dag: &DagStructure, assignment: &Assignment, pool: &[E::Expert]) -> Result<Vec<bool>> {
        self.items
            .iter()
            .map(|item| {
                let out = execute(dag, assignment, pool, &Message::task_text(item.input.clone()), &self.evaluator)?;
                Ok(out.as_text().map(str::trim) == Some(item.answer.trim()))
            })
            .collect()
    }
}

impl<E: NodeEvaluator> Utility for ExactMatchUtility<E> {
    type Expert = E::Expert;

    fn evaluate(&self, dag: &DagStructure, assignment: &Assignment, pool: &[E::Expert]) -> Result<f64> {
        let correct = self.correctness(dag, assignment, pool)?;
        Ok(correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64)
    }

    fn dataset_size(&self) -> usize {
        self.items.len()
    }

    fn evaluator_calls(&self) -> u64 {
        self.evaluator.calls()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{NodeContext, Payload};

    #[test]
    fn hidden_dag_scores() {
        let u = HiddenDagUtility::diamond();
        assert_eq!(u.score(&u.target).unwrap(), 1.0);
        let chain = DagStructure::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        // chain vs diamond: {0->2, 1->3} missing, {1->2} extra
        assert!((u.score(&chain).unwrap() - (1.0 - 3.0 / 12.0)).abs() < 1e-12);
        let small = DagStructure::from_edges(2, &[(0, 1)]).unwrap();
        assert!(u.score(&small).is_err());
    }

    #[test]
    fn from_edges_derives_structure() {
        let d = DagStructure::from_edges(4, &[(2, 3), (0, 1), (0, 2), (1, 3)]).unwrap();
        assert_eq!(d.end_node, 3);
        assert_eq!(d.topo_order, vec![0, 1, 2, 3]);
        assert!(DagStructure::from_edges(3, &[(0, 1)]).is_err());
        assert!(DagStructure::from_edges(2, &[(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn affine_teacher_scores_zero_on_itself() {
        let u = AffineTargetUtility::generate(AffineTaskSpec::default(), 5, 3).unwrap();
        let score = u.evaluate(&u.teacher_dag, &Assignment::identity(5), &u.teacher_experts).unwrap();
        assert!(score.abs() < 1e-20);
        assert_eq!(u.evaluator_calls(), 5 * 8);
        let pool = u.initial_pool(5, 1, 3).unwrap();
        let worse = u.evaluate(&u.teacher_dag, &Assignment::identity(5), &pool).unwrap();
        assert!(worse < 0.0);
    }

    #[test]
    fn initial_pool_repeats() {
        let u = AffineTargetUtility::generate(AffineTaskSpec::default(), 6, 1).unwrap();
        let pool = u.initial_pool(2, 3, 1).unwrap();
        assert_eq!(pool.len(), 6);
        assert_eq!(pool[0], pool[2]);
        assert_ne!(pool[2], pool[3]);
        assert!(u.initial_pool(7, 1, 1).is_err());
    }

    #[test]
    fn exact_match_counts_trimmed_answers() {
        struct Upper;
        impl NodeEvaluator for Upper {
            type Expert = Vec<f64>;
            fn evaluate(&self, _: &NodeContext, _: &Vec<f64>, _: &[Message], t: &Message) -> Result<Message> {
                Ok(Message {
                    payload: Payload::Text(format!(" {} ", t.as_text().unwrap().to_uppercase())),
                    origin: None,
                })
            }
        }
        let items = vec![
            DatasetItem { input: "a".into(), answer: "A".into() },
            DatasetItem { input: "b".into(), answer: "c".into() },
        ];
        let u = ExactMatchUtility::new(items, Upper);
        let dag = DagStructure::from_edges(1, &[]).unwrap();
        assert_eq!(u.evaluate(&dag, &Assignment::identity(1), &[vec![]]).unwrap(), 0.5);
        assert_eq!(u.dataset_size(), 2);
        assert_eq!(u.evaluator_calls(), 2);
    }

    #[test]
    fn dataset_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"input\":\"q\",\"answer\":\"a\"}\n\n").unwrap();
        assert_eq!(load_dataset(&path).unwrap().len(), 1);
        std::fs::write(&path, "{\"input\":\"q\"}\n").unwrap();
        assert!(load_dataset(&path).is_err());
    }
}
