//! Builds the utility and initial pool named by a config's `[task]` table.

use heteroswarm::config::{FileConfig, TaskConfig};
use heteroswarm::remote::{Endpoint, RemoteEvaluator};
use heteroswarm::utility::{load_dataset, AffineTargetUtility, ConstantUtility, ExactMatchUtility, HiddenDagUtility};
use heteroswarm::{Assignment, DagStructure, Result, Utility};

/// Built-in tasks whose experts are parameter vectors.
pub enum VectorUtility {
    Hidden(HiddenDagUtility),
    Affine(AffineTargetUtility),
    Constant(ConstantUtility),
}

impl Utility for VectorUtility {
    type Expert = Vec<f64>;

    fn evaluate(&self, dag: &DagStructure, assignment: &Assignment, pool: &[Vec<f64>]) -> Result<f64> {
        match self {
            VectorUtility::Hidden(u) => u.evaluate(dag, assignment, pool),
            VectorUtility::Affine(u) => u.evaluate(dag, assignment, pool),
            VectorUtility::Constant(u) => u.evaluate(dag, assignment, pool),
        }
    }

    fn dataset_size(&self) -> usize {
        match self {
            VectorUtility::Hidden(u) => u.dataset_size(),
            VectorUtility::Affine(u) => u.dataset_size(),
            VectorUtility::Constant(u) => u.dataset_size(),
        }
    }

    fn evaluator_calls(&self) -> u64 {
        match self {
            VectorUtility::Hidden(u) => u.evaluator_calls(),
            VectorUtility::Affine(u) => u.evaluator_calls(),
            VectorUtility::Constant(u) => u.evaluator_calls(),
        }
    }
}

pub enum Task {
    Vector { utility: VectorUtility, pool: Vec<Vec<f64>> },
    Remote { utility: ExactMatchUtility<RemoteEvaluator>, pool: Vec<Endpoint> },
}

/// Instantiates the task. `task_seed` fixes the affine teacher, its inputs
/// and the initial pool.
pub fn build(cfg: &FileConfig, task_seed: u64) -> Result<Task> {
    let run = &cfg.run;
    // Structure-only tasks never read expert parameters; one placeholder each.
    let placeholders = vec![vec![0.0]; run.n_experts];
    Ok(match &cfg.task {
        TaskConfig::HiddenDag { .. } => {
            let target = cfg.task.hidden_target(run.n_experts)?.unwrap_or_else(|| HiddenDagUtility::diamond().target);
            Task::Vector { utility: VectorUtility::Hidden(HiddenDagUtility::new(target)), pool: placeholders }
        }
        TaskConfig::Constant { value } => {
            Task::Vector { utility: VectorUtility::Constant(ConstantUtility::new(*value)), pool: placeholders }
        }
        TaskConfig::AffineTarget(spec) => {
            let utility = AffineTargetUtility::generate(*spec, run.n_experts, task_seed)?;
            let pool = utility.initial_pool(run.pool.distinct, run.pool.repeats, task_seed)?;
            Task::Vector { utility: VectorUtility::Affine(utility), pool }
        }
        TaskConfig::Dataset { path } => {
            let evaluator = RemoteEvaluator::new(cfg.remote.settings())?.with_env_override();
            let pool = cfg
                .remote
                .endpoints
                .iter()
                .flat_map(|url| std::iter::repeat_n(Endpoint::new(url.clone()), run.pool.repeats))
                .collect();
            Task::Remote { utility: ExactMatchUtility::new(load_dataset(path)?, evaluator), pool }
        }
    })
}
