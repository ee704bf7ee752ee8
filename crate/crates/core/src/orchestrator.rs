//! The alternating outer loop.
//!
//! Each iteration runs a role-step and/or a weight-step (per mode and
//! dropout), then checks for improvement of the best raw utility seen so far.
//! The run stops after `patience` consecutive iterations without improvement
//! or after `max_iterations`.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Assignment, Expert};
use crate::graph::DagStructure;
use crate::pso::{PsoHyperparams, Swarm};
use crate::rng::{stream, Purpose};
use crate::role::{role_step, score_matrices, MatrixSwarm, RoleParams, RoleRecord, SparsityConfig};
use crate::utility::Utility;
use crate::weight::{expert_swarm, weight_step, WeightParams};
use crate::workers::Workers;

/// Version tag written into every checkpoint.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    RoleOnly,
    WeightOnly,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "role_only" => Ok(Mode::RoleOnly),
            "weight_only" => Ok(Mode::WeightOnly),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Skip probabilities for the two steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dropout {
    pub role: f64,
    pub weight: f64,
}

/// `distinct` experts each repeated `repeats` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub distinct: usize,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n_experts: usize,
    /// Matrix swarm size `N`.
    pub swarm_size: usize,
    /// Assignments per weight-step `M`.
    pub assignments: usize,
    pub top_p: f64,
    pub max_iterations: usize,
    pub patience: usize,
    pub role_pso: PsoHyperparams,
    pub weight_pso: PsoHyperparams,
    pub sparsity: SparsityConfig,
    pub dropout: Dropout,
    pub mode: Mode,
    pub pool: PoolSpec,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_experts: 10,
            swarm_size: 10,
            assignments: 10,
            top_p: 0.8,
            max_iterations: 20,
            patience: 6,
            role_pso: PsoHyperparams::default(),
            weight_pso: PsoHyperparams::default(),
            sparsity: SparsityConfig::default(),
            dropout: Dropout::default(),
            mode: Mode::Full,
            pool: PoolSpec { distinct: 10, repeats: 1 },
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_experts", self.n_experts),
            ("swarm_size", self.swarm_size),
            ("assignments", self.assignments),
            ("max_iterations", self.max_iterations),
            ("patience", self.patience),
            ("pool.distinct", self.pool.distinct),
            ("pool.repeats", self.pool.repeats),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be >= 1"));
            }
        }
        if self.pool.distinct * self.pool.repeats != self.n_experts {
            return Err(Error::config(
                "pool",
                format!(
                    "{} distinct x {} repeats != n_experts {}",
                    self.pool.distinct, self.pool.repeats, self.n_experts
                ),
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::config("top_p", format!("must lie in (0, 1], got {}", self.top_p)));
        }
        for (key, d) in [("dropout.role", self.dropout.role), ("dropout.weight", self.dropout.weight)] {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::config(key, format!("must lie in [0, 1], got {d}")));
            }
        }
        self.role_pso.validate().map_err(|e| prefix_key(e, "role_pso"))?;
        self.weight_pso.validate().map_err(|e| prefix_key(e, "weight_pso"))?;
        self.sparsity.validate()
    }

    fn role_params(&self) -> RoleParams {
        RoleParams { hp: self.role_pso, top_p: self.top_p, sparsity: self.sparsity, seed: self.seed }
    }

    fn weight_params(&self) -> WeightParams {
        WeightParams { hp: self.weight_pso, assignments: self.assignments, seed: self.seed }
    }

    /// Upper bound on node-evaluator calls in one iteration: `n·(N+M)·|f|`.
    pub fn call_budget(&self, dataset_size: usize) -> u64 {
        (self.n_experts * (self.swarm_size + self.assignments) * dataset_size) as u64
    }
}

fn prefix_key(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { key, message } => Error::Config { key: format!("{prefix}.{key}"), message },
        other => other,
    }
}

/// Decides which steps run this iteration. Each step is skipped with its own
/// probability; if both would be skipped, the one with the smaller skip
/// probability runs (role on ties).
pub fn dropout_gate<R: Rng + ?Sized>(d_r: f64, d_w: f64, rng: &mut R) -> (bool, bool) {
    let run_role = rng.random::<f64>() >= d_r;
    let run_weight = rng.random::<f64>() >= d_w;
    match (run_role, run_weight) {
        (false, false) if d_r <= d_w => (true, false),
        (false, false) => (false, true),
        gate => gate,
    }
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub role_step: bool,
    pub weight_step: bool,
    /// Raw utility of the best structure found so far.
    pub best_role_utility: Option<f64>,
    /// This iteration's JFK scores, when a weight-step ran.
    pub jfk_scores: Option<Vec<f64>>,
    pub best_jfk_score: Option<f64>,
    /// Best raw utility measured in this iteration.
    pub iteration_utility: f64,
    /// Best raw utility measured so far.
    pub best_utility: f64,
    pub evaluator_calls: u64,
    /// Mean edge count of the structures decoded this iteration.
    pub mean_edges: Option<f64>,
    /// Wall-clock time; kept out of the serialized trace so traces stay reproducible.
    #[serde(skip)]
    pub wall_time_ms: u128,
}

/// A concrete system: structure, placement and expert parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSystem<E> {
    pub dag: DagStructure,
    pub assignment: Assignment,
    pub experts: Vec<E>,
    pub utility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxIterations,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "E: Serialize", deserialize = "E: DeserializeOwned"))]
pub struct RunState<E> {
    pub format_version: u32,
    pub config: RunConfig,
    /// Index of the next iteration; every random stream is derived from it.
    pub next_iteration: usize,
    pub matrices: MatrixSwarm,
    pub experts: Vec<E>,
    pub expert_swarm: Option<Swarm>,
    pub record: Option<RoleRecord>,
    /// Structure used by `weight_only` runs.
    pub fixed_dag: Option<DagStructure>,
    pub best_utility: Option<f64>,
    /// The system that scored `best_utility`.
    pub best_found: Option<FinalSystem<E>>,
    pub stale: usize,
    pub setup_calls: u64,
    pub trace: Vec<TraceRecord>,
    pub stopped: Option<StopReason>,
}

impl<E: Serialize + DeserializeOwned> RunState<E> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
        let version = value.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::config("format_version", format!("unsupported checkpoint version {version:?}")));
        }
        Ok(serde_json::from_value(value)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome<E> {
    /// Best structure with identity placement and the last iteration's
    /// experts, re-measured after the loop.
    pub system: FinalSystem<E>,
    /// Highest-scoring system evaluated during the run.
    pub best_found: FinalSystem<E>,
    pub trace: Vec<TraceRecord>,
    pub stop: StopReason,
}

/// Prepares a fresh run: validates, seeds both swarms, and for `weight_only`
/// fixes the structure to the best decode of the initial matrices.
pub fn init_state<U: Utility>(
    cfg: &RunConfig,
    pool: Vec<U::Expert>,
    utility: &U,
    workers: &Workers,
) -> Result<RunState<U::Expert>> {
    cfg.validate()?;
    if pool.len() != cfg.n_experts {
        return Err(Error::config(
            "n_experts",
            format!("config says {} experts, pool has {}", cfg.n_experts, pool.len()),
        ));
    }
    let tunable = pool.iter().all(|e| e.parameters().is_some());
    if cfg.mode != Mode::RoleOnly && !tunable {
        return Err(Error::config(
            "mode",
            "weight-steps need experts with parameter vectors; use role_only for remote experts",
        ));
    }
    let matrices = MatrixSwarm::init(cfg.n_experts, cfg.swarm_size, cfg.seed)?;
    let expert_swarm = if tunable { Some(expert_swarm(&pool)?) } else { None };

    let calls_before = utility.evaluator_calls();
    let (record, fixed_dag) = if cfg.mode == Mode::WeightOnly {
        let params = cfg.role_params();
        let initial = matrices.matrices()?;
        let scored = score_matrices(&initial, &pool, utility, &params, u64::MAX, workers)?;
        let mut best: Option<RoleRecord> = None;
        for (a, (dag, u)) in initial.into_iter().zip(scored) {
            if best.as_ref().is_none_or(|b| u > b.utility) {
                best = Some(RoleRecord { matrix: a, dag, utility: u });
            }
        }
        let dag = best.as_ref().map(|b| b.dag.clone());
        (best, dag)
    } else {
        (None, None)
    };
    let best_found = record.as_ref().map(|r| FinalSystem {
        dag: r.dag.clone(),
        assignment: Assignment::identity(cfg.n_experts),
        experts: pool.clone(),
        utility: r.utility,
    });

    Ok(RunState {
        format_version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        next_iteration: 0,
        matrices,
        experts: pool,
        expert_swarm,
        record,
        fixed_dag,
        best_utility: best_found.as_ref().map(|b| b.utility),
        best_found,
        stale: 0,
        setup_calls: utility.evaluator_calls() - calls_before,
        trace: Vec::new(),
        stopped: None,
    })
}

/// Runs one iteration and appends its trace record.
pub fn run_iteration<U: Utility>(state: &mut RunState<U::Expert>, utility: &U, workers: &Workers) -> Result<()> {
    let started = Instant::now();
    let cfg = state.config.clone();
    let t = state.next_iteration;
    let (mut run_role, run_weight) = match cfg.mode {
        Mode::Full => {
            let mut rng = stream(cfg.seed, Purpose::Dropout, t as u64, 0);
            dropout_gate(cfg.dropout.role, cfg.dropout.weight, &mut rng)
        }
        Mode::RoleOnly => (true, false),
        Mode::WeightOnly => (false, true),
    };
    // A weight-step needs a structure to work on.
    if run_weight && state.record.is_none() {
        run_role = true;
    }

    let calls_before = utility.evaluator_calls();
    let mut iteration_utility = f64::NEG_INFINITY;
    let mut mean_edges = None;
    let mut jfk = None;
    let mut candidate: Option<FinalSystem<U::Expert>> = None;

    if run_role {
        let report = role_step(
            &mut state.matrices,
            &state.experts,
            utility,
            &mut state.record,
            &cfg.role_params(),
            t as u64,
            workers,
        )?;
        let i = first_max(&report.raw);
        iteration_utility = report.raw[i];
        candidate = Some(FinalSystem {
            dag: report.dags[i].clone(),
            assignment: Assignment::identity(cfg.n_experts),
            experts: state.experts.clone(),
            utility: report.raw[i],
        });
        mean_edges = Some(report.dags.iter().map(|d| d.edge_count() as f64).sum::<f64>() / report.dags.len() as f64);
    }

    if run_weight {
        let dag = match (&state.fixed_dag, &state.record) {
            (Some(d), _) => d.clone(),
            (None, Some(r)) => r.dag.clone(),
            (None, None) => return Err(Error::contract("weight-step without a structure")),
        };
        let swarm =
            state.expert_swarm.as_mut().ok_or_else(|| Error::contract("weight-step on experts without parameters"))?;
        let evaluated = state.experts.clone();
        let outcome = weight_step(&mut state.experts, swarm, &dag, utility, &cfg.weight_params(), t as u64, workers)?;
        let j = first_max(&outcome.report.utilities);
        if outcome.report.utilities[j] > iteration_utility {
            iteration_utility = outcome.report.utilities[j];
            candidate = Some(FinalSystem {
                dag,
                assignment: outcome.report.assignments[j].clone(),
                experts: evaluated,
                utility: iteration_utility,
            });
        }
        jfk = Some(outcome.report.scores);
    }

    if state.best_utility.is_none_or(|b| iteration_utility > b) {
        state.best_utility = Some(iteration_utility);
        state.best_found = candidate;
        state.stale = 0;
    } else {
        state.stale += 1;
    }

    let best_jfk_score = jfk.as_ref().map(|s: &Vec<f64>| s.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    state.trace.push(TraceRecord {
        iteration: t,
        role_step: run_role,
        weight_step: run_weight,
        best_role_utility: state.record.as_ref().map(|r| r.utility),
        jfk_scores: jfk,
        best_jfk_score,
        iteration_utility,
        best_utility: state.best_utility.unwrap_or(iteration_utility),
        evaluator_calls: utility.evaluator_calls() - calls_before,
        mean_edges,
        wall_time_ms: started.elapsed().as_millis(),
    });
    state.next_iteration += 1;
    if state.stale >= cfg.patience {
        state.stopped = Some(StopReason::Patience);
    } else if state.next_iteration >= cfg.max_iterations {
        state.stopped = Some(StopReason::MaxIterations);
    }
    Ok(())
}

/// Continues `state` until it stops, calling `checkpoint` after every
/// completed iteration, then assembles the final system.
pub fn run_to_completion<U: Utility>(
    mut state: RunState<U::Expert>,
    utility: &U,
    workers: &Workers,
    mut checkpoint: impl FnMut(&RunState<U::Expert>) -> Result<()>,
) -> Result<RunOutcome<U::Expert>> {
    while state.stopped.is_none() {
        run_iteration(&mut state, utility, workers)?;
        checkpoint(&state)?;
    }
    let stop = state.stopped.unwrap_or(StopReason::MaxIterations);
    let record = state.record.ok_or_else(|| Error::contract("run finished without a structure"))?;
    let assignment = Assignment::identity(state.config.n_experts);
    let final_utility = utility.evaluate(&record.dag, &assignment, &state.experts)?;
    let best_found = state.best_found.ok_or_else(|| Error::contract("run finished without an evaluated system"))?;
    Ok(RunOutcome {
        best_found,
        system: FinalSystem { dag: record.dag, assignment, experts: state.experts, utility: final_utility },
        trace: state.trace,
        stop,
    })
}

/// Full run from scratch without checkpointing.
pub fn optimize<U: Utility>(
    cfg: &RunConfig,
    pool: Vec<U::Expert>,
    utility: &U,
    workers: &Workers,
) -> Result<RunOutcome<U::Expert>> {
    let state = init_state(cfg, pool, utility, workers)?;
    run_to_completion(state, utility, workers, |_| Ok(()))
}

fn first_max(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Serializes a trace as JSONL, one record per line.
pub fn trace_jsonl(trace: &[TraceRecord]) -> Result<String> {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
