//! Role-step: search over graph structure.
//!
//! Each particle of the matrix swarm is a flattened `n × n` adjacency
//! matrix. A step decodes every matrix once, scores the decoded DAG with
//! the identity assignment (position `i` holds expert `i`), and moves the
//! swarm on those scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Assignment;
use crate::graph::{g_decode, init_adjacency_swarm, prune_threshold, AdjacencyMatrix, DagStructure};
use crate::pso::{PsoHyperparams, Swarm};
use crate::rng::{stream, Purpose};
use crate::utility::Utility;
use crate::workers::Workers;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    #[default]
    None,
    Threshold,
    L1,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparsityConfig {
    pub mode: SparsityMode,
    /// Pruning threshold, used when `mode = threshold`.
    pub tau: f64,
    /// Penalty weight on ‖A‖₁, used when `mode = l1`.
    pub l1_coeff: f64,
}

impl SparsityConfig {
    pub const TAU_PRESETS: [f64; 3] = [0.05, 0.1, 0.2];
    pub const L1_PRESETS: [f64; 3] = [0.01, 0.05, 0.1];

    pub fn threshold(tau: f64) -> Self {
        Self { mode: SparsityMode::Threshold, tau, l1_coeff: 0.0 }
    }

    pub fn l1(l1_coeff: f64) -> Self {
        Self { mode: SparsityMode::L1, tau: 0.0, l1_coeff }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("sparsity.tau", format!("must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.l1_coeff >= 0.0 && self.l1_coeff.is_finite()) {
            return Err(Error::config("sparsity.l1_coeff", format!("must be >= 0, got {}", self.l1_coeff)));
        }
        Ok(())
    }

    /// The matrix actually decoded for a swarm member.
    pub fn decode_view(&self, a: &AdjacencyMatrix) -> Result<AdjacencyMatrix> {
        match self.mode {
            SparsityMode::Threshold => prune_threshold(a, self.tau),
            _ => Ok(a.clone()),
        }
    }
}

/// Score handed to the swarm: `raw − l1_coeff·‖A‖₁` in L1 mode, `raw` otherwise.
pub fn shaped_utility(raw: f64, a: &AdjacencyMatrix, cfg: &SparsityConfig) -> f64 {
    match cfg.mode {
        SparsityMode::L1 => raw - cfg.l1_coeff * a.l1_norm(),
        SparsityMode::None | SparsityMode::Threshold => raw,
    }
}

/// Best structure seen so far, frozen at the decode that set it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleRecord {
    pub matrix: AdjacencyMatrix,
    pub dag: DagStructure,
    /// Unshaped utility of `dag`.
    pub utility: f64,
}

/// Swarm of flattened adjacency matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSwarm {
    pub n: usize,
    pub swarm: Swarm,
}

impl MatrixSwarm {
    pub fn init(n: usize, count: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Purpose::InitMatrices, 0, 0);
        let matrices = init_adjacency_swarm(n, count, &mut rng)?;
        Ok(Self::from_matrices(n, &matrices))
    }

    pub fn from_matrices(n: usize, matrices: &[AdjacencyMatrix]) -> Self {
        Self { n, swarm: Swarm::new(matrices.iter().map(|m| m.as_flat().to_vec()).collect()) }
    }

    pub fn matrices(&self) -> Result<Vec<AdjacencyMatrix>> {
        self.swarm.positions().map(|p| AdjacencyMatrix::from_flat(self.n, p.to_vec())).collect()
    }

    fn clamp(&mut self) {
        for p in &mut self.swarm.particles {
            p.position.iter_mut().for_each(|a| *a = a.clamp(0.0, 1.0));
        }
    }
}

/// Settings shared by every role-step of a run.
#[derive(Debug, Clone, Copy)]
pub struct RoleParams {
    pub hp: PsoHyperparams,
    pub top_p: f64,
    pub sparsity: SparsityConfig,
    pub seed: u64,
}

/// What one role-step saw.
#[derive(Debug, Clone)]
pub struct RoleStepReport {
    pub dags: Vec<DagStructure>,
    pub raw: Vec<f64>,
    pub shaped: Vec<f64>,
    pub best_index: usize,
}

/// Decodes and scores every matrix in `swarm` without moving it.
pub fn score_matrices<U: Utility>(
    matrices: &[AdjacencyMatrix],
    pool: &[U::Expert],
    utility: &U,
    params: &RoleParams,
    iteration: u64,
    workers: &Workers,
) -> Result<Vec<(DagStructure, f64)>> {
    let n = matrices.first().map_or(0, AdjacencyMatrix::n);
    if pool.len() < n {
        return Err(Error::contract(format!("identity assignment needs {n} experts, pool has {}", pool.len())));
    }
    let assignment = Assignment::identity(n);
    workers
        .map(matrices, |i, a| {
            let mut rng = stream(params.seed, Purpose::RoleDecode, iteration, i as u64);
            let dag = g_decode(&params.sparsity.decode_view(a)?, params.top_p, &mut rng)?;
            let raw = utility.evaluate(&dag, &assignment, pool).map_err(|e| Error::Utility {
                what: "matrix",
                index: i,
                source: Box::new(e),
            })?;
            Ok((dag, raw))
        })
        .into_iter()
        .collect()
}

/// One role-step. Updates `record` when a raw utility beats it.
pub fn role_step<U: Utility>(
    swarm: &mut MatrixSwarm,
    pool: &[U::Expert],
    utility: &U,
    record: &mut Option<RoleRecord>,
    params: &RoleParams,
    iteration: u64,
    workers: &Workers,
) -> Result<RoleStepReport> {
    if swarm.swarm.is_empty() {
        return Err(Error::contract("matrix swarm is empty"));
    }
    params.sparsity.validate()?;
    let matrices = swarm.matrices()?;
    let scored = score_matrices(&matrices, pool, utility, params, iteration, workers)?;

    let (dags, raw): (Vec<DagStructure>, Vec<f64>) = scored.into_iter().unzip();
    let shaped: Vec<f64> = raw.iter().zip(&matrices).map(|(&r, a)| shaped_utility(r, a, &params.sparsity)).collect();

    for ((a, dag), &u) in matrices.iter().zip(&dags).zip(&raw) {
        if record.as_ref().is_none_or(|r| u > r.utility) {
            *record = Some(RoleRecord { matrix: a.clone(), dag: dag.clone(), utility: u });
        }
    }

    let mut rng = stream(params.seed, Purpose::RolePso, iteration, 0);
    let best_index = swarm.swarm.step(&shaped, &params.hp, &mut rng)?;
    swarm.clamp();
    Ok(RoleStepReport { dags, raw, shaped, best_index })
}
