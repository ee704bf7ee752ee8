//! Joint search over the structure and the weights of a multi-expert system.
//!
//! A system is a DAG whose nodes are filled by experts from a pool. The
//! optimizer alternates two swarm searches: a role-step over continuous
//! adjacency matrices (decoded into DAGs) and a weight-step over expert
//! parameter vectors, credited by their frequency-weighted utility across
//! random assignments.

pub mod config;
pub mod error;
pub mod exec;
pub mod graph;
pub mod metrics;
pub mod orchestrator;
pub mod pso;
pub mod remote;
pub mod rng;
pub mod role;
pub mod store;
pub mod utility;
pub mod weight;
pub mod workers;

pub use error::{Error, Result};
pub use exec::{execute, Assignment, Expert, Message, NodeEvaluator, Payload, PositionKind};
pub use graph::{g_decode, AdjacencyMatrix, DagStructure};
pub use orchestrator::{optimize, FinalSystem, Mode, RunConfig, RunOutcome, RunState, TraceRecord};
pub use pso::{PsoHyperparams, Swarm};
pub use utility::Utility;
pub use workers::Workers;
