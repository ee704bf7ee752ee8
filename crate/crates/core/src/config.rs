//! TOML run configuration.
//!
//! Top-level keys map onto [`RunConfig`]; two extra tables pick the task and
//! the remote settings:
//!
//! ```toml
//! seed = 7
//! mode = "full"
//! [pool]
//! distinct = 5
//! repeats = 2
//! [sparsity]
//! mode = "threshold"
//! tau = 0.1
//! [task]
//! kind = "affine_target"
//! samples = 8
//! [remote]
//! endpoints = ["http://127.0.0.1:8080"]
//! ```
//!
//! Absent keys take their defaults; unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DagStructure;
use crate::orchestrator::{Mode, RunConfig};
use crate::remote::RemoteSettings;
use crate::utility::{AffineTaskSpec, HiddenDagUtility};

/// Built-in tasks, selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Recover a hidden DAG; defaults to the four-node diamond.
    HiddenDag {
        #[serde(default)]
        edges: Option<Vec<(usize, usize)>>,
    },
    /// Teacher and task inputs are drawn from the run seed.
    AffineTarget(AffineTaskSpec),
    Constant {
        value: f64,
    },
    /// JSONL of `{input, answer}` scored by exact match against remote experts.
    Dataset {
        path: PathBuf,
    },
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::AffineTarget(AffineTaskSpec::default())
    }
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::HiddenDag { .. } => "hidden_dag",
            TaskConfig::AffineTarget(_) => "affine_target",
            TaskConfig::Constant { .. } => "constant",
            TaskConfig::Dataset { .. } => "dataset",
        }
    }

    /// The hidden DAG of a `hidden_dag` task, checked against `n` nodes.
    pub fn hidden_target(&self, n: usize) -> Result<Option<DagStructure>> {
        let TaskConfig::HiddenDag { edges } = self else {
            return Ok(None);
        };
        let dag = match edges {
            None => HiddenDagUtility::diamond().target,
            Some(edges) => {
                DagStructure::from_edges(n, edges).map_err(|e| Error::config("task.edges", e.to_string()))?
            }
        };
        if dag.n != n {
            return Err(Error::config("n_experts", format!("hidden dag has {} nodes, n_experts is {n}", dag.n)));
        }
        Ok(Some(dag))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    /// One endpoint per distinct expert; repeated per the pool spec.
    pub endpoints: Vec<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        let s = RemoteSettings::default();
        Self { endpoints: Vec::new(), timeout_ms: s.timeout_ms, retries: s.retries, max_in_flight: s.max_in_flight }
    }
}

impl RemoteConfig {
    pub fn settings(&self) -> RemoteSettings {
        RemoteSettings { timeout_ms: self.timeout_ms, retries: self.retries, max_in_flight: self.max_in_flight }
    }
}

/// A parsed configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub run: RunConfig,
    pub task: TaskConfig,
    pub remote: RemoteConfig,
}

impl FileConfig {
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if let TaskConfig::HiddenDag { .. } = self.task {
            self.task.hidden_target(self.run.n_experts)?;
        }
        if let TaskConfig::Dataset { .. } = self.task {
            if self.run.mode != Mode::RoleOnly {
                return Err(Error::config("mode", "dataset tasks use remote experts, which support role_only only"));
            }
            if self.remote.endpoints.len() != self.run.pool.distinct {
                return Err(Error::config(
                    "remote.endpoints",
                    format!(
                        "{} endpoints for {} distinct experts",
                        self.remote.endpoints.len(),
                        self.run.pool.distinct
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Parses and validates a TOML document.
pub fn parse_config_str(text: &str) -> Result<FileConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| syntax_error(&e))?;
    let task = match table.remove("task") {
        Some(v) => from_value(v, "task.")?,
        None => TaskConfig::default(),
    };
    let remote = match table.remove("remote") {
        Some(v) => from_value(v, "remote.")?,
        None => RemoteConfig::default(),
    };
    let run: RunConfig = from_value(toml::Value::Table(table), "")?;
    let cfg = FileConfig { run, task, remote };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<FileConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

fn syntax_error(e: &toml::de::Error) -> Error {
    Error::Config { key: "<document>".to_string(), message: e.message().trim().to_string() }
}

/// Deserializes `value`, naming the offending key (with `prefix`) on error.
fn from_value<T: serde::de::DeserializeOwned>(value: toml::Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().message().trim().to_string();
        let mut key = if path == "." { String::new() } else { path };
        // Unknown and missing keys are reported against their parent table.
        let named = ["unknown field `", "missing field `"]
            .iter()
            .find_map(|p| message.strip_prefix(p))
            .and_then(|m| m.split('`').next());
        if let Some(field) = named {
            if !key.ends_with(field) {
                key = if key.is_empty() { field.to_string() } else { format!("{key}.{field}") };
            }
        }
        let key = match (prefix, key.is_empty()) {
            ("", true) => "<document>".to_string(),
            (p, true) => p.trim_end_matches('.').to_string(),
            (p, false) => format!("{p}{key}"),
        };
        Error::Config { key, message }
    })
}
