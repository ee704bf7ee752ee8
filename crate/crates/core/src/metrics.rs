//! Post-hoc analysis of a finished system.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::TraceRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub count: usize,
    pub system_correct: usize,
}

impl Bucket {
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.system_correct as f64 / self.count as f64)
    }
}

/// Problems grouped by how many component experts solve them alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketTable {
    /// Number of component experts.
    pub experts: usize,
    /// `buckets[k]`: problems solved by exactly `k` experts.
    pub buckets: Vec<Bucket>,
    pub dataset_size: usize,
}

pub fn bucketize(per_expert_correct: &[Vec<bool>], system_correct: &[bool]) -> Result<BucketTable> {
    if per_expert_correct.len() != system_correct.len() {
        return Err(Error::contract(format!(
            "{} expert rows, {} system results",
            per_expert_correct.len(),
            system_correct.len()
        )));
    }
    let experts = per_expert_correct.first().map_or(0, Vec::len);
    if per_expert_correct.iter().any(|row| row.len() != experts) {
        return Err(Error::contract("expert rows differ in length"));
    }
    let mut buckets = vec![Bucket::default(); experts + 1];
    for (row, &ok) in per_expert_correct.iter().zip(system_correct) {
        let b = &mut buckets[row.iter().filter(|c| **c).count()];
        b.count += 1;
        b.system_correct += ok as usize;
    }
    Ok(BucketTable { experts, buckets, dataset_size: system_correct.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub gain: f64,
    /// Accuracy on problems no single expert solves; `None` when that bucket is empty.
    pub b0_rate: Option<f64>,
}

/// `Σ_{k=1..N} |B_k|/|D| · (Acc(B_k) − k/N)`. Empty buckets contribute 0.
pub fn collaborative_gain(table: &BucketTable) -> Result<GainReport> {
    if table.dataset_size == 0 || table.experts == 0 {
        return Err(Error::contract("collaborative gain needs problems and experts"));
    }
    let n = table.experts as f64;
    let d = table.dataset_size as f64;
    let gain = table
        .buckets
        .iter()
        .enumerate()
        .skip(1)
        .filter_map(|(k, b)| b.accuracy().map(|acc| b.count as f64 / d * (acc - k as f64 / n)))
        .sum();
    Ok(GainReport { gain, b0_rate: table.buckets[0].accuracy() })
}

/// Whether ablation results point the same way as the baseline averages.
/// Exact ties on either side give `false`.
pub fn ablation_consistent(wo_role: f64, wo_weight: f64, role_baseline_avg: f64, weight_baseline_avg: f64) -> bool {
    (wo_role < wo_weight && role_baseline_avg > weight_baseline_avg)
        || (wo_role > wo_weight && role_baseline_avg < weight_baseline_avg)
}

/// Four ablation numbers as read from a results file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationInput {
    pub wo_role: f64,
    pub wo_weight: f64,
    pub role_baseline_avg: f64,
    pub weight_baseline_avg: f64,
}

impl AblationInput {
    pub fn consistent(&self) -> bool {
        ablation_consistent(self.wo_role, self.wo_weight, self.role_baseline_avg, self.weight_baseline_avg)
    }
}

/// Input of the `analyze` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectnessFile {
    /// `|D| × N` per-expert correctness.
    pub per_expert: Vec<Vec<bool>>,
    pub system: Vec<bool>,
    #[serde(default)]
    pub ablations: Vec<AblationInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub buckets: BucketTable,
    pub c_gain: f64,
    pub b0_rate: Option<f64>,
    pub ablation_consistent: Vec<bool>,
}

pub fn analyze(input: &CorrectnessFile) -> Result<Report> {
    let buckets = bucketize(&input.per_expert, &input.system)?;
    let gain = collaborative_gain(&buckets)?;
    Ok(Report {
        buckets,
        c_gain: gain.gain,
        b0_rate: gain.b0_rate,
        ablation_consistent: input.ablations.iter().map(AblationInput::consistent).collect(),
    })
}

/// Per-iteration utilities as CSV for plotting.
pub fn metrics_csv(trace: &[TraceRecord]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(
        "iteration,role_step,weight_step,iteration_utility,best_utility,best_role_utility,best_jfk_score,evaluator_calls\n",
    );
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.role_step,
            r.weight_step,
            r.iteration_utility,
            r.best_utility,
            opt(r.best_role_utility),
            opt(r.best_jfk_score),
            r.evaluator_calls
        ));
    }
    out
}
