//! Weight-step: credit assignment over random assignments, then a swarm
//! step over expert parameter vectors.
//!
//! An expert's JFK score is its frequency-weighted mean utility over the
//! sampled assignments:
//!
//! ```text
//! score_i = Σ_j cnt[j][i] · f(X_j) / Σ_j cnt[j][i]
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Assignment, Expert};
use crate::graph::DagStructure;
use crate::pso::{PsoHyperparams, Swarm};
use crate::rng::{stream, Purpose};
use crate::utility::Utility;
use crate::workers::Workers;

/// Samples `m` assignments of `pool_size` experts into the graph's positions.
///
/// Slots are uniform over the pool. When `m · n >= pool_size`, experts that
/// never appeared are then placed into uniformly chosen slots whose current
/// occupant appears more than once overall, so coverage is complete.
pub fn sample_assignments<R: Rng + ?Sized>(
    dag: &DagStructure,
    pool_size: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Assignment>> {
    if pool_size == 0 || m == 0 {
        return Err(Error::contract(format!("need pool_size >= 1 and M >= 1 (got {pool_size}, {m})")));
    }
    let n = dag.n;
    let mut slots: Vec<Vec<usize>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(0..pool_size)).collect()).collect();

    if m * n >= pool_size {
        let mut totals = vec![0usize; pool_size];
        slots.iter().flatten().for_each(|&e| totals[e] += 1);
        for missing in 0..pool_size {
            if totals[missing] > 0 {
                continue;
            }
            let donors: Vec<(usize, usize)> =
                (0..m).flat_map(|j| (0..n).map(move |k| (j, k))).filter(|&(j, k)| totals[slots[j][k]] > 1).collect();
            // Pigeonhole: with m·n >= pool_size and one expert absent, some
            // expert occupies two or more slots.
            let (j, k) = donors[rng.random_range(0..donors.len())];
            totals[slots[j][k]] -= 1;
            slots[j][k] = missing;
            totals[missing] = 1;
        }
    }
    Ok(slots.into_iter().map(Assignment).collect())
}

/// Frequency-weighted mean utility of each expert. Experts that appear in no
/// assignment get the plain mean of all utilities.
pub fn jfk_scores(assignments: &[Assignment], utilities: &[f64], pool_size: usize) -> Result<Vec<f64>> {
    if assignments.is_empty() || assignments.len() != utilities.len() {
        return Err(Error::contract(format!("{} assignments with {} utilities", assignments.len(), utilities.len())));
    }
    if assignments.iter().flat_map(Assignment::slots).any(|&e| e >= pool_size) {
        return Err(Error::contract("assignment references an expert outside the pool"));
    }
    // Accumulate offsets from the first utility so equal utilities give
    // exactly equal scores.
    let base = utilities[0];
    let mut weighted = vec![0.0; pool_size];
    let mut counts = vec![0usize; pool_size];
    for (a, &u) in assignments.iter().zip(utilities) {
        for (i, c) in a.counts(pool_size).into_iter().enumerate() {
            weighted[i] += c as f64 * (u - base);
            counts[i] += c;
        }
    }
    let mean = base + utilities.iter().map(|u| u - base).sum::<f64>() / utilities.len() as f64;
    Ok(weighted.into_iter().zip(counts).map(|(w, c)| if c == 0 { mean } else { base + w / c as f64 }).collect())
}

/// Assignments, their utilities and the resulting credit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JfkReport {
    pub assignments: Vec<Assignment>,
    pub utilities: Vec<f64>,
    /// `counts[j][i]`: occurrences of expert `i` in assignment `j`.
    pub counts: Vec<Vec<usize>>,
    pub scores: Vec<f64>,
}

impl JfkReport {
    pub fn build(assignments: Vec<Assignment>, utilities: Vec<f64>, pool_size: usize) -> Result<Self> {
        let scores = jfk_scores(&assignments, &utilities, pool_size)?;
        let counts = assignments.iter().map(|a| a.counts(pool_size)).collect();
        Ok(Self { assignments, utilities, counts, scores })
    }

    pub fn best_utility(&self) -> f64 {
        self.utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WeightParams {
    pub hp: PsoHyperparams,
    /// Assignments sampled per step.
    pub assignments: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct WeightStepOutcome {
    pub best_index: usize,
    pub report: JfkReport,
}

/// Builds the expert swarm from the pool's parameter vectors.
pub fn expert_swarm<E: Expert>(experts: &[E]) -> Result<Swarm> {
    let positions = experts
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.parameters()
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::contract(format!("expert {i} has no tunable parameters")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Swarm::new(positions))
}

/// One weight-step on `dag`: sample, evaluate, score, move. `experts` is
/// rewritten from the moved swarm.
pub fn weight_step<U: Utility>(
    experts: &mut [U::Expert],
    swarm: &mut Swarm,
    dag: &DagStructure,
    utility: &U,
    params: &WeightParams,
    iteration: u64,
    workers: &Workers,
) -> Result<WeightStepOutcome> {
    if experts.len() != swarm.len() || experts.is_empty() {
        return Err(Error::contract("expert pool and expert swarm differ in size"));
    }
    let mut rng = stream(params.seed, Purpose::Assignments, iteration, 0);
    let assignments = sample_assignments(dag, experts.len(), params.assignments, &mut rng)?;

    let pool: &[U::Expert] = experts;
    let utilities = workers
        .map(&assignments, |j, a| {
            utility.evaluate(dag, a, pool).map_err(|e| Error::Utility {
                what: "assignment",
                index: j,
                source: Box::new(e),
            })
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;

    let report = JfkReport::build(assignments, utilities, experts.len())?;
    let mut rng = stream(params.seed, Purpose::WeightPso, iteration, 0);
    let best_index = swarm.step(&report.scores, &params.hp, &mut rng)?;

    for (e, p) in experts.iter_mut().zip(&swarm.particles) {
        *e = e
            .with_parameters(p.position.clone())
            .ok_or_else(|| Error::contract("expert parameters cannot be replaced"))?;
    }
    Ok(WeightStepOutcome { best_index, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::utility::ConstantUtility;

    fn chain(n: usize) -> DagStructure {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        DagStructure::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn single_expert_pool() {
        let a = sample_assignments(&chain(4), 1, 5, &mut seeded(0)).unwrap();
        assert!(a.iter().all(|x| x.slots() == [0, 0, 0, 0]));
        assert!(sample_assignments(&chain(4), 0, 5, &mut seeded(0)).is_err());
        assert!(sample_assignments(&chain(4), 3, 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn coverage_repair_covers_every_expert() {
        let mut rng = seeded(1);
        for _ in 0..500 {
            let a = sample_assignments(&chain(10), 10, 10, &mut rng).unwrap();
            assert_eq!(a.len(), 10);
            let mut seen = [false; 10];
            a.iter().flat_map(Assignment::slots).for_each(|&e| seen[e] = true);
            assert!(seen.iter().all(|s| *s));
            assert!(a.iter().all(|x| x.slots().len() == 10));
        }
        // m·n exactly equals the pool size: every expert exactly once.
        let a = sample_assignments(&chain(3), 6, 2, &mut rng).unwrap();
        let mut all: Vec<usize> = a.iter().flat_map(|x| x.slots().to_vec()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn slot_frequencies_uniform() {
        // With m·n < pool_size no repair runs, so draws are plain uniform.
        let mut rng = seeded(2);
        let pool = 5;
        let mut counts = [0usize; 5];
        let mut total = 0;
        while total < 100_000 {
            for a in sample_assignments(&chain(1), pool, 4, &mut rng).unwrap() {
                counts[a.slots()[0]] += 1;
                total += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / total as f64 - 0.2).abs() < 0.02);
        }
    }

    #[test]
    fn jfk_hand_case() {
        let a = vec![Assignment(vec![0, 0, 1]), Assignment(vec![1, 1, 0])];
        let s = jfk_scores(&a, &[0.9, 0.3], 2).unwrap();
        assert!((s[0] - 0.7).abs() < 1e-15);
        assert!((s[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn jfk_uniform_and_uncovered() {
        let a = vec![Assignment(vec![0, 1]), Assignment(vec![1, 1])];
        let s = jfk_scores(&a, &[0.4, 0.4], 3).unwrap();
        assert_eq!(s, vec![0.4, 0.4, 0.4]);
        let s = jfk_scores(&a, &[1.0, 0.0], 3).unwrap();
        assert_eq!(s[0], 1.0);
        assert_eq!(s[2], 0.5);
        assert!(jfk_scores(&[], &[], 2).is_err());
        assert!(jfk_scores(&a, &[1.0], 2).is_err());
        assert!(jfk_scores(&a, &[1.0, 1.0], 1).is_err());
    }

    #[test]
    fn report_counts_rows_sum_to_n() {
        let a = sample_assignments(&chain(4), 3, 6, &mut seeded(3)).unwrap();
        let r = JfkReport::build(a, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 3).unwrap();
        assert!(r.counts.iter().all(|row| row.iter().sum::<usize>() == 4));
    }

    #[test]
    fn single_expert_weight_step() {
        let dag = chain(3);
        let mut experts = vec![vec![0.5, -0.5]];
        let mut swarm = expert_swarm(&experts).unwrap();
        let params = WeightParams { hp: PsoHyperparams::default(), assignments: 4, seed: 0 };
        let out =
            weight_step(&mut experts, &mut swarm, &dag, &ConstantUtility::new(0.3), &params, 0, &Workers::sequential())
                .unwrap();
        assert_eq!(out.report.scores, vec![0.3]);
        assert_eq!(out.best_index, 0);
        assert_eq!(experts[0], vec![0.5, -0.5]);
    }
}
