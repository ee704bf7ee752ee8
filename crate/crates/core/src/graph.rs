//! Continuous adjacency matrices and their decoding into DAGs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor added to out-degrees before taking reciprocals when picking the end node.
pub const INVERSE_DEGREE_EPS: f64 = 1e-6;

/// An `n × n` matrix whose entry `(i, j)` is the likelihood of edge `i → j`.
///
/// Entries always lie in `[0, 1]`; constructors clamp. The diagonal is kept
/// (swarm particles move it like any other entry) but never read by decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct AdjacencyMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl AdjacencyMatrix {
    /// Builds from row-major entries, clamping each into `[0, 1]`.
    pub fn from_flat(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("adjacency matrix needs n >= 1"));
        }
        if entries.len() != n * n {
            return Err(Error::contract(format!("{} entries for a {n}x{n} matrix", entries.len())));
        }
        if entries.iter().any(|a| a.is_nan()) {
            return Err(Error::contract("adjacency entry is NaN"));
        }
        let entries = entries.into_iter().map(|a| a.clamp(0.0, 1.0)).collect();
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::contract("adjacency matrix must be square"));
        }
        Self::from_flat(n, rows.into_iter().flatten().collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Row sum excluding the diagonal.
    pub fn out_degree(&self, i: usize) -> f64 {
        (0..self.n).filter(|&j| j != i).map(|j| self.get(i, j)).sum()
    }

    /// Σ|a_ij| over off-diagonal entries.
    pub fn l1_norm(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            total += self.out_degree(i);
        }
        total
    }

    /// Number of strictly positive off-diagonal entries.
    pub fn support_size(&self) -> usize {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j) > 0.0)
            .count()
    }
}

impl TryFrom<Vec<Vec<f64>>> for AdjacencyMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<AdjacencyMatrix> for Vec<Vec<f64>> {
    fn from(m: AdjacencyMatrix) -> Self {
        m.rows()
    }
}

/// `count` matrices with i.i.d. `U(0, 1)` entries.
pub fn init_adjacency_swarm<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Result<Vec<AdjacencyMatrix>> {
    if n == 0 || count == 0 {
        return Err(Error::contract(format!("adjacency swarm needs n >= 1 and count >= 1 (got n={n}, count={count})")));
    }
    (0..count).map(|_| AdjacencyMatrix::from_flat(n, (0..n * n).map(|_| rng.random()).collect())).collect()
}

/// Zeroes every entry not strictly above `tau`.
pub fn prune_threshold(a: &AdjacencyMatrix, tau: f64) -> Result<AdjacencyMatrix> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::contract(format!("threshold tau={tau} outside [0, 1]")));
    }
    let entries = a.entries.iter().map(|&v| if v > tau { v } else { 0.0 }).collect();
    Ok(AdjacencyMatrix { n: a.n, entries })
}

/// Nucleus sampling over non-negative scores.
///
/// Scores are normalized, sorted descending (stable, so ties keep index
/// order), and the shortest prefix with mass `>= p` is sampled in proportion
/// to its scores. All-zero scores fall back to a uniform draw.
pub fn top_p_sample<R: Rng + ?Sized>(scores: &[f64], p: f64, rng: &mut R) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::contract("top-p sampling over an empty score list"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::contract(format!("top-p mass p={p} outside (0, 1]")));
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::contract("top-p scores must be finite and non-negative"));
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Ok(rng.random_range(0..scores.len()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut kept = 0;
    let mut mass = 0.0;
    for &i in &order {
        kept += 1;
        mass += scores[i] / total;
        if mass >= p {
            break;
        }
    }
    let prefix = &order[..kept];
    let prefix_total: f64 = prefix.iter().map(|&i| scores[i]).sum();

    let u = rng.random::<f64>() * prefix_total;
    let mut acc = 0.0;
    for &i in prefix {
        acc += scores[i];
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding left u at the top edge; return the last positive entry.
    Ok(*prefix.iter().rev().find(|&&i| scores[i] > 0.0).unwrap_or(&prefix[0]))
}

/// A decoded DAG with a designated end node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DagStructure {
    pub n: usize,
    pub end_node: usize,
    /// Directed edges `(u, v)`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Every edge runs from an earlier to a later entry; `end_node` is last.
    pub topo_order: Vec<usize>,
}

impl DagStructure {
    /// Builds a DAG from an edge list, deriving the end node and a
    /// topological order (Kahn, lowest id first). The result must satisfy
    /// [`validate`](Self::validate).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("dag needs n >= 1"));
        }
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
            return Err(Error::contract(format!("edge {u}->{v} out of range for n={n}")));
        }
        let mut edges: Vec<(usize, usize)> = edges.to_vec();
        edges.sort_unstable();
        edges.dedup();
        let sinks: Vec<usize> = (0..n).filter(|&u| edges.iter().all(|&(s, _)| s != u)).collect();
        let [end_node] = sinks[..] else {
            return Err(Error::contract(format!("dag must have exactly one sink, found {}", sinks.len())));
        };
        let mut indeg = vec![0usize; n];
        for &(_, v) in &edges {
            indeg[v] += 1;
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut topo_order = Vec::with_capacity(n);
        while let Some(u) = ready.pop_first() {
            topo_order.push(u);
            for &(_, v) in edges.iter().filter(|&&(s, _)| s == u) {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.insert(v);
                }
            }
        }
        if topo_order.len() != n {
            return Err(Error::contract("edge list contains a cycle"));
        }
        let dag = Self { n, end_node, edges, topo_order };
        dag.validate()?;
        Ok(dag)
    }

    /// Predecessors of `v` listed in topological order.
    pub fn predecessors(&self, v: usize) -> Vec<usize> {
        let pos = self.positions();
        let mut preds: Vec<usize> = self.edges.iter().filter(|&&(_, t)| t == v).map(|&(u, _)| u).collect();
        preds.sort_by_key(|&u| pos[u]);
        preds
    }

    pub fn out_degree(&self, u: usize) -> usize {
        self.edges.iter().filter(|&&(s, _)| s == u).count()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(_, t)| t == v).count()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Position of each node in `topo_order`.
    fn positions(&self) -> Vec<usize> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &v) in self.topo_order.iter().enumerate() {
            if v < self.n {
                pos[v] = k;
            }
        }
        pos
    }

    /// Checks acyclicity via `topo_order`, the single sink at `end_node`, and
    /// that every node reaches the end node.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 || self.end_node >= n {
            return Err(Error::contract("dag has no nodes or end node out of range"));
        }
        let mut seen = vec![false; n];
        if self.topo_order.len() != n {
            return Err(Error::contract("topo_order is not a permutation"));
        }
        for &v in &self.topo_order {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(Error::contract("topo_order is not a permutation"));
            }
        }
        let pos = self.positions();
        for &(u, v) in &self.edges {
            if u >= n || v >= n || u == v {
                return Err(Error::contract(format!("invalid edge {u}->{v}")));
            }
            if pos[u] >= pos[v] {
                return Err(Error::contract(format!("edge {u}->{v} violates topo_order")));
            }
        }
        for u in 0..n {
            let out = self.out_degree(u);
            if u == self.end_node && out != 0 {
                return Err(Error::contract("end node has outgoing edges"));
            }
            if u != self.end_node && out == 0 {
                return Err(Error::contract(format!("node {u} is a second sink")));
            }
        }
        // Reverse reachability from the end node.
        let mut reaches = vec![false; n];
        reaches[self.end_node] = true;
        for &v in self.topo_order.iter().rev() {
            if !reaches[v] {
                reaches[v] = self.edges.iter().any(|&(s, t)| s == v && reaches[t]);
            }
        }
        if let Some(u) = reaches.iter().position(|r| !r) {
            return Err(Error::contract(format!("node {u} has no path to the end node")));
        }
        Ok(())
    }
}

/// Decodes a continuous adjacency matrix into a DAG.
///
/// The end node is drawn by top-p over inverse out-degrees. Remaining nodes
/// join one at a time, drawn by top-p over out-degrees; a joining node `u`
/// gets edge `u → v` to each already-placed `v` independently with
/// probability `exp(a_uv) / Σ_{w placed} exp(a_uw)`, and if none is drawn
/// the edge to the placed node with the largest `a_uv` (lowest id on ties)
/// is added.
pub fn g_decode<R: Rng + ?Sized>(a: &AdjacencyMatrix, p: f64, rng: &mut R) -> Result<DagStructure> {
    let n = a.n();
    let degrees: Vec<f64> = (0..n).map(|i| a.out_degree(i)).collect();
    let inverse: Vec<f64> = degrees.iter().map(|d| 1.0 / (d + INVERSE_DEGREE_EPS)).collect();

    let end = top_p_sample(&inverse, p, rng)?;
    let mut remaining: Vec<usize> = (0..n).filter(|&i| i != end).collect();
    let mut placed = vec![end];
    let mut edges = Vec::new();

    while !remaining.is_empty() {
        let candidate_scores: Vec<f64> = remaining.iter().map(|&i| degrees[i]).collect();
        let u = remaining.remove(top_p_sample(&candidate_scores, p, rng)?);

        // A zero entry is no connection at all, so pruned edges stay pruned.
        let weights: Vec<f64> = placed
            .iter()
            .map(|&v| match a.get(u, v) {
                0.0 => 0.0,
                w => w.exp(),
            })
            .collect();
        let norm: f64 = weights.iter().sum();
        let before = edges.len();
        for (&v, w) in placed.iter().zip(&weights) {
            // Draw for every placed node so streams stay aligned across pruning levels.
            let draw = rng.random::<f64>();
            if norm > 0.0 && draw < w / norm {
                edges.push((u, v));
            }
        }
        if edges.len() == before {
            let mut target = placed[0];
            for &v in &placed[1..] {
                let (av, at) = (a.get(u, v), a.get(u, target));
                if av > at || (av == at && v < target) {
                    target = v;
                }
            }
            edges.push((u, target));
        }
        placed.push(u);
    }

    edges.sort_unstable();
    placed.reverse();
    Ok(DagStructure { n, end_node: end, edges, topo_order: placed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn init_shapes_and_range() {
        let mut rng = seeded(0);
        let ms = init_adjacency_swarm(1, 3, &mut rng).unwrap();
        assert_eq!(ms.len(), 3);
        for m in &ms {
            assert_eq!(m.n(), 1);
            assert!((0.0..1.0).contains(&m.get(0, 0)));
        }
        let ms = init_adjacency_swarm(10, 10, &mut rng).unwrap();
        assert!(ms.iter().all(|m| m.n() == 10 && m.as_flat().len() == 100));
        assert!(init_adjacency_swarm(0, 3, &mut rng).is_err());
        assert!(init_adjacency_swarm(3, 0, &mut rng).is_err());
    }

    #[test]
    fn init_entries_have_uniform_mean() {
        let mut rng = seeded(11);
        let ms = init_adjacency_swarm(10, 1000, &mut rng).unwrap();
        let total: f64 = ms.iter().flat_map(|m| m.as_flat()).sum();
        let mean = total / 1e5;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn constructor_clamps_and_validates() {
        let m = AdjacencyMatrix::from_rows(vec![vec![-0.5, 2.0], vec![0.3, 0.0]]).unwrap();
        assert_eq!(m.rows(), vec![vec![0.0, 1.0], vec![0.3, 0.0]]);
        assert!(AdjacencyMatrix::from_rows(vec![vec![0.0, 1.0]]).is_err());
        assert!(AdjacencyMatrix::from_flat(0, vec![]).is_err());
        assert!(AdjacencyMatrix::from_flat(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn top_p_single_candidate() {
        let mut rng = seeded(1);
        for p in [0.01, 0.5, 1.0] {
            assert_eq!(top_p_sample(&[1.0], p, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn top_p_truncates_to_dominant() {
        let mut rng = seeded(2);
        for _ in 0..1000 {
            assert_eq!(top_p_sample(&[0.9, 0.1], 0.8, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn top_p_even_split_frequency() {
        let mut rng = seeded(3);
        let hits = (0..10_000).filter(|_| top_p_sample(&[0.5, 0.5], 0.8, &mut rng).unwrap() == 0).count();
        let freq = hits as f64 / 1e4;
        assert!((freq - 0.5).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn top_p_small_p_is_argmax_lowest_index() {
        let mut rng = seeded(4);
        for _ in 0..200 {
            assert_eq!(top_p_sample(&[0.2, 0.4, 0.4, 0.1], 1e-9, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn top_p_all_zero_is_uniform() {
        let mut rng = seeded(5);
        let mut counts = [0usize; 4];
        for _ in 0..8000 {
            counts[top_p_sample(&[0.0; 4], 0.8, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 8000.0 - 0.25).abs() < 0.03);
        }
    }

    #[test]
    fn top_p_never_picks_zero_weight() {
        let mut rng = seeded(6);
        for _ in 0..2000 {
            assert_ne!(top_p_sample(&[0.3, 0.0, 0.7], 1.0, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn top_p_rejects_bad_input() {
        let mut rng = seeded(7);
        assert!(top_p_sample(&[], 0.5, &mut rng).is_err());
        assert!(top_p_sample(&[1.0], 0.0, &mut rng).is_err());
        assert!(top_p_sample(&[1.0], 1.5, &mut rng).is_err());
        assert!(top_p_sample(&[-1.0, 2.0], 0.5, &mut rng).is_err());
    }

    #[test]
    fn decode_single_node() {
        let a = AdjacencyMatrix::from_rows(vec![vec![0.4]]).unwrap();
        let dag = g_decode(&a, 0.8, &mut seeded(0)).unwrap();
        assert_eq!(dag.end_node, 0);
        assert!(dag.edges.is_empty());
        assert_eq!(dag.topo_order, vec![0]);
        dag.validate().unwrap();
    }

    #[test]
    fn decode_two_nodes_small_p() {
        let a = AdjacencyMatrix::from_rows(vec![vec![0.0, 0.99], vec![0.01, 0.0]]).unwrap();
        let mut rng = seeded(8);
        let hits = (0..10_000)
            .filter(|_| {
                let dag = g_decode(&a, 0.05, &mut rng).unwrap();
                dag.end_node == 1 && dag.edges == vec![(0, 1)]
            })
            .count();
        assert!(hits as f64 / 1e4 >= 0.95, "hits {hits}");
    }

    #[test]
    fn decode_zero_matrix_is_valid() {
        let a = AdjacencyMatrix::from_flat(5, vec![0.0; 25]).unwrap();
        let mut rng = seeded(9);
        for _ in 0..200 {
            g_decode(&a, 0.8, &mut rng).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn prune_rule() {
        let a = AdjacencyMatrix::from_rows(vec![vec![0.05, 0.15], vec![0.3, 0.1]]).unwrap();
        let pruned = prune_threshold(&a, 0.1).unwrap();
        assert_eq!(pruned.rows(), vec![vec![0.0, 0.15], vec![0.3, 0.0]]);
        assert_eq!(prune_threshold(&a, 0.0).unwrap(), a);
        for tau in [0.05, 0.1, 0.2] {
            prune_threshold(&a, tau).unwrap();
        }
        assert!(prune_threshold(&a, 1.5).is_err());
        assert!(prune_threshold(&a, -0.1).is_err());
    }

    #[test]
    fn dag_json_schema() {
        let dag = DagStructure { n: 3, end_node: 2, edges: vec![(0, 1), (1, 2)], topo_order: vec![0, 1, 2] };
        let json = serde_json::to_string(&dag).unwrap();
        assert_eq!(json, r#"{"n":3,"end_node":2,"edges":[[0,1],[1,2]],"topo_order":[0,1,2]}"#);
        let back: DagStructure = serde_json::from_str(&json).unwrap();
        assert_eq!(back, dag);
    }

    #[test]
    fn validate_catches_broken_dags() {
        let base = DagStructure { n: 3, end_node: 2, edges: vec![(0, 1), (1, 2)], topo_order: vec![0, 1, 2] };
        base.validate().unwrap();
        let mut cyc = base.clone();
        cyc.edges.push((2, 0));
        assert!(cyc.validate().is_err());
        let mut two_sinks = base.clone();
        two_sinks.edges = vec![(0, 2)];
        assert!(two_sinks.validate().is_err());
        let mut bad_order = base.clone();
        bad_order.topo_order = vec![1, 0, 2];
        assert!(bad_order.validate().is_err());
    }
}
