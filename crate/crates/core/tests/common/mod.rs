//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

/// A decoded DAG as `(end node, sorted edge list)`.
pub type DagKey = (usize, Vec<(usize, usize)>);

/// Probability of picking each index under nucleus sampling with mass `p`.
fn nucleus(scores: &[f64], p: f64) -> Vec<f64> {
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / scores.len() as f64; scores.len()];
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Descending by score; equal scores keep index order.
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in idx {
        kept.push(i);
        mass += scores[i] / total;
        if mass >= p {
            break;
        }
    }
    let kept_total: f64 = kept.iter().map(|&i| scores[i]).sum();
    let mut out = vec![0.0; scores.len()];
    for i in kept {
        out[i] = scores[i] / kept_total;
    }
    out
}

/// Exact distribution of decoded DAGs for a small matrix, by enumerating
/// every end node, every placement order and every edge subset.
pub fn decode_distribution(a: &[Vec<f64>], p: f64) -> BTreeMap<DagKey, f64> {
    let n = a.len();
    let degree: Vec<f64> = a
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| x).sum())
        .collect();
    let inverse: Vec<f64> = degree.iter().map(|d| 1.0 / (d + 1e-6)).collect();
    let mut dist = BTreeMap::new();
    for (end, pe) in nucleus(&inverse, p).into_iter().enumerate() {
        if pe > 0.0 {
            let remaining: Vec<usize> = (0..n).filter(|&i| i != end).collect();
            expand(a, p, &degree, end, vec![end], remaining, Vec::new(), pe, &mut dist);
        }
    }
    dist
}

#[allow(clippy::too_many_arguments)]
fn expand(
    a: &[Vec<f64>],
    p: f64,
    degree: &[f64],
    end: usize,
    placed: Vec<usize>,
    remaining: Vec<usize>,
    edges: Vec<(usize, usize)>,
    prob: f64,
    dist: &mut BTreeMap<DagKey, f64>,
) {
    if remaining.is_empty() {
        let mut e = edges;
        e.sort();
        *dist.entry((end, e)).or_insert(0.0) += prob;
        return;
    }
    let scores: Vec<f64> = remaining.iter().map(|&i| degree[i]).collect();
    for (k, pu) in nucleus(&scores, p).into_iter().enumerate() {
        if pu == 0.0 {
            continue;
        }
        let u = remaining[k];
        let rest: Vec<usize> = remaining.iter().copied().filter(|&x| x != u).collect();
        let w: Vec<f64> = placed.iter().map(|&v| if a[u][v] == 0.0 { 0.0 } else { a[u][v].exp() }).collect();
        let norm: f64 = w.iter().sum();
        let q: Vec<f64> = w.iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }).collect();
        // Fallback target: largest entry, lowest id on ties.
        let mut fallback = placed[0];
        for &v in &placed {
            if a[u][v] > a[u][fallback] || (a[u][v] == a[u][fallback] && v < fallback) {
                fallback = v;
            }
        }
        for mask in 0..(1u32 << placed.len()) {
            let mut pm = pu;
            let mut chosen = Vec::new();
            for (b, &v) in placed.iter().enumerate() {
                if mask & (1 << b) != 0 {
                    pm *= q[b];
                    chosen.push((u, v));
                } else {
                    pm *= 1.0 - q[b];
                }
            }
            if pm == 0.0 {
                continue;
            }
            if chosen.is_empty() {
                chosen.push((u, fallback));
            }
            let mut e = edges.clone();
            e.extend(chosen);
            let mut pl = placed.clone();
            pl.push(u);
            expand(a, p, degree, end, pl, rest.clone(), e, prob * pm, dist);
        }
    }
}

/// Total-variation distance between two distributions over DAGs.
pub fn total_variation(a: &BTreeMap<DagKey, f64>, b: &BTreeMap<DagKey, f64>) -> f64 {
    let keys: std::collections::BTreeSet<&DagKey> = a.keys().chain(b.keys()).collect();
    0.5 * keys.into_iter().map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// Frequency-weighted mean utility per expert, straight from the definition.
pub fn jfk_brute(assignments: &[Vec<usize>], utilities: &[f64], pool: usize) -> Vec<f64> {
    let mean = utilities.iter().sum::<f64>() / utilities.len() as f64;
    (0..pool)
        .map(|i| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (a, u) in assignments.iter().zip(utilities) {
                let c = a.iter().filter(|&&e| e == i).count() as f64;
                num += c * u;
                den += c;
            }
            if den == 0.0 {
                mean
            } else {
                num / den
            }
        })
        .collect()
}

/// Checks DAG structure from scratch: edges in range and not self-loops,
/// acyclic, exactly one sink which is `end`, and every node reaches it.
pub fn check_dag(n: usize, end: usize, edges: &[(usize, usize)]) -> Result<(), String> {
    let mut out = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for &(u, v) in edges {
        if u >= n || v >= n || u == v {
            return Err(format!("bad edge {u}->{v}"));
        }
        out[u].push(v);
        indeg[v] += 1;
    }
    // Kahn: every node must be removed.
    let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(u) = stack.pop() {
        seen += 1;
        for &v in &out[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                stack.push(v);
            }
        }
    }
    if seen != n {
        return Err("cycle".into());
    }
    let sinks: Vec<usize> = (0..n).filter(|&v| out[v].is_empty()).collect();
    if sinks != [end] {
        return Err(format!("sinks {sinks:?}, end {end}"));
    }
    // Reverse reachability from the end node.
    let mut reach = vec![false; n];
    reach[end] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for &(u, v) in edges {
            if reach[v] && !reach[u] {
                reach[u] = true;
                changed = true;
            }
        }
    }
    if reach.iter().all(|r| *r) {
        Ok(())
    } else {
        Err("node without a path to the end".into())
    }
}
