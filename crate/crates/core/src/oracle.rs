//! Brute-force walk enumeration used to check that powers of the aggregated
//! adjacency count relation-weighted walks.
//!
//! A walk `v_0 -r_1-> v_1 ... -r_l-> v_l` has weight `Π β_{r_i}` (times the
//! stored adjacency values, which are 1 for raw edges). Walks may revisit
//! nodes, exactly as matrix powers do.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{AmhenGraph, DenseMatrix, EdgeTypeId, NodeId};
use crate::model::aggregate;

/// Upper bound on `n · (max_degree · |R|)^l` for exhaustive enumeration.
pub const WALK_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct MetaPathInstance {
    pub nodes: Vec<NodeId>,
    pub relations: Vec<EdgeTypeId>,
    pub weight: f64,
}

fn check_guard(g: &AmhenGraph, beta: &[f64], l: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::Invalid("walk length must be at least 1".into()));
    }
    if beta.len() != g.num_edge_types() {
        return Err(Error::Dimension {
            context: "relation weights",
            expected: g.num_edge_types(),
            found: beta.len(),
        });
    }
    let max_degree = g.adjacencies().iter().map(|a| a.max_degree()).max().unwrap_or(0);
    let branching = (max_degree * g.num_edge_types()) as f64;
    let estimate = g.num_nodes() as f64 * branching.powi(l as i32);
    if estimate > WALK_LIMIT {
        return Err(Error::GuardExceeded {
            estimate,
            limit: WALK_LIMIT,
        });
    }
    Ok(())
}

/// Every typed walk of length `l` from `u` to `v`, and their total weight.
pub fn enumerate_paths(
    g: &AmhenGraph,
    beta: &[f64],
    l: usize,
    u: NodeId,
    v: NodeId,
) -> Result<(Vec<MetaPathInstance>, f64)> {
    check_guard(g, beta, l)?;
    if u >= g.num_nodes() || v >= g.num_nodes() {
        return Err(Error::Invalid(format!("node pair ({u}, {v}) out of range")));
    }
    let mut found = Vec::new();
    let mut nodes = vec![u];
    let mut relations = Vec::new();
    extend_walks(g, beta, l, v, 1.0, &mut nodes, &mut relations, &mut found);
    let total = found.iter().map(|w| w.weight).sum();
    Ok((found, total))
}

#[allow(clippy::too_many_arguments)]
fn extend_walks(
    g: &AmhenGraph,
    beta: &[f64],
    remaining: usize,
    target: NodeId,
    weight: f64,
    nodes: &mut Vec<NodeId>,
    relations: &mut Vec<EdgeTypeId>,
    found: &mut Vec<MetaPathInstance>,
) {
    let here = *nodes.last().expect("walk starts with a node");
    if remaining == 0 {
        if here == target {
            found.push(MetaPathInstance {
                nodes: nodes.clone(),
                relations: relations.clone(),
                weight,
            });
        }
        return;
    }
    for (r, adj) in g.adjacencies().iter().enumerate() {
        let (cols, vals) = adj.row(here);
        for (&next, &a) in cols.iter().zip(vals) {
            nodes.push(next);
            relations.push(r);
            extend_walks(g, beta, remaining - 1, target, weight * beta[r] * a, nodes, relations, found);
            nodes.pop();
            relations.pop();
        }
    }
}

/// `totals[k][w]`: summed weight of walks of length `k + 1` from `start` to
/// `w`, following edges forward.
fn forward_totals(g: &AmhenGraph, beta: &[f64], max_l: usize, start: NodeId) -> Vec<Vec<f64>> {
    fn dfs(g: &AmhenGraph, beta: &[f64], depth: usize, max_l: usize, at: NodeId, w: f64, totals: &mut [Vec<f64>]) {
        if depth == max_l {
            return;
        }
        for (r, adj) in g.adjacencies().iter().enumerate() {
            let (cols, vals) = adj.row(at);
            for (&next, &a) in cols.iter().zip(vals) {
                let nw = w * beta[r] * a;
                totals[depth][next] += nw;
                dfs(g, beta, depth + 1, max_l, next, nw, totals);
            }
        }
    }
    let mut totals = vec![vec![0.0; g.num_nodes()]; max_l];
    dfs(g, beta, 0, max_l, start, 1.0, &mut totals);
    totals
}

/// Predecessor lists per relation: `(p, value)` with `A_r[p, x] = value`.
fn predecessors(g: &AmhenGraph) -> Vec<Vec<Vec<(NodeId, f64)>>> {
    g.adjacencies()
        .iter()
        .map(|adj| {
            let mut pred = vec![Vec::new(); adj.n()];
            for (p, x, a) in adj.iter() {
                pred[x].push((p, a));
            }
            pred
        })
        .collect()
}

/// `totals[k][w]`: summed weight of walks of length `k + 1` from `w` to
/// `end`, built by walking edges backwards from `end`.
fn backward_totals(
    pred: &[Vec<Vec<(NodeId, f64)>>],
    beta: &[f64],
    n: usize,
    max_l: usize,
    end: NodeId,
) -> Vec<Vec<f64>> {
    let mut totals = vec![vec![0.0; n]; max_l];
    let mut stack = vec![(end, 0usize, 1.0f64)];
    while let Some((at, depth, w)) = stack.pop() {
        if depth == max_l {
            continue;
        }
        for (r, per_node) in pred.iter().enumerate() {
            for &(p, a) in &per_node[at] {
                let nw = beta[r] * a * w;
                totals[depth][p] += nw;
                stack.push((p, depth + 1, nw));
            }
        }
    }
    totals
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub length: usize,
    pub u: NodeId,
    pub v: NodeId,
    pub power: f64,
    pub walk_total: f64,
}

impl Deviation {
    pub fn abs(&self) -> f64 {
        (self.power - self.walk_total).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerCheckReport {
    pub max_l: usize,
    pub tolerance: f64,
    /// Largest `|(𝔸^l)_{uv} − walk total|` over all lengths and pairs.
    pub max_deviation: f64,
    /// Largest disagreement between forward and backward enumeration.
    pub enumeration_disagreement: f64,
    pub violations: Vec<Deviation>,
    pub passed: bool,
}

impl PowerCheckReport {
    pub fn render_text(&self) -> String {
        format!(
            "power-walk equivalence up to length {}: {} (max deviation {:.3e}, enumeration disagreement {:.3e}, tolerance {:.1e}, {} violations)\n",
            self.max_l,
            if self.passed { "PASS" } else { "FAIL" },
            self.max_deviation,
            self.enumeration_disagreement,
            self.tolerance,
            self.violations.len()
        )
    }

    /// `length u v power walk_total deviation`, one row per violation.
    pub fn render_tsv(&self) -> String {
        let mut s = String::from("length\tu\tv\tpower\twalk_total\tdeviation\n");
        for d in &self.violations {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", d.length, d.u, d.v, d.power, d.walk_total, d.abs());
        }
        s
    }
}

/// Checks `(𝔸^l)_{uv}` against enumerated walk totals for every
/// `l ≤ max_l` and every node pair. Walk totals are computed twice (forward
/// from `u`, backward from `v`) and must agree with each other as well.
pub fn verify_power_equivalence(
    g: &AmhenGraph,
    beta: &[f64],
    max_l: usize,
    tolerance: f64,
) -> Result<PowerCheckReport> {
    check_guard(g, beta, max_l)?;
    let n = g.num_nodes();
    let agg = aggregate(g, beta)?;
    let mut powers = Vec::with_capacity(max_l);
    let mut p = DenseMatrix::eye(n);
    for _ in 0..max_l {
        p = agg.spmm(p.view())?;
        powers.push(p.clone());
    }

    let forward: Vec<Vec<Vec<f64>>> = (0..n).map(|u| forward_totals(g, beta, max_l, u)).collect();
    let pred = predecessors(g);
    let mut enumeration_disagreement = 0.0f64;
    for v in 0..n {
        let back = backward_totals(&pred, beta, n, max_l, v);
        for k in 0..max_l {
            for u in 0..n {
                enumeration_disagreement = enumeration_disagreement.max((back[k][u] - forward[u][k][v]).abs());
            }
        }
    }

    Ok(compare(&powers, &forward, enumeration_disagreement, tolerance))
}

/// Matches each power entry against the forward walk totals.
fn compare(
    powers: &[DenseMatrix],
    forward: &[Vec<Vec<f64>>],
    enumeration_disagreement: f64,
    tolerance: f64,
) -> PowerCheckReport {
    let mut max_deviation = 0.0f64;
    let mut violations = Vec::new();
    for (k, power) in powers.iter().enumerate() {
        for (u, totals) in forward.iter().enumerate() {
            for (v, &walk_total) in totals[k].iter().enumerate() {
                let d = Deviation {
                    length: k + 1,
                    u,
                    v,
                    power: power[[u, v]],
                    walk_total,
                };
                max_deviation = max_deviation.max(d.abs());
                if d.abs().is_nan() || d.abs() > tolerance {
                    violations.push(d);
                }
            }
        }
    }
    PowerCheckReport {
        max_l: powers.len(),
        tolerance,
        max_deviation,
        enumeration_disagreement,
        passed: violations.is_empty() && enumeration_disagreement <= tolerance,
        violations,
    }
}
