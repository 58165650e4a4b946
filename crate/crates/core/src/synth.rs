//! Seeded synthetic multiplex graphs with planted class structure.
//!
//! Each node gets a class; each edge type links same-class pairs with
//! probability `p_in` and other pairs with `p_out`. Edge types with
//! `p_in == p_out` carry no class signal. Features are the class mean
//! (a scaled basis vector) plus unit Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AmhenGraph, DenseMatrix, EdgeRecord, NodeTypeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTypeSpec {
    /// Node types at the two ends.
    pub endpoints: (NodeTypeId, NodeTypeId),
    pub p_in: f64,
    pub p_out: f64,
}

impl EdgeTypeSpec {
    pub fn is_signal(&self) -> bool {
        self.p_in != self.p_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub nodes_per_type: Vec<usize>,
    pub edge_types: Vec<EdgeTypeSpec>,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Distance of each class mean from the origin.
    pub separation: f64,
}

impl SynthConfig {
    /// One node type and ten balanced classes. Edge type 0 links mostly
    /// within classes; edge type 1 is uniform noise about three times as dense.
    pub fn planted_benchmark(n: usize) -> Self {
        Self {
            nodes_per_type: vec![n],
            edge_types: vec![
                EdgeTypeSpec {
                    endpoints: (0, 0),
                    p_in: 0.25,
                    p_out: 0.001,
                },
                EdgeTypeSpec {
                    endpoints: (0, 0),
                    p_in: 0.075,
                    p_out: 0.075,
                },
            ],
            num_classes: 10,
            feature_dim: 16,
            separation: 1.0,
        }
    }

    /// Same expected edge counts per type, but every type ignores the
    /// classes (`p_in == p_out`, with balanced classes assumed).
    pub fn without_class_signal(&self) -> Self {
        let same = 1.0 / self.num_classes as f64;
        let mut out = self.clone();
        for e in &mut out.edge_types {
            let p = same * e.p_in + (1.0 - same) * e.p_out;
            e.p_in = p;
            e.p_out = p;
        }
        out
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_type.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes() == 0 || self.edge_types.is_empty() {
            return Err(Error::Invalid("synthetic graph needs nodes and at least one edge type".into()));
        }
        if self.num_classes == 0 || self.feature_dim == 0 {
            return Err(Error::Invalid("need at least one class and one feature".into()));
        }
        let types = self.nodes_per_type.len();
        for (r, e) in self.edge_types.iter().enumerate() {
            if e.endpoints.0 >= types || e.endpoints.1 >= types {
                return Err(Error::Invalid(format!("edge type {r} references an unknown node type")));
            }
            if !(0.0..=1.0).contains(&e.p_in) || !(0.0..=1.0).contains(&e.p_out) {
                return Err(Error::Invalid(format!("edge type {r} probabilities must be in [0, 1]")));
            }
        }
        if !self.separation.is_finite() {
            return Err(Error::Invalid("separation must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Every node is labeled with its planted class.
    pub graph: AmhenGraph,
    pub classes: Vec<usize>,
    /// Whether each edge type depends on the classes.
    pub signal: Vec<bool>,
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut node_types = Vec::with_capacity(config.num_nodes());
    let mut classes = Vec::with_capacity(config.num_nodes());
    let mut by_type = Vec::with_capacity(config.nodes_per_type.len());
    for (t, &count) in config.nodes_per_type.iter().enumerate() {
        let start = node_types.len();
        // balanced class sizes within each node type
        let mut c: Vec<usize> = (0..count).map(|i| i % config.num_classes).collect();
        c.shuffle(&mut rng);
        classes.extend(c);
        node_types.extend(std::iter::repeat_n(t, count));
        by_type.push(start..start + count);
    }

    let mut edges = Vec::new();
    for (r, spec) in config.edge_types.iter().enumerate() {
        let (a, b) = spec.endpoints;
        for u in by_type[a].clone() {
            let partners = if a == b { u + 1..by_type[a].end } else { by_type[b].clone() };
            for v in partners {
                let p = if classes[u] == classes[v] { spec.p_in } else { spec.p_out };
                if rng.random::<f64>() < p {
                    edges.push(EdgeRecord::new(u, v, r));
                }
            }
        }
    }

    let n = config.num_nodes();
    let mut features = DenseMatrix::zeros((n, config.feature_dim));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for x in row.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        row[classes[i] % config.feature_dim] += config.separation;
    }

    let labels = classes.iter().map(|&c| Some(c)).collect();
    let graph = AmhenGraph::from_edges(
        node_types,
        config.nodes_per_type.len(),
        &edges,
        config.edge_types.len(),
        features,
        labels,
    )?;
    Ok(SynthOutput {
        graph,
        classes,
        signal: config.edge_types.iter().map(EdgeTypeSpec::is_signal).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SparseMatrix;
    use crate::ingest::{load_dataset, write_dataset};

    /// Newman modularity of a partition of an undirected simple graph.
    fn modularity(adj: &SparseMatrix, classes: &[usize]) -> f64 {
        let two_m = adj.nnz() as f64;
        let k = classes.iter().max().unwrap() + 1;
        let mut inside = vec![0.0; k];
        let mut degree = vec![0.0; k];
        for (u, v, _) in adj.iter() {
            degree[classes[u]] += 1.0;
            if classes[u] == classes[v] {
                inside[classes[u]] += 1.0;
            }
        }
        (0..k).map(|c| inside[c] / two_m - (degree[c] / two_m).powi(2)).sum()
    }

    fn two_block(p_in: f64, p_out: f64) -> SynthConfig {
        SynthConfig {
            nodes_per_type: vec![200],
            edge_types: vec![EdgeTypeSpec { endpoints: (0, 0), p_in, p_out }],
            num_classes: 2,
            feature_dim: 4,
            separation: 1.0,
        }
    }

    #[test]
    fn planted_partition_is_modular() {
        let out = generate(&two_block(0.3, 0.01), 1).unwrap();
        let q = modularity(out.graph.adjacency(0), &out.classes);
        assert!(q > 0.3, "modularity {q}");
        assert_eq!(out.signal, vec![true]);
    }

    #[test]
    fn same_seed_same_files() {
        let cfg = SynthConfig::planted_benchmark(60);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(&generate(&cfg, 7).unwrap().graph, a.path()).unwrap();
        write_dataset(&generate(&cfg, 7).unwrap().graph, b.path()).unwrap();
        for f in ["meta.tsv", "edges.tsv", "features.tsv", "labels.tsv"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn round_trips_through_loader() {
        let cfg = SynthConfig {
            nodes_per_type: vec![30, 20],
            edge_types: vec![
                EdgeTypeSpec { endpoints: (0, 1), p_in: 0.3, p_out: 0.05 },
                EdgeTypeSpec { endpoints: (0, 0), p_in: 0.1, p_out: 0.1 },
            ],
            num_classes: 2,
            feature_dim: 3,
            separation: 2.0,
        };
        let out = generate(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_dataset(&out.graph, dir.path()).unwrap();
        let back = load_dataset(&paths).unwrap();
        assert_eq!(back.adjacencies(), out.graph.adjacencies());
        assert_eq!(back.features(), out.graph.features());
        assert_eq!(back.labels(), out.graph.labels());
        assert_eq!(back.node_types(), out.graph.node_types());
        // user-item edges only between the two node types
        for (u, v) in out.graph.edges_of_type(0) {
            assert!(u < 30 && v >= 30);
        }
    }

    #[test]
    fn edge_counts_within_four_sigma() {
        let cfg = SynthConfig::planted_benchmark(300);
        for seed in 0..5 {
            let out = generate(&cfg, seed).unwrap();
            let mut same = 0.0;
            let mut diff = 0.0;
            for u in 0..300 {
                for v in u + 1..300 {
                    if out.classes[u] == out.classes[v] {
                        same += 1.0;
                    } else {
                        diff += 1.0;
                    }
                }
            }
            for (r, spec) in cfg.edge_types.iter().enumerate() {
                let mean = same * spec.p_in + diff * spec.p_out;
                let var = same * spec.p_in * (1.0 - spec.p_in) + diff * spec.p_out * (1.0 - spec.p_out);
                let count = out.graph.edges_of_type(r).len() as f64;
                assert!((count - mean).abs() <= 4.0 * var.sqrt(), "type {r}: {count} vs {mean}");
            }
        }
    }

    #[test]
    fn null_variant_keeps_density_and_drops_signal() {
        let cfg = SynthConfig::planted_benchmark(400);
        let null = cfg.without_class_signal();
        assert!(null.edge_types.iter().all(|e| !e.is_signal()));
        let planted = generate(&cfg, 2).unwrap().graph;
        let shuffled = generate(&null, 2).unwrap().graph;
        for r in 0..2 {
            let (a, b) = (planted.adjacency(r).nnz() as f64, shuffled.adjacency(r).nnz() as f64);
            assert!((a - b).abs() < 0.15 * a, "type {r}: {a} vs {b}");
        }
        let out = generate(&null, 2).unwrap();
        assert!(modularity(out.graph.adjacency(0), &out.classes).abs() < 0.05);
    }

    #[test]
    fn rejects_empty_and_invalid_configs() {
        let mut cfg = two_block(0.1, 0.1);
        cfg.nodes_per_type = vec![0];
        assert!(generate(&cfg, 0).is_err());
        let mut cfg = two_block(1.5, 0.1);
        assert!(generate(&cfg, 0).is_err());
        cfg = two_block(0.1, 0.1);
        cfg.edge_types.clear();
        assert!(generate(&cfg, 0).is_err());
    }
}
