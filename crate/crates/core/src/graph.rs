//! Multiplex graph data model and the sparse kernels behind propagation.
//!
//! Every edge type gets its own binary, symmetrized adjacency in compressed
//! row form. Nothing here normalizes degrees or inserts self-loops: the
//! weighted aggregate of the per-type adjacencies is used as-is, so its
//! powers count relation-weighted walks.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type NodeTypeId = usize;
pub type EdgeTypeId = usize;

/// Dense row-major matrix of `f64`.
pub type DenseMatrix = Array2<f64>;

/// One typed edge as read from an edge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeRecord {
    pub src: NodeId,
    pub dst: NodeId,
    pub edge_type: EdgeTypeId,
}

impl EdgeRecord {
    pub fn new(src: NodeId, dst: NodeId, edge_type: EdgeTypeId) -> Self {
        Self { src, dst, edge_type }
    }
}

/// Square sparse matrix in compressed row form.
///
/// Column indices are strictly increasing within a row and no explicit
/// zeros are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            indptr: vec![0; n + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed in input order; entries that end up exactly
    /// zero are dropped.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::Dimension {
                    context: "sparse triplet index",
                    expected: n,
                    found: r.max(c),
                });
            }
            if !v.is_finite() {
                return Err(Error::Invalid(format!("non-finite value at ({r}, {c})")));
            }
            rows[r].push((c, v));
        }
        Ok(Self::from_rows(n, rows))
    }

    fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            // stable, so duplicates are summed in insertion order
            row.sort_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < row.len() {
                let col = row[i].0;
                let mut acc = 0.0;
                while i < row.len() && row[i].0 == col {
                    acc += row[i].1;
                    i += 1;
                }
                if acc != 0.0 {
                    indices.push(col);
                    values.push(acc);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).0.binary_search(&c).is_ok()
    }

    /// Iterates stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn degree(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|r| self.degree(r)).max().unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.iter().all(|(r, c, v)| self.get(c, r) == v)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let rows = (0..self.n)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&k, &v)| (k, c * v)).collect()
            })
            .collect();
        Self::from_rows(self.n, rows)
    }

    /// Each row divided by the sum of its absolute values; empty rows stay
    /// empty.
    pub fn row_normalized(&self) -> Self {
        let rows = (0..self.n)
            .map(|r| {
                let (cols, vals) = self.row(r);
                let total: f64 = vals.iter().map(|v| v.abs()).sum();
                cols.iter().zip(vals).map(|(&k, &v)| (k, v / total)).collect()
            })
            .collect();
        Self::from_rows(self.n, rows)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros((self.n, self.n));
        for (r, c, v) in self.iter() {
            out[[r, c]] = v;
        }
        out
    }

    /// `self · b`.
    pub fn spmm(&self, b: ArrayView2<'_, f64>) -> Result<DenseMatrix> {
        if b.nrows() != self.n {
            return Err(Error::Dimension {
                context: "spmm rows",
                expected: self.n,
                found: b.nrows(),
            });
        }
        let mut out = DenseMatrix::zeros((self.n, b.ncols()));
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let mut out_row = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out_row.scaled_add(v, &b.row(c));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · b`, without materializing the transpose.
    pub fn spmm_transpose(&self, b: ArrayView2<'_, f64>) -> Result<DenseMatrix> {
        if b.nrows() != self.n {
            return Err(Error::Dimension {
                context: "transposed spmm rows",
                expected: self.n,
                found: b.nrows(),
            });
        }
        let mut out = DenseMatrix::zeros((self.n, b.ncols()));
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let b_row = b.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.row_mut(c).scaled_add(v, &b_row);
            }
        }
        Ok(out)
    }
}

/// Sparse-dense product `a · b`.
pub fn spmm(a: &SparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.spmm(b.view())
}

/// Entry-wise `Σ_r beta[r] · mats[r]`. The result's pattern is the union of
/// the input patterns minus entries that cancel to exactly zero.
pub fn weighted_sum(mats: &[SparseMatrix], beta: &[f64]) -> Result<SparseMatrix> {
    if mats.len() != beta.len() {
        return Err(Error::Dimension {
            context: "relation weight count",
            expected: mats.len(),
            found: beta.len(),
        });
    }
    let Some(first) = mats.first() else {
        return Err(Error::Invalid("weighted sum of zero matrices".into()));
    };
    let n = first.n;
    if let Some(bad) = mats.iter().find(|m| m.n != n) {
        return Err(Error::Dimension {
            context: "weighted sum operand",
            expected: n,
            found: bad.n,
        });
    }
    let rows = (0..n)
        .map(|r| {
            let mut row = Vec::new();
            for (m, &b) in mats.iter().zip(beta) {
                let (cols, vals) = m.row(r);
                row.extend(cols.iter().zip(vals).map(|(&c, &v)| (c, b * v)));
            }
            row
        })
        .collect();
    Ok(SparseMatrix::from_rows(n, rows))
}

/// One symmetrized binary adjacency per edge type. Repeated records collapse
/// to a single unit entry.
pub fn build_subgraph_adjacencies(
    edges: &[EdgeRecord],
    n: usize,
    num_edge_types: usize,
) -> Result<Vec<SparseMatrix>> {
    let mut rows: Vec<Vec<Vec<(usize, f64)>>> = vec![vec![Vec::new(); n]; num_edge_types];
    for (index, e) in edges.iter().enumerate() {
        let bad = |message: String| Error::EdgeRecord {
            index,
            src: e.src,
            dst: e.dst,
            edge_type: e.edge_type,
            message,
        };
        if e.src >= n || e.dst >= n {
            return Err(bad(format!("node id out of range (n = {n})")));
        }
        if e.edge_type >= num_edge_types {
            return Err(bad(format!(
                "edge type out of range ({num_edge_types} types)"
            )));
        }
        let per_type = &mut rows[e.edge_type];
        per_type[e.src].push((e.dst, 1.0));
        per_type[e.dst].push((e.src, 1.0));
    }
    Ok(rows
        .into_iter()
        .map(|mut type_rows| {
            for row in &mut type_rows {
                row.sort_by_key(|&(c, _)| c);
                row.dedup_by_key(|&mut (c, _)| c);
            }
            SparseMatrix::from_rows(n, type_rows)
        })
        .collect())
}

/// An attributed multiplex heterogeneous graph.
#[derive(Debug, Clone)]
pub struct AmhenGraph {
    node_types: Vec<NodeTypeId>,
    num_node_types: usize,
    adjacencies: Vec<SparseMatrix>,
    features: DenseMatrix,
    labels: Vec<Option<usize>>,
}

impl AmhenGraph {
    pub fn new(
        node_types: Vec<NodeTypeId>,
        num_node_types: usize,
        adjacencies: Vec<SparseMatrix>,
        features: DenseMatrix,
        labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        let n = node_types.len();
        if adjacencies.is_empty() {
            return Err(Error::Invalid("graph needs at least one edge type".into()));
        }
        if let Some(&t) = node_types.iter().find(|&&t| t >= num_node_types) {
            return Err(Error::Invalid(format!(
                "node type {t} out of range ({num_node_types} types)"
            )));
        }
        for a in &adjacencies {
            if a.n() != n {
                return Err(Error::Dimension {
                    context: "adjacency size",
                    expected: n,
                    found: a.n(),
                });
            }
            if !a.is_symmetric() {
                return Err(Error::Invalid("edge-type adjacency is not symmetric".into()));
            }
        }
        if features.nrows() != n {
            return Err(Error::Dimension {
                context: "feature rows",
                expected: n,
                found: features.nrows(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
        if labels.len() != n {
            return Err(Error::Dimension {
                context: "label count",
                expected: n,
                found: labels.len(),
            });
        }
        Ok(Self {
            node_types,
            num_node_types,
            adjacencies,
            features,
            labels,
        })
    }

    /// Builds a graph from a typed edge list.
    pub fn from_edges(
        node_types: Vec<NodeTypeId>,
        num_node_types: usize,
        edges: &[EdgeRecord],
        num_edge_types: usize,
        features: DenseMatrix,
        labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        let adjacencies = build_subgraph_adjacencies(edges, node_types.len(), num_edge_types)?;
        Self::new(node_types, num_node_types, adjacencies, features, labels)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_edge_types(&self) -> usize {
        self.adjacencies.len()
    }

    pub fn num_node_types(&self) -> usize {
        self.num_node_types
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn node_types(&self) -> &[NodeTypeId] {
        &self.node_types
    }

    pub fn adjacencies(&self) -> &[SparseMatrix] {
        &self.adjacencies
    }

    pub fn adjacency(&self, r: EdgeTypeId) -> &SparseMatrix {
        &self.adjacencies[r]
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Number of classes implied by the labels (max label + 1).
    pub fn num_classes(&self) -> usize {
        self.labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0)
    }

    /// Undirected edges of type `r` as `(u, v)` with `u <= v`.
    pub fn edges_of_type(&self, r: EdgeTypeId) -> Vec<(NodeId, NodeId)> {
        self.adjacencies[r]
            .iter()
            .filter(|&(u, v, _)| u <= v)
            .map(|(u, v, _)| (u, v))
            .collect()
    }

    /// The same graph with a different set of per-type adjacencies, e.g. the
    /// training graph with held-out edges removed.
    pub fn with_adjacencies(&self, adjacencies: Vec<SparseMatrix>) -> Result<Self> {
        Self::new(
            self.node_types.clone(),
            self.num_node_types,
            adjacencies,
            self.features.clone(),
            self.labels.clone(),
        )
    }

    pub fn with_features(&self, features: DenseMatrix) -> Result<Self> {
        Self::new(
            self.node_types.clone(),
            self.num_node_types,
            self.adjacencies.clone(),
            features,
            self.labels.clone(),
        )
    }

    pub fn with_labels(&self, labels: Vec<Option<usize>>) -> Result<Self> {
        Self::new(
            self.node_types.clone(),
            self.num_node_types,
            self.adjacencies.clone(),
            self.features.clone(),
            labels,
        )
    }
}
