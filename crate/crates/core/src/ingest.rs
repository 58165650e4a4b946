//! Text-file loading and the deterministic train/validation/test splits.
//!
//! Dataset directory layout:
//!
//! ```text
//! meta.tsv      n <int> m <int> num_edge_types <int> num_node_types <int>
//!               then one "node_id node_type" line per node
//! edges.tsv     src dst edge_type
//! features.tsv  node_id f_1 ... f_m
//! labels.tsv    node_id class_id           (optional)
//! ```
//!
//! Fields are separated by tabs or spaces; `#` starts a comment line.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{
    build_subgraph_adjacencies, AmhenGraph, DenseMatrix, EdgeRecord, EdgeTypeId, NodeId,
    NodeTypeId, SparseMatrix,
};

pub const META_FILE: &str = "meta.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";

/// Paths of the files making up one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub meta: PathBuf,
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside `dir`; the labels file is used only if it
    /// exists.
    pub fn in_dir(dir: &Path) -> Self {
        let labels = dir.join(LABELS_FILE);
        Self {
            meta: dir.join(META_FILE),
            edges: dir.join(EDGES_FILE),
            features: dir.join(FEATURES_FILE),
            labels: labels.exists().then_some(labels),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.meta.as_path(), self.edges.as_path(), self.features.as_path()];
        v.extend(self.labels.as_deref());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Meta {
    pub n: usize,
    pub m: usize,
    pub num_edge_types: usize,
    pub num_node_types: usize,
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Self {
            path,
            inner: text.lines().enumerate(),
        }
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

impl<'a> Iterator for Lines<'a> {
    /// 1-based line number and whitespace-split fields.
    type Item = (usize, Vec<&'a str>);

    fn next(&mut self) -> Option<Self::Item> {
        for (i, raw) in self.inner.by_ref() {
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some((i + 1, trimmed.split_whitespace().collect()));
        }
        None
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(lines: &Lines<'_>, line: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| lines.error(line, format!("cannot parse {what} from `{field}`")))
}

fn parse_meta(path: &Path, text: &str) -> Result<(Meta, Vec<NodeTypeId>)> {
    let mut lines = Lines::new(path, text);
    let (line, header) = lines
        .next()
        .ok_or_else(|| lines.error(1, "empty meta file"))?;
    let mut vals = [None; 4];
    const KEYS: [&str; 4] = ["n", "m", "num_edge_types", "num_node_types"];
    if header.len() != 8 {
        return Err(lines.error(
            line,
            "header must read `n <int> m <int> num_edge_types <int> num_node_types <int>`",
        ));
    }
    for pair in header.chunks(2) {
        let k = KEYS
            .iter()
            .position(|&k| k == pair[0])
            .ok_or_else(|| lines.error(line, format!("unknown header key `{}`", pair[0])))?;
        vals[k] = Some(parse_field::<usize>(&lines, line, pair[1], pair[0])?);
    }
    let get = |k: usize| vals[k].ok_or_else(|| lines.error(line, format!("missing `{}`", KEYS[k])));
    let meta = Meta {
        n: get(0)?,
        m: get(1)?,
        num_edge_types: get(2)?,
        num_node_types: get(3)?,
    };

    let mut types = vec![None; meta.n];
    while let Some((line, fields)) = lines.next() {
        if fields.len() != 2 {
            return Err(lines.error(line, "expected `node_id node_type`"));
        }
        let id: usize = parse_field(&lines, line, fields[0], "node id")?;
        let t: usize = parse_field(&lines, line, fields[1], "node type")?;
        if id >= meta.n {
            return Err(lines.error(line, format!("node id {id} >= n = {}", meta.n)));
        }
        if t >= meta.num_node_types {
            return Err(lines.error(
                line,
                format!("node type {t} >= num_node_types = {}", meta.num_node_types),
            ));
        }
        if types[id].replace(t).is_some() {
            return Err(lines.error(line, format!("node {id} listed twice")));
        }
    }
    let types = types
        .into_iter()
        .enumerate()
        .map(|(id, t)| {
            t.ok_or_else(|| Error::Invalid(format!("{}: node {id} has no type", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, types))
}

fn parse_edges(path: &Path, text: &str, meta: &Meta) -> Result<Vec<EdgeRecord>> {
    let lines = Lines::new(path, text);
    let mut out = Vec::new();
    let mut it = lines;
    while let Some((line, fields)) = it.next() {
        if fields.len() != 3 {
            return Err(it.error(line, "expected `src dst edge_type`"));
        }
        let src: usize = parse_field(&it, line, fields[0], "src")?;
        let dst: usize = parse_field(&it, line, fields[1], "dst")?;
        let r: usize = parse_field(&it, line, fields[2], "edge type")?;
        if src >= meta.n || dst >= meta.n {
            return Err(it.error(line, format!("node id out of range (n = {})", meta.n)));
        }
        if r >= meta.num_edge_types {
            return Err(it.error(
                line,
                format!("edge type {r} >= num_edge_types = {}", meta.num_edge_types),
            ));
        }
        out.push(EdgeRecord::new(src, dst, r));
    }
    Ok(out)
}

fn parse_features(path: &Path, text: &str, meta: &Meta) -> Result<DenseMatrix> {
    let mut x = DenseMatrix::zeros((meta.n, meta.m));
    let mut seen = vec![false; meta.n];
    let mut it = Lines::new(path, text);
    while let Some((line, fields)) = it.next() {
        if fields.len() != meta.m + 1 {
            return Err(it.error(
                line,
                format!(
                    "expected node id plus {} feature values, found {} fields",
                    meta.m,
                    fields.len()
                ),
            ));
        }
        let id: usize = parse_field(&it, line, fields[0], "node id")?;
        if id >= meta.n {
            return Err(it.error(line, format!("node id {id} >= n = {}", meta.n)));
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(it.error(line, format!("node {id} listed twice")));
        }
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f64 = parse_field(&it, line, f, "feature value")?;
            if !v.is_finite() {
                return Err(it.error(line, "non-finite feature value"));
            }
            x[[id, j]] = v;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Invalid(format!(
            "{}: no feature row for node {missing}",
            path.display()
        )));
    }
    Ok(x)
}

fn parse_labels(path: &Path, text: &str, meta: &Meta) -> Result<Vec<Option<usize>>> {
    let mut labels = vec![None; meta.n];
    let mut it = Lines::new(path, text);
    while let Some((line, fields)) = it.next() {
        if fields.len() != 2 {
            return Err(it.error(line, "expected `node_id class_id`"));
        }
        let id: usize = parse_field(&it, line, fields[0], "node id")?;
        let c: i64 = parse_field(&it, line, fields[1], "class id")?;
        if id >= meta.n {
            return Err(it.error(line, format!("node id {id} >= n = {}", meta.n)));
        }
        // -1 is accepted as an explicit "unlabeled"
        labels[id] = match c {
            -1 => None,
            c if c >= 0 => Some(c as usize),
            _ => return Err(it.error(line, format!("invalid class id {c}"))),
        };
    }
    Ok(labels)
}

/// Loads and validates a graph. Without a labels file every node is
/// unlabeled.
pub fn load_graph(
    edges_path: &Path,
    features_path: &Path,
    labels_path: Option<&Path>,
    meta_path: &Path,
) -> Result<AmhenGraph> {
    let (meta, node_types) = parse_meta(meta_path, &read(meta_path)?)?;
    let edges = parse_edges(edges_path, &read(edges_path)?, &meta)?;
    let features = parse_features(features_path, &read(features_path)?, &meta)?;
    let labels = match labels_path {
        Some(p) => parse_labels(p, &read(p)?, &meta)?,
        None => vec![None; meta.n],
    };
    AmhenGraph::from_edges(
        node_types,
        meta.num_node_types,
        &edges,
        meta.num_edge_types,
        features,
        labels,
    )
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<AmhenGraph> {
    load_graph(
        &paths.edges,
        &paths.features,
        paths.labels.as_deref(),
        &paths.meta,
    )
}

/// Writes `g` in the dataset layout. Feature values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_dataset(g: &AmhenGraph, dir: &Path) -> Result<DatasetPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<PathBuf> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };

    let mut meta = format!(
        "n {} m {} num_edge_types {} num_node_types {}\n",
        g.num_nodes(),
        g.feature_dim(),
        g.num_edge_types(),
        g.num_node_types()
    );
    for (id, t) in g.node_types().iter().enumerate() {
        let _ = writeln!(meta, "{id}\t{t}");
    }

    let mut edges = String::from("# src\tdst\tedge_type\n");
    for r in 0..g.num_edge_types() {
        for (u, v) in g.edges_of_type(r) {
            let _ = writeln!(edges, "{u}\t{v}\t{r}");
        }
    }

    let mut features = String::new();
    for (id, row) in g.features().rows().into_iter().enumerate() {
        let _ = write!(features, "{id}");
        for v in row {
            let _ = write!(features, "\t{v}");
        }
        features.push('\n');
    }

    let labels = g.labels().iter().any(Option::is_some).then(|| {
        let mut s = String::new();
        for (id, c) in g.labels().iter().enumerate() {
            if let Some(c) = c {
                let _ = writeln!(s, "{id}\t{c}");
            }
        }
        s
    });

    Ok(DatasetPaths {
        meta: write(META_FILE, meta)?,
        edges: write(EDGES_FILE, edges)?,
        features: write(FEATURES_FILE, features)?,
        labels: labels.map(|s| write(LABELS_FILE, s)).transpose()?,
    })
}

/// Train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const LINK: SplitRatios = SplitRatios {
        train: 0.85,
        val: 0.05,
        test: 0.10,
    };
    pub const NODE: SplitRatios = SplitRatios {
        train: 0.8,
        val: 0.1,
        test: 0.1,
    };

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&r| !(0.0..=1.0).contains(&r))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Split(format!(
                "ratios {parts:?} must be in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Partition sizes for `count` items: validation and test get at least
    /// one item each, training takes the remainder.
    fn sizes(&self, count: usize) -> Option<(usize, usize, usize)> {
        let val = ((self.val * count as f64).round() as usize).max(1);
        let test = ((self.test * count as f64).round() as usize).max(1);
        let train = count.checked_sub(val + test)?;
        (train >= 1).then_some((train, val, test))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

/// Positive and negative pairs of one partition. Pairs are stored with
/// `u <= v`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    pub pos: Vec<(NodeId, NodeId)>,
    pub neg: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeSplit {
    pub train: PairSet,
    pub val: PairSet,
    pub test: PairSet,
}

impl TypeSplit {
    pub fn partition(&self, p: Partition) -> &PairSet {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkSplit {
    pub per_type: Vec<TypeSplit>,
    pub seed: u64,
}

impl LinkSplit {
    /// Per-type adjacencies rebuilt from training positives only.
    pub fn train_adjacencies(&self, n: usize) -> Result<Vec<SparseMatrix>> {
        let edges: Vec<EdgeRecord> = self
            .per_type
            .iter()
            .enumerate()
            .flat_map(|(r, s)| s.train.pos.iter().map(move |&(u, v)| EdgeRecord::new(u, v, r)))
            .collect();
        build_subgraph_adjacencies(&edges, n, self.per_type.len())
    }

    /// `g` with validation and test edges hidden.
    pub fn training_graph(&self, g: &AmhenGraph) -> Result<AmhenGraph> {
        g.with_adjacencies(self.train_adjacencies(g.num_nodes())?)
    }
}

fn canonical(u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// An unordered pair of node types an edge type may connect, with the
/// number of distinct node pairs it spans.
#[derive(Debug, Clone)]
struct Category {
    a: NodeTypeId,
    b: NodeTypeId,
    pairs: u64,
}

/// Uniform sampler over node pairs that are not edges of a given type and
/// whose endpoint types match those the edge type actually connects.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    nodes_by_type: Vec<Vec<NodeId>>,
    node_types: Vec<NodeTypeId>,
    categories: Vec<Vec<Category>>,
    adjacencies: Vec<SparseMatrix>,
}

impl NegativeSampler {
    /// Endpoint-type compatibility is read from `g`'s edges; pairs adjacent
    /// in `g` are never returned.
    pub fn new(g: &AmhenGraph) -> Self {
        let mut nodes_by_type = vec![Vec::new(); g.num_node_types()];
        for (id, &t) in g.node_types().iter().enumerate() {
            nodes_by_type[t].push(id);
        }
        let categories = (0..g.num_edge_types())
            .map(|r| {
                let seen: BTreeSet<(NodeTypeId, NodeTypeId)> = g
                    .edges_of_type(r)
                    .into_iter()
                    .map(|(u, v)| canonical(g.node_types()[u], g.node_types()[v]))
                    .collect();
                seen.into_iter()
                    .map(|(a, b)| {
                        let na = nodes_by_type[a].len() as u64;
                        let pairs = if a == b {
                            na * na.saturating_sub(1) / 2
                        } else {
                            na * nodes_by_type[b].len() as u64
                        };
                        Category { a, b, pairs }
                    })
                    .filter(|c| c.pairs > 0)
                    .collect()
            })
            .collect();
        Self {
            nodes_by_type,
            node_types: g.node_types().to_vec(),
            categories,
            adjacencies: g.adjacencies().to_vec(),
        }
    }

    fn compatible_pairs(&self, r: EdgeTypeId) -> u64 {
        self.categories[r].iter().map(|c| c.pairs).sum()
    }

    /// Whether `(u, v)` has endpoint types that edge type `r` connects.
    pub fn is_compatible(&self, r: EdgeTypeId, u: NodeId, v: NodeId) -> bool {
        let (a, b) = canonical(self.node_types[u], self.node_types[v]);
        self.categories[r].iter().any(|c| c.a == a && c.b == b)
    }

    /// Draws `count` distinct non-edges of type `r`, none of which is in
    /// `exclude`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        r: EdgeTypeId,
        count: usize,
        exclude: &HashSet<(NodeId, NodeId)>,
        rng: &mut R,
    ) -> Result<Vec<(NodeId, NodeId)>> {
        self.draw(r, count, exclude, rng, false)
    }

    /// Like [`sample`](Self::sample), but returns every available pair
    /// (shuffled) when fewer than `count` exist.
    pub fn sample_up_to<R: Rng + ?Sized>(
        &self,
        r: EdgeTypeId,
        count: usize,
        exclude: &HashSet<(NodeId, NodeId)>,
        rng: &mut R,
    ) -> Vec<(NodeId, NodeId)> {
        self.draw(r, count, exclude, rng, true).expect("short draws are allowed")
    }

    fn draw<R: Rng + ?Sized>(
        &self,
        r: EdgeTypeId,
        count: usize,
        exclude: &HashSet<(NodeId, NodeId)>,
        rng: &mut R,
        allow_short: bool,
    ) -> Result<Vec<(NodeId, NodeId)>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let adj = &self.adjacencies[r];
        let total = self.compatible_pairs(r);
        // upper bound on the number of excluded compatible pairs
        let blocked = (adj.nnz() as u64).div_ceil(2) + exclude.len() as u64;
        let available = total.saturating_sub(blocked);

        if available < 4 * count as u64 || total <= 200_000 {
            let mut pool = Vec::new();
            for c in &self.categories[r] {
                for (i, &u) in self.nodes_by_type[c.a].iter().enumerate() {
                    let partners: &[NodeId] = if c.a == c.b {
                        &self.nodes_by_type[c.a][i + 1..]
                    } else {
                        &self.nodes_by_type[c.b]
                    };
                    for &v in partners {
                        let p = canonical(u, v);
                        if !adj.contains(p.0, p.1) && !exclude.contains(&p) {
                            pool.push(p);
                        }
                    }
                }
            }
            if pool.len() < count && allow_short {
                pool.shuffle(rng);
                return Ok(pool);
            }
            if pool.len() < count {
                return Err(Error::Split(format!(
                    "edge type {r}: only {} unobserved node pairs, {count} negatives needed",
                    pool.len()
                )));
            }
            let (chosen, _) = pool.partial_shuffle(rng, count);
            return Ok(chosen.to_vec());
        }

        let mut taken = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let mut pick = rng.random_range(0..total);
            let cat = self.categories[r]
                .iter()
                .find(|c| {
                    if pick < c.pairs {
                        true
                    } else {
                        pick -= c.pairs;
                        false
                    }
                })
                .expect("pick < total");
            let side_a = &self.nodes_by_type[cat.a];
            let (u, v) = if cat.a == cat.b {
                let i = rng.random_range(0..side_a.len());
                let mut j = rng.random_range(0..side_a.len() - 1);
                if j >= i {
                    j += 1;
                }
                (side_a[i], side_a[j])
            } else {
                let side_b = &self.nodes_by_type[cat.b];
                (
                    side_a[rng.random_range(0..side_a.len())],
                    side_b[rng.random_range(0..side_b.len())],
                )
            };
            let p = canonical(u, v);
            if adj.contains(p.0, p.1) || exclude.contains(&p) || !taken.insert(p) {
                continue;
            }
            out.push(p);
        }
        Ok(out)
    }
}

/// Splits the positive pairs of every edge type 85/5/10 (by default) and
/// draws an equal number of type-compatible negatives for each partition.
///
/// Edge types with fewer than three pairs keep all of them for training.
/// When too few non-edges exist, the available negatives go to the test
/// partition first, then validation, then training.
pub fn split_links(g: &AmhenGraph, ratios: SplitRatios, seed: u64) -> Result<LinkSplit> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = NegativeSampler::new(g);
    let mut per_type = Vec::with_capacity(g.num_edge_types());
    for r in 0..g.num_edge_types() {
        let mut pos = g.edges_of_type(r);
        if pos.is_empty() {
            return Err(Error::Split(format!("edge type {r} has no edges")));
        }
        let (n_train, n_val, n_test) = ratios.sizes(pos.len()).unwrap_or_else(|| {
            warn!("edge type {r} has {} pairs; all are used for training", pos.len());
            (pos.len(), 0, 0)
        });
        pos.shuffle(&mut rng);
        let mut neg = sampler.sample_up_to(r, pos.len(), &HashSet::new(), &mut rng);
        if neg.len() < pos.len() {
            warn!("edge type {r}: only {} negatives for {} positives", neg.len(), pos.len());
        }
        let test_pos = pos.split_off(n_train + n_val);
        let val_pos = pos.split_off(n_train);
        let test_neg: Vec<_> = neg.drain(..n_test.min(neg.len())).collect();
        let val_neg: Vec<_> = neg.drain(..n_val.min(neg.len())).collect();
        per_type.push(TypeSplit {
            train: PairSet { pos, neg },
            val: PairSet {
                pos: val_pos,
                neg: val_neg,
            },
            test: PairSet {
                pos: test_pos,
                neg: test_neg,
            },
        });
    }
    Ok(LinkSplit { per_type, seed })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSplit {
    pub train: Vec<NodeId>,
    pub val: Vec<NodeId>,
    pub test: Vec<NodeId>,
    pub seed: u64,
}

impl NodeSplit {
    pub fn partition(&self, p: Partition) -> &[NodeId] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }
}

/// Splits labeled nodes 80/10/10 (by default). Stratified splitting needs
/// at least three labeled nodes per class; pass `stratified = false` to
/// shuffle all labeled nodes together instead.
pub fn split_nodes(
    g: &AmhenGraph,
    ratios: SplitRatios,
    seed: u64,
    stratified: bool,
) -> Result<NodeSplit> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<NodeId>> = if stratified {
        let mut by_class = vec![Vec::new(); g.num_classes()];
        for (id, c) in g.labels().iter().enumerate() {
            if let Some(c) = c {
                by_class[*c].push(id);
            }
        }
        by_class.retain(|ids| !ids.is_empty());
        by_class
    } else {
        vec![g
            .labels()
            .iter()
            .enumerate()
            .filter_map(|(id, c)| c.map(|_| id))
            .collect()]
    };
    if groups.iter().all(Vec::is_empty) {
        return Err(Error::Split("no labeled nodes".into()));
    }

    let mut split = NodeSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for mut ids in groups {
        let (n_train, n_val, _) = ratios.sizes(ids.len()).ok_or_else(|| {
            let class = g.labels()[ids[0]].unwrap_or_default();
            if stratified {
                Error::Split(format!(
                    "class {class} has only {} labeled nodes; stratified splitting needs 3 \
                     (use the non-stratified fallback, --no-stratify)",
                    ids.len()
                ))
            } else {
                Error::Split(format!("only {} labeled nodes; at least 3 needed", ids.len()))
            }
        })?;
        ids.shuffle(&mut rng);
        split.train.extend_from_slice(&ids[..n_train]);
        split.val.extend_from_slice(&ids[n_train..n_train + n_val]);
        split.test.extend_from_slice(&ids[n_train + n_val..]);
    }
    Ok(split)
}
