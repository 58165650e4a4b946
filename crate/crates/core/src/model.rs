//! Forward pass: relation aggregation, activation-free propagation and
//! layer fusion, plus the pair scorer and the softmax classification head.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};
use serde::{Deserialize, Serialize};

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::graph::{weighted_sum, AmhenGraph, DenseMatrix, NodeId, SparseMatrix};

/// How per-layer outputs are combined into the final embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Arithmetic mean of all layer outputs.
    #[default]
    Mean,
    /// Output of the last layer only.
    LastLayer,
}

impl Fusion {
    pub fn as_str(self) -> &'static str {
        match self {
            Fusion::Mean => "mean",
            Fusion::LastLayer => "last_layer",
        }
    }
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Fusion::Mean),
            "last_layer" => Ok(Fusion::LastLayer),
            other => Err(Error::Invalid(format!("unknown fusion `{other}`"))),
        }
    }
}

/// Optional rescaling of each relation's adjacency before mixing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Raw binary adjacencies.
    #[default]
    None,
    /// `D_r⁻¹ A_r` for every relation, so `𝔸 = Σ_r β_r D_r⁻¹ A_r`.
    Row,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::Row => "row",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "row" => Ok(Normalization::Row),
            other => Err(Error::Invalid(format!("unknown normalization `{other}`"))),
        }
    }
}

/// The per-relation matrices mixed by `β` under `norm`.
pub fn relation_matrices(g: &AmhenGraph, norm: Normalization) -> Cow<'_, [SparseMatrix]> {
    match norm {
        Normalization::None => Cow::Borrowed(g.adjacencies()),
        Normalization::Row => Cow::Owned(g.adjacencies().iter().map(SparseMatrix::row_normalized).collect()),
    }
}

/// Trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// One weight per edge type.
    pub beta: Vec<f64>,
    /// `weights[0]` is `m × d`, the rest `d × d`.
    pub weights: Vec<DenseMatrix>,
    /// `num_classes × d`, present for semi-supervised models.
    pub classifier: Option<DenseMatrix>,
    pub fusion: Fusion,
    /// Fixed, not trained.
    pub normalization: Normalization,
}

fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl ModelParams {
    /// Relation weights start at one; weight matrices and the optional
    /// classifier are Glorot-uniform.
    pub fn init<R: Rng + ?Sized>(
        num_relations: usize,
        feature_dim: usize,
        dim: usize,
        layers: usize,
        num_classes: Option<usize>,
        fusion: Fusion,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Invalid("at least one layer is required".into()));
        }
        if num_relations == 0 || feature_dim == 0 || dim == 0 {
            return Err(Error::Invalid(
                "relation count, feature and embedding dimensions must be positive".into(),
            ));
        }
        let mut weights = Vec::with_capacity(layers);
        weights.push(glorot_uniform(feature_dim, dim, rng));
        for _ in 1..layers {
            weights.push(glorot_uniform(dim, dim, rng));
        }
        let classifier = num_classes.map(|k| glorot_uniform(k, dim, rng));
        Ok(Self {
            beta: vec![1.0; num_relations],
            weights,
            classifier,
            fusion,
            normalization: Normalization::None,
        })
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn num_relations(&self) -> usize {
        self.beta.len()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.classifier.as_ref().map(|c| c.nrows())
    }

    /// Checks shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Invalid("model has no layers".into()));
        }
        let d = self.dim();
        for (i, w) in self.weights.iter().enumerate().skip(1) {
            if w.nrows() != d || w.ncols() != d {
                return Err(Error::Invalid(format!(
                    "layer {} weight is {}x{}, expected {d}x{d}",
                    i + 1,
                    w.nrows(),
                    w.ncols()
                )));
            }
        }
        if let Some(c) = &self.classifier {
            if c.ncols() != d {
                return Err(Error::Dimension {
                    context: "classifier columns",
                    expected: d,
                    found: c.ncols(),
                });
            }
        }
        let finite = self.beta.iter().all(|b| b.is_finite())
            && self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self
                .classifier
                .iter()
                .all(|c| c.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Invalid("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Training mode applies inverted dropout to the input of every layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train { dropout: f64 },
    Eval,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `Σ_r β_r A_r`.
    pub aggregated: SparseMatrix,
    /// Input of each layer after dropout (`X` for the first layer).
    pub layer_inputs: Vec<DenseMatrix>,
    /// `aggregated · layer_inputs[i]`.
    pub propagated: Vec<DenseMatrix>,
    /// `H^(i) = propagated[i] · W^(i)`.
    pub per_layer: Vec<DenseMatrix>,
    pub fused: DenseMatrix,
    /// Scaled keep masks (entries `0` or `1/keep`), one per layer in
    /// training mode with nonzero dropout.
    pub dropout_masks: Vec<Option<DenseMatrix>>,
    pub fusion: Fusion,
}

impl ForwardTrace {
    pub fn embeddings(&self) -> &DenseMatrix {
        &self.fused
    }
}

pub fn aggregate(g: &AmhenGraph, beta: &[f64]) -> Result<SparseMatrix> {
    weighted_sum(g.adjacencies(), beta)
}

fn dropout_mask<R: Rng + ?Sized>(
    shape: (usize, usize),
    rate: f64,
    rng: &mut R,
) -> Result<DenseMatrix> {
    let keep = 1.0 - rate;
    let dist = Bernoulli::new(keep)
        .map_err(|_| Error::Invalid(format!("dropout rate {rate} outside [0, 1)")))?;
    let scale = 1.0 / keep;
    Ok(Array2::from_shape_simple_fn(shape, || {
        if dist.sample(rng) {
            scale
        } else {
            0.0
        }
    }))
}

/// Runs the model: `H^(1) = 𝔸 X W^(1)`, `H^(i) = 𝔸 H^(i-1) W^(i)`, fused
/// by mean (or last layer). There is no nonlinearity.
pub fn forward<R: Rng + ?Sized>(
    g: &AmhenGraph,
    params: &ModelParams,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardTrace> {
    if params.num_relations() != g.num_edge_types() {
        return Err(Error::Dimension {
            context: "relation weights",
            expected: g.num_edge_types(),
            found: params.num_relations(),
        });
    }
    if params.feature_dim() != g.feature_dim() {
        return Err(Error::Dimension {
            context: "first-layer weight rows",
            expected: g.feature_dim(),
            found: params.feature_dim(),
        });
    }
    params.validate()?;
    let rate = match mode {
        Mode::Train { dropout } if !(0.0..1.0).contains(&dropout) => {
            return Err(Error::Invalid(format!("dropout rate {dropout} outside [0, 1)")))
        }
        Mode::Train { dropout } => dropout,
        Mode::Eval => 0.0,
    };

    let aggregated = weighted_sum(&relation_matrices(g, params.normalization), &params.beta)?;
    let layers = params.layers();
    let mut layer_inputs = Vec::with_capacity(layers);
    let mut propagated = Vec::with_capacity(layers);
    let mut per_layer: Vec<DenseMatrix> = Vec::with_capacity(layers);
    let mut dropout_masks = Vec::with_capacity(layers);

    for (i, w) in params.weights.iter().enumerate() {
        let raw = if i == 0 { g.features() } else { &per_layer[i - 1] };
        let (input, mask) = if rate > 0.0 {
            let mask = dropout_mask(raw.dim(), rate, rng)?;
            (raw * &mask, Some(mask))
        } else {
            (raw.clone(), None)
        };
        let p = aggregated.spmm(input.view())?;
        let h = p.dot(w);
        layer_inputs.push(input);
        propagated.push(p);
        per_layer.push(h);
        dropout_masks.push(mask);
    }

    let fused = match params.fusion {
        Fusion::Mean => {
            let mut acc = DenseMatrix::zeros(per_layer[0].dim());
            for h in &per_layer {
                acc += h;
            }
            acc / layers as f64
        }
        Fusion::LastLayer => per_layer[layers - 1].clone(),
    };

    Ok(ForwardTrace {
        aggregated,
        layer_inputs,
        propagated,
        per_layer,
        fused,
        dropout_masks,
        fusion: params.fusion,
    })
}

/// Inner product of two embedding rows. Panics if either id is out of range.
pub fn score_pair(h: &DenseMatrix, u: NodeId, v: NodeId) -> f64 {
    h.row(u).dot(&h.row(v))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax, shifted by each row's maximum.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|z| z / sum);
    }
    out
}

/// Class probabilities `softmax(H Cᵀ)`.
pub fn classify(params: &ModelParams, h: &DenseMatrix) -> Result<DenseMatrix> {
    let c = params.classifier.as_ref().ok_or(Error::MissingClassifier)?;
    if c.ncols() != h.ncols() {
        return Err(Error::Dimension {
            context: "classifier columns",
            expected: h.ncols(),
            found: c.ncols(),
        });
    }
    Ok(softmax_rows(&h.dot(&c.t())))
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(m: &DenseMatrix) -> Vec<usize> {
    m.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeRecord;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_graph(features: DenseMatrix) -> AmhenGraph {
        let edges = [
            EdgeRecord::new(0, 2, 0),
            EdgeRecord::new(1, 2, 0),
            EdgeRecord::new(0, 2, 1),
            EdgeRecord::new(0, 3, 1),
            EdgeRecord::new(1, 3, 1),
        ];
        AmhenGraph::from_edges(vec![0, 0, 1, 1], 2, &edges, 2, features, vec![None; 4]).unwrap()
    }

    fn identity_params(n: usize, layers: usize, beta: Vec<f64>, fusion: Fusion) -> ModelParams {
        ModelParams {
            beta,
            weights: vec![DenseMatrix::eye(n); layers],
            classifier: None,
            fusion,
            normalization: Normalization::None,
        }
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize, relations: usize) -> AmhenGraph {
        let mut edges = Vec::new();
        for r in 0..relations {
            for u in 0..n {
                for v in u..n {
                    if rng.random::<f64>() < 0.2 {
                        edges.push(EdgeRecord::new(u, v, r));
                    }
                }
            }
        }
        let x = DenseMatrix::from_shape_simple_fn((n, m), || rng.random_range(-1.0..1.0));
        AmhenGraph::from_edges(vec![0; n], 1, &edges, relations, x, vec![None; n]).unwrap()
    }

    #[test]
    fn aggregate_toy_values_and_linearity() {
        let g = toy_graph(DenseMatrix::eye(4));
        let a = aggregate(&g, &[1.0, 0.5]).unwrap();
        assert_eq!(a.get(0, 2), 1.5);
        assert_eq!(a.get(0, 3), 0.5);
        let sum = aggregate(&g, &[1.0, 1.0]).unwrap().to_dense();
        assert_eq!(sum, g.adjacency(0).to_dense() + g.adjacency(1).to_dense());
        assert_eq!(
            aggregate(&g, &[2.0, 1.0]).unwrap(),
            a.scaled(2.0)
        );
    }

    #[test]
    fn single_identity_layer_reproduces_aggregate() {
        let g = toy_graph(DenseMatrix::eye(4));
        let p = identity_params(4, 1, vec![1.0, 0.5], Fusion::Mean);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = forward(&g, &p, Mode::Eval, &mut rng).unwrap();
        assert_eq!(t.fused, t.aggregated.to_dense());
    }

    #[test]
    fn two_identity_layers_give_mean_of_first_two_powers() {
        let g = toy_graph(DenseMatrix::eye(4));
        let p = identity_params(4, 2, vec![1.0, 0.5], Fusion::Mean);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = forward(&g, &p, Mode::Eval, &mut rng).unwrap();
        assert_eq!(t.fused[[0, 0]], 1.25);
        let a = t.aggregated.to_dense();
        let expected = (&a + &a.dot(&a)) / 2.0;
        assert_eq!(t.fused, expected);
    }

    #[test]
    fn three_layers_match_dense_power_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(&mut rng, 20, 4, 2);
        let mut p = ModelParams::init(2, 4, 3, 3, None, Fusion::Mean, &mut rng).unwrap();
        p.beta = vec![0.7, -1.3];
        let t = forward(&g, &p, Mode::Eval, &mut rng).unwrap();

        let a = g.adjacency(0).to_dense() * 0.7 + g.adjacency(1).to_dense() * -1.3;
        let mut power = DenseMatrix::eye(20);
        let mut chain = DenseMatrix::eye(4);
        let mut expected = DenseMatrix::zeros((20, 3));
        for w in &p.weights {
            power = power.dot(&a);
            chain = chain.dot(w);
            expected = expected + power.dot(g.features()).dot(&chain);
        }
        expected /= 3.0;
        for (x, y) in t.fused.iter().zip(expected.iter()) {
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn last_layer_fusion_returns_final_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_graph(&mut rng, 12, 3, 2);
        let p = ModelParams::init(2, 3, 4, 2, None, Fusion::LastLayer, &mut rng).unwrap();
        let t = forward(&g, &p, Mode::Eval, &mut rng).unwrap();
        assert_eq!(t.fused, t.per_layer[1]);
    }

    #[test]
    fn forward_rejects_mismatched_shapes() {
        let g = toy_graph(DenseMatrix::eye(4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wrong_m = ModelParams::init(2, 3, 2, 1, None, Fusion::Mean, &mut rng).unwrap();
        assert!(matches!(
            forward(&g, &wrong_m, Mode::Eval, &mut rng),
            Err(Error::Dimension { .. })
        ));
        let wrong_r = ModelParams::init(3, 4, 2, 1, None, Fusion::Mean, &mut rng).unwrap();
        assert!(forward(&g, &wrong_r, Mode::Eval, &mut rng).is_err());
        let mut bad_w = ModelParams::init(2, 4, 2, 2, None, Fusion::Mean, &mut rng).unwrap();
        bad_w.weights[1] = DenseMatrix::zeros((3, 2));
        assert!(forward(&g, &bad_w, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn dropout_masks_are_inverted_and_eval_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_graph(&mut rng, 15, 6, 2);
        let p = ModelParams::init(2, 6, 4, 2, None, Fusion::Mean, &mut rng).unwrap();
        let t = forward(&g, &p, Mode::Train { dropout: 0.5 }, &mut rng).unwrap();
        for mask in t.dropout_masks.iter().map(|m| m.as_ref().unwrap()) {
            assert!(mask.iter().all(|&v| v == 0.0 || v == 2.0));
        }
        assert_eq!(t.layer_inputs[0], g.features() * t.dropout_masks[0].as_ref().unwrap());
        let e1 = forward(&g, &p, Mode::Eval, &mut rng).unwrap();
        let e2 = forward(&g, &p, Mode::Eval, &mut rng).unwrap();
        assert_eq!(e1.fused, e2.fused);
        assert!(e1.dropout_masks.iter().all(Option::is_none));
        assert!(forward(&g, &p, Mode::Train { dropout: 1.0 }, &mut rng).is_err());
    }

    #[test]
    fn score_pair_basics() {
        let h = array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        assert_eq!(score_pair(&h, 0, 1), 0.0);
        assert_eq!(sigmoid(score_pair(&h, 0, 1)), 0.5);
        assert_eq!(score_pair(&h, 2, 2), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = DenseMatrix::from_shape_simple_fn((5, 7), || rng.random_range(-2.0..2.0));
        let mut s = 0.0;
        for k in 0..7 {
            s += h[[1, k]] * h[[3, k]];
        }
        assert!((score_pair(&h, 1, 3) - s).abs() <= 1e-12);
    }

    #[test]
    fn row_normalization_scales_each_relation_separately() {
        let g = toy_graph(DenseMatrix::eye(4));
        let mut p = identity_params(4, 1, vec![1.0, 0.5], Fusion::Mean);
        p.normalization = Normalization::Row;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = forward(&g, &p, Mode::Eval, &mut rng).unwrap().aggregated;
        // U1: buy degree 1, click degree 2
        assert_eq!(a.get(0, 2), 1.0 + 0.5 / 2.0);
        assert_eq!(a.get(0, 3), 0.5 / 2.0);
        // I1: buy degree 2, click degree 1
        assert_eq!(a.get(2, 0), 0.5 + 0.5);
        assert_eq!(a.get(2, 1), 0.5);
    }

    #[test]
    fn classify_edge_cases() {
        let h = array![[1.0, 2.0], [-3.0, 0.5]];
        let mut p = ModelParams {
            beta: vec![1.0],
            weights: vec![DenseMatrix::eye(2)],
            classifier: Some(DenseMatrix::zeros((4, 2))),
            fusion: Fusion::Mean,
            normalization: Normalization::None,
        };
        let probs = classify(&p, &h).unwrap();
        assert!(probs.iter().all(|&v| v == 0.25));

        p.classifier = Some(array![[0.3, -0.2]]);
        assert!(classify(&p, &h).unwrap().iter().all(|&v| v == 1.0));

        p.classifier = None;
        assert!(matches!(classify(&p, &h), Err(Error::MissingClassifier)));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_rows(&array![[0.2, 0.2, 0.1], [0.1, 0.5, 0.5]]), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-20.0f64..20.0, 12)) {
            let logits = DenseMatrix::from_shape_vec((3, 4), vals).unwrap();
            let p = softmax_rows(&logits);
            for row in p.axis_iter(Axis(0)) {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
                prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }

        #[test]
        fn argmax_is_shift_invariant(
            vals in proptest::collection::vec(-5.0f64..5.0, 12),
            shift in -100.0f64..100.0,
        ) {
            let logits = DenseMatrix::from_shape_vec((4, 3), vals).unwrap();
            let shifted = &logits + shift;
            prop_assert_eq!(
                argmax_rows(&softmax_rows(&logits)),
                argmax_rows(&softmax_rows(&shifted))
            );
        }

        #[test]
        fn forward_is_linear_in_features(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, 10, 3, 2);
            let x2 = DenseMatrix::from_shape_simple_fn((10, 3), || rng.random_range(-1.0..1.0));
            let mut p = ModelParams::init(2, 3, 4, 2, None, Fusion::Mean, &mut rng).unwrap();
            p.beta = vec![0.8, 1.7];
            let run = |x: DenseMatrix, rng: &mut ChaCha8Rng| {
                forward(&g.with_features(x).unwrap(), &p, Mode::Eval, rng).unwrap().fused
            };
            let combo = g.features() * a + &x2 * b;
            let lhs = run(combo, &mut rng);
            let rhs = run(g.features().clone(), &mut rng) * a + run(x2, &mut rng) * b;
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
            }
        }
    }
}
