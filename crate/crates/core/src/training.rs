//! Losses, hand-derived gradients, the Adam optimizer, a finite-difference
//! gradient checker and the full-graph training loop.
//!
//! The model is linear in every weight matrix, so the backward pass is a
//! short chain of transposed products. For one layer with (dropped-out)
//! input `Z`, propagated input `P = 𝔸 Z` and output `H = P W`:
//!
//! ```text
//! dW = Pᵀ dH        dP = dH Wᵀ        dZ = 𝔸ᵀ dP
//! dβ_r += Σ_{(u,v) ∈ A_r} dP[u,:] · Z[v,:]
//! ```
//!
//! The fused-output adjoint is split `1/l` per layer (or sent only to the
//! last layer) and accumulates with the adjoint flowing back from the next
//! layer.

use std::collections::HashSet;

use log::warn;
use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_links, NodeMetrics};
use crate::graph::{AmhenGraph, DenseMatrix, NodeId};
use crate::ingest::{LinkSplit, NegativeSampler, NodeSplit, Partition};
use crate::model::{
    argmax_rows, classify, forward, relation_matrices, score_pair, sigmoid, Fusion, ForwardTrace, Mode, ModelParams,
    Normalization,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Unsupervised link prediction with negative sampling.
    Link,
    /// Semi-supervised node classification.
    Node,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Link => "link",
            Task::Node => "node",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Relation weights stay at their initial value of one.
    FreezeBeta,
    /// Only the last layer's output is used as the embedding.
    LastLayerOnly,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::FreezeBeta => "freeze_beta",
            Ablation::LastLayerOnly => "last_layer_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub layers: usize,
    pub dim: usize,
    pub seed: u64,
    pub negatives_per_positive: usize,
    pub ablation: Ablation,
    #[serde(default)]
    pub normalization: Normalization,
}

impl TrainConfig {
    /// Two layers, 200 dimensions, lr 0.05, dropout 0.5, weight decay
    /// 5e-4; 500 epochs for links and 200 for nodes.
    pub fn new(task: Task) -> Self {
        Self {
            task,
            epochs: match task {
                Task::Link => 500,
                Task::Node => 200,
            },
            lr: 0.05,
            weight_decay: 0.0005,
            dropout: 0.5,
            layers: 2,
            dim: 200,
            seed: 0,
            negatives_per_positive: 1,
            ablation: Ablation::None,
            normalization: Normalization::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Invalid("weight decay must be non-negative".into()));
        }
        if self.layers == 0 || self.dim == 0 {
            return Err(Error::Invalid("layers and dim must be positive".into()));
        }
        if self.task == Task::Link && self.negatives_per_positive == 0 {
            return Err(Error::Invalid("at least one negative per positive is needed".into()));
        }
        Ok(())
    }

    pub fn fusion(&self) -> Fusion {
        match self.ablation {
            Ablation::LastLayerOnly => Fusion::LastLayer,
            _ => Fusion::Mean,
        }
    }
}

/// Gradients with the same block structure as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_beta: Vec<f64>,
    pub d_weights: Vec<DenseMatrix>,
    pub d_classifier: Option<DenseMatrix>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            d_beta: vec![0.0; params.beta.len()],
            d_weights: params.weights.iter().map(|w| DenseMatrix::zeros(w.dim())).collect(),
            d_classifier: params.classifier.as_ref().map(|c| DenseMatrix::zeros(c.dim())),
        }
    }

    /// Named blocks as flat slices: `beta`, `W1..Wl`, `C`.
    pub fn blocks(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = vec![("beta".to_string(), self.d_beta.clone())];
        for (i, w) in self.d_weights.iter().enumerate() {
            out.push((format!("W{}", i + 1), w.iter().copied().collect()));
        }
        if let Some(c) = &self.d_classifier {
            out.push(("C".to_string(), c.iter().copied().collect()));
        }
        out
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Negative-sampling binary cross-entropy, summed over pairs:
/// `Σ_pos −ln σ(h_u·h_v) + Σ_neg −ln σ(−h_u·h_v)`.
pub fn unsupervised_loss(h: &DenseMatrix, pos: &[(NodeId, NodeId)], neg: &[(NodeId, NodeId)]) -> f64 {
    let p: f64 = pos.iter().map(|&(u, v)| softplus(-score_pair(h, u, v))).sum();
    let n: f64 = neg.iter().map(|&(u, v)| softplus(score_pair(h, u, v))).sum();
    p + n
}

/// Loss and its gradient with respect to the embeddings.
pub fn unsupervised_loss_grad(
    h: &DenseMatrix,
    pos: &[(NodeId, NodeId)],
    neg: &[(NodeId, NodeId)],
) -> (f64, DenseMatrix) {
    let mut grad = DenseMatrix::zeros(h.dim());
    let mut loss = 0.0;
    let mut accumulate = |u: NodeId, v: NodeId, coeff: f64| {
        let hu = h.row(u).to_owned();
        let hv = h.row(v).to_owned();
        grad.row_mut(u).scaled_add(coeff, &hv);
        grad.row_mut(v).scaled_add(coeff, &hu);
    };
    for &(u, v) in pos {
        let s = score_pair(h, u, v);
        loss += softplus(-s);
        accumulate(u, v, -sigmoid(-s));
    }
    for &(u, v) in neg {
        let s = score_pair(h, u, v);
        loss += softplus(s);
        accumulate(u, v, sigmoid(s));
    }
    (loss, grad)
}

const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy `−Σ_{i ∈ train} ln p_i[y_i]` over softmax outputs.
/// Probabilities below 1e-12 are clamped (with a warning).
pub fn semisupervised_loss(probs: &DenseMatrix, labels: &[Option<usize>], train_ids: &[NodeId]) -> Result<f64> {
    let mut loss = 0.0;
    let mut clamped = 0;
    for &i in train_ids {
        let y = labels
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Invalid(format!("training node {i} has no label")))?;
        let p = probs[[i, y]];
        if p < PROB_FLOOR {
            clamped += 1;
        }
        loss -= p.max(PROB_FLOOR).ln();
    }
    if clamped > 0 {
        warn!("{clamped} predicted probabilities clamped to {PROB_FLOOR} before log");
    }
    Ok(loss)
}

/// Cross-entropy computed with log-softmax, with gradients for the
/// embeddings and the classifier.
fn semisupervised_loss_grad(
    h: &DenseMatrix,
    classifier: &DenseMatrix,
    labels: &[Option<usize>],
    train_ids: &[NodeId],
) -> Result<(f64, DenseMatrix, DenseMatrix)> {
    let logits = h.dot(&classifier.t());
    let mut d_logits = DenseMatrix::zeros(logits.dim());
    let mut loss = 0.0;
    for &i in train_ids {
        let y = labels
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Invalid(format!("training node {i} has no label")))?;
        if y >= classifier.nrows() {
            return Err(Error::Invalid(format!("label {y} >= {} classes", classifier.nrows())));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        let mut d = d_logits.row_mut(i);
        for (k, z) in row.iter().enumerate() {
            d[k] += (z - log_z).exp();
        }
        d[y] -= 1.0;
    }
    let d_h = d_logits.dot(classifier);
    let d_c = d_logits.t().dot(h);
    Ok((loss, d_h, d_c))
}

/// The data term of a training run.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Link {
        pos: &'a [(NodeId, NodeId)],
        neg: &'a [(NodeId, NodeId)],
    },
    Node {
        labels: &'a [Option<usize>],
        train_ids: &'a [NodeId],
    },
}

impl Objective<'_> {
    /// Loss, its gradient w.r.t. the fused embeddings, and the classifier
    /// gradient for the node task.
    pub fn evaluate(
        &self,
        trace: &ForwardTrace,
        params: &ModelParams,
    ) -> Result<(f64, DenseMatrix, Option<DenseMatrix>)> {
        match *self {
            Objective::Link { pos, neg } => {
                let (l, d) = unsupervised_loss_grad(&trace.fused, pos, neg);
                Ok((l, d, None))
            }
            Objective::Node { labels, train_ids } => {
                let c = params.classifier.as_ref().ok_or(Error::MissingClassifier)?;
                let (l, dh, dc) = semisupervised_loss_grad(&trace.fused, c, labels, train_ids)?;
                Ok((l, dh, Some(dc)))
            }
        }
    }
}

/// `weight_decay / 2 · (Σ ‖W‖² + ‖C‖²)`; the relation weights are not
/// decayed.
pub fn l2_penalty(params: &ModelParams, weight_decay: f64) -> f64 {
    let sq: f64 = params
        .weights
        .iter()
        .chain(params.classifier.iter())
        .map(|m| m.iter().map(|v| v * v).sum::<f64>())
        .sum();
    0.5 * weight_decay * sq
}

/// Reverse pass from `d_fused = ∂L/∂H` to every parameter block, including
/// the weight-decay term on `W` and `C`. The classifier block holds only the
/// decay term; callers add the head's data gradient.
pub fn backward(
    trace: &ForwardTrace,
    d_fused: &DenseMatrix,
    g: &AmhenGraph,
    params: &ModelParams,
    weight_decay: f64,
) -> Result<Gradients> {
    let layers = params.layers();
    if trace.per_layer.len() != layers
        || trace.fusion != params.fusion
        || trace.fused.dim() != d_fused.dim()
        || trace.aggregated.n() != g.num_nodes()
        || params.num_relations() != g.num_edge_types()
    {
        return Err(Error::Invalid(
            "forward trace does not match the parameters or graph".into(),
        ));
    }
    for (i, w) in params.weights.iter().enumerate() {
        if trace.propagated[i].ncols() != w.nrows() || trace.per_layer[i].ncols() != w.ncols() {
            return Err(Error::Invalid(format!("stale forward trace at layer {}", i + 1)));
        }
    }

    let relations = relation_matrices(g, params.normalization);
    let mut d_beta = vec![0.0; params.num_relations()];
    let mut d_weights = vec![DenseMatrix::zeros((0, 0)); layers];
    let share = match params.fusion {
        Fusion::Mean => 1.0 / layers as f64,
        Fusion::LastLayer => 0.0,
    };

    // adjoint flowing into H^(i) from layer i+1
    let mut from_next: Option<DenseMatrix> = None;
    for i in (0..layers).rev() {
        let mut d_h = match params.fusion {
            Fusion::Mean => d_fused * share,
            Fusion::LastLayer if i == layers - 1 => d_fused.clone(),
            Fusion::LastLayer => DenseMatrix::zeros(d_fused.dim()),
        };
        if let Some(next) = from_next.take() {
            d_h += &next;
        }
        let w = &params.weights[i];
        let p = &trace.propagated[i];
        let z = &trace.layer_inputs[i];

        d_weights[i] = p.t().dot(&d_h) + w * weight_decay;
        let d_p = d_h.dot(&w.t());

        for (r, adj) in relations.iter().enumerate() {
            let mut acc = 0.0;
            for u in 0..adj.n() {
                let (cols, vals) = adj.row(u);
                if cols.is_empty() {
                    continue;
                }
                let dp_u = d_p.row(u);
                for (&v, &a) in cols.iter().zip(vals) {
                    acc += a * dp_u.dot(&z.row(v));
                }
            }
            d_beta[r] += acc;
        }

        if i > 0 {
            let mut d_z = trace.aggregated.spmm_transpose(d_p.view())?;
            if let Some(mask) = &trace.dropout_masks[i] {
                d_z *= mask;
            }
            from_next = Some(d_z);
        }
    }

    Ok(Gradients {
        d_beta,
        d_weights,
        d_classifier: params.classifier.as_ref().map(|c| c * weight_decay),
    })
}

/// Forward, objective, and backward in one call. Returns the total loss
/// (data term plus L2 penalty).
pub fn loss_and_gradients<R: Rng + ?Sized>(
    g: &AmhenGraph,
    params: &ModelParams,
    objective: &Objective<'_>,
    weight_decay: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, Gradients, ForwardTrace)> {
    let trace = forward(g, params, mode, rng)?;
    let (data_loss, d_h, d_c) = objective.evaluate(&trace, params)?;
    let mut grads = backward(&trace, &d_h, g, params, weight_decay)?;
    if let (Some(total), Some(head)) = (grads.d_classifier.as_mut(), d_c) {
        *total += &head;
    }
    Ok((data_loss + l2_penalty(params, weight_decay), grads, trace))
}

/// Total loss in evaluation mode (no dropout).
pub fn total_loss(
    g: &AmhenGraph,
    params: &ModelParams,
    objective: &Objective<'_>,
    weight_decay: f64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = forward(g, params, Mode::Eval, &mut rng)?;
    let (l, _, _) = objective.evaluate(&trace, params)?;
    Ok(l + l2_penalty(params, weight_decay))
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    state: Vec<Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: Vec::new(),
        }
    }

    fn update(&mut self, block: usize, param: &mut [f64], grad: &[f64]) {
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let s = &mut self.state[block];
        for ((p, &g), (m, v)) in param
            .iter_mut()
            .zip(grad)
            .zip(s.m.iter_mut().zip(s.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Applies one update. Weight decay is expected to be folded into
    /// `grads` already (see [`backward`]). Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        if grads.d_beta.len() != params.beta.len()
            || grads.d_weights.len() != params.weights.len()
            || grads.d_classifier.is_some() != params.classifier.is_some()
        {
            return Err(Error::Invalid("gradient blocks do not match parameters".into()));
        }
        for (name, values) in grads.blocks() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { block: name });
            }
        }
        if self.state.is_empty() {
            self.state.push(Moments::new(params.beta.len()));
            for w in &params.weights {
                self.state.push(Moments::new(w.len()));
            }
            if let Some(c) = &params.classifier {
                self.state.push(Moments::new(c.len()));
            }
        }
        self.t += 1;
        self.update(0, &mut params.beta, &grads.d_beta);
        for (i, (w, dw)) in params.weights.iter_mut().zip(&grads.d_weights).enumerate() {
            let dw = dw.as_standard_layout();
            self.update(
                i + 1,
                w.as_slice_mut().expect("standard layout"),
                dw.as_slice().expect("standard layout"),
            );
        }
        if let (Some(c), Some(dc)) = (params.classifier.as_mut(), grads.d_classifier.as_ref()) {
            let dc = dc.as_standard_layout();
            let block = params.weights.len() + 1;
            self.update(
                block,
                c.as_slice_mut().expect("standard layout"),
                dc.as_slice().expect("standard layout"),
            );
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean validation ROC-AUC (links) or Macro-F1 (nodes).
    pub val_metric: f64,
}

/// `epoch train_loss val_metric` TSV.
pub fn render_history(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch\ttrain_loss\tval_metric\n");
    for r in history {
        s.push_str(&format!("{}\t{}\t{}\n", r.epoch, r.train_loss, r.val_metric));
    }
    s
}

#[derive(Debug, Clone, Copy)]
pub enum SplitRef<'a> {
    Link(&'a LinkSplit),
    Node(&'a NodeSplit),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial_params: ModelParams,
    /// Parameters from the epoch with the best validation metric.
    pub params: ModelParams,
    pub best_epoch: usize,
    /// Evaluation-mode forward pass of `params` on the graph the model was
    /// trained on.
    pub trace: ForwardTrace,
    pub history: Vec<EpochRecord>,
    /// Graph used for propagation: for links, the training graph with
    /// held-out edges removed.
    pub graph: AmhenGraph,
}

/// Validation metric for the current parameters.
pub fn validation_metric(
    h: &DenseMatrix,
    params: &ModelParams,
    g: &AmhenGraph,
    split: SplitRef<'_>,
    partition: Partition,
) -> Result<f64> {
    match split {
        SplitRef::Link(s) => Ok(evaluate_links(h, s, partition)?.mean.roc_auc),
        SplitRef::Node(s) => Ok(node_metrics(h, params, g, s.partition(partition))?.macro_f1),
    }
}

/// Macro/Micro-F1 of the classification head on `ids`.
pub fn node_metrics(h: &DenseMatrix, params: &ModelParams, g: &AmhenGraph, ids: &[NodeId]) -> Result<NodeMetrics> {
    let probs = classify(params, h)?;
    let pred = argmax_rows(&probs.select(Axis(0), ids));
    let truth: Vec<usize> = ids
        .iter()
        .map(|&i| g.labels()[i].ok_or_else(|| Error::Invalid(format!("node {i} has no label"))))
        .collect::<Result<_>>()?;
    NodeMetrics::of(&pred, &truth)
}

/// Model for `g` under `config`, initialized from `config.seed`.
pub fn init_params(g: &AmhenGraph, config: &TrainConfig) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let classes = match config.task {
        Task::Node => Some(g.num_classes().max(1)),
        Task::Link => None,
    };
    let mut params = ModelParams::init(
        g.num_edge_types(),
        g.feature_dim(),
        config.dim,
        config.layers,
        classes,
        config.fusion(),
        &mut rng,
    )?;
    params.normalization = config.normalization;
    Ok(params)
}

/// Full-graph training. Each epoch runs a training-mode forward pass, the
/// task loss (link: training positives against freshly drawn negatives;
/// node: labeled training nodes), the backward pass and one Adam step, then
/// scores the validation partition. Epoch 0 records the initial model.
pub fn train(g: &AmhenGraph, split: SplitRef<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let graph = match (split, config.task) {
        (SplitRef::Link(s), Task::Link) => s.training_graph(g)?,
        (SplitRef::Node(_), Task::Node) => g.clone(),
        _ => return Err(Error::Invalid("split kind does not match the task".into())),
    };
    let initial_params = init_params(&graph, config)?;
    let mut params = initial_params.clone();
    // separate stream from initialization so epochs=0 is independent of it
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(config.lr);

    let (train_pos, sampler) = match split {
        SplitRef::Link(s) => {
            let pos: Vec<Vec<(NodeId, NodeId)>> = s.per_type.iter().map(|t| t.train.pos.clone()).collect();
            (pos, Some(NegativeSampler::new(&graph)))
        }
        SplitRef::Node(_) => (Vec::new(), None),
    };
    let flat_pos: Vec<(NodeId, NodeId)> = train_pos.iter().flatten().copied().collect();
    let draw_negatives = |rng: &mut ChaCha8Rng| -> Vec<(NodeId, NodeId)> {
        let sampler = sampler.as_ref().expect("link task");
        let empty = HashSet::new();
        let mut neg = Vec::new();
        for (r, pos) in train_pos.iter().enumerate() {
            neg.extend(sampler.sample_up_to(r, pos.len() * config.negatives_per_positive, &empty, rng));
        }
        neg
    };

    let mut history = Vec::with_capacity(config.epochs + 1);
    let initial_trace = forward(&graph, &params, Mode::Eval, &mut rng)?;
    let initial_loss = match split {
        SplitRef::Link(_) => {
            let neg = draw_negatives(&mut rng);
            unsupervised_loss(&initial_trace.fused, &flat_pos, &neg)
        }
        SplitRef::Node(s) => {
            let probs = classify(&params, &initial_trace.fused)?;
            semisupervised_loss(&probs, graph.labels(), &s.train)?
        }
    } + l2_penalty(&params, config.weight_decay);
    let initial_val = validation_metric(&initial_trace.fused, &params, &graph, split, Partition::Val)?;
    history.push(EpochRecord {
        epoch: 0,
        train_loss: initial_loss,
        val_metric: initial_val,
    });
    let mut best = (initial_val, 0, params.clone(), initial_trace);

    let mode = Mode::Train {
        dropout: config.dropout,
    };
    for epoch in 1..=config.epochs {
        let neg;
        let objective = match split {
            SplitRef::Link(_) => {
                neg = draw_negatives(&mut rng);
                Objective::Link { pos: &flat_pos, neg: &neg }
            }
            SplitRef::Node(s) => Objective::Node {
                labels: graph.labels(),
                train_ids: &s.train,
            },
        };
        let (loss, mut grads, _) =
            loss_and_gradients(&graph, &params, &objective, config.weight_decay, mode, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss, history });
        }
        if config.ablation == Ablation::FreezeBeta {
            grads.d_beta.iter_mut().for_each(|d| *d = 0.0);
        }
        adam.step(&mut params, &grads)?;

        let trace = forward(&graph, &params, Mode::Eval, &mut rng)?;
        if trace.fused.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, loss: f64::INFINITY, history });
        }
        let val = validation_metric(&trace.fused, &params, &graph, split, Partition::Val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_metric: val,
        });
        // an undefined validation metric never beats a defined one; if it is
        // undefined throughout, the last epoch wins
        if val > best.0 || best.0.is_nan() {
            best = (val, epoch, params.clone(), trace);
        }
    }

    let (_, best_epoch, params, trace) = best;
    Ok(TrainOutcome {
        initial_params,
        params,
        best_epoch,
        trace,
        history,
        graph,
    })
}

/// Per-block and overall outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(block name, max relative error)` for every parameter block.
    pub blocks: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub worst_block: String,
    pub tolerance: f64,
    pub passed: bool,
}

/// Starting steps of the extrapolated central-difference sequences; the
/// estimate with the smallest error bound wins.
pub const FD_STEPS: [f64; 3] = [1e-2, 1e-3, 1e-4];
const FD_SHRINK: f64 = 1.4;
const FD_TABLE: usize = 10;
/// Denominator floor for the relative error, so coordinates with
/// near-zero gradient are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// `|analytic − numeric| / max(|numeric|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(REL_ERROR_FLOOR)
}

fn perturbed_loss(
    g: &AmhenGraph,
    params: &ModelParams,
    objective: &Objective<'_>,
    weight_decay: f64,
    edit: impl Fn(&mut ModelParams, f64),
) -> Result<f64> {
    let at = |offset: f64| -> Result<f64> {
        let mut shifted = params.clone();
        edit(&mut shifted, offset);
        total_loss(g, &shifted, objective, weight_decay)
    };
    let central = |h: f64| -> Result<f64> { Ok((at(h)? - at(-h)?) / (2.0 * h)) };
    let mut best = (f64::NAN, f64::INFINITY);
    for start in FD_STEPS {
        let (estimate, err) = ridders(start, &central)?;
        if err < best.1 || best.0.is_nan() {
            best = (estimate, err);
        }
    }
    Ok(best.0)
}

/// Ridders' method: central differences at shrinking steps, extrapolated
/// to zero step. Returns the estimate and its error bound.
fn ridders(start: f64, central: &impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let mut h = start;
    let mut prev = vec![central(h)?];
    let mut best = (prev[0], f64::INFINITY);
    for _ in 1..FD_TABLE {
        h /= FD_SHRINK;
        let mut row = vec![central(h)?];
        let mut fac = FD_SHRINK * FD_SHRINK;
        for j in 1..=prev.len() {
            let next = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= FD_SHRINK * FD_SHRINK;
            let err = (next - row[j - 1]).abs().max((next - prev[j - 1]).abs());
            if err <= best.1 {
                best = (next, err);
            }
            row.push(next);
        }
        let k = prev.len();
        if (row[k] - prev[k - 1]).abs() >= 2.0 * best.1 {
            break;
        }
        prev = row;
    }
    Ok(best)
}

/// Compares `analytic` against central differences of the total loss over
/// every parameter coordinate.
pub fn compare_gradients(
    g: &AmhenGraph,
    params: &ModelParams,
    objective: &Objective<'_>,
    weight_decay: f64,
    analytic: &Gradients,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut blocks = Vec::new();

    let mut worst = 0.0f64;
    for r in 0..params.beta.len() {
        let fd = perturbed_loss(g, params, objective, weight_decay, |p, h| p.beta[r] += h)?;
        worst = worst.max(relative_error(analytic.d_beta[r], fd));
    }
    blocks.push(("beta".to_string(), worst));

    for (i, w) in params.weights.iter().enumerate() {
        let mut worst = 0.0f64;
        for idx in ndarray::indices(w.dim()) {
            let fd = perturbed_loss(g, params, objective, weight_decay, |p, h| p.weights[i][idx] += h)?;
            worst = worst.max(relative_error(analytic.d_weights[i][idx], fd));
        }
        blocks.push((format!("W{}", i + 1), worst));
    }

    if let (Some(c), Some(dc)) = (&params.classifier, &analytic.d_classifier) {
        let mut worst = 0.0f64;
        for idx in ndarray::indices(c.dim()) {
            let fd = perturbed_loss(g, params, objective, weight_decay, |p, h| {
                if let Some(c) = p.classifier.as_mut() {
                    c[idx] += h;
                }
            })?;
            worst = worst.max(relative_error(dc[idx], fd));
        }
        blocks.push(("C".to_string(), worst));
    }

    let (worst_block, max_rel_error) = blocks
        .iter()
        .fold((String::new(), 0.0f64), |acc, (name, e)| {
            if *e > acc.1 || acc.0.is_empty() {
                (name.clone(), *e)
            } else {
                acc
            }
        });
    Ok(GradCheckReport {
        blocks,
        max_rel_error,
        worst_block,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}

/// Analytic gradients (dropout off) checked against central finite
/// differences.
pub fn grad_check(
    g: &AmhenGraph,
    params: &ModelParams,
    objective: &Objective<'_>,
    weight_decay: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, grads, _) = loss_and_gradients(g, params, objective, weight_decay, Mode::Eval, &mut rng)?;
    compare_gradients(g, params, objective, weight_decay, &grads, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeRecord;
    use ndarray::array;

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize, relations: usize, p: f64) -> AmhenGraph {
        let mut edges = Vec::new();
        for r in 0..relations {
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < p {
                        edges.push(EdgeRecord::new(u, v, r));
                    }
                }
            }
        }
        let x = DenseMatrix::from_shape_simple_fn((n, m), || rng.random_range(-1.0..1.0));
        let labels = (0..n).map(|i| Some(i % 3)).collect();
        AmhenGraph::from_edges(vec![0; n], 1, &edges, relations, x, labels).unwrap()
    }

    fn random_pairs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<(usize, usize)> {
        (0..k).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect()
    }

    #[test]
    fn unsupervised_loss_at_zero_is_two_ln_two() {
        let h = DenseMatrix::zeros((3, 2));
        let l = unsupervised_loss(&h, &[(0, 1)], &[(1, 2)]);
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unsupervised_loss_decreases_to_zero_with_separation() {
        let mut prev = f64::INFINITY;
        for k in 1..7 {
            let s = k as f64;
            let h = array![[s, 0.0], [s, 0.0], [0.0, 0.0], [-s, 0.0]];
            // positive score s², negative score −s²
            let l = unsupervised_loss(&h, &[(0, 1)], &[(0, 3)]);
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-15);
        assert!(unsupervised_loss(&array![[1e200], [1e200]], &[(0, 1)], &[]).is_finite());
    }

    #[test]
    fn unsupervised_loss_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = DenseMatrix::from_shape_simple_fn((15, 4), || rng.random_range(-1.5..1.5));
        let pos = random_pairs(&mut rng, 15, 20);
        let neg = random_pairs(&mut rng, 15, 20);
        let mut direct = 0.0;
        for &(u, v) in &pos {
            let s: f64 = (0..4).map(|k| h[[u, k]] * h[[v, k]]).sum();
            direct -= (1.0 / (1.0 + (-s).exp())).ln();
        }
        for &(u, v) in &neg {
            let s: f64 = (0..4).map(|k| h[[u, k]] * h[[v, k]]).sum();
            direct -= (1.0 / (1.0 + s.exp())).ln();
        }
        assert!((unsupervised_loss(&h, &pos, &neg) - direct).abs() < 1e-10);
        assert!((unsupervised_loss_grad(&h, &pos, &neg).0 - direct).abs() < 1e-10);
    }

    #[test]
    fn semisupervised_loss_cases() {
        let onehot = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(semisupervised_loss(&onehot, &[Some(0), Some(1)], &[0, 1]).unwrap(), 0.0);
        let uniform = DenseMatrix::from_elem((10, 4), 0.25);
        let labels: Vec<_> = (0..10).map(|i| Some(i % 4)).collect();
        let ids: Vec<_> = (0..10).collect();
        let l = semisupervised_loss(&uniform, &labels, &ids).unwrap();
        assert!((l - 10.0 * 4f64.ln()).abs() < 1e-12);
        // zero probability is clamped
        let l = semisupervised_loss(&onehot, &[Some(1), Some(1)], &[0]).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-12);
        assert!(semisupervised_loss(&onehot, &[None, Some(1)], &[0]).is_err());
    }

    #[test]
    fn semisupervised_loss_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = DenseMatrix::from_shape_simple_fn((12, 3), || rng.random_range(-1.0..1.0));
        let c = DenseMatrix::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
        let labels: Vec<_> = (0..12).map(|_| Some(rng.random_range(0..4))).collect();
        let ids = [0, 2, 3, 7, 11];
        let mut direct = 0.0;
        for &i in &ids {
            let logits: Vec<f64> = (0..4).map(|k| (0..3).map(|j| h[[i, j]] * c[[k, j]]).sum()).collect();
            let z: f64 = logits.iter().map(|v| v.exp()).sum();
            direct -= (logits[labels[i].unwrap()].exp() / z).ln();
        }
        let probs = crate::model::softmax_rows(&h.dot(&c.t()));
        assert!((semisupervised_loss(&probs, &labels, &ids).unwrap() - direct).abs() < 1e-10);
        let (l, _, _) = semisupervised_loss_grad(&h, &c, &labels, &ids).unwrap();
        assert!((l - direct).abs() < 1e-10);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_graph(&mut rng, 10, 3, 2, 0.3);
        let p = ModelParams::init(2, 3, 4, 2, None, Fusion::Mean, &mut rng).unwrap();
        let t = forward(&g, &p, Mode::Eval, &mut rng).unwrap();
        let grads = backward(&t, &DenseMatrix::zeros((10, 4)), &g, &p, 0.0).unwrap();
        assert_eq!(grads, Gradients::zeros_like(&p));
    }

    #[test]
    fn single_layer_weight_gradient_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_graph(&mut rng, 9, 3, 1, 0.4);
        let p = ModelParams::init(1, 3, 2, 1, None, Fusion::Mean, &mut rng).unwrap();
        let t = forward(&g, &p, Mode::Eval, &mut rng).unwrap();
        let d_h = DenseMatrix::from_shape_simple_fn((9, 2), || rng.random_range(-1.0..1.0));
        let grads = backward(&t, &d_h, &g, &p, 0.0).unwrap();
        let ax = g.adjacency(0).to_dense().dot(g.features());
        let expected = ax.t().dot(&d_h);
        for (a, b) in grads.d_weights[0].iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_check_passes_for_one_layer_link_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(&mut rng, 12, 4, 1, 0.3);
        let p = ModelParams::init(1, 4, 3, 1, None, Fusion::Mean, &mut rng).unwrap();
        let pos = g.edges_of_type(0);
        let neg = random_pairs(&mut rng, 12, pos.len());
        let obj = Objective::Link { pos: &pos, neg: &neg };
        let report = grad_check(&g, &p, &obj, 0.0005, 1e-5).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn grad_check_passes_on_full_model_both_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_graph(&mut rng, 12, 5, 2, 0.25);
        let mut p = ModelParams::init(2, 5, 4, 2, Some(3), Fusion::Mean, &mut rng).unwrap();
        p.beta = vec![0.8, 1.3];
        let pos: Vec<_> = g.edges_of_type(0).into_iter().chain(g.edges_of_type(1)).collect();
        let neg = random_pairs(&mut rng, 12, pos.len());
        let link = Objective::Link { pos: &pos, neg: &neg };
        let ids: Vec<_> = (0..8).collect();
        let node = Objective::Node { labels: g.labels(), train_ids: &ids };
        for obj in [link, node] {
            let report = grad_check(&g, &p, &obj, 0.0005, 1e-5).unwrap();
            assert!(report.passed, "{report:?}");
            assert_eq!(report.blocks.len(), 4);
        }
    }

    #[test]
    fn grad_check_passes_with_row_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_graph(&mut rng, 12, 5, 2, 0.3);
        let mut p = ModelParams::init(2, 5, 4, 3, Some(3), Fusion::Mean, &mut rng).unwrap();
        p.beta = vec![1.4, -0.6];
        p.normalization = Normalization::Row;
        let pos: Vec<_> = g.edges_of_type(0).into_iter().chain(g.edges_of_type(1)).collect();
        let neg = random_pairs(&mut rng, 12, pos.len());
        let ids: Vec<_> = (0..10).collect();
        for obj in [
            Objective::Link { pos: &pos, neg: &neg },
            Objective::Node { labels: g.labels(), train_ids: &ids },
        ] {
            let report = grad_check(&g, &p, &obj, 0.0005, 1e-5).unwrap();
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn corrupted_beta_gradient_fails_on_beta_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(&mut rng, 12, 3, 2, 0.3);
        let p = ModelParams::init(2, 3, 3, 2, None, Fusion::Mean, &mut rng).unwrap();
        let pos = g.edges_of_type(0);
        let neg = random_pairs(&mut rng, 12, pos.len());
        let obj = Objective::Link { pos: &pos, neg: &neg };
        let (_, mut grads, _) = loss_and_gradients(&g, &p, &obj, 0.0, Mode::Eval, &mut rng).unwrap();
        grads.d_beta.iter_mut().for_each(|d| *d *= 2.0);
        let report = compare_gradients(&g, &p, &obj, 0.0, &grads, 1e-5).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_block, "beta");
        assert!((report.max_rel_error - 1.0).abs() < 1e-3, "{report:?}");
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_graph(&mut rng, 8, 3, 1, 0.3);
        let p1 = ModelParams::init(1, 3, 4, 1, None, Fusion::Mean, &mut rng).unwrap();
        let p2 = ModelParams::init(1, 3, 4, 2, None, Fusion::Mean, &mut rng).unwrap();
        let t = forward(&g, &p1, Mode::Eval, &mut rng).unwrap();
        assert!(backward(&t, &DenseMatrix::zeros((8, 4)), &g, &p2, 0.0).is_err());
    }

    fn scalar_params(values: &[f64]) -> ModelParams {
        ModelParams {
            beta: values.to_vec(),
            weights: vec![array![[0.0]]],
            classifier: None,
            fusion: Fusion::Mean,
            normalization: Normalization::None,
        }
    }

    #[test]
    fn zero_gradient_step_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = ModelParams::init(2, 3, 4, 2, Some(2), Fusion::Mean, &mut rng).unwrap();
        let before = p.clone();
        Adam::new(0.05).step(&mut p, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut p = scalar_params(&[1.0]);
        let mut grads = Gradients::zeros_like(&p);
        grads.d_beta[0] = 2.0 * p.beta[0];
        Adam::new(0.05).step(&mut p, &grads).unwrap();
        assert!(p.beta[0].abs() < 1.0);
    }

    #[test]
    fn adam_reaches_quadratic_optimum() {
        // f(a, b) = (a − 1)² + 2 (b + 0.5)², optimum at (1, −0.5)
        let grad = |p: &ModelParams| vec![2.0 * (p.beta[0] - 1.0), 4.0 * (p.beta[1] + 0.5)];
        let mut p = scalar_params(&[3.0, 2.0]);
        let mut adam = Adam::new(0.05);
        let norm = |p: &ModelParams| {
            let g = grad(p);
            (g[0] * g[0] + g[1] * g[1]).sqrt()
        };
        for step in 1..=400 {
            let mut g = Gradients::zeros_like(&p);
            g.d_beta = grad(&p);
            adam.step(&mut p, &g).unwrap();
            if step == 200 {
                assert!(norm(&p) < 1e-3, "gradient norm {} after 200 steps", norm(&p));
            }
        }
        // constant-step Adam needs ~400 steps for 1e-6 from this start
        assert!(norm(&p) < 1e-6, "gradient norm {} at {:?}", norm(&p), p.beta);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = scalar_params(&[1.0]);
        let mut g = Gradients::zeros_like(&p);
        g.d_weights[0][[0, 0]] = f64::NAN;
        match Adam::new(0.1).step(&mut p, &g) {
            Err(Error::NonFinite { block }) => assert_eq!(block, "W1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weight_decay_alone_shrinks_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_graph(&mut rng, 8, 3, 1, 0.3);
        let mut p = ModelParams::init(1, 3, 4, 2, None, Fusion::Mean, &mut rng).unwrap();
        let t = forward(&g, &p, Mode::Eval, &mut rng).unwrap();
        let grads = backward(&t, &DenseMatrix::zeros((8, 4)), &g, &p, 0.0005).unwrap();
        assert!(grads.d_beta.iter().all(|&d| d == 0.0));
        let norms = |p: &ModelParams| p.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).collect::<Vec<_>>();
        let before = norms(&p);
        Adam::new(0.05).step(&mut p, &grads).unwrap();
        for (a, b) in norms(&p).iter().zip(&before) {
            assert!(a < b);
        }
    }
}
