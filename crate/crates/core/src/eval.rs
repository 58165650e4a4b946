//! Link-prediction and node-classification metrics, plus the multinomial
//! logistic regression used to score embeddings on node labels.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{DenseMatrix, EdgeTypeId};
use crate::ingest::{LinkSplit, Partition};
use crate::model::{argmax_rows, score_pair, sigmoid, softmax_rows};

/// Scores and binary labels for one edge type.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPairSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub edge_type: EdgeTypeId,
}

impl ScoredPairSet {
    fn check(&self) -> Result<(usize, usize)> {
        check_binary(&self.scores, &self.labels)
    }
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            context: "scores vs labels",
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(
            "need at least one positive and one negative".into(),
        ));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a random positive outscores a random negative, ties counting half.
pub fn roc_auc(scored: &ScoredPairSet) -> Result<f64> {
    let (pos, neg) = scored.check()?;
    let order = descending(&scored.scores);
    // walk tie groups from the top: each positive beats every negative
    // strictly below it and ties half of those in its group
    let mut negatives_below = neg as f64;
    let mut u = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scored.scores[order[i]];
        let mut j = i;
        let (mut p, mut q) = (0.0, 0.0);
        while j < order.len() && scored.scores[order[j]] == s {
            if scored.labels[order[j]] {
                p += 1.0;
            } else {
                q += 1.0;
            }
            j += 1;
        }
        negatives_below -= q;
        u += p * (negatives_below + 0.5 * q);
        i = j;
    }
    Ok(u / (pos as f64 * neg as f64))
}

/// Average precision: `Σ_k (R_k − R_{k−1}) · P_k` over distinct score
/// thresholds from the top.
pub fn pr_auc(scored: &ScoredPairSet) -> Result<f64> {
    let (pos, _) = scored.check()?;
    let order = descending(&scored.scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scored.scores[order[i]];
        let before = tp;
        while i < order.len() && scored.scores[order[i]] == s {
            tp += usize::from(scored.labels[order[i]]);
            seen += 1;
            i += 1;
        }
        if tp > before {
            ap += (tp - before) as f64 / pos as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// F1 of the rule `sigmoid(score) >= 0.5`; zero when nothing is predicted
/// positive.
pub fn f1_binary(scored: &ScoredPairSet) -> Result<f64> {
    scored.check()?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scored.scores.iter().zip(&scored.labels) {
        match (sigmoid(s) >= 0.5, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Macro-F1 over the classes that occur in either predictions or truth, and
/// micro-F1 on the pooled confusion counts.
pub fn macro_micro_f1(predicted: &[usize], truth: &[usize]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension {
            context: "predicted vs true classes",
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    let k = predicted.iter().chain(truth).max().map_or(0, |&c| c + 1);
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..k {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom == 0 {
            continue;
        }
        present += 1;
        sum += 2.0 * tp[c] as f64 / denom as f64;
    }
    let (tp_all, fp_all, fn_all): (usize, usize, usize) =
        (tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    let micro = 2.0 * tp_all as f64 / (2 * tp_all + fp_all + fn_all) as f64;
    Ok((sum / present as f64, micro))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkMetrics {
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub f1: f64,
}

impl LinkMetrics {
    pub fn of(scored: &ScoredPairSet) -> Result<Self> {
        Ok(Self {
            roc_auc: roc_auc(scored)?,
            pr_auc: pr_auc(scored)?,
            f1: f1_binary(scored)?,
        })
    }

    /// All metrics NaN: the partition lacks positives or negatives.
    pub const UNDEFINED: LinkMetrics = LinkMetrics {
        roc_auc: f64::NAN,
        pr_auc: f64::NAN,
        f1: f64::NAN,
    };

    /// Mean over the entries whose ROC-AUC is defined; NaN if none is.
    pub fn mean(all: &[LinkMetrics]) -> Self {
        let defined: Vec<&LinkMetrics> = all.iter().filter(|m| !m.roc_auc.is_nan()).collect();
        let k = defined.len() as f64;
        Self {
            roc_auc: defined.iter().map(|m| m.roc_auc).sum::<f64>() / k,
            pr_auc: defined.iter().map(|m| m.pr_auc).sum::<f64>() / k,
            f1: defined.iter().map(|m| m.f1).sum::<f64>() / k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkReport {
    pub per_type: Vec<LinkMetrics>,
    /// Unweighted mean over the edge types with defined metrics.
    pub mean: LinkMetrics,
}

/// Scores every pair of one partition with the embedding inner product.
pub fn score_partition(h: &DenseMatrix, split: &LinkSplit, partition: Partition) -> Vec<ScoredPairSet> {
    split
        .per_type
        .iter()
        .enumerate()
        .map(|(r, t)| {
            let set = t.partition(partition);
            let scores = set
                .pos
                .iter()
                .chain(&set.neg)
                .map(|&(u, v)| score_pair(h, u, v))
                .collect();
            let labels = std::iter::repeat_n(true, set.pos.len())
                .chain(std::iter::repeat_n(false, set.neg.len()))
                .collect();
            ScoredPairSet {
                scores,
                labels,
                edge_type: r,
            }
        })
        .collect()
}

pub fn evaluate_links(h: &DenseMatrix, split: &LinkSplit, partition: Partition) -> Result<LinkReport> {
    let per_type = score_partition(h, split, partition)
        .iter()
        .map(|set| {
            let pos = set.labels.iter().filter(|&&l| l).count();
            if pos == 0 || pos == set.labels.len() {
                Ok(LinkMetrics::UNDEFINED)
            } else {
                LinkMetrics::of(set)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = LinkMetrics::mean(&per_type);
    Ok(LinkReport { per_type, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeMetrics {
    pub macro_f1: f64,
    pub micro_f1: f64,
}

impl NodeMetrics {
    pub fn of(predicted: &[usize], truth: &[usize]) -> Result<Self> {
        let (macro_f1, micro_f1) = macro_micro_f1(predicted, truth)?;
        Ok(Self { macro_f1, micro_f1 })
    }
}

/// Multinomial logistic regression `softmax(W h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    /// `num_classes × d`.
    pub weights: DenseMatrix,
    pub bias: Array1<f64>,
}

impl ClassifierModel {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros((num_classes, dim)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn logits(&self, h: ArrayView2<'_, f64>) -> DenseMatrix {
        h.dot(&self.weights.t()) + &self.bias
    }

    pub fn predict_proba(&self, h: ArrayView2<'_, f64>) -> DenseMatrix {
        softmax_rows(&self.logits(h))
    }

    pub fn predict(&self, h: ArrayView2<'_, f64>) -> Vec<usize> {
        argmax_rows(&self.logits(h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the full gradient norm falls below this.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iter: 2000,
            tol: 1e-6,
        }
    }
}

/// Mean cross-entropy plus `l2/2 · ‖W‖²` and its gradient.
fn logistic_objective(
    model: &ClassifierModel,
    h: ArrayView2<'_, f64>,
    onehot: &DenseMatrix,
    l2: f64,
) -> (f64, ClassifierModel) {
    let n = h.nrows() as f64;
    let probs = model.predict_proba(h);
    let mut loss = 0.0;
    for (p_row, y_row) in probs.axis_iter(Axis(0)).zip(onehot.axis_iter(Axis(0))) {
        for (&p, &y) in p_row.iter().zip(y_row) {
            if y > 0.0 {
                loss -= p.max(1e-300).ln();
            }
        }
    }
    loss = loss / n + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    let diff = (probs - onehot) / n;
    let grad = ClassifierModel {
        weights: diff.t().dot(&h) + &model.weights * l2,
        bias: diff.sum_axis(Axis(0)),
    };
    (loss, grad)
}

fn norm_sq(m: &ClassifierModel) -> f64 {
    m.weights.iter().chain(m.bias.iter()).map(|v| v * v).sum()
}

fn dot(a: &ClassifierModel, b: &ClassifierModel) -> f64 {
    a.weights.iter().zip(b.weights.iter()).map(|(x, y)| x * y).sum::<f64>()
        + a.bias.iter().zip(b.bias.iter()).map(|(x, y)| x * y).sum::<f64>()
}

fn axpy(x: &ClassifierModel, alpha: f64, d: &ClassifierModel) -> ClassifierModel {
    ClassifierModel {
        weights: &x.weights + &(&d.weights * alpha),
        bias: &x.bias + &(&d.bias * alpha),
    }
}

/// Fits from the all-zero model. See [`fit_logistic_from`].
pub fn fit_logistic(
    h: ArrayView2<'_, f64>,
    y: &[usize],
    num_classes: usize,
    config: &LogisticConfig,
) -> Result<ClassifierModel> {
    fit_logistic_from(h, y, ClassifierModel::zeros(num_classes, h.ncols()), config)
}

/// Gradient descent with Barzilai-Borwein step lengths and an Armijo
/// backtracking safeguard, until the gradient norm drops below `tol` or
/// `max_iter` iterations have run.
pub fn fit_logistic_from(
    h: ArrayView2<'_, f64>,
    y: &[usize],
    init: ClassifierModel,
    config: &LogisticConfig,
) -> Result<ClassifierModel> {
    if h.nrows() != y.len() {
        return Err(Error::Dimension {
            context: "logistic regression samples",
            expected: h.nrows(),
            found: y.len(),
        });
    }
    let k = init.num_classes();
    if init.weights.ncols() != h.ncols() {
        return Err(Error::Dimension {
            context: "logistic regression features",
            expected: h.ncols(),
            found: init.weights.ncols(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= k) {
        return Err(Error::Invalid(format!("class {bad} >= {k} classes")));
    }
    let distinct = y.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::Invalid(
            "logistic regression needs at least two classes in the training set".into(),
        ));
    }
    let mut onehot = Array2::zeros((y.len(), k));
    for (i, &c) in y.iter().enumerate() {
        onehot[[i, c]] = 1.0;
    }

    let mut model = init;
    let (mut loss, mut grad) = logistic_objective(&model, h, &onehot, config.l2);
    let mut step = 1.0;
    for _ in 0..config.max_iter {
        let gnorm_sq = norm_sq(&grad);
        if gnorm_sq.sqrt() < config.tol {
            break;
        }
        let mut t = step;
        let (next, next_loss, next_grad) = loop {
            let cand = axpy(&model, -t, &grad);
            let (l, g) = logistic_objective(&cand, h, &onehot, config.l2);
            if l <= loss - 1e-4 * t * gnorm_sq || t < 1e-12 {
                break (cand, l, g);
            }
            t *= 0.5;
        };
        let s = axpy(&next, -1.0, &model);
        let yv = axpy(&next_grad, -1.0, &grad);
        let sy = dot(&s, &yv);
        step = if sy > 0.0 { (norm_sq(&s) / sy).clamp(1e-8, 1e8) } else { 1.0 };
        model = next;
        loss = next_loss;
        grad = next_grad;
    }
    if model.weights.iter().chain(model.bias.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("logistic regression diverged".into()));
    }
    Ok(model)
}

/// Value of the logistic training objective, exposed for convergence checks.
pub fn logistic_loss(model: &ClassifierModel, h: ArrayView2<'_, f64>, y: &[usize], l2: f64) -> f64 {
    let mut onehot = Array2::zeros((y.len(), model.num_classes()));
    for (i, &c) in y.iter().enumerate() {
        onehot[[i, c]] = 1.0;
    }
    logistic_objective(model, h, &onehot, l2).0
}

/// One row of the metrics TSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub task: String,
    /// Edge type, class, or an aggregate such as `mean`.
    pub target: String,
    pub metric: String,
    pub value: f64,
    pub seed: Option<u64>,
}

impl MetricRow {
    pub fn new(task: &str, target: impl ToString, metric: &str, value: f64, seed: Option<u64>) -> Self {
        Self {
            task: task.to_string(),
            target: target.to_string(),
            metric: metric.to_string(),
            value,
            seed,
        }
    }
}

pub fn link_rows(report: &LinkReport, seed: u64) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    let mut push = |target: String, m: &LinkMetrics| {
        rows.push(MetricRow::new("link", &target, "roc_auc", m.roc_auc, Some(seed)));
        rows.push(MetricRow::new("link", &target, "pr_auc", m.pr_auc, Some(seed)));
        rows.push(MetricRow::new("link", &target, "f1", m.f1, Some(seed)));
    };
    for (r, m) in report.per_type.iter().enumerate() {
        push(format!("edge_type_{r}"), m);
    }
    push("mean".into(), &report.mean);
    rows
}

pub fn node_rows(task: &str, m: &NodeMetrics, seed: u64) -> Vec<MetricRow> {
    vec![
        MetricRow::new(task, "all", "macro_f1", m.macro_f1, Some(seed)),
        MetricRow::new(task, "all", "micro_f1", m.micro_f1, Some(seed)),
    ]
}

/// Sample mean and (n − 1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Adds a `mean±std` summary for every `(task, target, metric)` triple that
/// appears under more than one seed.
pub fn summary_rows(rows: &[MetricRow]) -> Vec<(MetricRow, f64)> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in rows {
        let k = (r.task.clone(), r.target.clone(), r.metric.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(task, target, metric)| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.task == task && r.target == target && r.metric == metric && r.seed.is_some())
                .map(|r| r.value)
                .collect();
            let (mean, std) = mean_std(&vals);
            (
                MetricRow {
                    task,
                    target,
                    metric,
                    value: mean,
                    seed: None,
                },
                std,
            )
        })
        .collect()
}

/// Renders the report: `task edge_type/class metric value seed`, then one
/// `summary` row per metric carrying `mean±std`.
pub fn render_report(rows: &[MetricRow]) -> String {
    let mut out = String::from("task\ttarget\tmetric\tvalue\tseed\n");
    for r in rows {
        let seed = r.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{seed}", r.task, r.target, r.metric, r.value);
    }
    for (r, std) in summary_rows(rows) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.6}±{:.6}\tsummary",
            r.task, r.target, r.metric, r.value, std
        );
    }
    out
}
