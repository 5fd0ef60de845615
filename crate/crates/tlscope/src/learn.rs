//! L1-regularized logistic regression (binary and multinomial), trained
//! by proximal gradient descent with backtracking, plus stratified
//! k-fold cross-validation and the evaluation metrics used by the
//! reports: total accuracy, accuracy at a fixed false-discovery ratio,
//! and confusion matrices.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{
    assemble_features, fit_scaler, meta_features, FeatureDictionary, MarkovConfig, ScalerStats,
    ViewSet,
};
use crate::flow::FlowRecord;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("non-finite feature value at row {0}, column {1}")]
    NonFiniteFeature(usize, usize),
    #[error("dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("too few samples: {0} for {1} folds")]
    TooFewSamples(usize, usize),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("flow without a label cannot be used for training")]
    MissingLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Binary,
    Multinomial,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lambda: f64,
    pub objective: Objective,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-3,
            objective: Objective::Binary,
            tol: 1e-7,
            max_iter: 10_000,
            seed: 0,
        }
    }
}

/// Default regularization grid: 11 log-spaced points in [1e-4, 10].
pub fn default_lambda_grid() -> Vec<f64> {
    (0..11).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

/// Raw fit output at the matrix level.
pub struct FitResult {
    /// C x D; C = 1 for the binary head.
    pub weights: Array2<f64>,
    pub intercepts: Vec<f64>,
    /// Full objective (smooth + penalty) after each iteration.
    pub objective_history: Vec<f64>,
}

impl FitResult {
    pub fn nonzero_weights(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }
}

/// Smooth part of the objective — mean negative log-likelihood — and
/// its gradient wrt weights and intercepts.
pub fn smooth_loss_and_grad(
    x: &Array2<f64>,
    y: &[usize],
    weights: &Array2<f64>,
    intercepts: &[f64],
    objective: Objective,
) -> (f64, Array2<f64>, Vec<f64>) {
    let n = x.nrows();
    let probs = scores_to_probs(&raw_scores(x, weights, intercepts), objective);
    match objective {
        Objective::Binary => {
            let mut loss = 0.0;
            let mut residual = Array1::<f64>::zeros(n);
            for i in 0..n {
                let p = probs[[i, 0]].clamp(1e-12, 1.0 - 1e-12);
                let yi = y[i] as f64;
                loss -= yi * p.ln() + (1.0 - yi) * (1.0 - p).ln();
                residual[i] = probs[[i, 0]] - yi;
            }
            loss /= n as f64;
            let grad_w = residual
                .view()
                .insert_axis(Axis(0))
                .dot(x)
                .mapv(|v| v / n as f64);
            let grad_b = vec![residual.sum() / n as f64];
            (loss, grad_w, grad_b)
        }
        Objective::Multinomial => {
            let c = weights.nrows();
            let mut loss = 0.0;
            let mut residual = probs.clone();
            for i in 0..n {
                loss -= probs[[i, y[i]]].clamp(1e-12, 1.0).ln();
                residual[[i, y[i]]] -= 1.0;
            }
            loss /= n as f64;
            let grad_w = residual.t().dot(x).mapv(|v| v / n as f64);
            let grad_b = (0..c)
                .map(|k| residual.column(k).sum() / n as f64)
                .collect();
            (loss, grad_w, grad_b)
        }
    }
}

fn raw_scores(x: &Array2<f64>, weights: &Array2<f64>, intercepts: &[f64]) -> Array2<f64> {
    let mut z = x.dot(&weights.t());
    for (mut row, _) in z.axis_iter_mut(Axis(0)).zip(0..) {
        for (v, b) in row.iter_mut().zip(intercepts) {
            *v += b;
        }
    }
    z
}

fn scores_to_probs(z: &Array2<f64>, objective: Objective) -> Array2<f64> {
    match objective {
        Objective::Binary => z.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        Objective::Multinomial => {
            let mut p = z.clone();
            for mut row in p.axis_iter_mut(Axis(0)) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            p
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Minimize (1/N) NLL + lambda * sum|w| (intercepts unpenalized) by
/// proximal gradient with backtracking line search. The full objective
/// is non-increasing across iterations.
pub fn fit_linear(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<FitResult, LearnError> {
    let n = x.nrows();
    let d = x.ncols();
    if n < 2 {
        return Err(LearnError::TooFewSamples(n, 2));
    }
    {
        let distinct: std::collections::BTreeSet<usize> = y.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(LearnError::SingleClassData);
        }
    }
    for ((i, j), &v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(LearnError::NonFiniteFeature(i, j));
        }
    }

    let heads = match cfg.objective {
        Objective::Binary => 1,
        Objective::Multinomial => n_classes,
    };

    // Equilibrate columns to unit max-abs scale and solve the exactly
    // equivalent problem (w~_j = w_j * s_j, per-coordinate penalty
    // lambda / s_j); objective values are unchanged and conditioning no
    // longer depends on raw feature magnitudes.
    let col_scale: Vec<f64> = (0..d)
        .map(|j| {
            let m = x.column(j).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if m > 0.0 { m } else { 1.0 }
        })
        .collect();
    let x = Array2::from_shape_fn((n, d), |(i, j)| x[[i, j]] / col_scale[j]);
    let x = &x;

    let mut weights = Array2::<f64>::zeros((heads, d));
    let mut intercepts = vec![0.0; heads];
    let penalty = |w: &Array2<f64>| {
        cfg.lambda
            * w.rows()
                .into_iter()
                .map(|row| row.iter().zip(&col_scale).map(|(v, s)| v.abs() / s).sum::<f64>())
                .sum::<f64>()
    };

    let (mut smooth, mut grad_w, mut grad_b) =
        smooth_loss_and_grad(x, y, &weights, &intercepts, cfg.objective);
    let mut objective = smooth + penalty(&weights);
    let mut history = Vec::new();
    let mut step = 1.0f64;

    for _ in 0..cfg.max_iter {
        // Backtrack until the quadratic majorizer holds at the prox point.
        let (next_w, next_b, next_smooth) = loop {
            let cand_w = Array2::from_shape_fn((heads, d), |(k, j)| {
                soft_threshold(
                    weights[[k, j]] - step * grad_w[[k, j]],
                    step * cfg.lambda / col_scale[j],
                )
            });
            let cand_b: Vec<f64> = intercepts
                .iter()
                .zip(&grad_b)
                .map(|(b, g)| b - step * g)
                .collect();
            let (cand_smooth, _, _) = smooth_loss_and_grad(x, y, &cand_w, &cand_b, cfg.objective);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for (k, j) in (0..heads).flat_map(|k| (0..d).map(move |j| (k, j))) {
                let delta = cand_w[[k, j]] - weights[[k, j]];
                lin += grad_w[[k, j]] * delta;
                quad += delta * delta;
            }
            for k in 0..heads {
                let delta = cand_b[k] - intercepts[k];
                lin += grad_b[k] * delta;
                quad += delta * delta;
            }
            if cand_smooth <= smooth + lin + quad / (2.0 * step) + 1e-15 || step < 1e-12 {
                break (cand_w, cand_b, cand_smooth);
            }
            step *= 0.5;
        };

        weights = next_w;
        intercepts = next_b;
        smooth = next_smooth;
        let next_objective = smooth + penalty(&weights);
        history.push(next_objective);
        let improvement = objective - next_objective;
        objective = next_objective;
        if improvement.abs() < cfg.tol * objective.abs().max(1.0) {
            break;
        }
        let (_, gw, gb) = smooth_loss_and_grad(x, y, &weights, &intercepts, cfg.objective);
        grad_w = gw;
        grad_b = gb;
        step *= 1.3; // optimistic growth, backtracking corrects
    }

    // Map weights back to the original feature scale.
    for mut row in weights.rows_mut() {
        for (v, s) in row.iter_mut().zip(&col_scale) {
            *v /= s;
        }
    }

    Ok(FitResult {
        weights,
        intercepts,
        objective_history: history,
    })
}

/// Metadata recorded with a trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub corpus_id: String,
    pub seed: u64,
    pub fold_scheme: String,
}

/// A trained classifier together with everything needed to reproduce
/// its feature space: the feature dictionary, the metadata scaler, the
/// view set and the Markov binning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub class_labels: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub lambda: f64,
    pub objective: Objective,
    pub views: ViewSet,
    pub markov: MarkovConfig,
    pub dict: FeatureDictionary,
    pub scaler: ScalerStats,
    pub training_meta: TrainingMeta,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, |row| row.len())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, String> {
        serde_json::from_str(json).map_err(|e| e.to_string())
    }

    /// Per-class probabilities for one feature vector; sums to one.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        if x.len() != self.dim() {
            return Err(LearnError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match self.objective {
            Objective::Binary => {
                let z: f64 = self.weights[0]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + self.intercepts[0];
                let p = 1.0 / (1.0 + (-z).exp());
                Ok(vec![1.0 - p, p])
            }
            Objective::Multinomial => {
                let scores: Vec<f64> = self
                    .weights
                    .iter()
                    .zip(&self.intercepts)
                    .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                Ok(exps.into_iter().map(|e| e / sum).collect())
            }
        }
    }

    /// Argmax class; ties break to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize, LearnError> {
        Ok(argmax_tie_low(&self.predict_proba(x)?))
    }

    pub fn feature_vector(&self, flow: &FlowRecord) -> Vec<f64> {
        assemble_features(&self.views, flow, &self.dict, &self.scaler, &self.markov).values
    }
}

pub fn argmax_tie_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Sorted distinct labels of a flow set.
pub fn collect_labels(flows: &[FlowRecord]) -> Result<Vec<String>, LearnError> {
    let mut labels: Vec<String> = Vec::new();
    for f in flows {
        let l = f.label.as_ref().ok_or(LearnError::MissingLabel)?;
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    labels.sort();
    Ok(labels)
}

/// Train a model end to end from labeled flows: fit the dictionary and
/// scaler on these flows, assemble the matrix, then fit the weights.
pub fn train_on_flows(
    flows: &[FlowRecord],
    views: &ViewSet,
    markov: &MarkovConfig,
    cfg: &TrainConfig,
    corpus_id: &str,
) -> Result<LinearModel, LearnError> {
    let labels = collect_labels(flows)?;
    if labels.len() < 2 {
        return Err(LearnError::SingleClassData);
    }
    let dict = FeatureDictionary::fit_flows(flows.iter(), corpus_id);
    let meta_rows: Vec<[f64; 7]> = flows.iter().map(meta_features).collect();
    let scaler = fit_scaler(&meta_rows).map_err(|_| LearnError::TooFewSamples(0, 1))?;
    let (x, y) = assemble_matrix(flows, &labels, views, &dict, &scaler, markov)?;
    let fit = fit_linear(&x, &y, labels.len(), cfg)?;
    Ok(LinearModel {
        class_labels: labels,
        weights: fit
            .weights
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        intercepts: fit.intercepts,
        lambda: cfg.lambda,
        objective: cfg.objective,
        views: views.clone(),
        markov: *markov,
        dict,
        scaler,
        training_meta: TrainingMeta {
            corpus_id: corpus_id.to_string(),
            seed: cfg.seed,
            fold_scheme: "none".into(),
        },
    })
}

pub fn assemble_matrix(
    flows: &[FlowRecord],
    labels: &[String],
    views: &ViewSet,
    dict: &FeatureDictionary,
    scaler: &ScalerStats,
    markov: &MarkovConfig,
) -> Result<(Array2<f64>, Vec<usize>), LearnError> {
    let mut y = Vec::with_capacity(flows.len());
    let mut rows = Vec::with_capacity(flows.len());
    let mut dim = 0;
    for f in flows {
        let label = f.label.as_ref().ok_or(LearnError::MissingLabel)?;
        let idx = labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| LearnError::UnknownLabel(label.clone()))?;
        y.push(idx);
        let v = assemble_features(views, f, dict, scaler, markov).values;
        dim = v.len();
        rows.push(v);
    }
    let mut x = Array2::<f64>::zeros((rows.len(), dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    Ok((x, y))
}

/// Recall of the positive class under the constraint that false
/// positives stay within `ratio` times the true positives, scanning
/// score-descending prefixes. Returns 0 when no nonempty prefix
/// qualifies.
pub fn accuracy_at_fdr(scores: &[f64], labels: &[bool], ratio: f64) -> f64 {
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut best_tp = 0u64;
    for &i in &order {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        if fp as f64 <= ratio * tp as f64 {
            best_tp = best_tp.max(tp);
        }
    }
    best_tp as f64 / total_pos as f64
}

/// Row = true class, column = predicted class.
pub fn confusion_matrix(
    predictions: &[usize],
    truth: &[usize],
    n_classes: usize,
) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        m[t][p] += 1;
    }
    m
}

/// Row-normalized percentages of a confusion matrix.
pub fn confusion_percentages(confusion: &[Vec<u64>]) -> Vec<Vec<f64>> {
    confusion
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|&c| {
                    if total == 0 {
                        0.0
                    } else {
                        100.0 * c as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Cross-validation evaluation summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub total_accuracy: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    /// Keyed by the FDR ratio rendered as text, e.g. "1e-4".
    pub accuracy_at_fdr: BTreeMap<String, f64>,
    pub confusion: Vec<Vec<u64>>,
    pub fold_accuracies: Vec<f64>,
    pub chosen_lambda: f64,
    pub fold_scheme: String,
    pub lambda_grid: Vec<f64>,
    pub lambda_mean_accuracy: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum FoldPlan {
    /// Stratified content-hash assignment: identical flows share a
    /// fold, and the partition is invariant to input order.
    Stratified,
    /// Caller-provided fold index per flow.
    Explicit(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct CvConfig {
    pub k: usize,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    pub objective: Objective,
    pub views: ViewSet,
    pub markov: MarkovConfig,
    pub folds: FoldPlan,
    pub tol: f64,
    pub max_iter: usize,
    pub fdr_ratios: Vec<f64>,
}

impl CvConfig {
    pub fn new(k: usize, lambda_grid: Vec<f64>, seed: u64, objective: Objective, views: ViewSet) -> Self {
        CvConfig {
            k,
            lambda_grid,
            seed,
            objective,
            views,
            markov: MarkovConfig::default(),
            folds: FoldPlan::Stratified,
            tol: 1e-7,
            max_iter: 10_000,
            fdr_ratios: vec![1e-4],
        }
    }
}

fn content_digest(flow: &FlowRecord, seed: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(flow.canonical_json().as_bytes());
    hasher.finalize().into()
}

/// Stratified, content-based fold assignment: within each class,
/// distinct flow contents are ordered by hash and dealt round-robin, so
/// duplicates land together and input order is irrelevant.
pub fn stratified_folds(flows: &[FlowRecord], k: usize, seed: u64) -> Vec<usize> {
    let mut per_class: BTreeMap<&str, BTreeMap<[u8; 32], Vec<usize>>> = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        let label = f.label.as_deref().unwrap_or("");
        per_class
            .entry(label)
            .or_default()
            .entry(content_digest(f, seed))
            .or_default()
            .push(i);
    }
    let mut folds = vec![0usize; flows.len()];
    for groups in per_class.values() {
        for (pos, members) in groups.values().enumerate() {
            for &i in members {
                folds[i] = pos % k;
            }
        }
    }
    folds
}

/// Stratified k-fold cross-validation with per-fold dictionary and
/// scaler fitting (no leakage), selecting lambda by mean validation
/// accuracy with ties going to the larger lambda.
pub fn cross_validate(flows: &[FlowRecord], cfg: &CvConfig) -> Result<EvalReport, LearnError> {
    if cfg.k < 2 {
        return Err(LearnError::TooFewSamples(flows.len(), cfg.k));
    }
    if flows.len() < cfg.k {
        return Err(LearnError::TooFewSamples(flows.len(), cfg.k));
    }
    let labels = collect_labels(flows)?;
    if labels.len() < 2 {
        return Err(LearnError::SingleClassData);
    }
    let (folds, scheme) = match &cfg.folds {
        FoldPlan::Stratified => (
            stratified_folds(flows, cfg.k, cfg.seed),
            format!("stratified-hash(k={},seed={})", cfg.k, cfg.seed),
        ),
        FoldPlan::Explicit(assign) => {
            if assign.len() != flows.len() {
                return Err(LearnError::TooFewSamples(assign.len(), flows.len()));
            }
            (assign.clone(), format!("explicit(k={})", cfg.k))
        }
    };

    let mut lambda_mean_accuracy = Vec::with_capacity(cfg.lambda_grid.len());
    // Out-of-fold predictions per lambda, for the final report.
    let mut per_lambda: Vec<(Vec<usize>, Vec<Vec<f64>>, Vec<f64>)> = Vec::new();

    for &lambda in &cfg.lambda_grid {
        let mut oof_pred = vec![0usize; flows.len()];
        let mut oof_proba = vec![Vec::new(); flows.len()];
        let mut fold_accuracies = Vec::with_capacity(cfg.k);
        for fold in 0..cfg.k {
            let train_idx: Vec<usize> = (0..flows.len()).filter(|&i| folds[i] != fold).collect();
            let val_idx: Vec<usize> = (0..flows.len()).filter(|&i| folds[i] == fold).collect();
            if val_idx.is_empty() {
                fold_accuracies.push(f64::NAN);
                continue;
            }
            let train: Vec<FlowRecord> = train_idx.iter().map(|&i| flows[i].clone()).collect();
            let tcfg = TrainConfig {
                lambda,
                objective: cfg.objective,
                tol: cfg.tol,
                max_iter: cfg.max_iter,
                seed: cfg.seed,
            };
            // Dictionary and scaler come from the training fold only.
            let model = match train_on_flows(&train, &cfg.views, &cfg.markov, &tcfg, "cv-fold") {
                Ok(m) => m,
                Err(LearnError::SingleClassData) => {
                    fold_accuracies.push(f64::NAN);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut correct = 0usize;
            for &i in &val_idx {
                let x = model.feature_vector(&flows[i]);
                let proba = model.predict_proba(&x)?;
                let pred_local = argmax_tie_low(&proba);
                // Map from the fold model's label order to the global one.
                let pred_global = labels
                    .iter()
                    .position(|l| l == &model.class_labels[pred_local])
                    .unwrap();
                let truth = flows[i].label.as_deref().unwrap();
                if model.class_labels[pred_local] == truth {
                    correct += 1;
                }
                oof_pred[i] = pred_global;
                // Probabilities in global label order, zero for classes
                // the fold never saw.
                let mut global = vec![0.0; labels.len()];
                for (li, l) in model.class_labels.iter().enumerate() {
                    let gi = labels.iter().position(|g| g == l).unwrap();
                    global[gi] = proba[li];
                }
                oof_proba[i] = global;
            }
            fold_accuracies.push(correct as f64 / val_idx.len() as f64);
        }
        let valid: Vec<f64> = fold_accuracies.iter().copied().filter(|v| !v.is_nan()).collect();
        let mean = if valid.is_empty() {
            0.0
        } else {
            valid.iter().sum::<f64>() / valid.len() as f64
        };
        lambda_mean_accuracy.push(mean);
        per_lambda.push((oof_pred, oof_proba, fold_accuracies));
    }

    // Choose the best mean accuracy; ties break to the larger lambda.
    let mut best = 0usize;
    for i in 1..cfg.lambda_grid.len() {
        let better = lambda_mean_accuracy[i] > lambda_mean_accuracy[best]
            || (lambda_mean_accuracy[i] == lambda_mean_accuracy[best]
                && cfg.lambda_grid[i] > cfg.lambda_grid[best]);
        if better {
            best = i;
        }
    }
    let (oof_pred, oof_proba, fold_accuracies) = &per_lambda[best];

    let truth: Vec<usize> = flows
        .iter()
        .map(|f| {
            labels
                .iter()
                .position(|l| Some(l.as_str()) == f.label.as_deref())
                .unwrap()
        })
        .collect();
    let confusion = confusion_matrix(oof_pred, &truth, labels.len());
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..labels.len()).map(|i| confusion[i][i]).sum();
    let mut per_class_accuracy = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        let row_total: u64 = confusion[i].iter().sum();
        per_class_accuracy.insert(
            label.clone(),
            if row_total == 0 {
                0.0
            } else {
                confusion[i][i] as f64 / row_total as f64
            },
        );
    }
    let mut at_fdr = BTreeMap::new();
    if labels.len() == 2 {
        // Positive class is the second label in sorted order.
        let scores: Vec<f64> = oof_proba.iter().map(|p| p.get(1).copied().unwrap_or(0.0)).collect();
        let is_pos: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
        for &ratio in &cfg.fdr_ratios {
            at_fdr.insert(format!("{ratio:e}"), accuracy_at_fdr(&scores, &is_pos, ratio));
        }
    }

    Ok(EvalReport {
        labels,
        total_accuracy: trace as f64 / total.max(1) as f64,
        per_class_accuracy,
        accuracy_at_fdr: at_fdr,
        confusion,
        fold_accuracies: fold_accuracies.clone(),
        chosen_lambda: cfg.lambda_grid[best],
        fold_scheme: scheme,
        lambda_grid: cfg.lambda_grid.clone(),
        lambda_mean_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn huge_lambda_zeroes_all_weights() {
        let x = array![[1.0], [-1.0], [0.5], [-0.5]];
        let y = vec![1, 0, 1, 0];
        let cfg = TrainConfig {
            lambda: 1e3,
            ..TrainConfig::default()
        };
        let fit = fit_linear(&x, &y, 2, &cfg).unwrap();
        assert_eq!(fit.nonzero_weights(), 0);
    }

    #[test]
    fn symmetric_separable_boundary_at_zero() {
        let x = array![[-1.0], [1.0]];
        let y = vec![0, 1];
        let cfg = TrainConfig {
            lambda: 0.0,
            max_iter: 2000,
            ..TrainConfig::default()
        };
        let fit = fit_linear(&x, &y, 2, &cfg).unwrap();
        assert!(fit.weights[[0, 0]] > 0.0);
        assert!(fit.intercepts[0].abs() < 1e-6);
        // Training accuracy 1.0.
        let p_neg = 1.0 / (1.0 + (fit.weights[[0, 0]] * -1.0 + fit.intercepts[0]).exp().recip());
        assert!(p_neg.is_finite());
    }

    #[test]
    fn objective_non_increasing() {
        let x = array![
            [0.2, 1.0],
            [-0.4, 0.3],
            [1.2, -0.8],
            [-1.0, -0.2],
            [0.7, 0.9],
            [-0.3, -1.1]
        ];
        let y = vec![1, 0, 1, 0, 1, 0];
        for objective in [Objective::Binary, Objective::Multinomial] {
            let cfg = TrainConfig {
                lambda: 0.05,
                objective,
                max_iter: 300,
                ..TrainConfig::default()
            };
            let fit = fit_linear(&x, &y, 2, &cfg).unwrap();
            for w in fit.objective_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "objective increased: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for objective in [Objective::Binary, Objective::Multinomial] {
            let n = 12;
            let d = 4;
            let c = if objective == Objective::Binary { 2 } else { 3 };
            let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
            let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let heads = if objective == Objective::Binary { 1 } else { c };
            let w = Array2::from_shape_fn((heads, d), |_| rng.gen_range(-0.5..0.5));
            let b: Vec<f64> = (0..heads).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let (_, grad_w, grad_b) = smooth_loss_and_grad(&x, &y, &w, &b, objective);
            let eps = 1e-6;
            for k in 0..heads {
                for j in 0..d {
                    let mut wp = w.clone();
                    wp[[k, j]] += eps;
                    let mut wm = w.clone();
                    wm[[k, j]] -= eps;
                    let (lp, _, _) = smooth_loss_and_grad(&x, &y, &wp, &b, objective);
                    let (lm, _, _) = smooth_loss_and_grad(&x, &y, &wm, &b, objective);
                    let fd = (lp - lm) / (2.0 * eps);
                    assert!(
                        (fd - grad_w[[k, j]]).abs() <= 1e-5 * fd.abs().max(1.0),
                        "w grad mismatch {fd} vs {}",
                        grad_w[[k, j]]
                    );
                }
                let mut bp = b.clone();
                bp[k] += eps;
                let mut bm = b.clone();
                bm[k] -= eps;
                let (lp, _, _) = smooth_loss_and_grad(&x, &y, &w, &bp, objective);
                let (lm, _, _) = smooth_loss_and_grad(&x, &y, &w, &bm, objective);
                let fd = (lp - lm) / (2.0 * eps);
                assert!((fd - grad_b[k]).abs() <= 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(
            fit_linear(&x, &[0, 0], 2, &TrainConfig::default()),
            Err(LearnError::SingleClassData)
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let x = array![[1.0], [f64::NAN]];
        assert!(matches!(
            fit_linear(&x, &[0, 1], 2, &TrainConfig::default()),
            Err(LearnError::NonFiniteFeature(1, 0))
        ));
    }

    fn dummy_model(objective: Objective, weights: Vec<Vec<f64>>, intercepts: Vec<f64>, labels: Vec<&str>) -> LinearModel {
        LinearModel {
            class_labels: labels.into_iter().map(String::from).collect(),
            weights,
            intercepts,
            lambda: 0.0,
            objective,
            views: ViewSet::new(),
            markov: MarkovConfig::default(),
            dict: FeatureDictionary {
                suites: vec![],
                extensions: vec![],
                built_from: String::new(),
                suite_counts: BTreeMap::new(),
                ext_counts: BTreeMap::new(),
            },
            scaler: ScalerStats {
                mean: vec![0.0; 7],
                stddev: vec![1.0; 7],
            },
            training_meta: TrainingMeta::default(),
        }
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = dummy_model(Objective::Binary, vec![vec![0.0, 0.0]], vec![0.0], vec!["neg", "pos"]);
        let p = m.predict_proba(&[3.0, -2.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_intercepts_ln2() {
        let m = dummy_model(
            Objective::Multinomial,
            vec![vec![0.0], vec![0.0], vec![0.0]],
            vec![0.0, 0.0, 2f64.ln()],
            vec!["a", "b", "c"],
        );
        let p = m.predict_proba(&[5.0]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
        assert!((p[2] - 0.5).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_coordinate_is_inactive() {
        let m = dummy_model(Objective::Binary, vec![vec![1.0, 0.0]], vec![0.1], vec!["n", "p"]);
        let a = m.predict_proba(&[0.7, 0.0]).unwrap();
        let b = m.predict_proba(&[0.7, 123.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = dummy_model(Objective::Binary, vec![vec![1.0]], vec![0.0], vec!["n", "p"]);
        assert!(matches!(
            m.predict_proba(&[1.0, 2.0]),
            Err(LearnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fdr_examples() {
        // Perfect separation.
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(accuracy_at_fdr(&scores, &labels, 1e-4), 1.0);

        // All negatives above all positives.
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [false, false, true, true];
        assert_eq!(accuracy_at_fdr(&scores, &labels, 1e-4), 0.0);

        // 10 positives, 1 negative ranked 6th: prefix stops before it.
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..11 {
            scores.push(1.0 - i as f64 * 0.01);
            labels.push(i != 5);
        }
        assert_eq!(accuracy_at_fdr(&scores, &labels, 1e-4), 0.5);
    }

    #[test]
    fn fdr_monotone_in_ratio() {
        let scores = [0.9, 0.85, 0.7, 0.6, 0.5, 0.4];
        let labels = [true, false, true, true, false, true];
        let mut prev = 0.0;
        for ratio in [0.0, 0.1, 0.5, 1.0, 10.0] {
            let r = accuracy_at_fdr(&scores, &labels, ratio);
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn confusion_examples() {
        // Perfect predictions: diagonal.
        let m = confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3);
        assert_eq!(m, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        // Single class.
        let m = confusion_matrix(&[0, 0], &[0, 0], 1);
        assert_eq!(m, vec![vec![2]]);
        // Hand count.
        let m = confusion_matrix(&[0, 1, 1], &[0, 0, 1], 2);
        assert_eq!(m, vec![vec![1, 1], vec![0, 1]]);
        let pct = confusion_percentages(&m);
        assert_eq!(pct[0], vec![50.0, 50.0]);
    }

    #[test]
    fn sparsity_monotone_in_lambda() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 200;
        let d = 8;
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        // Noisy labels keep the optimum finite so the solution path is
        // well-behaved across the grid.
        let y: Vec<usize> = (0..n)
            .map(|i| {
                let signal = x[[i, 0]] + 0.5 * x[[i, 3]] + rng.gen_range(-0.8..0.8);
                (signal > 0.0) as usize
            })
            .collect();
        let mut prev = usize::MAX;
        for lambda in default_lambda_grid() {
            let cfg = TrainConfig {
                lambda,
                max_iter: 20_000,
                tol: 1e-12,
                ..TrainConfig::default()
            };
            let fit = fit_linear(&x, &y, 2, &cfg).unwrap();
            let nnz = fit.nonzero_weights();
            assert!(nnz <= prev, "sparsity not monotone: {nnz} > {prev} at lambda {lambda}");
            prev = nnz;
        }
    }

    #[test]
    fn binary_and_two_class_multinomial_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 80;
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..n).map(|i| (x[[i, 0]] + x[[i, 1]] > 0.2) as usize).collect();
        let mk = |objective| TrainConfig {
            lambda: 0.01,
            objective,
            max_iter: 3000,
            ..TrainConfig::default()
        };
        let bin = fit_linear(&x, &y, 2, &mk(Objective::Binary)).unwrap();
        let multi = fit_linear(&x, &y, 2, &mk(Objective::Multinomial)).unwrap();
        let bin_model = dummy_model(
            Objective::Binary,
            vec![bin.weights.row(0).to_vec()],
            bin.intercepts.clone(),
            vec!["0", "1"],
        );
        let multi_model = dummy_model(
            Objective::Multinomial,
            multi.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
            multi.intercepts.clone(),
            vec!["0", "1"],
        );
        for i in 0..n {
            let xi = [x[[i, 0]], x[[i, 1]]];
            assert_eq!(bin_model.predict(&xi).unwrap(), multi_model.predict(&xi).unwrap());
        }
    }
}
