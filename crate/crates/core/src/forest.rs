//! Binary random forest (bootstrap + random feature subsets + Gini splits),
//! stratified k-fold splitting and classification metrics.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{ParallelMap, Sequential};
use crate::simmetrics::{SimilarityVector, FEATURE_NAMES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForestError {
    #[error("dataset is empty")]
    Empty,
    #[error("dataset needs both labels, only label {0} present")]
    SingleClass(u8),
    #[error("row {row} has {got} features, expected {expected}")]
    Width { row: usize, expected: usize, got: usize },
    #[error("row {0} has a non-finite feature")]
    NonFinite(usize),
    #[error("row {row} has label {label}; labels must be 0 or 1")]
    Label { row: usize, label: u8 },
    #[error("k-fold needs k >= 2, got {0}")]
    InvalidK(usize),
    #[error("label {label} has {count} samples, fewer than k = {k}")]
    ClassTooSmall { label: u8, count: usize, k: usize },
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeatureDataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl FeatureDataset {
    pub fn new(feature_names: Vec<String>, features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, ForestError> {
        if features.len() != labels.len() {
            return Err(ForestError::LengthMismatch(features.len(), labels.len()));
        }
        let width = feature_names.len();
        for (row, f) in features.iter().enumerate() {
            if f.len() != width {
                return Err(ForestError::Width {
                    row,
                    expected: width,
                    got: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(ForestError::NonFinite(row));
            }
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
            return Err(ForestError::Label { row, label });
        }
        Ok(Self {
            feature_names,
            features,
            labels,
        })
    }

    /// Dataset over the seven similarity features.
    pub fn from_similarity(rows: &[(SimilarityVector, u8)]) -> Result<Self, ForestError> {
        Self::new(
            FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            rows.iter().map(|(v, _)| v.to_array().to_vec()).collect(),
            rows.iter().map(|&(_, l)| l).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.len() - ones, ones]
    }

    pub fn subset(&self, idx: &[usize]) -> FeatureDataset {
        FeatureDataset {
            feature_names: self.feature_names.clone(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn check_fittable(&self) -> Result<(), ForestError> {
        match self.class_counts() {
            [0, 0] => Err(ForestError::Empty),
            [_, 0] => Err(ForestError::SingleClass(0)),
            [0, _] => Err(ForestError::SingleClass(1)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ForestConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            num_trees: 100,
            max_depth: 8,
            min_samples_leaf: 2,
            features_per_split: 3,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn validate(&self) -> Result<(), ForestError> {
        if self.num_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 || self.features_per_split == 0 {
            return Err(ForestError::Config(
                "numTrees, maxDepth, minSamplesLeaf and featuresPerSplit must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One node of a tree stored in a flat array. Internal nodes route samples
/// with `x[featureIndex] <= threshold` to `leftChild`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TreeNode {
    pub feature_index: Option<usize>,
    pub threshold: Option<f64>,
    pub left_child: Option<usize>,
    pub right_child: Option<usize>,
    /// `[P(label 0), P(label 1)]` at a leaf.
    pub leaf_distribution: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaf(&self, x: &[f64]) -> [f64; 2] {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            if let Some(dist) = node.leaf_distribution {
                return dist;
            }
            let f = node.feature_index.expect("internal node has a feature");
            let t = node.threshold.expect("internal node has a threshold");
            i = if x[f] <= t {
                node.left_child.expect("internal node has children")
            } else {
                node.right_child.expect("internal node has children")
            };
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            let n = &t.nodes[i];
            match (n.left_child, n.right_child) {
                (Some(l), Some(r)) => 1 + walk(t, l).max(walk(t, r)),
                _ => 0,
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ForestModel {
    pub config: ForestConfig,
    pub feature_names: Vec<String>,
    pub trees: Vec<DecisionTree>,
}

impl ForestModel {
    /// Fits every tree on the calling thread.
    pub fn fit(config: &ForestConfig, data: &FeatureDataset) -> Result<Self, ForestError> {
        Self::fit_with(&Sequential, config, data)
    }

    /// Fits trees through `exec`. Tree `i` depends only on `(config.seed, i)`,
    /// so the model is identical for any executor.
    pub fn fit_with<E: ParallelMap>(exec: &E, config: &ForestConfig, data: &FeatureDataset) -> Result<Self, ForestError> {
        config.validate()?;
        data.check_fittable()?;
        let trees = exec.map_indexed(config.num_trees, |i| fit_tree(config, data, i));
        Ok(Self {
            config: *config,
            feature_names: data.feature_names.clone(),
            trees,
        })
    }

    /// Mean positive-class leaf frequency over trees.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.leaf(x)[1]).sum();
        (total / self.trees.len() as f64).clamp(0.0, 1.0)
    }

    pub fn predict_vector(&self, v: &SimilarityVector) -> f64 {
        self.predict_proba(&v.to_array())
    }

    pub fn predict_all(&self, data: &FeatureDataset) -> Vec<f64> {
        data.features.iter().map(|x| self.predict_proba(x)).collect()
    }
}

/// Bootstrap indices for tree `tree_index`.
pub fn bootstrap_indices(config: &ForestConfig, n: usize, tree_index: usize) -> (Vec<usize>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(tree_index as u64);
    let idx = (0..n).map(|_| rng.random_range(0..n)).collect();
    (idx, rng)
}

/// Fits tree `tree_index` of a forest. Exposed so callers can schedule trees
/// themselves.
pub fn fit_tree(config: &ForestConfig, data: &FeatureDataset, tree_index: usize) -> DecisionTree {
    let (sample, mut rng) = bootstrap_indices(config, data.len(), tree_index);
    let mut builder = TreeBuilder {
        config,
        data,
        nodes: Vec::new(),
    };
    builder.grow(sample, 0, &mut rng);
    DecisionTree { nodes: builder.nodes }
}

struct TreeBuilder<'a> {
    config: &'a ForestConfig,
    data: &'a FeatureDataset,
    nodes: Vec<TreeNode>,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn gini_weighted(c0: usize, c1: usize) -> f64 {
    // n * gini = n - (c0^2 + c1^2) / n
    let n = (c0 + c1) as f64;
    if n == 0.0 {
        return 0.0;
    }
    n - ((c0 * c0 + c1 * c1) as f64) / n
}

impl TreeBuilder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let ones = idx.iter().filter(|&&i| self.data.labels[i] == 1).count();
        let zeros = idx.len() - ones;
        self.nodes.push(leaf_node(zeros, ones));
        let min_leaf = self.config.min_samples_leaf;
        if depth >= self.config.max_depth || zeros == 0 || ones == 0 || idx.len() < 2 * min_leaf {
            return id;
        }
        let Some(split) = self.best_split(&idx, rng) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.data.features[i][split.feature] <= split.threshold);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id] = TreeNode {
            feature_index: Some(split.feature),
            threshold: Some(split.threshold),
            left_child: Some(l),
            right_child: Some(r),
            leaf_distribution: None,
        };
        id
    }

    /// Lowest weighted Gini over a random feature subset; ties keep the lower
    /// feature index, then the lower threshold.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<Split> {
        let d = self.data.n_features();
        let mut features: Vec<usize> = (0..d).collect();
        let m = self.config.features_per_split.min(d);
        features.partial_shuffle(rng, m);
        let mut chosen = features[..m].to_vec();
        chosen.sort_unstable();

        let min_leaf = self.config.min_samples_leaf;
        let n = idx.len();
        let total_ones = idx.iter().filter(|&&i| self.data.labels[i] == 1).count();
        let mut best: Option<Split> = None;
        let mut column: Vec<(f64, u8)> = Vec::with_capacity(n);
        for &f in &chosen {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.data.features[i][f], self.data.labels[i])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_ones = 0;
            for pos in 1..n {
                left_ones += column[pos - 1].1 as usize;
                if pos < min_leaf || n - pos < min_leaf {
                    continue;
                }
                let (lo, hi) = (column[pos - 1].0, column[pos].0);
                if lo == hi {
                    continue;
                }
                let left_zeros = pos - left_ones;
                let right_ones = total_ones - left_ones;
                let right_zeros = (n - pos) - right_ones;
                let impurity = gini_weighted(left_zeros, left_ones) + gini_weighted(right_zeros, right_ones);
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        best
    }
}

fn leaf_node(zeros: usize, ones: usize) -> TreeNode {
    let n = (zeros + ones) as f64;
    TreeNode {
        feature_index: None,
        threshold: None,
        left_child: None,
        right_child: None,
        leaf_distribution: Some([zeros as f64 / n, ones as f64 / n]),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split. Each label's indices are shuffled and dealt
/// round-robin across folds, the second label continuing where the first
/// stopped, so fold sizes differ by at most one and per-fold label counts
/// are within one of the global proportion.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Fold>, ForestError> {
    if k < 2 {
        return Err(ForestError::InvalidK(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0usize;
    for label in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if members.len() < k {
            return Err(ForestError::ClassTooSmall {
                label,
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(folds_from_assignment(&assignment, k))
}

/// Assigns `n_groups` groups to `k` folds (shuffled, round-robin).
pub fn group_kfold(n_groups: usize, k: usize, seed: u64) -> Result<Vec<usize>, ForestError> {
    if k < 2 {
        return Err(ForestError::InvalidK(k));
    }
    if n_groups < k {
        return Err(ForestError::Config("fewer groups than folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_groups).collect();
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; n_groups];
    for (pos, g) in order.into_iter().enumerate() {
        fold_of[g] = pos % k;
    }
    Ok(fold_of)
}

pub fn folds_from_assignment(assignment: &[usize], k: usize) -> Vec<Fold> {
    (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..assignment.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect()
}

/// ROC AUC via the Mann-Whitney U statistic with average ranks for ties
/// (half credit). `None` when either label is absent.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 || n != labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Doubled ranks keep everything in integers: tie group [i, j) (1-based
    // ranks i+1..=j) has average rank (i + 1 + j) / 2.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let doubled = (i + 1 + j) as u64;
        for &s in &order[i..j] {
            if labels[s] == 1 {
                doubled_rank_sum += doubled;
            }
        }
        i = j;
    }
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Some(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

/// Per-class precision/recall/F1. Recall is absent for a class with no
/// support, precision for a class never predicted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Multi-class report: per-class rows, macro averages, accuracy and the
/// `[true][predicted]` confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    /// Averaged over classes with non-zero support; an undefined precision counts as 0.
    pub macro_avg: Averages,
    pub accuracy: f64,
    pub total_support: usize,
    pub confusion_matrix: Vec<Vec<usize>>,
}

pub fn classification_report(truth: &[usize], predicted: &[usize], num_classes: usize) -> ClassificationReport {
    let mut cm = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        cm[t][p] += 1;
    }
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = cm[c][c];
        let support: usize = cm[c].iter().sum();
        let predicted_c: usize = cm.iter().map(|row| row[c]).sum();
        let precision = (predicted_c > 0).then(|| tp as f64 / predicted_c as f64);
        let recall = (support > 0).then(|| tp as f64 / support as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        per_class.push(ClassMetrics {
            class: c,
            precision,
            recall,
            f1,
            support,
        });
    }
    let supported: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let k = supported.len().max(1) as f64;
    let macro_avg = Averages {
        precision: supported.iter().map(|m| m.precision.unwrap_or(0.0)).sum::<f64>() / k,
        recall: supported.iter().map(|m| m.recall.unwrap_or(0.0)).sum::<f64>() / k,
        f1: supported.iter().map(|m| m.f1.unwrap_or(0.0)).sum::<f64>() / k,
    };
    let total = truth.len();
    let correct: usize = (0..num_classes).map(|c| cm[c][c]).sum();
    ClassificationReport {
        per_class,
        macro_avg,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        total_support: total,
        confusion_matrix: cm,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub threshold: f64,
    pub samples: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
    /// Macro averages over the two classes.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub micro: Averages,
    pub per_class: Vec<ClassMetrics>,
    /// Absent when the evaluated labels contain a single class.
    pub roc_auc: Option<f64>,
}

/// Binary report of probability `scores` thresholded at `threshold`
/// (`score >= threshold` predicts label 1).
pub fn evaluate_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport, ForestError> {
    if scores.len() != labels.len() {
        return Err(ForestError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(ForestError::Empty);
    }
    let truth: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let pred: Vec<usize> = scores.iter().map(|&s| (s >= threshold) as usize).collect();
    let report = classification_report(&truth, &pred, 2);
    let cm = &report.confusion_matrix;
    let confusion = Confusion {
        true_positive: cm[1][1],
        false_positive: cm[0][1],
        true_negative: cm[0][0],
        false_negative: cm[1][0],
    };
    // Single-label binary micro averages all equal accuracy.
    let micro = Averages {
        precision: report.accuracy,
        recall: report.accuracy,
        f1: report.accuracy,
    };
    Ok(EvalReport {
        threshold,
        samples: scores.len(),
        confusion,
        accuracy: report.accuracy,
        precision: report.macro_avg.precision,
        recall: report.macro_avg.recall,
        f1: report.macro_avg.f1,
        micro,
        per_class: report.per_class,
        roc_auc: roc_auc(scores, labels),
    })
}

pub fn evaluate(model: &ForestModel, data: &FeatureDataset, threshold: f64) -> Result<EvalReport, ForestError> {
    evaluate_scores(&model.predict_all(data), &data.labels, threshold)
}

/// Out-of-fold probabilities from forests fitted on the given folds.
pub fn out_of_fold_scores<E: ParallelMap>(
    exec: &E,
    config: &ForestConfig,
    data: &FeatureDataset,
    folds: &[Fold],
) -> Result<Vec<f64>, ForestError> {
    let mut scores = vec![0.0; data.len()];
    for fold in folds {
        let model = ForestModel::fit_with(exec, config, &data.subset(&fold.train))?;
        for &i in &fold.test {
            scores[i] = model.predict_proba(&data.features[i]);
        }
    }
    Ok(scores)
}

/// Stratified k-fold cross-validation; the report aggregates all
/// out-of-fold predictions.
pub fn cross_validate<E: ParallelMap>(
    exec: &E,
    config: &ForestConfig,
    data: &FeatureDataset,
    k: usize,
    threshold: f64,
) -> Result<(Vec<f64>, EvalReport), ForestError> {
    data.check_fittable()?;
    let folds = stratified_kfold(&data.labels, k, config.seed)?;
    let scores = out_of_fold_scores(exec, config, data, &folds)?;
    let report = evaluate_scores(&scores, &data.labels, threshold)?;
    Ok((scores, report))
}
