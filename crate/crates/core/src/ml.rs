//! Chi-square feature ranking and a bagged CART classifier over frame-rate classes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::video::FrameRate;

/// Frame-rate classes, highest first; also the confusion-matrix order.
pub const CLASSES: [u32; 5] = [120, 60, 30, 24, 15];
pub const N_CLASSES: usize = CLASSES.len();
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MlError {
    #[error("all labels are identical")]
    ConstantLabels,
    #[error("k must be in 1..={max}, got {k}")]
    K { k: usize, max: usize },
    #[error("empty dataset")]
    Empty,
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{0} fps is not one of the classes 120, 60, 30, 24, 15")]
    UnknownClass(String),
    #[error("dataset too small for a non-empty test split")]
    TooSmall,
    #[error("a class was missing from the training split after {0} draws")]
    ClassStarvation(usize),
    #[error("model format version {0} is not supported")]
    Version(u32),
}

pub fn class_index(fps: FrameRate) -> Result<usize, MlError> {
    CLASSES
        .iter()
        .position(|&c| FrameRate::integer(c as u64) == fps)
        .ok_or_else(|| MlError::UnknownClass(fps.to_string()))
}

pub fn class_rate(index: usize) -> FrameRate {
    FrameRate::integer(CLASSES[index] as u64)
}

/// Feature rows with class-index labels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Bin index per sample from value ranks: equal values share a bin and the
/// first occurrence at sorted position `r` goes to bin `r · n_bins / n`.
fn equal_frequency_bins(values: &[f64], n_bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut bins = vec![0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let bin = start * n_bins / n;
        for &i in &order[start..end] {
            bins[i] = bin;
        }
        start = end;
    }
    bins
}

/// Chi-square statistic of each feature's bin × class contingency table.
pub fn chi_square_scores(data: &Dataset, n_bins: usize) -> Result<Vec<f64>, MlError> {
    if data.is_empty() {
        return Err(MlError::Empty);
    }
    let class_totals = data.class_counts();
    if class_totals.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(MlError::ConstantLabels);
    }
    let n = data.len() as f64;
    let n_bins = n_bins.max(1);
    Ok((0..data.n_features())
        .map(|f| {
            let col: Vec<f64> = data.rows.iter().map(|r| r[f]).collect();
            let bins = equal_frequency_bins(&col, n_bins);
            let mut table = vec![[0usize; N_CLASSES]; n_bins];
            for (&b, &l) in bins.iter().zip(&data.labels) {
                table[b][l] += 1;
            }
            let mut chi = 0.0;
            for row in table.iter().filter(|r| r.iter().any(|&c| c > 0)) {
                let row_total: usize = row.iter().sum();
                for (k, &obs) in row.iter().enumerate() {
                    if class_totals[k] == 0 {
                        continue;
                    }
                    let expected = row_total as f64 * class_totals[k] as f64 / n;
                    chi += (obs as f64 - expected).powi(2) / expected;
                }
            }
            chi
        })
        .collect())
}

/// Indices of the `k` largest scores in ascending index order; ties favour lower indices.
pub fn select_top_k(scores: &[f64], k: usize) -> Result<Vec<usize>, MlError> {
    if k == 0 || k > scores.len() {
        return Err(MlError::K { k, max: scores.len() });
    }
    let key = |i: usize| if scores[i].is_nan() { f64::NEG_INFINITY } else { scores[i] };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    Ok(top)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 12,
            min_leaf: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: [u32; N_CLASSES],
    },
}

/// Binary tree in a flat node array; node 0 is the root. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

/// Majority class; ties go to the higher frame rate (lower class index).
fn argmax_class(counts: &[u32; N_CLASSES]) -> usize {
    let mut best = 0;
    for k in 1..N_CLASSES {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    best
}

fn gini_weighted(counts: &[u32; N_CLASSES], n: u32) -> f64 {
    // n · gini = n - Σ c² / n
    let sq: u64 = counts.iter().map(|&c| c as u64 * c as u64).sum();
    n as f64 - sq as f64 / n as f64
}

impl DecisionTree {
    /// Greedy CART fit on the rows of `data` listed in `sample` (repeats allowed).
    pub fn fit(data: &Dataset, sample: &[usize], params: &TreeParams) -> Result<Self, MlError> {
        if sample.is_empty() {
            return Err(MlError::Empty);
        }
        let mut tree = DecisionTree { nodes: Vec::new() };
        tree.grow(data, sample.to_vec(), 0, params);
        Ok(tree)
    }

    fn grow(&mut self, data: &Dataset, sample: Vec<usize>, depth: usize, params: &TreeParams) -> usize {
        let mut counts = [0u32; N_CLASSES];
        for &i in &sample {
            counts[data.labels[i]] += 1;
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= params.max_depth || sample.len() < 2 * params.min_leaf.max(1) {
            return id;
        }
        let Some((feature, threshold)) = best_split(data, &sample, params.min_leaf.max(1)) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = sample.into_iter().partition(|&i| data.rows[i][feature] <= threshold);
        let left = self.grow(data, l, depth + 1, params);
        let right = self.grow(data, r, depth + 1, params);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    pub fn leaf_counts(&self, x: &[f64]) -> &[u32; N_CLASSES] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax_class(self.leaf_counts(x))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Split minimizing weighted Gini over midpoints of consecutive distinct
/// values. Zero-gain splits are allowed so that interactions such as XOR
/// can be resolved one level down. First best wins (feature, then threshold order).
fn best_split(data: &Dataset, sample: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let n = sample.len() as u32;
    let mut total = [0u32; N_CLASSES];
    for &i in sample {
        total[data.labels[i]] += 1;
    }
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = sample.to_vec();
    for f in 0..data.n_features() {
        sorted.sort_by(|&a, &b| data.rows[a][f].total_cmp(&data.rows[b][f]));
        let mut left = [0u32; N_CLASSES];
        for pos in 0..sorted.len() - 1 {
            left[data.labels[sorted[pos]]] += 1;
            let (v, next) = (data.rows[sorted[pos]][f], data.rows[sorted[pos + 1]][f]);
            if v == next {
                continue;
            }
            let nl = pos as u32 + 1;
            let nr = n - nl;
            if (nl as usize) < min_leaf || (nr as usize) < min_leaf {
                continue;
            }
            let mut right = total;
            for k in 0..N_CLASSES {
                right[k] -= left[k];
            }
            let impurity = gini_weighted(&left, nl) + gini_weighted(&right, nr);
            if best.map_or(true, |(b, _, _)| impurity < b) {
                let mut threshold = v + (next - v) / 2.0;
                if threshold >= next {
                    threshold = v;
                }
                best = Some((impurity, f, threshold));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub k: usize,
    pub n_bins: usize,
    pub n_estimators: usize,
    pub seed: u64,
    pub tree: TreeParams,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            k: 15,
            n_bins: 10,
            n_estimators: 100,
            seed: 0,
            tree: TreeParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub version: u32,
    pub classes: Vec<u32>,
    /// Names of all input features, in input order.
    pub feature_names: Vec<String>,
    /// Indices (into the full feature vector) the trees were trained on.
    pub selected: Vec<usize>,
    pub n_estimators: usize,
    pub seed: u64,
    pub tree_params: TreeParams,
    pub trees: Vec<DecisionTree>,
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Bagged trees on bootstrap samples; tree `t` draws from its own RNG stream,
/// so results do not depend on thread scheduling. Trees see only the
/// `selected` columns.
pub fn fit_bagging(
    data: &Dataset,
    selected: &[usize],
    n_estimators: usize,
    seed: u64,
    params: &TreeParams,
) -> Result<EnsembleModel, MlError> {
    if data.is_empty() {
        return Err(MlError::Empty);
    }
    let restricted = Dataset {
        feature_names: selected.iter().map(|&i| data.feature_names[i].clone()).collect(),
        rows: data.rows.iter().map(|r| selected.iter().map(|&i| r[i]).collect()).collect(),
        labels: data.labels.clone(),
    };
    let n = data.len();
    let trees = (0..n_estimators.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            DecisionTree::fit(&restricted, &sample, params)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EnsembleModel {
        version: MODEL_VERSION,
        classes: CLASSES.to_vec(),
        feature_names: data.feature_names.clone(),
        selected: selected.to_vec(),
        n_estimators: trees.len(),
        seed,
        tree_params: *params,
        trees,
    })
}

/// Chi-square top-k selection followed by bagging.
pub fn train(data: &Dataset, params: &TrainParams) -> Result<EnsembleModel, MlError> {
    let selected = match chi_square_scores(data, params.n_bins) {
        Ok(scores) => select_top_k(&scores, params.k.min(scores.len()))?,
        // A single class carries no ranking information; keep the first k columns.
        Err(MlError::ConstantLabels) => (0..params.k.min(data.n_features())).collect(),
        Err(e) => return Err(e),
    };
    fit_bagging(data, &selected, params.n_estimators, params.seed, &params.tree)
}

impl EnsembleModel {
    /// Votes per class for an already restricted feature vector.
    pub fn votes(&self, x: &[f64]) -> Result<[u32; N_CLASSES], MlError> {
        if x.len() != self.selected.len() {
            return Err(MlError::Dimension {
                expected: self.selected.len(),
                got: x.len(),
            });
        }
        let mut votes = [0u32; N_CLASSES];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        Ok(votes)
    }

    /// Class index for an already restricted feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<usize, MlError> {
        Ok(argmax_class(&self.votes(x)?))
    }

    /// Class index for a full feature vector.
    pub fn predict_full(&self, x: &[f64]) -> Result<usize, MlError> {
        if x.len() != self.feature_names.len() {
            return Err(MlError::Dimension {
                expected: self.feature_names.len(),
                got: x.len(),
            });
        }
        let restricted: Vec<f64> = self.selected.iter().map(|&i| x[i]).collect();
        self.predict(&restricted)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let model: EnsembleModel = serde_json::from_str(text)?;
        if model.version != MODEL_VERSION {
            return Err(Box::new(MlError::Version(model.version)));
        }
        Ok(model)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Independent random stratified train/test splits.
    #[default]
    RandomSplits,
    /// Stratified k-fold with `n_iterations` folds.
    KFold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub n_iterations: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub protocol: Protocol,
    pub max_redraws: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            n_iterations: 12,
            train_fraction: 0.8,
            seed: 0,
            protocol: Protocol::RandomSplits,
            max_redraws: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub iteration_accuracies: Vec<f64>,
    /// Rows are ground truth, columns predictions, both in [`CLASSES`] order.
    pub confusion: [[u32; N_CLASSES]; N_CLASSES],
    /// Share of misclassifications that picked a higher frame rate than the truth.
    pub higher_rate_error_fraction: Option<f64>,
}

/// Per-class shuffled indices; the first `n_test(c)` of each class go to the test split.
fn stratified_split(data: &Dataset, train_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for k in 0..N_CLASSES {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == k).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(rng);
        let n_test = (((1.0 - train_fraction) * idx.len() as f64).round() as usize).min(idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn kfold_splits(data: &Dataset, folds: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut fold_of = vec![0; data.len()];
    let mut next = 0;
    for k in 0..N_CLASSES {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == k).collect();
        idx.shuffle(rng);
        for i in idx {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    (0..folds).map(|f| (0..data.len()).partition(|&i| fold_of[i] != f)).collect()
}

pub fn evaluate(data: &Dataset, train_params: &TrainParams, params: &EvalParams) -> Result<Evaluation, MlError> {
    if data.is_empty() {
        return Err(MlError::Empty);
    }
    let present: Vec<usize> = (0..N_CLASSES).filter(|&k| data.labels.contains(&k)).collect();
    let covers = |train: &[usize]| present.iter().all(|&k| train.iter().any(|&i| data.labels[i] == k));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = match params.protocol {
        Protocol::RandomSplits => {
            let mut out = Vec::with_capacity(params.n_iterations);
            for _ in 0..params.n_iterations {
                let mut draws = 0;
                loop {
                    let (train, test) = stratified_split(data, params.train_fraction, &mut rng);
                    draws += 1;
                    if test.is_empty() {
                        return Err(MlError::TooSmall);
                    }
                    if covers(&train) {
                        out.push((train, test));
                        break;
                    }
                    if draws > params.max_redraws {
                        return Err(MlError::ClassStarvation(draws));
                    }
                }
            }
            out
        }
        Protocol::KFold => {
            if data.len() < params.n_iterations {
                return Err(MlError::TooSmall);
            }
            let splits = kfold_splits(data, params.n_iterations, &mut rng);
            if splits.iter().any(|(train, _)| !covers(train)) {
                return Err(MlError::ClassStarvation(1));
            }
            splits
        }
    };

    let mut confusion = [[0u32; N_CLASSES]; N_CLASSES];
    let mut accs = Vec::with_capacity(splits.len());
    for (it, (train_idx, test_idx)) in splits.iter().enumerate() {
        let tp = TrainParams {
            seed: train_params.seed.wrapping_add(it as u64),
            ..train_params.clone()
        };
        let model = train(&data.subset(train_idx), &tp)?;
        let mut correct = 0;
        for &i in test_idx {
            let pred = model.predict_full(&data.rows[i])?;
            confusion[data.labels[i]][pred] += 1;
            correct += (pred == data.labels[i]) as usize;
        }
        accs.push(correct as f64 / test_idx.len() as f64);
    }
    let (mut errors, mut higher) = (0u32, 0u32);
    for t in 0..N_CLASSES {
        for p in 0..N_CLASSES {
            if t != p {
                errors += confusion[t][p];
                if p < t {
                    higher += confusion[t][p];
                }
            }
        }
    }
    Ok(Evaluation {
        accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
        iteration_accuracies: accs,
        confusion,
        higher_rate_error_fraction: (errors > 0).then(|| higher as f64 / errors as f64),
    })
}
