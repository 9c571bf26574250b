//! Gradient-boosted decision trees on the eight indicators.
//!
//! Second-order boosting of the weighted logistic loss with exact greedy
//! splits, plus split-count importances and exact interventional Shapley
//! values (all 2^8 feature subsets against an explicit background set).

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indicators::{FEATURE_COUNT, FEATURE_NAMES};
use crate::ingest::Label;

pub const MODEL_VERSION: u32 = 1;
const MIN_SPLIT_GAIN: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("training data: {0}")]
    Data(String),
    #[error("training needs both classes (positives {pos}, negatives {neg})")]
    SingleClass { pos: usize, neg: usize },
    #[error("background set must not be empty")]
    EmptyBackground,
    #[error("model file version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub row_subsample: f64,
    pub feature_subsample: f64,
    /// Weight of positive rows; `None` uses negatives / positives.
    pub pos_weight: Option<f64>,
    pub l2_lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Initial prediction as a probability.
    pub base_score: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            rounds: 300,
            learning_rate: 0.05,
            max_depth: 4,
            row_subsample: 0.85,
            feature_subsample: 0.85,
            pos_weight: None,
            l2_lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            base_score: 0.5,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Params(m.to_string()));
        if self.rounds < 1 {
            return bad("rounds must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(self.row_subsample > 0.0 && self.row_subsample <= 1.0)
            || !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0)
        {
            return bad("subsample ratios must be in (0, 1]");
        }
        if let Some(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return bad("pos_weight must be > 0");
            }
        }
        if !(self.l2_lambda >= 0.0) || !(self.gamma >= 0.0) || !(self.min_child_weight >= 0.0) {
            return bad("l2_lambda, gamma and min_child_weight must be >= 0");
        }
        if !(self.base_score > 0.0 && self.base_score < 1.0) {
            return bad("base_score must be in (0, 1)");
        }
        Ok(())
    }
}

/// Node of a flat binary tree. Leaves have `feature == None`.
///
/// Internal nodes route `x[feature] < threshold` left, otherwise right;
/// missing (NaN) values follow `default_left`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub default_left: bool,
    pub leaf_weight: f64,
}

impl Node {
    fn leaf(weight: f64) -> Node {
        Node { feature: None, threshold: 0.0, left: 0, right: 0, default_left: true, leaf_weight: weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match n.feature {
                None => return n.leaf_weight,
                Some(f) => {
                    let v = x[f];
                    let go_left = if v.is_nan() { n.default_left } else { v < n.threshold };
                    i = if go_left { n.left } else { n.right };
                }
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            match n.feature {
                None => 0,
                Some(_) => 1 + walk(t, n.left).max(walk(t, n.right)),
            }
        }
        walk(self, 0)
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.feature.is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    pub base_logit: f64,
    pub params: BoostParams,
    pub feature_names: Vec<String>,
}

pub fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl TreeEnsemble {
    pub fn empty(params: BoostParams) -> TreeEnsemble {
        TreeEnsemble {
            trees: Vec::new(),
            base_logit: logit(params.base_score),
            params,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn margin(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        self.trees.iter().fold(self.base_logit, |acc, t| acc + t.leaf_value(x))
    }

    /// Risk score in (0, 1).
    pub fn predict(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        sigmoid(self.margin(x))
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    pub fn internal_node_count(&self) -> usize {
        self.trees.iter().map(|t| t.internal_nodes().count()).sum()
    }

    /// Split counts per feature (the "F-score").
    pub fn feature_importance(&self) -> [f64; FEATURE_COUNT] {
        let mut out = [0.0; FEATURE_COUNT];
        for t in &self.trees {
            for n in t.internal_nodes() {
                out[n.feature.expect("internal node")] += 1.0;
            }
        }
        out
    }

    /// Exact interventional Shapley values in margin space.
    pub fn shapley(&self, x: &[f64; FEATURE_COUNT], background: &[[f64; FEATURE_COUNT]]) -> Result<Shapley, ModelError> {
        if background.is_empty() {
            return Err(ModelError::EmptyBackground);
        }
        const SUBSETS: usize = 1 << FEATURE_COUNT;
        let mut value = [0.0f64; SUBSETS];
        let inv = 1.0 / background.len() as f64;
        let mut z = [0.0; FEATURE_COUNT];
        for b in background {
            for (mask, v) in value.iter_mut().enumerate() {
                for i in 0..FEATURE_COUNT {
                    z[i] = if mask & (1 << i) != 0 { x[i] } else { b[i] };
                }
                *v += self.margin(&z) * inv;
            }
        }
        let weights = shapley_weights();
        let mut phi = [0.0; FEATURE_COUNT];
        for (i, p) in phi.iter_mut().enumerate() {
            let bit = 1 << i;
            for mask in 0..SUBSETS {
                if mask & bit == 0 {
                    *p += weights[mask.count_ones() as usize] * (value[mask | bit] - value[mask]);
                }
            }
        }
        Ok(Shapley { phi, base: value[0] })
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION,
            params: self.params,
            base_logit: self.base_logit,
            feature_names: self.feature_names.clone(),
            trees: self.trees.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<TreeEnsemble, ModelError> {
        let head: VersionProbe = serde_json::from_str(text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        if head.version != MODEL_VERSION {
            return Err(ModelError::Version { found: head.version, expected: MODEL_VERSION });
        }
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let ens = TreeEnsemble {
            trees: file.trees,
            base_logit: file.base_logit,
            params: file.params,
            feature_names: file.feature_names,
        };
        ens.check_structure()?;
        Ok(ens)
    }

    fn check_structure(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Corrupt(m));
        if !self.base_logit.is_finite() {
            return bad("non-finite base_logit".into());
        }
        if self.feature_names.len() != FEATURE_COUNT {
            return bad(format!("expected {FEATURE_COUNT} feature names"));
        }
        for (ti, t) in self.trees.iter().enumerate() {
            if t.nodes.is_empty() {
                return bad(format!("tree {ti} has no nodes"));
            }
            for (ni, n) in t.nodes.iter().enumerate() {
                match n.feature {
                    None if !n.leaf_weight.is_finite() => return bad(format!("tree {ti} node {ni}: bad leaf")),
                    None => {}
                    Some(f) => {
                        // children always follow their parent, so traversal terminates
                        if f >= FEATURE_COUNT
                            || n.left <= ni
                            || n.right <= ni
                            || n.left >= t.nodes.len()
                            || n.right >= t.nodes.len()
                            || n.threshold.is_nan()
                        {
                            return bad(format!("tree {ti} node {ni}: bad split"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<TreeEnsemble, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

/// `|S|! (n - |S| - 1)! / n!` indexed by `|S|`.
fn shapley_weights() -> [f64; FEATURE_COUNT] {
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let n = FEATURE_COUNT;
    let mut w = [0.0; FEATURE_COUNT];
    for (s, wi) in w.iter_mut().enumerate() {
        *wi = fact(s) * fact(n - s - 1) / fact(n);
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shapley {
    pub phi: [f64; FEATURE_COUNT],
    /// Expected margin over the background.
    pub base: f64,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    params: BoostParams,
    base_logit: f64,
    feature_names: Vec<String>,
    trees: Vec<Tree>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub ensemble: TreeEnsemble,
    /// Weighted logistic loss on all rows after each round.
    pub loss_trace: Vec<f64>,
}

pub fn train(x: &[[f64; FEATURE_COUNT]], y: &[Label], params: &BoostParams) -> Result<TreeEnsemble, ModelError> {
    train_traced(x, y, params).map(|o| o.ensemble)
}

pub fn weighted_logloss(margins: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for ((&m, &t), &wi) in margins.iter().zip(y).zip(w) {
        // log(1 + e^m) - t m, stable for large |m|
        let softplus = if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
        total += wi * (softplus - t * m);
        wsum += wi;
    }
    total / wsum
}

pub fn train_traced(x: &[[f64; FEATURE_COUNT]], y: &[Label], params: &BoostParams) -> Result<TrainOutput, ModelError> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(ModelError::Data(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ModelError::Data("non-finite feature value".into()));
    }
    let pos = y.iter().filter(|l| l.is_at_risk()).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ModelError::SingleClass { pos, neg });
    }
    let pos_weight = params.pos_weight.unwrap_or(neg as f64 / pos as f64);
    let target: Vec<f64> = y.iter().map(|l| l.as_f64()).collect();
    let weight: Vec<f64> = y.iter().map(|l| if l.is_at_risk() { pos_weight } else { 1.0 }).collect();

    let mut ens = TreeEnsemble::empty(*params);
    let n = x.len();
    let mut margins = vec![ens.base_logit; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_rows = ((n as f64 * params.row_subsample).round() as usize).clamp(1, n);
    let n_feats = ((FEATURE_COUNT as f64 * params.feature_subsample).round() as usize).clamp(1, FEATURE_COUNT);
    let mut loss_trace = Vec::with_capacity(params.rounds);

    for _ in 0..params.rounds {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = weight[i] * (p - target[i]);
            hess[i] = weight[i] * p * (1.0 - p);
        }
        let mut rows: Vec<usize> = if n_rows < n { sample(&mut rng, n, n_rows).into_vec() } else { (0..n).collect() };
        rows.sort_unstable();
        let mut feats: Vec<usize> = if n_feats < FEATURE_COUNT {
            sample(&mut rng, FEATURE_COUNT, n_feats).into_vec()
        } else {
            (0..FEATURE_COUNT).collect()
        };
        feats.sort_unstable();

        let mut builder = TreeBuilder { x, grad: &grad, hess: &hess, features: &feats, params, nodes: Vec::new() };
        builder.grow(&mut rows, 0);
        let tree = Tree { nodes: builder.nodes };
        for (m, row) in margins.iter_mut().zip(x) {
            *m += tree.leaf_value(row);
        }
        ens.trees.push(tree);
        loss_trace.push(weighted_logloss(&margins, &target, &weight));
    }
    Ok(TrainOutput { ensemble: ens, loss_trace })
}

struct TreeBuilder<'a> {
    x: &'a [[f64; FEATURE_COUNT]],
    grad: &'a [f64],
    hess: &'a [f64],
    features: &'a [usize],
    params: &'a BoostParams,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
    h_left: f64,
    h_right: f64,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let id = self.nodes.len();
        let lambda = self.params.l2_lambda;
        self.nodes.push(Node::leaf(-g / (h + lambda) * self.params.learning_rate));
        if depth >= self.params.max_depth || rows.len() < 2 {
            return id;
        }
        let Some(split) = self.best_split(rows, g, h) else {
            return id;
        };
        let (f, thr) = (split.feature, split.threshold);
        let mid = partition_in_place(rows, |&r| self.x[r][f] < thr);
        let (left_rows, right_rows) = rows.split_at_mut(mid);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node {
            feature: Some(f),
            threshold: thr,
            left,
            right,
            default_left: split.h_left >= split.h_right,
            leaf_weight: 0.0,
        };
        debug_assert!(split.gain > 0.0);
        id
    }

    fn best_split(&self, rows: &[usize], g: f64, h: f64) -> Option<Split> {
        let lambda = self.params.l2_lambda;
        let mcw = self.params.min_child_weight;
        let parent = g * g / (h + lambda);
        let mut best: Option<Split> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for &f in self.features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let r = order[k];
                gl += self.grad[r];
                hl += self.hess[r];
                let (lo, hi) = (self.x[r][f], self.x[order[k + 1]][f]);
                if lo == hi {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < mcw || hr < mcw {
                    continue;
                }
                let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent) - self.params.gamma;
                if gain > MIN_SPLIT_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if !(lo < threshold && threshold <= hi) {
                        threshold = hi;
                    }
                    best = Some(Split { feature: f, threshold, gain, h_left: hl, h_right: hr });
                }
            }
        }
        best
    }
}

/// Stable-enough partition: rows satisfying `pred` first; returns their count.
fn partition_in_place(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let (mut yes, no): (Vec<usize>, Vec<usize>) = rows.iter().partition(|r| pred(r));
    let mid = yes.len();
    yes.extend(no);
    rows.copy_from_slice(&yes);
    mid
}
