//! Metrics, video-grouped splits and k-fold cross-validation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Label;

pub const DEFAULT_THRESHOLD: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("metric undefined without both classes (positives {pos}, negatives {neg})")]
    SingleClass { pos: usize, neg: usize },
    #[error("no samples")]
    Empty,
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("{videos} videos cannot fill {k} folds")]
    Folds { videos: usize, k: usize },
    #[error("train fraction must be in (0, 1), got {0}")]
    Fraction(f64),
    #[error("fold {fold}: {msg}")]
    Pipeline { fold: usize, msg: String },
}

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length { scores: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let pos = labels.iter().filter(|l| l.is_at_risk()).count();
    Ok((pos, labels.len() - pos))
}

/// Mann-Whitney AUC with tied scores sharing their average rank.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass { pos, neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks are 1-based; doubled so tie averages stay integral
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k].is_at_risk() {
                pos_rank_sum2 += avg2;
            }
        }
        i = j + 1;
    }
    let u2 = pos_rank_sum2 - (pos * (pos + 1)) as u64;
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Two complementary rates `(r, 1 - r)` with `r = num / den`, computed so
/// their sum is exactly 1: the larger is divided out, the smaller is its
/// exact complement.
fn complementary(num: usize, den: usize) -> (f64, f64) {
    let r = num as f64 / den as f64;
    if r >= 0.5 {
        (r, 1.0 - r)
    } else {
        let c = (den - num) as f64 / den as f64;
        (1.0 - c, c)
    }
}

fn complement_of_mean(mean: f64, mean_complement: f64) -> (f64, f64) {
    if mean >= 0.5 {
        (mean, 1.0 - mean)
    } else {
        (1.0 - mean_complement, mean_complement)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Threshold metrics with `score > threshold` predicted positive.
pub fn confusion_at(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Confusion, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass { pos, neg });
    }
    let (mut tp, mut fp) = (0, 0);
    for (s, l) in scores.iter().zip(labels) {
        if *s > threshold {
            if l.is_at_risk() {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let (sensitivity, fnr) = complementary(tp, pos);
    let (specificity, fpr) = complementary(neg - fp, neg);
    Ok(Confusion { threshold, tp, fp, tn: neg - fp, fn_: pos - tp, sensitivity, specificity, fpr, fnr })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub roc_auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub fpr: f64,
    pub fnr: f64,
}

impl Metrics {
    pub fn of(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Metrics, EvalError> {
        let c = confusion_at(scores, labels, threshold)?;
        Ok(Metrics {
            roc_auc: roc_auc(scores, labels)?,
            sensitivity: c.sensitivity,
            specificity: c.specificity,
            fpr: c.fpr,
            fnr: c.fnr,
        })
    }

    fn as_array(&self) -> [f64; 5] {
        [self.roc_auc, self.sensitivity, self.specificity, self.fpr, self.fnr]
    }
}

pub const METRIC_COLUMNS: [&str; 5] = ["ROC-AUC", "Sensitivity", "Specificity", "FPR", "FNR"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub test_videos: Vec<String>,
    /// `None` when the test fold holds a single class.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Single-split metrics, or the per-fold means.
    pub mean: Metrics,
    /// Sample standard deviation across folds; zero for a single split.
    pub sd: Metrics,
    pub folds: Vec<FoldResult>,
}

fn sample_mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn single(scores: &[f64], labels: &[Label], threshold: f64) -> Result<EvalReport, EvalError> {
        let mean = Metrics::of(scores, labels, threshold)?;
        let n_pos = labels.iter().filter(|l| l.is_at_risk()).count();
        let zero = Metrics { roc_auc: 0.0, sensitivity: 0.0, specificity: 0.0, fpr: 0.0, fnr: 0.0 };
        Ok(EvalReport { threshold, n_pos, n_neg: labels.len() - n_pos, mean, sd: zero, folds: Vec::new() })
    }

    fn from_folds(threshold: f64, n_pos: usize, n_neg: usize, folds: Vec<FoldResult>) -> Result<EvalReport, EvalError> {
        let scored: Vec<[f64; 5]> = folds.iter().filter_map(|f| f.metrics.map(|m| m.as_array())).collect();
        if scored.is_empty() {
            return Err(EvalError::SingleClass { pos: n_pos, neg: n_neg });
        }
        let col = |i: usize| sample_mean_sd(&scored.iter().map(|r| r[i]).collect::<Vec<_>>());
        let (auc, auc_sd) = col(0);
        let (sens, sens_sd) = col(1);
        let (spec, spec_sd) = col(2);
        let (fpr, fpr_sd) = col(3);
        let (fnr, fnr_sd) = col(4);
        let (sensitivity, fnr) = complement_of_mean(sens, fnr);
        let (specificity, fpr) = complement_of_mean(spec, fpr);
        Ok(EvalReport {
            threshold,
            n_pos,
            n_neg,
            mean: Metrics { roc_auc: auc, sensitivity, specificity, fpr, fnr },
            sd: Metrics { roc_auc: auc_sd, sensitivity: sens_sd, specificity: spec_sd, fpr: fpr_sd, fnr: fnr_sd },
            folds,
        })
    }

    /// Aligned text table, one row of `mean ± sd` values.
    pub fn to_table(&self) -> String {
        let mean = self.mean.as_array();
        let sd = self.sd.as_array();
        let cells: Vec<String> = if self.folds.is_empty() {
            mean.iter().map(|m| format!("{m:.3}")).collect()
        } else {
            mean.iter().zip(sd).map(|(m, s)| format!("{m:.3} ± {s:.3}")).collect()
        };
        let widths: Vec<usize> =
            METRIC_COLUMNS.iter().zip(&cells).map(|(h, c)| h.chars().count().max(c.chars().count())).collect();
        let row = |items: Vec<String>| {
            items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}", w = *w))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = row(METRIC_COLUMNS.iter().map(|s| s.to_string()).collect());
        out.push('\n');
        out.push_str(&row(cells));
        out.push('\n');
        out.push_str(&format!(
            "threshold {}  positives {}  negatives {}  folds {}\n",
            self.threshold,
            self.n_pos,
            self.n_neg,
            self.folds.len()
        ));
        out
    }
}

/// Grouping key of one individual.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemKey {
    pub video_id: String,
    pub label: Label,
}

struct Video {
    items: Vec<usize>,
    /// individuals per class: [control, at risk]
    counts: [usize; 2],
}

fn class_index(l: Label) -> usize {
    usize::from(l.is_at_risk())
}

/// Videos in seeded shuffled order, then stably sorted largest first.
fn ordered_videos(items: &[ItemKey], seed: u64) -> Vec<Video> {
    let mut by_id: BTreeMap<&str, Video> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        let v = by_id
            .entry(&it.video_id)
            .or_insert_with(|| Video { items: Vec::new(), counts: [0, 0] });
        v.items.push(i);
        v.counts[class_index(it.label)] += 1;
    }
    let mut videos: Vec<Video> = by_id.into_values().collect();
    videos.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    videos.sort_by_key(|v| std::cmp::Reverse(v.items.len()));
    videos
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Assigns whole videos to train or test, greedily keeping each class's test
/// share close to `1 - train_fraction`.
pub fn grouped_stratified_split(items: &[ItemKey], train_fraction: f64, seed: u64) -> Result<SplitResult, EvalError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EvalError::Fraction(train_fraction));
    }
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let videos = ordered_videos(items, seed);
    let mut totals = [0usize; 2];
    let mut videos_per_class = [0usize; 2];
    for v in &videos {
        for c in 0..2 {
            totals[c] += v.counts[c];
            videos_per_class[c] += usize::from(v.counts[c] > 0);
        }
    }
    let mut warnings = Vec::new();
    for (c, name) in ["control", "at-risk"].iter().enumerate() {
        if videos_per_class[c] < 2 {
            warnings.push(format!("{name} class spans {} video(s); it cannot be stratified", videos_per_class[c]));
        }
    }
    let test_share = 1.0 - train_fraction;
    let target = [test_share * totals[0] as f64, test_share * totals[1] as f64];
    let target_total = test_share * items.len() as f64;
    let cost = |t: [usize; 2]| (t[0] as f64 - target[0]).abs() + (t[1] as f64 - target[1]).abs();

    let mut in_test = vec![false; videos.len()];
    let mut test = [0usize; 2];
    for (vi, v) in videos.iter().enumerate() {
        let with = [test[0] + v.counts[0], test[1] + v.counts[1]];
        let (cw, cwo) = (cost(with), cost(test));
        if cw < cwo || (cw == cwo && ((test[0] + test[1]) as f64) < target_total) {
            in_test[vi] = true;
            test = with;
        }
    }
    // training must see every class that has a video to spare
    for c in 0..2 {
        let train_has = videos.iter().zip(&in_test).any(|(v, &t)| !t && v.counts[c] > 0);
        if !train_has && videos_per_class[c] >= 2 {
            let pick = videos
                .iter()
                .enumerate()
                .filter(|(vi, v)| in_test[*vi] && v.counts[c] > 0)
                .min_by_key(|(_, v)| v.items.len())
                .map(|(vi, _)| vi);
            if let Some(vi) = pick {
                in_test[vi] = false;
            }
        }
    }
    let mut out = SplitResult { train: Vec::new(), test: Vec::new(), warnings };
    for (v, t) in videos.iter().zip(in_test) {
        if t {
            out.test.extend(&v.items);
        } else {
            out.train.extend(&v.items);
        }
    }
    out.train.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Fold index per item. Every video lands in one fold; class counts are
/// spread as evenly as the video sizes allow.
pub fn assign_folds(items: &[ItemKey], k: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    let videos = ordered_videos(items, seed);
    if k < 2 || videos.len() < k {
        return Err(EvalError::Folds { videos: videos.len(), k });
    }
    let mut totals = [0usize; 2];
    for v in &videos {
        totals[0] += v.counts[0];
        totals[1] += v.counts[1];
    }
    let mut load = vec![[0usize; 2]; k];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (vi, v) in videos.iter().enumerate() {
        // squared excess over the per-fold target, summed over classes
        let score = |f: usize| -> f64 {
            (0..2)
                .filter(|&c| totals[c] > 0)
                .map(|c| {
                    let share = (load[f][c] + v.counts[c]) as f64 / totals[c] as f64;
                    share * share
                })
                .sum::<f64>()
        };
        let best = (0..k)
            .min_by(|&a, &b| {
                score(a)
                    .total_cmp(&score(b))
                    .then(members[a].len().cmp(&members[b].len()))
            })
            .expect("k >= 2");
        load[best][0] += v.counts[0];
        load[best][1] += v.counts[1];
        members[best].push(vi);
    }
    while let Some(empty) = members.iter().position(Vec::is_empty) {
        let donor = (0..k).max_by_key(|&f| (members[f].len(), std::cmp::Reverse(f))).expect("k >= 2");
        let vi = members[donor].pop().expect("donor has videos");
        members[empty].push(vi);
    }
    let mut fold_of = vec![0usize; items.len()];
    for (f, vs) in members.iter().enumerate() {
        for &vi in vs {
            for &i in &videos[vi].items {
                fold_of[i] = f;
            }
        }
    }
    Ok(fold_of)
}

/// Train on one fold's training indices and score its test indices.
pub trait FoldPipeline: Sync {
    fn score_fold(&self, train: &[usize], test: &[usize], seed: u64) -> Result<Vec<f64>, String>;
}

impl<F> FoldPipeline for F
where
    F: Fn(&[usize], &[usize], u64) -> Result<Vec<f64>, String> + Sync,
{
    fn score_fold(&self, train: &[usize], test: &[usize], seed: u64) -> Result<Vec<f64>, String> {
        self(train, test, seed)
    }
}

pub fn cross_validate(
    items: &[ItemKey],
    k: usize,
    pipeline: &dyn FoldPipeline,
    seed: u64,
    threshold: f64,
) -> Result<EvalReport, EvalError> {
    let fold_of = assign_folds(items, k, seed)?;
    let results: Vec<Result<FoldResult, EvalError>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..items.len()).partition(|&i| fold_of[i] == fold);
            let fold_seed = seed.wrapping_add(fold as u64);
            let scores = pipeline
                .score_fold(&train, &test, fold_seed)
                .map_err(|msg| EvalError::Pipeline { fold, msg })?;
            if scores.len() != test.len() {
                return Err(EvalError::Pipeline {
                    fold,
                    msg: format!("{} scores for {} test items", scores.len(), test.len()),
                });
            }
            let labels: Vec<Label> = test.iter().map(|&i| items[i].label).collect();
            let n_pos = labels.iter().filter(|l| l.is_at_risk()).count();
            let metrics = match Metrics::of(&scores, &labels, threshold) {
                Ok(m) => Some(m),
                Err(EvalError::SingleClass { .. }) => None,
                Err(e) => return Err(e),
            };
            let mut test_videos: Vec<String> = test.iter().map(|&i| items[i].video_id.clone()).collect();
            test_videos.sort();
            test_videos.dedup();
            Ok(FoldResult { fold, n_pos, n_neg: test.len() - n_pos, test_videos, metrics })
        })
        .collect();
    let folds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n_pos = items.iter().filter(|i| i.label.is_at_risk()).count();
    EvalReport::from_folds(threshold, n_pos, items.len() - n_pos, folds)
}
