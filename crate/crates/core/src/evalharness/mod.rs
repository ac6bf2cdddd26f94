//! Downstream probes of a representation: neighborhood recommendation Hit@k,
//! 1-NN next-action accuracy, decision-tree probing and the majority baseline.

pub mod cart;

use std::collections::{BTreeMap, HashMap};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use cart::{DecisionTree, TreeParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("test set is empty")]
    EmptyTest,
    #[error("point {0:?} has no gold items")]
    MissingGold(String),
    #[error("point {0:?} must have exactly one gold action")]
    NotSingleton(String),
    #[error("vectors have mixed dimensions ({expected} vs {found})")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite vector for {0:?}")]
    NonFinite(String),
    #[error("probe needs at least two classes with {folds} examples each; found {classes}")]
    TooFewClasses { classes: usize, folds: usize },
    #[error("folds must be at least 2")]
    Folds,
    #[error("k values must be positive")]
    BadK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRepresentation {
    pub doc_id: String,
    pub vector: Vec<f64>,
    #[serde(default)]
    pub gold_items: Option<Vec<String>>,
    #[serde(default)]
    pub labels: Option<BTreeMap<String, String>>,
}

impl LabeledRepresentation {
    pub fn new(doc_id: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            doc_id: doc_id.into(),
            vector,
            gold_items: None,
            labels: None,
        }
    }

    pub fn with_gold(mut self, items: &[&str]) -> Self {
        self.gold_items = Some(items.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_label(mut self, scheme: &str, class: &str) -> Self {
        self.labels
            .get_or_insert_with(BTreeMap::new)
            .insert(scheme.to_string(), class.to_string());
        self
    }

    fn gold(&self) -> &[String] {
        self.gold_items.as_deref().unwrap_or(&[])
    }

    fn label(&self, scheme: &str) -> Option<&str> {
        self.labels.as_ref()?.get(scheme).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub config: BTreeMap<String, Value>,
}

impl EvalResult {
    fn new(task: &str) -> Self {
        Self {
            task: task.to_string(),
            metrics: BTreeMap::new(),
            config: BTreeMap::new(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Cosine,
    InnerProduct,
}

impl Similarity {
    fn name(self) -> &'static str {
        match self {
            Similarity::Cosine => "cosine",
            Similarity::InnerProduct => "inner_product",
        }
    }
}

fn check_vectors(sets: &[&[LabeledRepresentation]]) -> Result<(), EvalError> {
    let mut dim = None;
    for set in sets {
        for r in set.iter() {
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(EvalError::NonFinite(r.doc_id.clone()));
            }
            match dim {
                None => dim = Some(r.vector.len()),
                Some(d) if d != r.vector.len() => {
                    return Err(EvalError::Dimension {
                        expected: d,
                        found: r.vector.len(),
                    })
                }
                _ => {}
            }
        }
    }
    Ok(())
}

struct Index<'a> {
    train: &'a [LabeledRepresentation],
    norms: Vec<f64>,
    sim: Similarity,
}

impl<'a> Index<'a> {
    fn new(train: &'a [LabeledRepresentation], sim: Similarity) -> Self {
        let norms: Vec<f64> = train.iter().map(|r| norm(&r.vector)).collect();
        if sim == Similarity::Cosine && norms.contains(&0.0) {
            warn!("zero training vector under cosine similarity; treated as similarity 0");
        }
        Self { train, norms, sim }
    }

    fn similarity(&self, query: &[f64], qnorm: f64, i: usize) -> f64 {
        let d: f64 = query.iter().zip(&self.train[i].vector).map(|(a, b)| a * b).sum();
        match self.sim {
            Similarity::InnerProduct => d,
            Similarity::Cosine => {
                let den = qnorm * self.norms[i];
                if den == 0.0 {
                    0.0
                } else {
                    d / den
                }
            }
        }
    }

    /// Top `n` train indices by similarity, ties by doc_id.
    fn nearest(&self, query: &[f64], n: usize) -> Vec<usize> {
        let qnorm = norm(query);
        let mut scored: Vec<(f64, usize)> = (0..self.train.len())
            .map(|i| (self.similarity(query, qnorm, i), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            b.0.total_cmp(&a.0)
                .then_with(|| self.train[a.1].doc_id.cmp(&self.train[b.1].doc_id))
        };
        let n = n.min(scored.len());
        if n < scored.len() {
            scored.select_nth_unstable_by(n, cmp);
            scored.truncate(n);
        }
        scored.sort_by(cmp);
        scored.into_iter().map(|(_, i)| i).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Items ranked by frequency, ties by first occurrence.
fn rank_by_frequency<'a>(items: impl IntoIterator<Item = &'a String>) -> Vec<&'a String> {
    let mut counts: Vec<(&String, usize, usize)> = Vec::new();
    let mut pos: HashMap<&String, usize> = HashMap::new();
    for item in items {
        match pos.get(item) {
            Some(&p) => counts[p].1 += 1,
            None => {
                pos.insert(item, counts.len());
                let order = counts.len();
                counts.push((item, 1, order));
            }
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    counts.into_iter().map(|(item, _, _)| item).collect()
}

fn hit_rates(ranked: &[Vec<&String>], test: &[LabeledRepresentation], ks: &[usize]) -> BTreeMap<String, f64> {
    ks.iter()
        .map(|&k| {
            let hits = ranked
                .iter()
                .zip(test)
                .filter(|(list, t)| list.iter().take(k).any(|item| t.gold().contains(item)))
                .count();
            (format!("hit@{k}"), 100.0 * hits as f64 / test.len() as f64)
        })
        .collect()
}

/// Recommends the most frequent gold items among each test point's
/// `n_neighbors` nearest training points and reports Hit@k in percent.
pub fn hit_at_k_recommendation(
    train: &[LabeledRepresentation],
    test: &[LabeledRepresentation],
    n_neighbors: usize,
    ks: &[usize],
    sim: Similarity,
) -> Result<EvalResult, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyTrain);
    }
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    if ks.contains(&0) || n_neighbors == 0 {
        return Err(EvalError::BadK);
    }
    if let Some(t) = test.iter().find(|t| t.gold().is_empty()) {
        return Err(EvalError::MissingGold(t.doc_id.clone()));
    }
    check_vectors(&[train, test])?;
    let index = Index::new(train, sim);
    let ranked: Vec<Vec<&String>> = test
        .par_iter()
        .map(|t| {
            let nn = index.nearest(&t.vector, n_neighbors);
            rank_by_frequency(nn.iter().flat_map(|&i| train[i].gold()))
        })
        .collect();
    let mut result = EvalResult::new("recommendation");
    result.metrics = hit_rates(&ranked, test, ks);
    result.config.insert("n_neighbors".into(), n_neighbors.into());
    result.config.insert("ks".into(), ks.to_vec().into());
    result.config.insert("similarity".into(), sim.name().into());
    Ok(result)
}

fn singleton(r: &LabeledRepresentation) -> Result<&String, EvalError> {
    match r.gold() {
        [one] => Ok(one),
        _ => Err(EvalError::NotSingleton(r.doc_id.clone())),
    }
}

/// Percent of test points whose nearest training point's action equals the
/// test point's gold action.
pub fn next_action_accuracy(
    train: &[LabeledRepresentation],
    test: &[LabeledRepresentation],
    sim: Similarity,
) -> Result<EvalResult, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyTrain);
    }
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    for r in train.iter().chain(test) {
        singleton(r)?;
    }
    check_vectors(&[train, test])?;
    let index = Index::new(train, sim);
    let correct = test
        .par_iter()
        .filter(|t| {
            let nn = index.nearest(&t.vector, 1)[0];
            train[nn].gold()[0] == t.gold()[0]
        })
        .count();
    let mut result = EvalResult::new("next_action");
    result
        .metrics
        .insert("accuracy".into(), 100.0 * correct as f64 / test.len() as f64);
    result.config.insert("similarity".into(), sim.name().into());
    Ok(result)
}

/// Mean of per-class recalls, in percent, over classes present in `truth`.
pub fn balanced_accuracy(truth: &[usize], predicted: &[usize]) -> f64 {
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (t, p) in truth.iter().zip(predicted) {
        let e = per.entry(*t).or_default();
        e.1 += 1;
        if t == p {
            e.0 += 1;
        }
    }
    if per.is_empty() {
        return 0.0;
    }
    100.0 * per.values().map(|(c, n)| *c as f64 / *n as f64).sum::<f64>() / per.len() as f64
}

/// Assigns every example a fold so that each class is spread evenly: within a
/// class, seeded-shuffled members go to folds 0, 1, …, k−1, 0, …
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut out = vec![0; labels.len()];
    let mut offset = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            out[i] = (pos + offset) % folds;
        }
        offset += members.len();
    }
    out
}

/// Stratified k-fold decision-tree probe of one label scheme. Reports the
/// mean balanced accuracy over folds.
pub fn decision_tree_probe(
    reps: &[LabeledRepresentation],
    label_scheme: &str,
    folds: usize,
    seed: u64,
    params: &TreeParams,
) -> Result<EvalResult, EvalError> {
    if folds < 2 {
        return Err(EvalError::Folds);
    }
    check_vectors(&[reps])?;
    let labeled: Vec<(&LabeledRepresentation, &str)> = reps
        .iter()
        .filter_map(|r| r.label(label_scheme).map(|l| (r, l)))
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, l) in &labeled {
        *counts.entry(l).or_default() += 1;
    }
    let kept: Vec<&str> = counts
        .iter()
        .filter(|(class, n)| {
            if **n < folds {
                warn!("class {class:?} has {n} examples (< {folds} folds); dropped");
                false
            } else {
                true
            }
        })
        .map(|(c, _)| *c)
        .collect();
    if kept.len() < 2 {
        return Err(EvalError::TooFewClasses {
            classes: kept.len(),
            folds,
        });
    }
    let class_id: HashMap<&str, usize> = kept.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let (xs, ys): (Vec<&[f64]>, Vec<usize>) = labeled
        .iter()
        .filter_map(|(r, l)| class_id.get(l).map(|&c| (r.vector.as_slice(), c)))
        .unzip();
    let assignment = stratified_folds(&ys, folds, seed);
    let scores: Vec<f64> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..ys.len()).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..ys.len()).filter(|&i| assignment[i] == f).collect();
            let tx: Vec<&[f64]> = train.iter().map(|&i| xs[i]).collect();
            let ty: Vec<usize> = train.iter().map(|&i| ys[i]).collect();
            let tree = DecisionTree::fit(&tx, &ty, kept.len(), params);
            let truth: Vec<usize> = test.iter().map(|&i| ys[i]).collect();
            let pred: Vec<usize> = test.iter().map(|&i| tree.predict(xs[i])).collect();
            balanced_accuracy(&truth, &pred)
        })
        .collect();
    let mut result = EvalResult::new("probe");
    result
        .metrics
        .insert("balanced_accuracy".into(), scores.iter().sum::<f64>() / folds as f64);
    result.config.insert("label_scheme".into(), label_scheme.into());
    result.config.insert("folds".into(), folds.into());
    result.config.insert("seed".into(), seed.into());
    result.config.insert("max_depth".into(), params.max_depth.into());
    result
        .config
        .insert("min_samples_leaf".into(), params.min_samples_leaf.into());
    result.config.insert("criterion".into(), "gini".into());
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineTask {
    Recommendation { ks: Vec<usize> },
    NextAction,
    Probe { label_scheme: String },
}

/// Predicts the most frequent training outcome for every test point.
pub fn majority_baseline(
    train: &[LabeledRepresentation],
    test: &[LabeledRepresentation],
    task: &BaselineTask,
) -> Result<EvalResult, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyTrain);
    }
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let mut result = EvalResult::new(match task {
        BaselineTask::Recommendation { .. } => "recommendation_majority",
        BaselineTask::NextAction => "next_action_majority",
        BaselineTask::Probe { .. } => "probe_majority",
    });
    match task {
        BaselineTask::Recommendation { ks } => {
            if ks.contains(&0) {
                return Err(EvalError::BadK);
            }
            let ranked = rank_by_frequency(train.iter().flat_map(|r| r.gold()));
            let lists = vec![ranked; test.len()];
            result.metrics = hit_rates(&lists, test, ks);
            result.config.insert("ks".into(), ks.clone().into());
        }
        BaselineTask::NextAction => {
            let ranked = rank_by_frequency(train.iter().flat_map(|r| r.gold()));
            let top = ranked.first().ok_or(EvalError::EmptyTrain)?;
            let mut correct = 0;
            for t in test {
                if singleton(t)? == *top {
                    correct += 1;
                }
            }
            result
                .metrics
                .insert("accuracy".into(), 100.0 * correct as f64 / test.len() as f64);
        }
        BaselineTask::Probe { label_scheme } => {
            let train_labels: Vec<String> = train
                .iter()
                .filter_map(|r| r.label(label_scheme).map(str::to_string))
                .collect();
            let ranked = rank_by_frequency(train_labels.iter());
            let top = ranked.first().ok_or(EvalError::EmptyTrain)?;
            let mut classes: BTreeMap<&str, usize> = BTreeMap::new();
            let mut truth = Vec::new();
            let mut pred = Vec::new();
            for t in test.iter() {
                if let Some(l) = t.label(label_scheme) {
                    let n = classes.len();
                    let id = *classes.entry(l).or_insert(n);
                    truth.push(id);
                    pred.push(if l == top.as_str() { id } else { usize::MAX });
                }
            }
            if truth.is_empty() {
                return Err(EvalError::EmptyTest);
            }
            result
                .metrics
                .insert("balanced_accuracy".into(), balanced_accuracy(&truth, &pred));
            result.config.insert("label_scheme".into(), label_scheme.clone().into());
        }
    }
    Ok(result)
}
