//! Meta-models over cross-domain features: a success predictor and a
//! pairwise domain ranker, both backed by gradient-boosted trees.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::downstream::{accuracy, f1_score, F1Matrix};
use crate::error::{Error, Result};
use crate::simfeat::{FeatureVector, FEATURE_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    /// Folds used to choose the tree count; 0 or 1 disables the search.
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            trees: 200,
            depth: 3,
            learning_rate: 0.1,
            lambda: 1.0,
            min_child_weight: 1.0,
            cv_folds: 5,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 || self.depth == 0 {
            return Err(Error::Config("gbdt trees and depth must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.lambda >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(Error::Config("gbdt learning_rate must be positive; lambda and min_child_weight non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtModel {
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GbdtModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| self.learning_rate * t.predict(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }

    /// Gain-based importances normalized to sum 1; all zero when no tree
    /// has a split.
    pub fn feature_importance(&self) -> BTreeMap<String, f64> {
        let mut gains = vec![0.0; self.feature_names.len()];
        for tree in &self.trees {
            for node in &tree.nodes {
                if let Node::Split { feature, gain, .. } = node {
                    gains[*feature] += gain;
                }
            }
        }
        let total: f64 = gains.iter().sum();
        self.feature_names
            .iter()
            .zip(gains)
            .map(|(n, g)| (n.clone(), if total > 0.0 { g / total } else { 0.0 }))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gbdt model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: GbdtModel = serde_json::from_str(text).map_err(|e| Error::parse("gbdt model", e.line(), e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("gbdt model", m));
        if !self.base_score.is_finite() || !self.learning_rate.is_finite() {
            return bad("non-finite base score or learning rate".into());
        }
        for (k, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return bad(format!("tree {k} is empty"));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                match node {
                    // Children must come later so prediction always terminates.
                    Node::Split { feature, threshold, gain, left, right } => {
                        if *feature >= self.feature_names.len()
                            || *left <= i
                            || *right <= i
                            || *left >= tree.nodes.len()
                            || *right >= tree.nodes.len()
                            || threshold.is_nan()
                            || !gain.is_finite()
                        {
                            return bad(format!("tree {k} node {i} is malformed"));
                        }
                    }
                    Node::Leaf { value } if !value.is_finite() => return bad(format!("tree {k} node {i} has a non-finite leaf")),
                    Node::Leaf { .. } => {}
                }
            }
        }
        Ok(())
    }
}

fn check_training_data(x: &[Vec<f64>], y: &[bool], names: &[String]) -> Result<()> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("gbdt_train", "need at least 2 rows with one label each"));
    }
    if x.iter().any(|r| r.len() != names.len()) {
        return Err(Error::invalid("gbdt_train", "row width does not match feature names"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("gbdt_train", "features must be finite"));
    }
    let pos = y.iter().filter(|&&l| l).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::invalid("gbdt_train", "training labels contain a single class"));
    }
    Ok(())
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    g: &'a [f64],
    h: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&i| self.g[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.h[i]).sum();
        -g / (h + self.params.lambda)
    }

    /// Best `(feature, threshold, gain)`; ties keep the first candidate in
    /// (feature, threshold) order.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64, f64)> {
        let lambda = self.params.lambda;
        let gt: f64 = rows.iter().map(|&i| self.g[i]).sum();
        let ht: f64 = rows.iter().map(|&i| self.h[i]).sum();
        let parent = gt * gt / (ht + lambda);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = rows.to_vec();
        for f in 0..self.x[0].len() {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in 0..sorted.len() - 1 {
                let i = sorted[w];
                gl += self.g[i];
                hl += self.h[i];
                let here = self.x[i][f];
                if here == self.x[sorted[w + 1]][f] {
                    continue;
                }
                let (gr, hr) = (gt - gl, ht - hl);
                if hl < self.params.min_child_weight || hr < self.params.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, here, gain));
                }
            }
        }
        best
    }

    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: self.leaf_value(rows) });
        if depth == 0 || rows.len() < 2 {
            return id;
        }
        if let Some((feature, threshold, gain)) = self.best_split(rows) {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
            let left = self.build(&l, depth - 1);
            let right = self.build(&r, depth - 1);
            self.nodes[id] = Node::Split { feature, threshold, gain, left, right };
        }
        id
    }
}

/// Boosts exactly `params.trees` trees on logistic loss.
fn boost(x: &[Vec<f64>], y: &[bool], names: &[String], params: &GbdtParams, mut on_tree: impl FnMut(&GbdtModel)) -> GbdtModel {
    let pos = y.iter().filter(|&&l| l).count() as f64;
    let base_score = (pos / (y.len() as f64 - pos)).ln();
    let mut model = GbdtModel {
        feature_names: names.to_vec(),
        base_score,
        learning_rate: params.learning_rate,
        trees: Vec::with_capacity(params.trees),
    };
    let mut margin = vec![base_score; x.len()];
    let rows: Vec<usize> = (0..x.len()).collect();
    for _ in 0..params.trees {
        let p: Vec<f64> = margin.iter().map(|&m| sigmoid(m)).collect();
        let g: Vec<f64> = p.iter().zip(y).map(|(p, &l)| p - if l { 1.0 } else { 0.0 }).collect();
        let h: Vec<f64> = p.iter().map(|p| (p * (1.0 - p)).max(1e-16)).collect();
        let mut builder = TreeBuilder { x, g: &g, h: &h, params, nodes: Vec::new() };
        builder.build(&rows, params.depth);
        let tree = Tree { nodes: builder.nodes };
        for (m, row) in margin.iter_mut().zip(x) {
            *m += params.learning_rate * tree.predict(row);
        }
        model.trees.push(tree);
        on_tree(&model);
    }
    model
}

/// Stratified fold assignment, seeded.
fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for (r, i) in idx.into_iter().enumerate() {
            fold[i] = r % k;
        }
    }
    fold
}

fn log_loss(model: &GbdtModel, x: &[Vec<f64>], y: &[bool]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(r, &l)| {
            let p = model.predict_proba(r).clamp(1e-15, 1.0 - 1e-15);
            -(if l { p.ln() } else { (1.0 - p).ln() })
        })
        .sum()
}

/// Gradient boosting on logistic loss with exact greedy splits. When
/// `params.cv_folds >= 2` the tree count is chosen by stratified k-fold
/// cross-validated log loss (folds capped by the minority class count) and
/// the final model is refit on all rows.
pub fn gbdt_train(x: &[Vec<f64>], y: &[bool], feature_names: &[String], params: &GbdtParams) -> Result<GbdtModel> {
    params.validate()?;
    check_training_data(x, y, feature_names)?;
    let minority = y.iter().filter(|&&l| l).count().min(y.iter().filter(|&&l| !l).count());
    let k = params.cv_folds.min(minority);
    let mut chosen = params.trees;
    if k >= 2 {
        let folds = stratified_folds(y, k, params.seed);
        let mut loss = vec![0.0; params.trees];
        for f in 0..k {
            let (mut xtr, mut ytr, mut xva, mut yva) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..x.len() {
                if folds[i] == f {
                    xva.push(x[i].clone());
                    yva.push(y[i]);
                } else {
                    xtr.push(x[i].clone());
                    ytr.push(y[i]);
                }
            }
            let mut t = 0;
            boost(&xtr, &ytr, feature_names, params, |m| {
                loss[t] += log_loss(m, &xva, &yva);
                t += 1;
            });
        }
        chosen = 1 + (0..params.trees).fold(0, |b, t| if loss[t] < loss[b] { t } else { b });
    }
    let fit = GbdtParams { trees: chosen, ..params.clone() };
    Ok(boost(x, y, feature_names, &fit, |_| {}))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotoSplit<K> {
    pub target: String,
    pub train: Vec<K>,
    pub test: Vec<K>,
}

/// Ordered `(source, target)` pair.
pub type PairKey = (String, String);

/// Ranker key: target and the canonical pair `s1 < s2`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RankerKey {
    pub target: String,
    pub s1: String,
    pub s2: String,
}

fn sorted_domains(domains: &[String]) -> Result<Vec<String>> {
    let mut d = domains.to_vec();
    d.sort();
    d.dedup();
    if d.len() != domains.len() {
        return Err(Error::invalid("loto_splits", "duplicate domain names"));
    }
    if d.len() < 3 {
        return Err(Error::invalid("loto_splits", "need at least 3 domains"));
    }
    Ok(d)
}

/// Leave-one-target-out splits over ordered pairs with `S != T`.
pub fn loto_splits(domains: &[String]) -> Result<Vec<LotoSplit<PairKey>>> {
    let d = sorted_domains(domains)?;
    let pairs: Vec<PairKey> = d
        .iter()
        .flat_map(|t| d.iter().filter(move |s| *s != t).map(move |s| (s.clone(), t.clone())))
        .collect();
    Ok(d.iter()
        .map(|target| {
            let (test, train) = pairs.iter().cloned().partition(|(_, t)| t == target);
            LotoSplit { target: target.clone(), train, test }
        })
        .collect())
}

/// Leave-one-target-out splits over ranker keys.
pub fn loto_ranker_splits(domains: &[String]) -> Result<Vec<LotoSplit<RankerKey>>> {
    let d = sorted_domains(domains)?;
    let mut keys = Vec::new();
    for t in &d {
        let cands: Vec<&String> = d.iter().filter(|s| *s != t).collect();
        for (i, s1) in cands.iter().enumerate() {
            for s2 in &cands[i + 1..] {
                keys.push(RankerKey {
                    target: t.clone(),
                    s1: (*s1).clone(),
                    s2: (*s2).clone(),
                });
            }
        }
    }
    Ok(d.iter()
        .map(|target| {
            let (test, train) = keys.iter().cloned().partition(|k| &k.target == target);
            LotoSplit { target: target.clone(), train, test }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ordering {
    pub target: String,
    pub ranked_sources: Vec<String>,
    /// Predicted probability (predictor) or mean sort position (ranker).
    pub scores: Vec<f64>,
}

pub fn orderings_to_csv(orderings: &[Ordering]) -> String {
    let mut out = String::from("target,rank,source,score\n");
    for o in orderings {
        for (r, (s, v)) in o.ranked_sources.iter().zip(&o.scores).enumerate() {
            writeln!(out, "{},{},{},{:.16e}", o.target, r + 1, s, v).unwrap();
        }
    }
    out
}

pub fn orderings_from_csv(text: &str) -> Result<Vec<Ordering>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "target,rank,source,score")) => {}
        _ => return Err(Error::parse("orderings csv", 1, "expected header target,rank,source,score")),
    }
    let mut out: Vec<Ordering> = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let bad = |m: &str| Error::parse("orderings csv", i + 1, m.to_string());
        if cells.len() != 4 {
            return Err(bad("expected 4 cells"));
        }
        let rank: usize = cells[1].parse().map_err(|_| bad("bad rank"))?;
        let score: f64 = cells[3].parse().map_err(|_| bad("bad score"))?;
        if out.last().is_none_or(|o| o.target != cells[0]) {
            out.push(Ordering {
                target: cells[0].to_string(),
                ranked_sources: Vec::new(),
                scores: Vec::new(),
            });
        }
        let o = out.last_mut().unwrap();
        if rank != o.ranked_sources.len() + 1 {
            return Err(bad("ranks must be consecutive from 1"));
        }
        o.ranked_sources.push(cells[2].to_string());
        o.scores.push(score);
    }
    Ok(out)
}

fn quicksort<T: Clone>(items: Vec<T>, less: &mut impl FnMut(&T, &T) -> bool) -> Vec<T> {
    if items.len() <= 1 {
        return items;
    }
    let mut it = items.into_iter();
    let pivot = it.next().unwrap();
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for x in it {
        if less(&x, &pivot) {
            lo.push(x);
        } else {
            hi.push(x);
        }
    }
    let mut out = quicksort(lo, less);
    out.push(pivot);
    out.extend(quicksort(hi, less));
    out
}

/// Rank aggregation by repeated quicksort on shuffled copies with a
/// possibly noisy comparator. Items are ranked by mean position (ascending),
/// ties broken by their natural order. Returns `(item, mean position)`.
pub fn multi_sort<T: Clone + Ord>(
    items: &[T],
    mut less: impl FnMut(&T, &T) -> bool,
    repeats: usize,
    seed: u64,
) -> Result<Vec<(T, f64)>> {
    if repeats == 0 {
        return Err(Error::invalid("multi_sort", "repeats must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums: BTreeMap<T, usize> = items.iter().map(|i| (i.clone(), 0)).collect();
    for _ in 0..repeats {
        let mut copy = items.to_vec();
        copy.shuffle(&mut rng);
        for (pos, item) in quicksort(copy, &mut less).into_iter().enumerate() {
            *sums.get_mut(&item).unwrap() += pos;
        }
    }
    let mut ranked: Vec<(T, f64)> = sums.into_iter().map(|(k, v)| (k, v as f64 / repeats as f64)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Held-out results of one leave-one-target-out split.
#[derive(Debug, Clone)]
pub struct MetaOutcome {
    pub model: GbdtModel,
    pub ordering: Ordering,
    /// F1 and accuracy of the meta-classifier on the split's test rows.
    pub f1: f64,
    pub accuracy: f64,
}

pub fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

fn lookup<'a, V>(map: &'a BTreeMap<PairKey, V>, s: &str, t: &str, what: &str) -> Result<&'a V> {
    map.get(&(s.to_string(), t.to_string()))
        .ok_or_else(|| Error::MissingArtifact(format!("{what} for pair {s} -> {t}")))
}

/// Trains on the split's train pairs and orders the held-out target's
/// sources by predicted success probability (descending, ties by name).
pub fn success_predictor(
    features: &BTreeMap<PairKey, FeatureVector>,
    labels: &BTreeMap<PairKey, bool>,
    split: &LotoSplit<PairKey>,
    params: &GbdtParams,
) -> Result<MetaOutcome> {
    let rows = |keys: &[PairKey]| -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
        let mut x = Vec::with_capacity(keys.len());
        let mut y = Vec::with_capacity(keys.len());
        for (s, t) in keys {
            x.push(lookup(features, s, t, "feature vector")?.to_array().to_vec());
            y.push(*lookup(labels, s, t, "success label")?);
        }
        Ok((x, y))
    };
    let (xtr, ytr) = rows(&split.train)?;
    let model = gbdt_train(&xtr, &ytr, &feature_names(), params)?;
    let (xte, yte) = rows(&split.test)?;
    let probs: Vec<f64> = xte.iter().map(|r| model.predict_proba(r)).collect();
    let preds: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
    let mut scored: Vec<(String, f64)> = split.test.iter().map(|(s, _)| s.clone()).zip(probs).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(MetaOutcome {
        f1: f1_score(&preds, &yte)?,
        accuracy: accuracy(&preds, &yte)?,
        ordering: Ordering {
            target: split.target.clone(),
            ranked_sources: scored.iter().map(|p| p.0.clone()).collect(),
            scores: scored.iter().map(|p| p.1).collect(),
        },
        model,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerSample {
    pub key: RankerKey,
    /// `F^{S1 T}` followed by `F^{S2 T}`.
    pub features: Vec<f64>,
    /// `F1_{S1 T} >= F1_{S2 T}`.
    pub label: bool,
}

pub fn ranker_feature_names() -> Vec<String> {
    FEATURE_NAMES
        .iter()
        .map(|f| format!("s1_{f}"))
        .chain(FEATURE_NAMES.iter().map(|f| format!("s2_{f}")))
        .collect()
}

fn ranker_features(features: &BTreeMap<PairKey, FeatureVector>, key: &RankerKey) -> Result<Vec<f64>> {
    let mut f = lookup(features, &key.s1, &key.target, "feature vector")?.to_array().to_vec();
    f.extend(lookup(features, &key.s2, &key.target, "feature vector")?.to_array());
    Ok(f)
}

pub fn ranker_samples(features: &BTreeMap<PairKey, FeatureVector>, matrix: &F1Matrix, keys: &[RankerKey]) -> Result<Vec<RankerSample>> {
    keys.iter()
        .map(|key| {
            if key.s1 >= key.s2 {
                return Err(Error::invalid("ranker sample", "pair must satisfy s1 < s2"));
            }
            Ok(RankerSample {
                features: ranker_features(features, key)?,
                label: matrix.get(&key.s1, &key.target)? >= matrix.get(&key.s2, &key.target)?,
                key: key.clone(),
            })
        })
        .collect()
}

/// Trains the pairwise preference model on the split's train keys and orders
/// the held-out target's sources with [`multi_sort`], using the model's
/// preference as the comparator.
pub fn domain_ranker(
    features: &BTreeMap<PairKey, FeatureVector>,
    matrix: &F1Matrix,
    split: &LotoSplit<RankerKey>,
    params: &GbdtParams,
    repeats: usize,
) -> Result<MetaOutcome> {
    let train = ranker_samples(features, matrix, &split.train)?;
    let x: Vec<Vec<f64>> = train.iter().map(|s| s.features.clone()).collect();
    let y: Vec<bool> = train.iter().map(|s| s.label).collect();
    let model = gbdt_train(&x, &y, &ranker_feature_names(), params)?;

    let test = ranker_samples(features, matrix, &split.test)?;
    let mut prefer: BTreeMap<(String, String), bool> = BTreeMap::new();
    let mut preds = Vec::with_capacity(test.len());
    for s in &test {
        let first = model.predict_proba(&s.features) >= 0.5;
        preds.push(first);
        prefer.insert((s.key.s1.clone(), s.key.s2.clone()), first);
    }
    let labels: Vec<bool> = test.iter().map(|s| s.label).collect();
    let mut sources: Vec<String> = split.test.iter().flat_map(|k| [k.s1.clone(), k.s2.clone()]).collect();
    sources.sort();
    sources.dedup();
    let less = |a: &String, b: &String| {
        if a < b {
            prefer[&(a.clone(), b.clone())]
        } else {
            !prefer[&(b.clone(), a.clone())]
        }
    };
    let ranked = multi_sort(&sources, less, repeats, params.seed)?;
    Ok(MetaOutcome {
        f1: f1_score(&preds, &labels)?,
        accuracy: accuracy(&preds, &labels)?,
        ordering: Ordering {
            target: split.target.clone(),
            ranked_sources: ranked.iter().map(|r| r.0.clone()).collect(),
            scores: ranked.iter().map(|r| r.1).collect(),
        },
        model,
    })
}
