//! Downstream text-pair classification and the cross-domain F1 matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{encode, AdaptModel, StoredMatrix, Variant};
use crate::error::{Error, Result};

/// `[a; b; |a-b|; a*b]`.
pub fn pair_input(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::invalid("pair_input", format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    let mut out = Vec::with_capacity(4 * a.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out.extend(a.iter().zip(b).map(|(x, y)| (x - y).abs()));
    out.extend(a.iter().zip(b).map(|(x, y)| x * y));
    Ok(out)
}

/// Sentence representations of one split: column `i` of `a` and `b` are the
/// two texts of example `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairData {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub labels: Vec<bool>,
}

impl PairData {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, labels: Vec<bool>) -> Result<Self> {
        if a.shape() != b.shape() || a.ncols() != labels.len() {
            return Err(Error::invalid("pair data", "a, b and labels disagree in shape"));
        }
        Ok(PairData { a, b, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn encoded(&self, model: &AdaptModel) -> Result<PairData> {
        Ok(PairData {
            a: encode(model, &self.a)?,
            b: encode(model, &self.b)?,
            labels: self.labels.clone(),
        })
    }

    /// Classifier inputs, one column per example.
    pub fn inputs(&self) -> DMatrix<f64> {
        let d = self.a.nrows();
        let mut x = DMatrix::zeros(4 * d, self.len());
        for j in 0..self.len() {
            for i in 0..d {
                let (p, q) = (self.a[(i, j)], self.b[(i, j)]);
                x[(i, j)] = p;
                x[(d + i, j)] = q;
                x[(2 * d + i, j)] = (p - q).abs();
                x[(3 * d + i, j)] = p * q;
            }
        }
        x
    }
}

/// F1 of the positive class; 0 when precision + recall is 0.
pub fn f1_score(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::invalid("f1_score", "predictions and labels must be non-empty and of equal length"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

pub fn accuracy(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::invalid("accuracy", "predictions and labels must be non-empty and of equal length"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: (usize, usize),
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: (128, 32),
            max_epochs: 50,
            patience: 5,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.0 == 0 || self.hidden.1 == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("classifier widths, batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("classifier learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub weights: StoredMatrix,
    pub biases: Vec<f64>,
}

/// Two tanh hidden layers and a sigmoid output over standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairClassifier {
    pub input_dim: usize,
    pub seed: u64,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub layers: [Dense; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Validation F1 before training (index 0) and after each epoch.
    pub val_f1: Vec<f64>,
    pub best_epoch: usize,
}

struct Net {
    w: [DMatrix<f64>; 3],
    b: [DVector<f64>; 3],
}

impl Net {
    fn forward(&self, x: &DMatrix<f64>) -> [DMatrix<f64>; 3] {
        let affine = |w: &DMatrix<f64>, b: &DVector<f64>, h: &DMatrix<f64>| {
            let mut z = w * h;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            z
        };
        let h1 = affine(&self.w[0], &self.b[0], x).map(f64::tanh);
        let h2 = affine(&self.w[1], &self.b[1], &h1).map(f64::tanh);
        let out = affine(&self.w[2], &self.b[2], &h2).map(|z| 1.0 / (1.0 + (-z).exp()));
        [h1, h2, out]
    }

    fn flat(&self) -> Vec<f64> {
        (0..3).flat_map(|k| self.w[k].iter().chain(self.b[k].iter()).copied().collect::<Vec<_>>()).collect()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for k in 0..3 {
            for v in self.w[k].iter_mut().chain(self.b[k].iter_mut()) {
                *v = it.next().expect("parameter count");
            }
        }
    }

    /// Gradient of mean binary cross-entropy.
    fn gradient(&self, x: &DMatrix<f64>, y: &[bool]) -> Vec<f64> {
        let [h1, h2, out] = self.forward(x);
        let n = y.len() as f64;
        let d3 = DMatrix::from_fn(1, y.len(), |_, j| (out[(0, j)] - if y[j] { 1.0 } else { 0.0 }) / n);
        let gw3 = &d3 * h2.transpose();
        let gb3 = d3.column_sum();
        let d2 = (self.w[2].transpose() * &d3).component_mul(&h2.map(|v| 1.0 - v * v));
        let gw2 = &d2 * h1.transpose();
        let gb2 = d2.column_sum();
        let d1 = (self.w[1].transpose() * &d2).component_mul(&h1.map(|v| 1.0 - v * v));
        let gw1 = &d1 * x.transpose();
        let gb1 = d1.column_sum();
        gw1.iter()
            .chain(gb1.iter())
            .chain(gw2.iter())
            .chain(gb2.iter())
            .chain(gw3.iter())
            .chain(gb3.iter())
            .copied()
            .collect()
    }

    fn predict(&self, x: &DMatrix<f64>) -> Vec<bool> {
        self.forward(x)[2].iter().map(|&p| p >= 0.5).collect()
    }
}

fn standardize(x: &DMatrix<f64>, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - mean[i]) / scale[i])
}

impl PairClassifier {
    pub fn train(train: &PairData, val: &PairData, config: &ClassifierConfig, seed: u64) -> Result<(Self, TrainingReport)> {
        config.validate()?;
        let pos = train.labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == train.len() {
            return Err(Error::invalid("train_pair_classifier", "training set must contain both labels"));
        }
        if val.is_empty() {
            return Err(Error::invalid("train_pair_classifier", "validation set is empty"));
        }
        if val.a.nrows() != train.a.nrows() {
            return Err(Error::invalid("train_pair_classifier", "train and validation dimensions differ"));
        }
        let raw = train.inputs();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("train_pair_classifier", "non-finite inputs"));
        }
        let dim = raw.nrows();
        let n = raw.ncols() as f64;
        let input_mean: Vec<f64> = raw.row_iter().map(|r| r.sum() / n).collect();
        let input_scale: Vec<f64> = raw
            .row_iter()
            .zip(&input_mean)
            .map(|(r, m)| {
                let sd = (r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let x = standardize(&raw, &input_mean, &input_scale);
        let xv = standardize(&val.inputs(), &input_mean, &input_scale);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [dim, config.hidden.0, config.hidden.1, 1];
        let mut init = |fan_out: usize, fan_in: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit))
        };
        let mut net = Net {
            w: [init(widths[1], widths[0]), init(widths[2], widths[1]), init(widths[3], widths[2])],
            b: [DVector::zeros(widths[1]), DVector::zeros(widths[2]), DVector::zeros(1)],
        };
        let mut params = net.flat();
        let mut m = vec![0.0; params.len()];
        let mut v = vec![0.0; params.len()];
        let mut t = 0i32;

        let mut val_f1 = vec![f1_score(&net.predict(&xv), &val.labels)?];
        let mut best = (val_f1[0], 0usize, params.clone());
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut stale = 0usize;
        for epoch in 1..=config.max_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let xb = x.select_columns(batch.iter());
                let yb: Vec<bool> = batch.iter().map(|&j| train.labels[j]).collect();
                let g = net.gradient(&xb, &yb);
                t += 1;
                let (c1, c2) = (1.0 - 0.9f64.powi(t), 1.0 - 0.999f64.powi(t));
                for i in 0..params.len() {
                    m[i] = 0.9 * m[i] + 0.1 * g[i];
                    v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                    params[i] -= config.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
                net.set_flat(&params);
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::numerical("train_pair_classifier", format!("parameters diverged at epoch {epoch}")));
            }
            let f1 = f1_score(&net.predict(&xv), &val.labels)?;
            val_f1.push(f1);
            if f1 > best.0 {
                best = (f1, epoch, params.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
        net.set_flat(&best.2);
        let dense = |k: usize| Dense {
            weights: StoredMatrix::from_dmatrix(&net.w[k]),
            biases: net.b[k].iter().copied().collect(),
        };
        let clf = PairClassifier {
            input_dim: dim,
            seed,
            input_mean,
            input_scale,
            layers: [dense(0), dense(1), dense(2)],
        };
        Ok((clf, TrainingReport { val_f1, best_epoch: best.1 }))
    }

    fn net(&self) -> Net {
        let w = |k: usize| self.layers[k].weights.to_dmatrix();
        let b = |k: usize| DVector::from_column_slice(&self.layers[k].biases);
        Net {
            w: [w(0), w(1), w(2)],
            b: [b(0), b(1), b(2)],
        }
    }

    /// Probability of the positive class for every example.
    pub fn predict_proba(&self, data: &PairData) -> Result<Vec<f64>> {
        let x = data.inputs();
        if x.nrows() != self.input_dim {
            return Err(Error::invalid(
                "pair classifier",
                format!("input has {} features, classifier expects {}", x.nrows(), self.input_dim),
            ));
        }
        let x = standardize(&x, &self.input_mean, &self.input_scale);
        Ok(self.net().forward(&x)[2].iter().copied().collect())
    }

    pub fn predict(&self, data: &PairData) -> Result<Vec<bool>> {
        Ok(self.predict_proba(data)?.into_iter().map(|p| p >= 0.5).collect())
    }

    pub fn f1_on(&self, data: &PairData) -> Result<f64> {
        f1_score(&self.predict(data)?, &data.labels)
    }
}

/// Per-split sentence representations of one domain.
#[derive(Debug, Clone)]
pub struct DomainSplits {
    pub name: String,
    pub train: PairData,
    pub val: PairData,
    pub test: PairData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Matrix {
    pub variant: Variant,
    pub domains: Vec<String>,
    pub seeds: Vec<u64>,
    /// `per_seed[k][s][t]`: F1 of the seed-k model trained on source `s`
    /// and evaluated on target `t`.
    pub per_seed: Vec<Vec<Vec<f64>>>,
    pub mean: Vec<Vec<f64>>,
}

impl F1Matrix {
    pub fn from_per_seed(variant: Variant, domains: Vec<String>, seeds: Vec<u64>, per_seed: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = domains.len();
        if per_seed.len() != seeds.len() || seeds.is_empty() {
            return Err(Error::invalid("F1 matrix", "one matrix per seed is required"));
        }
        for m in &per_seed {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return Err(Error::invalid("F1 matrix", "matrices must be square over the domain list"));
            }
            if m.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("F1 matrix", "entries must lie in [0, 1]"));
            }
        }
        let k = per_seed.len() as f64;
        let mean = (0..n)
            .map(|s| (0..n).map(|t| per_seed.iter().map(|m| m[s][t]).sum::<f64>() / k).collect())
            .collect();
        Ok(F1Matrix {
            variant,
            domains,
            seeds,
            per_seed,
            mean,
        })
    }

    pub fn index(&self, domain: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d == domain)
            .ok_or_else(|| Error::invalid("F1 matrix", format!("unknown domain {domain:?}")))
    }

    pub fn get(&self, source: &str, target: &str) -> Result<f64> {
        Ok(self.mean[self.index(source)?][self.index(target)?])
    }

    /// CSV with rows = source, columns = target.
    pub fn matrix_csv(domains: &[String], m: &[Vec<f64>]) -> String {
        let mut out = String::from("source");
        for d in domains {
            out.push(',');
            out.push_str(d);
        }
        out.push('\n');
        for (s, row) in domains.iter().zip(m) {
            out.push_str(s);
            for v in row {
                write!(out, ",{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_matrix_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse("F1 matrix csv", 1, "empty file"))?;
        let mut cols = header.split(',');
        if cols.next() != Some("source") {
            return Err(Error::parse("F1 matrix csv", 1, "header must start with `source`"));
        }
        let domains: Vec<String> = cols.map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let mut cells = line.split(',');
            let name = cells.next().unwrap_or_default();
            if rows.len() >= domains.len() || name != domains[rows.len()] {
                return Err(Error::parse("F1 matrix csv", i + 1, "row order must match the header"));
            }
            let row = cells
                .map(|c| c.parse::<f64>().map_err(|e| Error::parse("F1 matrix csv", i + 1, e.to_string())))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != domains.len() {
                return Err(Error::parse("F1 matrix csv", i + 1, "wrong number of cells"));
            }
            rows.push(row);
        }
        if rows.len() != domains.len() {
            return Err(Error::parse("F1 matrix csv", text.lines().count(), "matrix is not square"));
        }
        Ok((domains, rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixManifest {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub threshold: f64,
}

/// Builds the F1 matrix. Off-diagonal cells train on the source train split
/// (adapted for the pair when `variant` is not DT) and evaluate on the
/// target test split. The diagonal always holds in-domain F1 on the raw
/// representation, so every variant is normalized by the same in-domain
/// score.
pub fn cross_domain_matrix(
    domains: &[DomainSplits],
    variant: Variant,
    adapt_models: &BTreeMap<(String, String), AdaptModel>,
    seeds: &[u64],
    config: &ClassifierConfig,
) -> Result<F1Matrix> {
    if domains.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("cross_domain_matrix", "need at least one domain and one seed"));
    }
    let n = domains.len();
    // DT models are shared across targets: one per (source, seed).
    let dt_jobs: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..seeds.len()).map(move |k| (s, k))).collect();
    let dt_models: Vec<PairClassifier> = dt_jobs
        .par_iter()
        .map(|&(s, k)| {
            PairClassifier::train(&domains[s].train, &domains[s].val, config, seeds[k])
                .map(|r| r.0)
                .map_err(|e| stage_err(&domains[s].name, &domains[s].name, e))
        })
        .collect::<Result<_>>()?;
    let dt = |s: usize, k: usize| &dt_models[s * seeds.len() + k];

    let cells: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|s| (0..n).flat_map(move |t| (0..seeds.len()).map(move |k| (s, t, k))))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(s, t, k)| {
            let (src, tgt) = (&domains[s], &domains[t]);
            if s == t || variant == Variant::Dt {
                return dt(s, k).f1_on(&tgt.test).map_err(|e| stage_err(&src.name, &tgt.name, e));
            }
            let model = adapt_models.get(&(src.name.clone(), tgt.name.clone())).ok_or_else(|| {
                Error::MissingArtifact(format!("{variant} adapt model for pair {} -> {}", src.name, tgt.name))
            })?;
            let run = || -> Result<f64> {
                let (clf, _) = PairClassifier::train(&src.train.encoded(model)?, &src.val.encoded(model)?, config, seeds[k])?;
                clf.f1_on(&tgt.test.encoded(model)?)
            };
            run().map_err(|e| stage_err(&src.name, &tgt.name, e))
        })
        .collect::<Result<_>>()?;
    let per_seed = (0..seeds.len())
        .map(|k| {
            (0..n)
                .map(|s| (0..n).map(|t| values[(s * n + t) * seeds.len() + k]).collect())
                .collect()
        })
        .collect();
    F1Matrix::from_per_seed(variant, domains.iter().map(|d| d.name.clone()).collect(), seeds.to_vec(), per_seed)
}

fn stage_err(source: &str, target: &str, e: Error) -> Error {
    Error::Stage {
        stage: "downstream".into(),
        artifact: format!("{source}->{target}"),
        source: Box::new(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessLabels {
    pub threshold: f64,
    /// `F1_ST / F1_TT` for every ordered pair, including `S = T`.
    pub normalized: BTreeMap<(String, String), f64>,
    /// Success flags for `S != T`.
    pub success: BTreeMap<(String, String), bool>,
}

impl SuccessLabels {
    /// Mean normalized score over all pairs with `S != T`.
    pub fn mean_normalized(&self) -> f64 {
        let vals: Vec<f64> = self
            .normalized
            .iter()
            .filter(|((s, t), _)| s != t)
            .map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

pub fn success_labels(m: &F1Matrix, threshold: f64) -> Result<SuccessLabels> {
    let mut normalized = BTreeMap::new();
    let mut success = BTreeMap::new();
    for (t, tn) in m.domains.iter().enumerate() {
        let tt = m.mean[t][t];
        if !(tt > 0.0) {
            return Err(Error::numerical("success_labels", format!("in-domain F1 of {tn} is zero")));
        }
        for (s, sn) in m.domains.iter().enumerate() {
            let ratio = if s == t { 1.0 } else { m.mean[s][t] / tt };
            normalized.insert((sn.clone(), tn.clone()), ratio);
            if s != t {
                success.insert((sn.clone(), tn.clone()), ratio > threshold);
            }
        }
    }
    Ok(SuccessLabels {
        threshold,
        normalized,
        success,
    })
}
