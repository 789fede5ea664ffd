//! The ten cross-domain features for an ordered (source, target) pair.
//!
//! | feature | meaning |
//! |---|---|
//! | f1, f2 | shared unigrams over source / target vocabulary size |
//! | f3, f4 | labeled pairs in the source / target train split |
//! | f5, f6 | mean tokens per text in source / target |
//! | f7 | Rényi divergence `D_alpha(P_T ‖ P_S)` in bits |
//! | f8 | KL divergence `KL(P_T ‖ P_S)` in bits |
//! | f9 | perplexity of the source language model on target text |
//! | f10 | mean L1 distance between source and target word vectors of shared words |
//!
//! Divergences use unigram distributions smoothed with an additive
//! pseudo-count over the union vocabulary.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::corpus::{tokenize, unigram_stats, DomainCorpus, Split, UnigramStats};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ngram_lm::TrigramLm;

pub const FEATURE_NAMES: [&str; 10] = ["f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "f9", "f10"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
    pub f5: f64,
    pub f6: f64,
    pub f7: f64,
    pub f8: f64,
    pub f9: f64,
    pub f10: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 10] {
        [
            self.f1, self.f2, self.f3, self.f4, self.f5, self.f6, self.f7, self.f8, self.f9, self.f10,
        ]
    }

    pub fn from_array(a: [f64; 10]) -> Self {
        FeatureVector {
            f1: a[0],
            f2: a[1],
            f3: a[2],
            f4: a[3],
            f5: a[4],
            f6: a[5],
            f7: a[6],
            f8: a[7],
            f9: a[8],
            f10: a[9],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        let ok = a.iter().all(|x| x.is_finite())
            && (0.0..=1.0).contains(&self.f1)
            && (0.0..=1.0).contains(&self.f2)
            && self.f3 >= 1.0
            && self.f3.fract() == 0.0
            && self.f4 >= 1.0
            && self.f4.fract() == 0.0
            && self.f7 >= 0.0
            && self.f8 >= 0.0
            && self.f9 >= 1.0
            && self.f10 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("feature vector", format!("{a:?} violates feature ranges")))
        }
    }
}

/// `(f1, f2)`: shared vocabulary over source and target vocabulary sizes.
pub fn coverage(source: &UnigramStats, target: &UnigramStats) -> Result<(f64, f64)> {
    if source.counts.is_empty() || target.counts.is_empty() {
        return Err(Error::invalid("coverage", "empty unigram statistics"));
    }
    let shared = source.counts.keys().filter(|t| target.contains(t)).count() as f64;
    Ok((shared / source.vocab_size() as f64, shared / target.vocab_size() as f64))
}

/// A probability vector over an explicit, sorted support.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramDistribution {
    support: Vec<String>,
    probs: Vec<f64>,
}

impl UnigramDistribution {
    pub fn new(support: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() || support.is_empty() {
            return Err(Error::invalid("distribution", "support and probabilities must be non-empty and aligned"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("distribution", "probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("distribution", format!("probabilities sum to {total}")));
        }
        Ok(UnigramDistribution { support, probs })
    }

    /// Smooths both count tables onto the union of their vocabularies with an
    /// additive pseudo-count `eps`, returning `(P_source, P_target)`.
    pub fn smoothed_pair(source: &UnigramStats, target: &UnigramStats, eps: f64) -> Result<(Self, Self)> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid("smoothing", "pseudo-count must be positive"));
        }
        let support: Vec<String> = source
            .counts
            .keys()
            .chain(target.counts.keys())
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let dist = |stats: &UnigramStats| {
            let denom = stats.total_tokens as f64 + eps * support.len() as f64;
            let probs = support
                .iter()
                .map(|t| (*stats.counts.get(t).unwrap_or(&0) as f64 + eps) / denom)
                .collect();
            UnigramDistribution::new(support.clone(), probs)
        };
        Ok((dist(source)?, dist(target)?))
    }

    pub fn support(&self) -> &[String] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

fn aligned<'a>(p: &'a UnigramDistribution, q: &'a UnigramDistribution, what: &str) -> Result<()> {
    if p.support != q.support {
        return Err(Error::invalid(what, "distributions must share one support"));
    }
    if p.probs.iter().zip(&q.probs).any(|(a, b)| *a > 0.0 && *b <= 0.0) {
        return Err(Error::invalid(what, "q has zero mass where p does not (smooth first)"));
    }
    Ok(())
}

/// `KL(p ‖ q)` in bits.
pub fn kl_divergence(p: &UnigramDistribution, q: &UnigramDistribution) -> Result<f64> {
    aligned(p, q, "kl divergence")?;
    let kl: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).log2())
        .sum();
    Ok(kl.max(0.0))
}

/// Rényi divergence of order `alpha` in bits:
/// `log2(Σ p^alpha q^(1-alpha)) / (alpha - 1)`.
pub fn renyi_divergence(p: &UnigramDistribution, q: &UnigramDistribution, alpha: f64) -> Result<f64> {
    if alpha == 1.0 {
        return Err(Error::invalid("renyi divergence", "alpha = 1 is the KL divergence; use kl_divergence"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("renyi divergence", format!("alpha must be positive, got {alpha}")));
    }
    aligned(p, q, "renyi divergence")?;
    // Each term is written p * (q/p)^(1-alpha); dividing by Σp (which is 1
    // up to rounding) makes identical inputs give exactly zero.
    let mut sum = 0.0;
    let mut mass = 0.0;
    for (a, b) in p.probs.iter().zip(&q.probs) {
        if *a > 0.0 {
            sum += a * (b / a).powf(1.0 - alpha);
            mass += a;
        }
    }
    Ok(((sum / mass).log2() / (alpha - 1.0)).max(0.0))
}

/// Mean over `shared` of the L1 distance between the two tables' vectors.
pub fn word_vector_variance<'a, I>(source: &EmbeddingTable, target: &EmbeddingTable, shared: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a str>,
{
    if source.dim() != target.dim() {
        return Err(Error::invalid(
            "word vector variance",
            format!("dimension mismatch {} vs {}", source.dim(), target.dim()),
        ));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for tok in shared {
        let (a, b) = match (source.get(tok), target.get(tok)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::invalid(
                    "word vector variance",
                    format!("token {tok:?} missing from one of the tables"),
                ))
            }
        };
        total += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("word vector variance", "no shared tokens"));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub smoothing: f64,
    pub renyi_alpha: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            smoothing: 0.5,
            renyi_alpha: 0.99,
        }
    }
}

/// Per-domain inputs to feature extraction, all derived from the train split.
#[derive(Debug, Clone)]
pub struct DomainProfile<'a> {
    pub corpus: &'a DomainCorpus,
    pub stats: UnigramStats,
    pub embeddings: &'a EmbeddingTable,
    pub lm: &'a TrigramLm,
    pub tokenized_train: Vec<Vec<String>>,
}

impl<'a> DomainProfile<'a> {
    pub fn new(corpus: &'a DomainCorpus, embeddings: &'a EmbeddingTable, lm: &'a TrigramLm) -> Result<Self> {
        Ok(DomainProfile {
            stats: unigram_stats(corpus, Some(Split::Train))?,
            tokenized_train: corpus.texts(Some(Split::Train)).map(tokenize).collect(),
            corpus,
            embeddings,
            lm,
        })
    }
}

pub fn feature_vector(source: &DomainProfile<'_>, target: &DomainProfile<'_>, config: &FeatureConfig) -> Result<FeatureVector> {
    let (f1, f2) = coverage(&source.stats, &target.stats)?;
    let (p_s, p_t) = UnigramDistribution::smoothed_pair(&source.stats, &target.stats, config.smoothing)?;
    let f7 = renyi_divergence(&p_t, &p_s, config.renyi_alpha)?;
    let f8 = kl_divergence(&p_t, &p_s)?;
    let f9 = source.lm.perplexity_texts(&target.tokenized_train)?;
    let shared = source
        .stats
        .counts
        .keys()
        .filter(|t| target.stats.contains(t))
        .map(String::as_str)
        .filter(|t| source.embeddings.get(t).is_some() && target.embeddings.get(t).is_some());
    let f10 = word_vector_variance(source.embeddings, target.embeddings, shared)?;
    let fv = FeatureVector {
        f1,
        f2,
        f3: source.stats.example_count as f64,
        f4: target.stats.example_count as f64,
        f5: source.stats.avg_tokens_per_example,
        f6: target.stats.avg_tokens_per_example,
        f7,
        f8,
        f9,
        f10,
    };
    fv.validate()?;
    Ok(fv)
}

/// One row of the feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub source: String,
    pub target: String,
    pub features: FeatureVector,
}

/// CSV with header `source,target,f1,...,f10`; floats carry 17 significant
/// digits.
pub fn features_to_csv(rows: &[FeatureRow]) -> String {
    let mut out = String::from("source,target");
    for n in FEATURE_NAMES {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{}", r.source, r.target);
        for x in r.features.to_array() {
            let _ = write!(out, ",{x:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn features_from_csv(text: &str) -> Result<Vec<FeatureRow>> {
    const WHAT: &str = "feature csv";
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let expected = format!("source,target,{}", FEATURE_NAMES.join(","));
    match lines.next() {
        Some((_, h)) if h == expected => {}
        _ => return Err(Error::parse(WHAT, 1, format!("header must be {expected}"))),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::parse(WHAT, lineno, format!("expected 12 fields, found {}", fields.len())));
        }
        let mut a = [0.0; 10];
        for (slot, f) in a.iter_mut().zip(&fields[2..]) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(WHAT, lineno, format!("bad number {f:?}")))?;
        }
        rows.push(FeatureRow {
            source: fields[0].to_string(),
            target: fields[1].to_string(),
            features: FeatureVector::from_array(a),
        });
    }
    Ok(rows)
}
