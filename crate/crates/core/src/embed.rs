//! Skipgram word embeddings with negative sampling, and sentence
//! embeddings built from them (mean pooling) or loaded from a file.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::{tokenize, DomainCorpus, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    domain: String,
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(domain: impl Into<String>, dim: usize, vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding table", "dimension must be positive"));
        }
        for (tok, v) in &vectors {
            if v.len() != dim {
                return Err(Error::invalid(
                    "embedding table",
                    format!("vector for {tok:?} has length {}, expected {dim}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("embedding table", format!("vector for {tok:?} is not finite")));
            }
        }
        Ok(EmbeddingTable {
            domain: domain.into(),
            dim,
            vectors,
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.vectors.keys().map(String::as_str)
    }

    /// word2vec text format: `<vocab_size> <dim>` then `<token> <floats>`.
    pub fn to_word2vec(&self) -> String {
        let mut out = format!("{} {}\n", self.vectors.len(), self.dim);
        for (tok, v) in &self.vectors {
            out.push_str(tok);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_word2vec(domain: &str, text: &str) -> Result<Self> {
        const WHAT: &str = "word2vec table";
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| Error::parse(WHAT, 1, "empty file"))?;
        let mut h = header.split_whitespace();
        let (size, dim) = match (h.next(), h.next(), h.next()) {
            (Some(n), Some(d), None) => (
                n.parse::<usize>().map_err(|_| Error::parse(WHAT, 1, "bad vocabulary size"))?,
                d.parse::<usize>().map_err(|_| Error::parse(WHAT, 1, "bad dimension"))?,
            ),
            _ => return Err(Error::parse(WHAT, 1, "header must be `<vocab_size> <dim>`")),
        };
        if dim == 0 {
            return Err(Error::parse(WHAT, 1, "dimension must be positive"));
        }
        let mut vectors = BTreeMap::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let tok = parts.next().filter(|t| !t.is_empty()).ok_or_else(|| Error::parse(WHAT, lineno, "missing token"))?;
            let v: Vec<f64> = parts
                .map(|p| p.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::parse(WHAT, lineno, "components must be finite numbers"))?;
            if v.len() != dim {
                return Err(Error::parse(WHAT, lineno, format!("expected {dim} components, found {}", v.len())));
            }
            if vectors.insert(tok.to_string(), v).is_some() {
                return Err(Error::parse(WHAT, lineno, format!("duplicate token {tok:?}")));
            }
        }
        if vectors.len() != size {
            return Err(Error::parse(WHAT, 1, format!("header declares {size} vectors, found {}", vectors.len())));
        }
        EmbeddingTable::new(domain, dim, vectors)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            dim: 32,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr_start: 0.025,
            lr_end: 0.0001,
            seed: 1,
        }
    }
}

/// Initial input vector for a token depends only on (seed, token), so two
/// tables trained with the same seed start from the same coordinates for
/// every shared word.
fn init_vector(seed: u64, token: &str, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    let scale = 0.5 / dim as f64;
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Sgns {
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl Sgns {
    fn row(m: &[f64], dim: usize, i: usize) -> &[f64] {
        &m[i * dim..(i + 1) * dim]
    }

    fn pair_loss(&self, center: usize, target: usize, positive: bool) -> f64 {
        let s = dot(Self::row(&self.input, self.dim, center), Self::row(&self.output, self.dim, target));
        let p = if positive { sigmoid(s) } else { sigmoid(-s) };
        -p.max(1e-300).ln()
    }

    fn update(&mut self, center: usize, targets: &[(usize, bool)], lr: f64, grad: &mut [f64]) {
        let d = self.dim;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &(t, positive) in targets {
            let (ci, ti) = (center * d, t * d);
            let s = dot(&self.input[ci..ci + d], &self.output[ti..ti + d]);
            let g = (f64::from(u8::from(positive)) - sigmoid(s)) * lr;
            for j in 0..d {
                grad[j] += g * self.output[ti + j];
                self.output[ti + j] += g * self.input[ci + j];
            }
        }
        let ci = center * d;
        for j in 0..d {
            self.input[ci + j] += grad[j];
        }
    }
}

type Triple = (usize, usize, Vec<usize>);

/// Trains on tokenized sentences. Returns the table and the mean
/// negative-sampling loss on a fixed probe batch before training and after
/// every epoch.
pub fn train_skipgram_sentences(
    domain: &str,
    sentences: &[Vec<String>],
    config: &SkipgramConfig,
) -> Result<(EmbeddingTable, Vec<f64>)> {
    if config.dim == 0 || config.window == 0 || config.epochs == 0 {
        return Err(Error::invalid("skipgram config", "dim, window and epochs must be positive"));
    }
    if !(config.lr_start > 0.0 && config.lr_end >= 0.0 && config.lr_end <= config.lr_start) {
        return Err(Error::invalid("skipgram config", "need lr_start > 0 and 0 <= lr_end <= lr_start"));
    }
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for s in sentences {
        for t in s {
            *freq.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    if freq.len() < 2 {
        return Err(Error::invalid(
            "skipgram",
            format!("{domain}: need at least 2 distinct tokens, found {}", freq.len()),
        ));
    }
    let vocab: Vec<&str> = freq.keys().copied().collect();
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let weights: Vec<f64> = vocab.iter().map(|t| (freq[t] as f64).powf(0.75)).collect();
    let noise = WeightedIndex::new(&weights).map_err(|e| Error::numerical("skipgram", e.to_string()))?;
    let ids: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().map(|t| index[t.as_str()]).collect())
        .collect();

    let dim = config.dim;
    let mut model = Sgns {
        dim,
        input: vocab.iter().flat_map(|t| init_vector(config.seed, t, dim)).collect(),
        output: vec![0.0; vocab.len() * dim],
    };

    let mut probe_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_9e0be);
    let probe = probe_batch(&ids, config, &noise, &mut probe_rng);
    let probe_loss = |m: &Sgns| -> f64 {
        if probe.is_empty() {
            return 0.0;
        }
        let total: f64 = probe
            .iter()
            .map(|(c, o, negs)| m.pair_loss(*c, *o, true) + negs.iter().map(|n| m.pair_loss(*c, *n, false)).sum::<f64>())
            .sum();
        total / probe.len() as f64
    };
    let mut losses = vec![probe_loss(&model)];

    let total_steps = (config.epochs * ids.iter().map(Vec::len).sum::<usize>()).max(1) as f64;
    let mut step = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grad = vec![0.0; dim];
    let mut targets = Vec::with_capacity(config.negatives + 1);
    for _ in 0..config.epochs {
        for sent in &ids {
            for (i, &center) in sent.iter().enumerate() {
                let lr = config.lr_start - (config.lr_start - config.lr_end) * (step as f64 / total_steps);
                step += 1;
                let b = rng.random_range(1..=config.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(sent.len() - 1);
                for (j, &context) in sent.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    targets.clear();
                    targets.push((context, true));
                    for _ in 0..config.negatives {
                        let n = noise.sample(&mut rng);
                        if n != context {
                            targets.push((n, false));
                        }
                    }
                    model.update(center, &targets, lr, &mut grad);
                }
            }
        }
        losses.push(probe_loss(&model));
    }

    let vectors = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.to_string(), Sgns::row(&model.input, dim, i).to_vec()))
        .collect();
    Ok((EmbeddingTable::new(domain, dim, vectors)?, losses))
}

fn probe_batch(
    ids: &[Vec<usize>],
    config: &SkipgramConfig,
    noise: &WeightedIndex<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<Triple> {
    let usable: Vec<&Vec<usize>> = ids.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return Vec::new();
    }
    (0..512)
        .map(|_| {
            let s = usable[rng.random_range(0..usable.len())];
            let i = rng.random_range(0..s.len());
            let lo = i.saturating_sub(config.window);
            let hi = (i + config.window).min(s.len() - 1);
            let mut j = rng.random_range(lo..=hi);
            if j == i {
                j = if i > lo { i - 1 } else { i + 1 };
            }
            let negs = (0..config.negatives).map(|_| noise.sample(rng)).collect();
            (s[i], s[j], negs)
        })
        .collect()
}

/// Trains on the train split of `corpus`, one sentence per text.
pub fn train_skipgram(corpus: &DomainCorpus, config: &SkipgramConfig) -> Result<EmbeddingTable> {
    let sentences: Vec<Vec<String>> = corpus.texts(Some(Split::Train)).map(tokenize).collect();
    train_skipgram_sentences(corpus.name(), &sentences, config).map(|(t, _)| t)
}

/// Which text of a pair a sentence vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// Record key of a stored sentence vector: `<domain>/<split>/<index>/<a|b>`,
/// where `index` is the example's position in the corpus.
pub fn sentence_key(domain: &str, split: Split, index: usize, side: Side) -> String {
    let s = match side {
        Side::A => "a",
        Side::B => "b",
    };
    format!("{domain}/{split}/{index}/{s}")
}

#[derive(Debug, Clone)]
pub enum SentenceEmbeddingProvider {
    MeanPooled(EmbeddingTable),
    FileLoaded { dim: usize, vectors: HashMap<String, Vec<f64>> },
}

impl SentenceEmbeddingProvider {
    pub fn dim(&self) -> usize {
        match self {
            SentenceEmbeddingProvider::MeanPooled(t) => t.dim(),
            SentenceEmbeddingProvider::FileLoaded { dim, .. } => *dim,
        }
    }

    /// Embeds one text. Mean pooling ignores `key`; file lookup ignores `text`.
    pub fn embed(&self, key: &str, text: &str) -> Result<Vec<f64>> {
        match self {
            SentenceEmbeddingProvider::MeanPooled(table) => Ok(mean_pool(table, text)),
            SentenceEmbeddingProvider::FileLoaded { vectors, .. } => vectors
                .get(key)
                .cloned()
                .ok_or_else(|| Error::invalid("sentence vectors", format!("no vector stored for key {key:?}"))),
        }
    }

    /// Parses JSONL records `{"key": "...", "vec": [floats]}`.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        const WHAT: &str = "sentence vectors";
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Rec {
            key: String,
            vec: Vec<f64>,
        }
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Rec = serde_json::from_str(line).map_err(|e| Error::parse(WHAT, lineno, e.to_string()))?;
            if rec.vec.is_empty() || rec.vec.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse(WHAT, lineno, "vector must be non-empty and finite"));
            }
            match dim {
                None => dim = Some(rec.vec.len()),
                Some(d) if d != rec.vec.len() => {
                    return Err(Error::parse(WHAT, lineno, format!("expected {d} components, found {}", rec.vec.len())))
                }
                _ => {}
            }
            if vectors.insert(rec.key.clone(), rec.vec).is_some() {
                return Err(Error::parse(WHAT, lineno, format!("duplicate key {:?}", rec.key)));
            }
        }
        let dim = dim.ok_or_else(|| Error::parse(WHAT, 1, "no vectors"))?;
        Ok(SentenceEmbeddingProvider::FileLoaded { dim, vectors })
    }
}

/// Average of the word vectors of in-vocabulary tokens, zero if none. Tokens
/// are summed in sorted order so the result does not depend on word order.
pub fn mean_pool(table: &EmbeddingTable, text: &str) -> Vec<f64> {
    let mut toks = tokenize(text);
    toks.sort();
    let mut acc = vec![0.0; table.dim()];
    let mut n = 0usize;
    for t in &toks {
        if let Some(v) = table.get(t) {
            acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
            n += 1;
        }
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
    }

    fn sentences(spec: &[&str], repeat: usize) -> Vec<Vec<String>> {
        (0..repeat)
            .flat_map(|_| spec.iter().map(|s| s.split(' ').map(str::to_owned).collect()))
            .collect()
    }

    fn small_config(seed: u64) -> SkipgramConfig {
        SkipgramConfig { dim: 8, window: 2, epochs: 10, seed, ..Default::default() }
    }

    #[test]
    fn cooccurring_tokens_end_up_closer() {
        let sents = sentences(&["x y", "y x", "z w", "w z", "x y q", "z w r"], 60);
        let (t, _) = train_skipgram_sentences("d", &sents, &small_config(3)).unwrap();
        let (x, y, z) = (t.get("x").unwrap(), t.get("y").unwrap(), t.get("z").unwrap());
        assert!(cosine(x, y) > cosine(x, z), "{} vs {}", cosine(x, y), cosine(x, z));
    }

    #[test]
    fn shape_and_determinism() {
        let sents = sentences(&["a b c d", "b c e"], 10);
        let (t1, _) = train_skipgram_sentences("d", &sents, &small_config(5)).unwrap();
        let (t2, _) = train_skipgram_sentences("d", &sents, &small_config(5)).unwrap();
        assert_eq!(t1, t2);
        assert!(t1.tokens().all(|tok| t1.get(tok).unwrap().len() == 8));
        let (t3, _) = train_skipgram_sentences("d", &sents, &small_config(6)).unwrap();
        assert_ne!(t1, t3);
    }

    #[test]
    fn probe_loss_decreases() {
        let sents = sentences(&["the cat sat on the mat", "a dog ran to the park", "the cat ran"], 20);
        assert!(sents.iter().map(Vec::len).sum::<usize>() >= 100);
        let (_, losses) = train_skipgram_sentences("d", &sents, &small_config(1)).unwrap();
        assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
    }

    #[test]
    fn vocab_too_small() {
        let sents = sentences(&["a a a"], 3);
        assert!(train_skipgram_sentences("d", &sents, &small_config(1)).is_err());
    }

    #[test]
    fn shared_tokens_share_initial_vectors() {
        assert_eq!(init_vector(4, "tok", 6), init_vector(4, "tok", 6));
        assert_ne!(init_vector(4, "tok", 6), init_vector(5, "tok", 6));
    }

    fn table() -> EmbeddingTable {
        let vectors = [("a", vec![1.0, 2.0]), ("b", vec![-0.5, 0.25])]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        EmbeddingTable::new("d", 2, vectors).unwrap()
    }

    #[test]
    fn mean_pooling_cases() {
        let t = table();
        assert_eq!(mean_pool(&t, "a a"), vec![1.0, 2.0]);
        assert_eq!(mean_pool(&t, "zzz qq"), vec![0.0, 0.0]);
        assert_eq!(mean_pool(&t, "a b zzz"), mean_pool(&t, "zzz b a"));
        assert_eq!(mean_pool(&t, "a b"), vec![0.25, 1.125]);
    }

    #[test]
    fn file_loaded_lookup() {
        let p = SentenceEmbeddingProvider::from_jsonl("{\"key\": \"d/train/0/a\", \"vec\": [0.5, -1.0]}\n").unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(p.embed("d/train/0/a", "ignored").unwrap(), vec![0.5, -1.0]);
        let err = p.embed("d/train/0/b", "x").unwrap_err().to_string();
        assert!(err.contains("d/train/0/b"), "{err}");
        assert!(SentenceEmbeddingProvider::from_jsonl("{\"key\": \"k\", \"vec\": [1]}\n{\"key\": \"j\", \"vec\": [1, 2]}").is_err());
    }

    #[test]
    fn word2vec_round_trip() {
        let t = table();
        let text = t.to_word2vec();
        assert!(text.starts_with("2 2\n"));
        assert_eq!(EmbeddingTable::from_word2vec("d", &text).unwrap(), t);
        assert!(EmbeddingTable::from_word2vec("d", "1 2\na 1.0\n").is_err());
        assert!(EmbeddingTable::from_word2vec("d", "2 1\na 1.0\n").is_err());
        assert!(EmbeddingTable::from_word2vec("d", "1 1\na NaN\n").is_err());
    }

    #[test]
    fn sentence_key_format() {
        assert_eq!(sentence_key("apple", Split::Test, 12, Side::B), "apple/test/12/b");
    }
}
