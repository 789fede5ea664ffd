//! Interpolated Kneser-Ney trigram language model.
//!
//! Each text is padded as `<s> <s> w1 .. wn </s>`. The highest order uses
//! raw trigram counts, the bigram order uses continuation counts
//! `N1+(. v w)`, and the unigram order uses `N1+(. w)` interpolated with a
//! uniform distribution over the predictable vocabulary (everything except
//! `<s>`). A single absolute discount is applied at every order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::corpus::{tokenize, DomainCorpus, Split};
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

const HEADER_PREFIX: &str = "kn-trigram";

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnConfig {
    pub discount: f64,
    pub min_count: u64,
}

impl Default for KnConfig {
    fn default() -> Self {
        KnConfig {
            discount: 0.75,
            min_count: 1,
        }
    }
}

type Id = u32;

#[derive(Debug, Clone, Copy, Default)]
struct Context {
    total: u64,
    distinct: u64,
}

#[derive(Debug, Clone)]
pub struct TrigramLm {
    discount: f64,
    /// Sorted vocabulary; a token's id is its index.
    vocab: Vec<String>,
    ids: HashMap<String, Id>,
    unk: Id,
    bos: Id,
    eos: Id,
    trigrams: HashMap<(Id, Id, Id), u64>,
    bigrams: HashMap<(Id, Id), u64>,
    unigrams: HashMap<Id, u64>,
    ctx3: HashMap<(Id, Id), Context>,
    cont2: HashMap<(Id, Id), u64>,
    ctx2: HashMap<Id, Context>,
    cont1: HashMap<Id, u64>,
    ctx1: Context,
}

impl TrigramLm {
    /// Trains on pre-tokenized texts.
    pub fn train<I, T>(texts: I, config: KnConfig) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[String]>,
    {
        check_discount(config.discount)?;
        let texts: Vec<T> = texts.into_iter().collect();
        if texts.iter().all(|t| t.as_ref().is_empty()) {
            return Err(Error::invalid("language model", "no training tokens"));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for t in &texts {
            for tok in t.as_ref() {
                *freq.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut vocab: BTreeSet<String> = freq
            .iter()
            .filter(|(_, &c)| c >= config.min_count)
            .map(|(t, _)| t.to_string())
            .collect();
        for r in [UNK, BOS, EOS] {
            vocab.insert(r.to_string());
        }
        let mut lm = Self::empty(config.discount, vocab.into_iter().collect())?;
        let mut trigrams = HashMap::new();
        for t in &texts {
            let toks = t.as_ref();
            if toks.is_empty() {
                continue;
            }
            let seq = lm.padded_ids(toks.iter().map(String::as_str));
            for w in seq.windows(3) {
                *trigrams.entry((w[0], w[1], w[2])).or_insert(0) += 1;
            }
        }
        lm.set_trigrams(trigrams);
        Ok(lm)
    }

    fn empty(discount: f64, vocab: Vec<String>) -> Result<Self> {
        let ids: HashMap<String, Id> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as Id))
            .collect();
        let get = |t: &str| {
            ids.get(t)
                .copied()
                .ok_or_else(|| Error::invalid("language model", format!("vocabulary lacks {t}")))
        };
        let (unk, bos, eos) = (get(UNK)?, get(BOS)?, get(EOS)?);
        Ok(TrigramLm {
            discount,
            vocab,
            ids,
            unk,
            bos,
            eos,
            trigrams: HashMap::new(),
            bigrams: HashMap::new(),
            unigrams: HashMap::new(),
            ctx3: HashMap::new(),
            cont2: HashMap::new(),
            ctx2: HashMap::new(),
            cont1: HashMap::new(),
            ctx1: Context::default(),
        })
    }

    fn set_trigrams(&mut self, trigrams: HashMap<(Id, Id, Id), u64>) {
        let mut bigrams = HashMap::new();
        let mut unigrams = HashMap::new();
        let mut ctx3: HashMap<(Id, Id), Context> = HashMap::new();
        let mut cont2: HashMap<(Id, Id), u64> = HashMap::new();
        for (&(u, v, w), &c) in &trigrams {
            *bigrams.entry((v, w)).or_insert(0) += c;
            *unigrams.entry(w).or_insert(0) += c;
            let ctx = ctx3.entry((u, v)).or_default();
            ctx.total += c;
            ctx.distinct += 1;
            *cont2.entry((v, w)).or_insert(0) += 1;
        }
        let mut ctx2: HashMap<Id, Context> = HashMap::new();
        let mut cont1: HashMap<Id, u64> = HashMap::new();
        for (&(v, w), &n) in &cont2 {
            let ctx = ctx2.entry(v).or_default();
            ctx.total += n;
            ctx.distinct += 1;
            *cont1.entry(w).or_insert(0) += 1;
        }
        let ctx1 = Context {
            total: cont1.values().sum(),
            distinct: cont1.len() as u64,
        };
        self.trigrams = trigrams;
        self.bigrams = bigrams;
        self.unigrams = unigrams;
        self.ctx3 = ctx3;
        self.cont2 = cont2;
        self.ctx2 = ctx2;
        self.cont1 = cont1;
        self.ctx1 = ctx1;
    }

    fn id(&self, token: &str) -> Id {
        self.ids.get(token).copied().unwrap_or(self.unk)
    }

    fn padded_ids<'a>(&self, tokens: impl Iterator<Item = &'a str>) -> Vec<Id> {
        let mut seq = vec![self.bos, self.bos];
        seq.extend(tokens.map(|t| self.id(t)));
        seq.push(self.eos);
        seq
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Tokens the model can emit: the vocabulary minus `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = &str> + '_ {
        self.vocab.iter().map(String::as_str).filter(|t| *t != BOS)
    }

    fn predictable_count(&self) -> usize {
        self.vocab.len() - 1
    }

    fn p_unigram(&self, w: Id) -> f64 {
        let uniform = 1.0 / self.predictable_count() as f64;
        let ctx = self.ctx1;
        if ctx.total == 0 {
            return uniform;
        }
        let c = self.cont1.get(&w).copied().unwrap_or(0) as f64;
        ((c - self.discount).max(0.0) + self.discount * ctx.distinct as f64 * uniform)
            / ctx.total as f64
    }

    fn p_bigram(&self, v: Id, w: Id) -> f64 {
        let lower = self.p_unigram(w);
        match self.ctx2.get(&v) {
            None => lower,
            Some(ctx) => {
                let c = self.cont2.get(&(v, w)).copied().unwrap_or(0) as f64;
                ((c - self.discount).max(0.0) + self.discount * ctx.distinct as f64 * lower)
                    / ctx.total as f64
            }
        }
    }

    fn p_ids(&self, u: Id, v: Id, w: Id) -> f64 {
        if w == self.bos {
            return 0.0;
        }
        let lower = self.p_bigram(v, w);
        match self.ctx3.get(&(u, v)) {
            None => lower,
            Some(ctx) => {
                let c = self.trigrams.get(&(u, v, w)).copied().unwrap_or(0) as f64;
                ((c - self.discount).max(0.0) + self.discount * ctx.distinct as f64 * lower)
                    / ctx.total as f64
            }
        }
    }

    /// `p(word | h1, h2)` where `h2` immediately precedes `word`. Unknown
    /// tokens are mapped to `<unk>`.
    pub fn prob(&self, h1: &str, h2: &str, word: &str) -> f64 {
        self.p_ids(self.id(h1), self.id(h2), self.id(word))
    }

    /// Sum of log2 probabilities and number of scored tokens (including
    /// `</s>`, excluding `<s>`) for one tokenized text.
    pub fn log2_prob_text(&self, tokens: &[String]) -> (f64, usize) {
        let seq = self.padded_ids(tokens.iter().map(String::as_str));
        let mut sum = 0.0;
        for w in seq.windows(3) {
            sum += self.p_ids(w[0], w[1], w[2]).log2();
        }
        (sum, seq.len() - 2)
    }

    pub fn perplexity_texts<I, T>(&self, texts: I) -> Result<f64>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[String]>,
    {
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in texts {
            let (s, k) = self.log2_prob_text(t.as_ref());
            sum += s;
            n += k;
        }
        if n == 0 {
            return Err(Error::invalid("perplexity", "empty evaluation corpus"));
        }
        Ok((-sum / n as f64).exp2())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{HEADER_PREFIX} D={} vocab={}",
            self.discount,
            self.vocab.len()
        );
        out.push_str("\\vocab\n");
        for t in &self.vocab {
            out.push_str(t);
            out.push('\n');
        }
        let name = |i: &Id| self.vocab[*i as usize].as_str();
        let uni: BTreeMap<&str, u64> = self.unigrams.iter().map(|(k, v)| (name(k), *v)).collect();
        out.push_str("\\1-grams\n");
        for (w, c) in uni {
            let _ = writeln!(out, "{w}\t{c}");
        }
        let bi: BTreeMap<(&str, &str), u64> = self
            .bigrams
            .iter()
            .map(|((a, b), c)| ((name(a), name(b)), *c))
            .collect();
        out.push_str("\\2-grams\n");
        for ((a, b), c) in bi {
            let _ = writeln!(out, "{a} {b}\t{c}");
        }
        let tri: BTreeMap<(&str, &str, &str), u64> = self
            .trigrams
            .iter()
            .map(|((a, b, w), c)| ((name(a), name(b), name(w)), *c))
            .collect();
        out.push_str("\\3-grams\n");
        for ((a, b, w), c) in tri {
            let _ = writeln!(out, "{a} {b} {w}\t{c}");
        }
        out.push_str("\\end\n");
        out
    }

    /// Parses the count file written by [`TrigramLm::to_text`]. Lower-order
    /// sections must agree with the counts derived from the trigrams.
    pub fn from_text(text: &str) -> Result<Self> {
        const WHAT: &str = "kn model";
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| Error::parse(WHAT, 1, "empty file"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        let (discount, vocab_size) = match fields.as_slice() {
            [HEADER_PREFIX, d, v] => {
                let d = d
                    .strip_prefix("D=")
                    .and_then(|d| d.parse::<f64>().ok())
                    .ok_or_else(|| Error::parse(WHAT, 1, "bad discount field"))?;
                let v = v
                    .strip_prefix("vocab=")
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(|| Error::parse(WHAT, 1, "bad vocab field"))?;
                (d, v)
            }
            _ => {
                return Err(Error::parse(
                    WHAT,
                    1,
                    "header must be `kn-trigram D=<discount> vocab=<size>`",
                ))
            }
        };
        check_discount(discount).map_err(|e| Error::parse(WHAT, 1, e.to_string()))?;

        #[derive(PartialEq, Clone, Copy)]
        enum Section {
            Vocab,
            Order(usize),
            End,
        }
        let mut section = None;
        let mut vocab: Vec<String> = Vec::new();
        let mut grams: [Vec<(usize, Vec<&str>, u64)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        let expected_order = [
            Section::Vocab,
            Section::Order(1),
            Section::Order(2),
            Section::Order(3),
            Section::End,
        ];
        let mut next_section = 0usize;
        for (lineno, line) in lines {
            if let Some(tag) = line.strip_prefix('\\') {
                let s = match tag {
                    "vocab" => Section::Vocab,
                    "1-grams" => Section::Order(1),
                    "2-grams" => Section::Order(2),
                    "3-grams" => Section::Order(3),
                    "end" => Section::End,
                    _ => return Err(Error::parse(WHAT, lineno, format!("unknown section {tag:?}"))),
                };
                if expected_order.get(next_section) != Some(&s) {
                    return Err(Error::parse(WHAT, lineno, "sections out of order"));
                }
                next_section += 1;
                section = Some(s);
                continue;
            }
            match section {
                None => return Err(Error::parse(WHAT, lineno, "content before \\vocab")),
                Some(Section::End) => {
                    if !line.is_empty() {
                        return Err(Error::parse(WHAT, lineno, "content after \\end"));
                    }
                }
                Some(Section::Vocab) => {
                    if line.is_empty() || line.chars().any(char::is_whitespace) {
                        return Err(Error::parse(WHAT, lineno, "bad vocabulary token"));
                    }
                    if vocab.last().is_some_and(|prev| prev.as_str() >= line) {
                        return Err(Error::parse(WHAT, lineno, "vocabulary not sorted or duplicated"));
                    }
                    vocab.push(line.to_string());
                }
                Some(Section::Order(n)) => {
                    let (gram, count) = line
                        .split_once('\t')
                        .ok_or_else(|| Error::parse(WHAT, lineno, "expected <ngram>\\t<count>"))?;
                    let count: u64 = count
                        .parse()
                        .ok()
                        .filter(|c| *c > 0)
                        .ok_or_else(|| Error::parse(WHAT, lineno, "count must be a positive integer"))?;
                    let toks: Vec<&str> = gram.split(' ').collect();
                    if toks.len() != n {
                        return Err(Error::parse(WHAT, lineno, format!("expected a {n}-gram")));
                    }
                    grams[n - 1].push((lineno, toks, count));
                }
            }
        }
        if section != Some(Section::End) {
            return Err(Error::parse(WHAT, text.lines().count().max(1), "missing \\end"));
        }
        if vocab.len() != vocab_size {
            return Err(Error::parse(
                WHAT,
                1,
                format!("header says vocab={vocab_size}, found {}", vocab.len()),
            ));
        }
        let mut lm = Self::empty(discount, vocab).map_err(|e| Error::parse(WHAT, 2, e.to_string()))?;
        let lookup = |lm: &TrigramLm, lineno: usize, t: &str| {
            lm.ids
                .get(t)
                .copied()
                .ok_or_else(|| Error::parse(WHAT, lineno, format!("token {t:?} not in vocabulary")))
        };
        let mut trigrams = HashMap::new();
        for (lineno, toks, c) in &grams[2] {
            let ids = (
                lookup(&lm, *lineno, toks[0])?,
                lookup(&lm, *lineno, toks[1])?,
                lookup(&lm, *lineno, toks[2])?,
            );
            if ids.2 == lm.bos {
                return Err(Error::parse(WHAT, *lineno, "<s> cannot be predicted"));
            }
            if trigrams.insert(ids, *c).is_some() {
                return Err(Error::parse(WHAT, *lineno, "duplicate trigram"));
            }
        }
        lm.set_trigrams(trigrams);
        if lm.trigrams.is_empty() {
            return Err(Error::parse(WHAT, 1, "model has no trigrams"));
        }
        let mut bigrams = HashMap::new();
        for (lineno, toks, c) in &grams[1] {
            let ids = (lookup(&lm, *lineno, toks[0])?, lookup(&lm, *lineno, toks[1])?);
            if bigrams.insert(ids, *c).is_some() {
                return Err(Error::parse(WHAT, *lineno, "duplicate bigram"));
            }
        }
        let mut unigrams = HashMap::new();
        for (lineno, toks, c) in &grams[0] {
            if unigrams.insert(lookup(&lm, *lineno, toks[0])?, *c).is_some() {
                return Err(Error::parse(WHAT, *lineno, "duplicate unigram"));
            }
        }
        if bigrams != lm.bigrams || unigrams != lm.unigrams {
            return Err(Error::parse(
                WHAT,
                1,
                "lower-order counts disagree with the trigram counts",
            ));
        }
        Ok(lm)
    }
}

fn check_discount(d: f64) -> Result<()> {
    if d > 0.0 && d < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("discount", format!("{d} must lie in (0, 1)")))
    }
}

fn tokenized_texts(corpus: &DomainCorpus, filter: Option<Split>) -> Vec<Vec<String>> {
    corpus.texts(filter).map(tokenize).collect()
}

/// Trains on the corpus' train split.
pub fn train_kn(corpus: &DomainCorpus, config: KnConfig) -> Result<TrigramLm> {
    let texts = tokenized_texts(corpus, Some(Split::Train));
    if texts.is_empty() {
        return Err(Error::invalid(
            "language model",
            format!("{} has an empty train split", corpus.name()),
        ));
    }
    TrigramLm::train(texts, config)
}

/// Perplexity of `lm` on the texts of `corpus` restricted to `filter`.
pub fn perplexity(lm: &TrigramLm, corpus: &DomainCorpus, filter: Option<Split>) -> Result<f64> {
    lm.perplexity_texts(tokenized_texts(corpus, filter))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn assert_normalized(lm: &TrigramLm) {
        let vocab: Vec<&str> = lm.vocab().iter().map(String::as_str).collect();
        for h1 in &vocab {
            for h2 in &vocab {
                let total: f64 = lm.predictable().map(|w| lm.prob(h1, h2, w)).sum();
                assert!((total - 1.0).abs() < 1e-6, "history ({h1},{h2}) sums to {total}");
            }
        }
    }

    #[test]
    fn single_text_model() {
        let lm = TrigramLm::train([toks("a a a")], KnConfig::default()).unwrap();
        assert_eq!(lm.vocab(), &["</s>", "<s>", "<unk>", "a"]);
        let pa = lm.prob(BOS, BOS, "a");
        let punk = lm.prob(BOS, BOS, UNK);
        assert!(pa > punk && punk > 0.0, "{pa} vs {punk}");
        // Hand evaluation: c(<s>,<s>,a)=1 with one follower type, so
        // p = (1 - .75 + .75 * p2(a|<s>)) / 1. p2(a|<s>) has one
        // continuation type as well: (1 - .75 + .75 * p1(a)). p1 uses
        // N1+(.a)=2 (from <s> and a), N1+(.</s>)=1, total 3, 2 types, P=3.
        let p1a = (2.0 - 0.75 + 0.75 * 2.0 / 3.0) / 3.0;
        let p2a = 0.25 + 0.75 * p1a;
        assert!((pa - (0.25 + 0.75 * p2a)).abs() < 1e-15);
        assert_normalized(&lm);
    }

    #[test]
    fn normalization_on_small_vocab() {
        let texts = [toks("the cat sat on the mat"), toks("the dog sat"), toks("a cat ran")];
        let lm = TrigramLm::train(texts, KnConfig::default()).unwrap();
        assert_normalized(&lm);
        assert!(lm.prob("dog", "ran", "mat") > 0.0);
    }

    #[test]
    fn min_count_maps_rare_tokens_to_unk() {
        let texts = [toks("a a b"), toks("a c")];
        let lm = TrigramLm::train(texts, KnConfig { discount: 0.75, min_count: 2 }).unwrap();
        assert!(!lm.vocab().iter().any(|t| t == "b" || t == "c"));
        assert!(lm.prob(BOS, "a", UNK) > lm.prob(BOS, "a", EOS) * 0.5);
        assert_normalized(&lm);
    }

    #[test]
    fn degenerate_language_has_low_perplexity() {
        let text = toks(&["a"; 200].join(" "));
        let lm = TrigramLm::train([text.clone()], KnConfig::default()).unwrap();
        let ppl = lm.perplexity_texts([text]).unwrap();
        assert!(ppl >= 1.0 && ppl <= 2.0, "{ppl}");
    }

    #[test]
    fn uniform_model_perplexity_bounded_by_vocab() {
        // Every trigram over {a, b} appears equally often.
        let text = toks("a a a b a b b b a a");
        let lm = TrigramLm::train([text.clone()], KnConfig::default()).unwrap();
        let ppl = lm.perplexity_texts([text]).unwrap();
        assert!(ppl >= 1.0 && ppl <= lm.vocab().len() as f64, "{ppl}");
    }

    #[test]
    fn all_oov_evaluation_is_finite() {
        let lm = TrigramLm::train([toks("a b c")], KnConfig::default()).unwrap();
        let ppl = lm.perplexity_texts([toks("x y z"), toks("q")]).unwrap();
        assert!(ppl.is_finite() && ppl >= 1.0);
    }

    #[test]
    fn own_corpus_beats_disjoint_vocabulary() {
        let train: Vec<_> = (0..20).map(|i| toks(&format!("w{} w{} w{} end", i % 5, (i + 1) % 5, (i * 2) % 5))).collect();
        let lm = TrigramLm::train(train.clone(), KnConfig::default()).unwrap();
        let own = lm.perplexity_texts(train).unwrap();
        let other = lm
            .perplexity_texts((0..20).map(|i| toks(&format!("z{} z{} z{}", i % 7, (i + 3) % 7, i % 4))))
            .unwrap();
        assert!(own < other, "{own} !< {other}");
    }

    #[test]
    fn duplication_leaves_perplexity_unchanged() {
        let lm = TrigramLm::train([toks("a b c a b"), toks("c b a")], KnConfig::default()).unwrap();
        let eval = vec![toks("a b d"), toks("c c")];
        let once = lm.perplexity_texts(eval.clone()).unwrap();
        let twice = lm.perplexity_texts(eval.iter().chain(eval.iter())).unwrap();
        assert!((once - twice).abs() < 1e-12 * once);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TrigramLm::train(Vec::<Vec<String>>::new(), KnConfig::default()).is_err());
        assert!(TrigramLm::train([toks("a")], KnConfig { discount: 1.0, min_count: 1 }).is_err());
        assert!(lm_empty_eval());
    }

    fn lm_empty_eval() -> bool {
        let lm = TrigramLm::train([toks("a")], KnConfig::default()).unwrap();
        lm.perplexity_texts(Vec::<Vec<String>>::new()).is_err()
    }

    #[test]
    fn file_round_trip_is_exact() {
        let texts = [toks("the cat sat on the mat"), toks("the dog sat")];
        let lm = TrigramLm::train(texts, KnConfig { discount: 0.6, min_count: 1 }).unwrap();
        let text = lm.to_text();
        assert!(text.starts_with("kn-trigram D=0.6 vocab=9\n"));
        let back = TrigramLm::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        let eval = [toks("the cat ran"), toks("a mat")];
        let a = lm.perplexity_texts(eval.iter()).unwrap();
        let b = back.perplexity_texts(eval.iter()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn file_parser_rejects_inconsistent_counts() {
        let lm = TrigramLm::train([toks("a b")], KnConfig::default()).unwrap();
        let text = lm.to_text().replacen("a\t1", "a\t2", 1);
        assert!(TrigramLm::from_text(&text).is_err());
        assert!(TrigramLm::from_text("kn-trigram D=0.75 vocab=0\n").is_err());
        assert!(TrigramLm::from_text("garbage").is_err());
    }
}
