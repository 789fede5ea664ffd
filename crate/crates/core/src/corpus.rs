//! Labeled text-pair corpora: ingestion, tokenization, splits and unigram
//! statistics.
//!
//! Two on-disk formats are accepted. JSONL, one record per line:
//!
//! ```text
//! {"text_a": "...", "text_b": "...", "label": 1}
//! {"text_a": "...", "text_b": "...", "score": 3.9}
//! ```
//!
//! and TSV with a header line `text_a<TAB>text_b<TAB>label` (or `score`
//! as the third column). Records may carry an optional `split` field
//! (`train`, `val`, `test`); the workspace stores corpora that way.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Lowercases, NFC-normalizes and splits on maximal runs of
/// non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase().nfc().collect();
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Domain names double as file names inside a workspace.
pub fn validate_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && !name.contains("__")
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(
            "domain name",
            format!("{name:?} must be non-empty ASCII [A-Za-z0-9_.-], not start with '.', and not contain \"__\""),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextPairExample {
    pub text_a: String,
    pub text_b: String,
    pub label: bool,
}

impl TextPairExample {
    /// Fails when either text is empty after tokenization.
    pub fn new(text_a: impl Into<String>, text_b: impl Into<String>, label: bool) -> Result<Self> {
        let ex = TextPairExample {
            text_a: text_a.into(),
            text_b: text_b.into(),
            label,
        };
        if tokenize(&ex.text_a).is_empty() || tokenize(&ex.text_b).is_empty() {
            return Err(Error::invalid("example", "text is empty after tokenization"));
        }
        Ok(ex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid("split", format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Tsv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "tsv" => Ok(Format::Tsv),
            other => Err(Error::invalid("format", format!("expected jsonl or tsv, got {other:?}"))),
        }
    }
}

/// A named set of labeled text pairs. Every example carries a split
/// assignment; freshly loaded corpora without one are entirely `Train`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainCorpus {
    name: String,
    examples: Vec<TextPairExample>,
    splits: Vec<Split>,
}

impl DomainCorpus {
    pub fn new(name: impl Into<String>, examples: Vec<TextPairExample>) -> Result<Self> {
        let splits = vec![Split::Train; examples.len()];
        Self::with_splits(name, examples, splits)
    }

    pub fn with_splits(
        name: impl Into<String>,
        examples: Vec<TextPairExample>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let name = name.into();
        validate_name(&name)?;
        if examples.len() != splits.len() {
            return Err(Error::invalid(
                "corpus",
                format!("{} examples but {} split assignments", examples.len(), splits.len()),
            ));
        }
        Ok(DomainCorpus {
            name,
            examples,
            splits,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn examples(&self) -> &[TextPairExample] {
        &self.examples
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Examples (with their corpus index) whose split matches the filter.
    pub fn iter_split(
        &self,
        filter: Option<Split>,
    ) -> impl Iterator<Item = (usize, &TextPairExample)> + '_ {
        self.examples
            .iter()
            .enumerate()
            .filter(move |(i, _)| filter.is_none_or(|s| self.splits[*i] == s))
    }

    pub fn count(&self, filter: Option<Split>) -> usize {
        self.iter_split(filter).count()
    }

    /// All texts of the filtered examples, `text_a` then `text_b` per example.
    pub fn texts(&self, filter: Option<Split>) -> impl Iterator<Item = &str> + '_ {
        self.iter_split(filter)
            .flat_map(|(_, ex)| [ex.text_a.as_str(), ex.text_b.as_str()])
    }

    /// Serializes to the canonical JSONL form including split assignments.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (ex, split) in self.examples.iter().zip(&self.splits) {
            let rec = serde_json::json!({
                "text_a": ex.text_a,
                "text_b": ex.text_b,
                "label": u8::from(ex.label),
                "split": split.as_str(),
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

/// Result of ingesting a file: the corpus plus the number of records
/// dropped because a text tokenized to nothing.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub corpus: DomainCorpus,
    pub rejected: usize,
}

#[derive(Deserialize)]
struct JsonRecord {
    text_a: String,
    text_b: String,
    #[serde(default)]
    label: Option<serde_json::Value>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    split: Option<Split>,
}

fn resolve_label(
    what: &str,
    line: usize,
    label: Option<&str>,
    score: Option<f64>,
    binarize_threshold: Option<f64>,
) -> Result<bool> {
    match binarize_threshold {
        Some(t) => {
            let score = score.ok_or_else(|| {
                Error::parse(what, line, "binarize threshold set but record has no score")
            })?;
            if !score.is_finite() {
                return Err(Error::parse(what, line, "score is not finite"));
            }
            Ok(score >= t)
        }
        None => match label {
            Some("0") => Ok(false),
            Some("1") => Ok(true),
            Some(other) => Err(Error::parse(
                what,
                line,
                format!("label must be 0 or 1, got {other}"),
            )),
            None => Err(Error::parse(
                what,
                line,
                "record has no label (set a binarize threshold to use scores)",
            )),
        },
    }
}

struct Collector {
    what: &'static str,
    examples: Vec<TextPairExample>,
    splits: Vec<Option<Split>>,
    rejected: usize,
}

impl Collector {
    fn new(what: &'static str) -> Self {
        Collector {
            what,
            examples: Vec::new(),
            splits: Vec::new(),
            rejected: 0,
        }
    }

    fn push(&mut self, text_a: String, text_b: String, label: bool, split: Option<Split>) {
        match TextPairExample::new(text_a, text_b, label) {
            Ok(ex) => {
                self.examples.push(ex);
                self.splits.push(split);
            }
            Err(_) => self.rejected += 1,
        }
    }

    fn finish(self, name: &str) -> Result<Loaded> {
        if self.examples.is_empty() {
            return Err(Error::invalid(
                self.what,
                format!("no usable records ({} rejected)", self.rejected),
            ));
        }
        let with_split = self.splits.iter().filter(|s| s.is_some()).count();
        let splits = if with_split == 0 {
            vec![Split::Train; self.examples.len()]
        } else if with_split == self.splits.len() {
            self.splits.into_iter().flatten().collect()
        } else {
            return Err(Error::invalid(
                self.what,
                "either every record or no record may carry a split",
            ));
        };
        Ok(Loaded {
            corpus: DomainCorpus::with_splits(name, self.examples, splits)?,
            rejected: self.rejected,
        })
    }
}

/// Parses JSONL records. Blank lines are skipped; record order is kept.
pub fn parse_jsonl(name: &str, text: &str, binarize_threshold: Option<f64>) -> Result<Loaded> {
    const WHAT: &str = "jsonl corpus";
    let mut out = Collector::new(WHAT);
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(WHAT, lineno, e.to_string()))?;
        let label_text = match &rec.label {
            None => None,
            Some(serde_json::Value::Number(n)) => Some(n.to_string()),
            Some(serde_json::Value::Bool(b)) => Some(if *b { "1" } else { "0" }.to_string()),
            Some(other) => Some(other.to_string()),
        };
        let label = resolve_label(WHAT, lineno, label_text.as_deref(), rec.score, binarize_threshold)?;
        out.push(rec.text_a, rec.text_b, label, rec.split);
    }
    out.finish(name)
}

/// Parses TSV with a `text_a\ttext_b\t{label|score}[\tsplit]` header.
pub fn parse_tsv(name: &str, text: &str, binarize_threshold: Option<f64>) -> Result<Loaded> {
    const WHAT: &str = "tsv corpus";
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i + 1, l),
            None => return Err(Error::parse(WHAT, 1, "missing header")),
        }
    };
    let cols: Vec<&str> = header.1.trim_end_matches('\r').split('\t').collect();
    let has_split = match cols.as_slice() {
        ["text_a", "text_b", "label" | "score"] => false,
        ["text_a", "text_b", "label" | "score", "split"] => true,
        _ => {
            return Err(Error::parse(
                WHAT,
                header.0,
                "header must be text_a<TAB>text_b<TAB>label (or score), optionally <TAB>split",
            ))
        }
    };
    let third_is_score = cols[2] == "score";

    let mut out = Collector::new(WHAT);
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(Error::parse(
                WHAT,
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let third = fields[2].trim();
        let (label_text, score) = if third_is_score {
            let s: f64 = third
                .parse()
                .map_err(|_| Error::parse(WHAT, lineno, format!("bad score {third:?}")))?;
            (None, Some(s))
        } else {
            // A numeric label column doubles as a score when binarizing.
            (Some(third), third.parse::<f64>().ok())
        };
        let label = resolve_label(WHAT, lineno, label_text, score, binarize_threshold)?;
        let split = if has_split {
            Some(fields[3].trim().parse::<Split>().map_err(|e| Error::parse(WHAT, lineno, e.to_string()))?)
        } else {
            None
        };
        out.push(fields[0].to_string(), fields[1].to_string(), label, split);
    }
    out.finish(name)
}

pub fn parse_corpus(
    name: &str,
    text: &str,
    format: Format,
    binarize_threshold: Option<f64>,
) -> Result<Loaded> {
    validate_name(name)?;
    if let Some(t) = binarize_threshold {
        if !t.is_finite() {
            return Err(Error::invalid("binarize threshold", "must be finite"));
        }
    }
    match format {
        Format::Jsonl => parse_jsonl(name, text, binarize_threshold),
        Format::Tsv => parse_tsv(name, text, binarize_threshold),
    }
}

pub fn load_domain(
    path: &Path,
    format: Format,
    name: &str,
    binarize_threshold: Option<f64>,
) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(name, &text, format, binarize_threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnigramStats {
    pub counts: BTreeMap<String, u64>,
    pub total_tokens: u64,
    pub example_count: usize,
    /// Mean tokens per text: `total_tokens / (2 * example_count)`.
    pub avg_tokens_per_example: f64,
}

impl UnigramStats {
    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.counts.contains_key(token)
    }
}

pub fn unigram_stats(corpus: &DomainCorpus, split_filter: Option<Split>) -> Result<UnigramStats> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut example_count = 0usize;
    for (_, ex) in corpus.iter_split(split_filter) {
        example_count += 1;
        for text in [&ex.text_a, &ex.text_b] {
            for tok in tokenize(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
    }
    if example_count == 0 {
        return Err(Error::invalid(
            "corpus",
            format!(
                "{} has no examples in split {}",
                corpus.name(),
                split_filter.map_or("<all>", Split::as_str)
            ),
        ));
    }
    let total_tokens: u64 = counts.values().sum();
    Ok(UnigramStats {
        avg_tokens_per_example: total_tokens as f64 / (2 * example_count) as f64,
        counts,
        total_tokens,
        example_count,
    })
}

/// Stratified, seeded split. Each label's examples are shuffled
/// independently and cut into train/val/test blocks sized by rounding;
/// val and test receive at least one example per label.
pub fn split(corpus: &DomainCorpus, ratios: (f64, f64, f64), seed: u64) -> Result<DomainCorpus> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !(r.is_finite() && *r > 0.0))
        || (r_train + r_val + r_test - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(
            "split ratios",
            format!("({r_train}, {r_val}, {r_test}) must be positive and sum to 1"),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Train; corpus.len()];
    for label in [false, true] {
        let mut idx: Vec<usize> = corpus
            .examples
            .iter()
            .enumerate()
            .filter(|(_, ex)| ex.label == label)
            .map(|(i, _)| i)
            .collect();
        let n = idx.len();
        if n < 3 {
            return Err(Error::invalid(
                "split",
                format!(
                    "{} has {n} examples with label {}, need at least 3",
                    corpus.name(),
                    u8::from(label)
                ),
            ));
        }
        idx.shuffle(&mut rng);
        let n_val = ((n as f64 * r_val).round() as usize).max(1);
        let n_test = ((n as f64 * r_test).round() as usize).max(1);
        let n_train = n.saturating_sub(n_val + n_test).max(1);
        let n_val = n - n_train - n_test;
        for (pos, &i) in idx.iter().enumerate() {
            splits[i] = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    DomainCorpus::with_splits(corpus.name.clone(), corpus.examples.clone(), splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex(a: &str, b: &str, label: bool) -> TextPairExample {
        TextPairExample::new(a, b, label).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello, World!"), vec!["hello", "world"]);
        assert_eq!(tokenize("a  b"), vec!["a", "b"]);
        assert_eq!(tokenize("C++11 rocks"), vec!["c", "11", "rocks"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize(" ,.; ").is_empty());
    }

    #[test]
    fn tokenize_normalizes_composed_forms() {
        // "e" + combining acute composes to a single alphanumeric char.
        assert_eq!(tokenize("Caf\u{0065}\u{0301}"), vec!["caf\u{e9}"]);
        assert_eq!(tokenize("CAF\u{c9}"), vec!["caf\u{e9}"]);
    }

    #[test]
    fn binarization_boundary() {
        let text = "{\"text_a\": \"x\", \"text_b\": \"y\", \"score\": 3.9}\n\
                    {\"text_a\": \"x\", \"text_b\": \"y\", \"score\": 4.0}\n";
        let loaded = parse_jsonl("sick", text, Some(4.0)).unwrap();
        let labels: Vec<bool> = loaded.corpus.examples().iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![false, true]);
    }

    #[test]
    fn label_passthrough_without_threshold() {
        let loaded =
            parse_jsonl("d", "{\"text_a\": \"x\", \"text_b\": \"y\", \"label\": 1}", None).unwrap();
        assert!(loaded.corpus.examples()[0].label);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = "{\"text_a\": \"x\", \"text_b\": \"y\", \"label\": 1}\n{oops\n";
        match parse_jsonl("d", text, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_label = "{\"text_a\": \"x\", \"text_b\": \"y\", \"label\": 2}";
        assert!(matches!(parse_jsonl("d", bad_label, None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_texts_are_rejected_and_counted() {
        let text = "{\"text_a\": \"x\", \"text_b\": \"y\", \"label\": 1}\n\
                    {\"text_a\": \"!!\", \"text_b\": \"y\", \"label\": 0}\n\
                    {\"text_a\": \"x\", \"text_b\": \"\", \"label\": 0}\n";
        let loaded = parse_jsonl("d", text, None).unwrap();
        assert_eq!(loaded.corpus.len(), 1);
        assert_eq!(loaded.rejected, 2);
    }

    #[test]
    fn tsv_header_and_rows() {
        let text = "text_a\ttext_b\tlabel\nhello there\tgeneral kenobi\t1\nfoo\tbar\t0\n";
        let loaded = parse_tsv("d", text, None).unwrap();
        assert_eq!(loaded.corpus.len(), 2);
        assert!(loaded.corpus.examples()[0].label);

        let scored = "text_a\ttext_b\tscore\na\tb\t4.5\nc\td\t1.0\n";
        let loaded = parse_tsv("d", scored, Some(4.0)).unwrap();
        let labels: Vec<bool> = loaded.corpus.examples().iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![true, false]);

        assert!(matches!(parse_tsv("d", "a\tb\tc\n", None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_tsv("d", "text_a\ttext_b\tlabel\nx\ty\n", None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip_keeps_splits() {
        let corpus = DomainCorpus::with_splits(
            "d",
            vec![ex("a b", "c", true), ex("d", "e f", false)],
            vec![Split::Val, Split::Test],
        )
        .unwrap();
        let back = parse_jsonl("d", &corpus.to_jsonl(), None).unwrap().corpus;
        assert_eq!(back, corpus);
    }

    #[test]
    fn unigram_stats_hand_count() {
        let corpus = DomainCorpus::new("d", vec![ex("a b", "b c", true)]).unwrap();
        let stats = unigram_stats(&corpus, None).unwrap();
        let expected: BTreeMap<String, u64> =
            [("a", 1), ("b", 2), ("c", 1)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(stats.counts, expected);
        assert_eq!(stats.total_tokens, 4);
        assert_eq!(stats.avg_tokens_per_example, 2.0);

        let doubled =
            DomainCorpus::new("d", vec![ex("a b", "b c", true), ex("a b", "b c", true)]).unwrap();
        let stats2 = unigram_stats(&doubled, None).unwrap();
        assert!(stats2.counts.iter().all(|(k, v)| *v == 2 * stats.counts[k]));

        assert!(unigram_stats(&corpus, Some(Split::Test)).is_err());
    }

    fn balanced(n: usize) -> DomainCorpus {
        let examples = (0..n).map(|i| ex(&format!("t{i}"), "x", i % 2 == 0)).collect();
        DomainCorpus::new("bal", examples).unwrap()
    }

    #[test]
    fn split_counts_are_stratified() {
        let corpus = balanced(100);
        let s = split(&corpus, (0.8, 0.1, 0.1), 7).unwrap();
        for (split_kind, expected) in [(Split::Train, 80), (Split::Val, 10), (Split::Test, 10)] {
            assert_eq!(s.count(Some(split_kind)), expected);
            for label in [false, true] {
                let n = s.iter_split(Some(split_kind)).filter(|(_, e)| e.label == label).count();
                assert_eq!(n, expected / 2);
            }
        }
        assert_eq!(split(&corpus, (0.8, 0.1, 0.1), 7).unwrap(), s);
        assert_ne!(split(&corpus, (0.8, 0.1, 0.1), 8).unwrap().splits(), s.splits());
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let corpus = balanced(100);
        assert!(split(&corpus, (0.5, 0.5, 0.1), 1).is_err());
        assert!(split(&corpus, (1.0, 0.0, 0.0), 1).is_err());
        assert!(split(&balanced(4), (0.8, 0.1, 0.1), 1).is_err());
    }

    #[test]
    fn bad_names_rejected() {
        for name in ["", ".hidden", "a/b", "a b", "a__b"] {
            assert!(validate_name(name).is_err(), "{name:?}");
        }
        validate_name("Stack-Overflow_2.0").unwrap();
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "[a-zA-Z0-9 ,.!?\u{e0}-\u{ff}\u{300}-\u{36f}\u{391}-\u{3c9}-]{0,40}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn unigram_counts_are_additive(
            a in proptest::collection::vec(("[a-d ]{1,8}", "[a-d ]{1,8}"), 1..6),
            b in proptest::collection::vec(("[a-d ]{1,8}", "[a-d ]{1,8}"), 1..6),
        ) {
            let mk = |v: &[(String, String)]| -> Vec<TextPairExample> {
                v.iter().filter_map(|(x, y)| TextPairExample::new(x.clone(), y.clone(), true).ok()).collect()
            };
            let (ea, eb) = (mk(&a), mk(&b));
            prop_assume!(!ea.is_empty() && !eb.is_empty());
            let sa = unigram_stats(&DomainCorpus::new("a", ea.clone()).unwrap(), None).unwrap();
            let sb = unigram_stats(&DomainCorpus::new("b", eb.clone()).unwrap(), None).unwrap();
            let union: Vec<_> = ea.into_iter().chain(eb).collect();
            let su = unigram_stats(&DomainCorpus::new("u", union).unwrap(), None).unwrap();
            for (tok, n) in &su.counts {
                prop_assert_eq!(*n, sa.counts.get(tok).unwrap_or(&0) + sb.counts.get(tok).unwrap_or(&0));
            }
            prop_assert_eq!(su.total_tokens, sa.total_tokens + sb.total_tokens);
        }
    }
}
