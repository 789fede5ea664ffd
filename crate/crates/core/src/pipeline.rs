//! End-to-end orchestration over a persistent workspace directory.
//!
//! Layout (one subdirectory per stage):
//!
//! ```text
//! manifest.json  config.json
//! corpus/<domain>.jsonl
//! sentence/universal.w2v
//! embed/<domain>.w2v
//! lm/<domain>.kn
//! features/features.csv
//! adapt/<variant>/<source>__<target>.json
//! downstream/<variant>/{seed_<n>.csv, mean.csv, manifest.json}
//! meta/<variant>/<mode>/{orderings.csv, metrics.csv, importance.csv, models/<target>.json}
//! report/{table1_predictor, table1_ranker, table2}.{csv,txt}, pca_<s>__<t>.csv, manifest.json
//! ```
//!
//! Every artifact is recorded in the manifest with a key hashed from its
//! stage configuration and the keys of its dependencies. An artifact is
//! rebuilt when its key changed, a file is missing, or a dependency was
//! rebuilt during the same run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{self, AdaptConfig, AdaptModel, Variant};
use crate::corpus::{self, parse_jsonl, tokenize, validate_name, DomainCorpus, Format, Split};
use crate::downstream::{cross_domain_matrix, success_labels, ClassifierConfig, DomainSplits, F1Matrix, MatrixManifest, PairData};
use crate::embed::{self, sentence_key, EmbeddingTable, SentenceEmbeddingProvider, Side, SkipgramConfig};
use crate::error::{Error, Result};
use crate::meta::{self, orderings_from_csv, orderings_to_csv, GbdtParams, Ordering};
use crate::ngram_lm::{train_kn, KnConfig, TrigramLm};
use crate::report::{self, TargetResult};
use crate::simfeat::{feature_vector, features_from_csv, features_to_csv, DomainProfile, FeatureConfig, FeatureRow, FeatureVector};
use crate::synth::{self, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSource {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: Format,
    #[serde(default)]
    pub binarize_threshold: Option<f64>,
}

fn default_format() -> Format {
    Format::Jsonl
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratios: [0.8, 0.1, 0.1], seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceSource {
    /// Mean-pooled vectors of one skipgram model trained on all domains.
    Universal,
    /// Precomputed vectors keyed `<domain>/<split>/<index>/<a|b>`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentenceConfig {
    pub source: SentenceSource,
    pub path: Option<PathBuf>,
    pub skipgram: SkipgramConfig,
}

impl Default for SentenceConfig {
    fn default() -> Self {
        SentenceConfig {
            source: SentenceSource::Universal,
            path: None,
            skipgram: SkipgramConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptStage {
    /// Adaptation variants evaluated in addition to plain transfer.
    pub variants: Vec<Variant>,
    pub sda: AdaptConfig,
    pub msda: AdaptConfig,
    pub msdar: AdaptConfig,
    pub seed: u64,
}

impl Default for AdaptStage {
    fn default() -> Self {
        AdaptStage {
            variants: vec![Variant::Sda, Variant::Msdar],
            sda: AdaptConfig::sda(),
            msda: AdaptConfig::msda(),
            msdar: AdaptConfig::msdar(),
            seed: 1,
        }
    }
}

impl AdaptStage {
    pub fn config_for(&self, v: Variant) -> AdaptConfig {
        match v {
            Variant::Dt => AdaptConfig::dt(),
            Variant::Sda => self.sda.clone(),
            Variant::Msda => self.msda.clone(),
            Variant::Msdar => self.msdar.clone(),
        }
    }

    pub fn config_for_mut(&mut self, v: Variant) -> Option<&mut AdaptConfig> {
        match v {
            Variant::Dt => None,
            Variant::Sda => Some(&mut self.sda),
            Variant::Msda => Some(&mut self.msda),
            Variant::Msdar => Some(&mut self.msdar),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamStage {
    pub classifier: ClassifierConfig,
    pub seeds: Vec<u64>,
    pub threshold: f64,
}

impl Default for DownstreamStage {
    fn default() -> Self {
        DownstreamStage {
            classifier: ClassifierConfig::default(),
            seeds: vec![1, 2, 3],
            threshold: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaStage {
    pub gbdt: GbdtParams,
    pub repeats: usize,
}

impl Default for MetaStage {
    fn default() -> Self {
        MetaStage {
            gbdt: GbdtParams { seed: 1, ..GbdtParams::default() },
            repeats: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportStage {
    /// Pairs exported as PCA projections; the first two domains when empty.
    pub pca_pairs: Vec<(String, String)>,
    /// Representation used for PCA; the last configured variant when absent.
    pub pca_variant: Option<Variant>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub domains: Vec<DomainSource>,
    pub synthetic: Option<SyntheticSpec>,
    pub split: SplitConfig,
    pub embed: SkipgramConfig,
    pub sentence: SentenceConfig,
    pub lm: KnConfig,
    pub features: FeatureConfig,
    pub adapt: AdaptStage,
    pub downstream: DownstreamStage,
    pub meta: MetaStage,
    pub report: ReportStage,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("line {}: {e}", e.line())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces every stage seed; downstream uses `n, n+1, n+2`.
    pub fn apply_seed(&mut self, n: u64) {
        self.split.seed = n;
        self.embed.seed = n;
        self.sentence.skipgram.seed = n;
        self.adapt.seed = n;
        self.downstream.seeds = vec![n, n.wrapping_add(1), n.wrapping_add(2)];
        self.meta.gbdt.seed = n;
    }

    /// All evaluated variants: plain transfer first, then adaptation.
    pub fn variants(&self) -> Vec<Variant> {
        let mut v = vec![Variant::Dt];
        v.extend(self.adapt.variants.iter().copied().filter(|x| *x != Variant::Dt));
        v
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let mut names = BTreeSet::new();
        for d in &self.domains {
            validate_name(&d.name)?;
            if !names.insert(d.name.clone()) {
                return err(format!("domain {:?} listed twice", d.name));
            }
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
            for i in 0..s.domains {
                if names.contains(&synth::domain_name(i)) {
                    return err(format!("domain {:?} clashes with a synthetic domain", synth::domain_name(i)));
                }
            }
        }
        let [a, b, c] = self.split.ratios;
        if [a, b, c].iter().any(|r| !(*r > 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
            return err("split ratios must be positive and sum to 1".into());
        }
        if self.sentence.source == SentenceSource::File && self.sentence.path.is_none() {
            return err("sentence.source = file needs sentence.path".into());
        }
        let mut seen = BTreeSet::new();
        for v in &self.adapt.variants {
            if !seen.insert(*v) {
                return err(format!("adapt variant {v} listed twice"));
            }
            let cfg = self.adapt.config_for(*v);
            if cfg.variant != *v {
                return err(format!("adapt.{v}.variant must be {v}"));
            }
            cfg.validate()?;
        }
        self.downstream.classifier.validate()?;
        if self.downstream.seeds.is_empty() {
            return err("downstream.seeds must not be empty".into());
        }
        if !self.downstream.threshold.is_finite() {
            return err("downstream.threshold must be finite".into());
        }
        self.meta.gbdt.validate()?;
        if self.meta.repeats == 0 {
            return err("meta.repeats must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Predictor,
    Ranker,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Predictor, Mode::Ranker];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Predictor => "predictor",
            Mode::Ranker => "ranker",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predictor" => Ok(Mode::Predictor),
            "ranker" => Ok(Mode::Ranker),
            _ => Err(Error::invalid("mode", format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainOrigin {
    File {
        path: PathBuf,
        format: Format,
        binarize_threshold: Option<String>,
    },
    Synthetic { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRecord {
    pub key: String,
    pub seed: Option<u64>,
    pub files: Vec<String>,
    pub deps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub domains: BTreeMap<String, DomainOrigin>,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

impl Manifest {
    /// Artifacts whose key no longer matches `expected` (id → key).
    pub fn stale(&self, expected: &BTreeMap<String, String>) -> Vec<String> {
        expected
            .iter()
            .filter(|(id, key)| self.artifacts.get(*id).is_none_or(|r| &r.key != *key))
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// How far to run and which slice of each stage to build.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Target {
    pub last: Stage,
    pub domains: Option<Vec<String>>,
    pub pair: Option<(String, String)>,
    pub variants: Option<Vec<Variant>>,
    pub modes: Option<Vec<Mode>>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum Stage {
    Ingest,
    Embed,
    Lm,
    Features,
    Adapt,
    Downstream,
    Meta,
    #[default]
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Lm => "lm",
            Stage::Features => "features",
            Stage::Adapt => "adapt",
            Stage::Downstream => "downstream",
            Stage::Meta => "meta",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub rebuilt: Vec<String>,
    pub reused: Vec<String>,
}

type Files = Vec<(String, Vec<u8>)>;

struct Job<'a> {
    id: String,
    stage: Stage,
    material: serde_json::Value,
    seed: Option<u64>,
    deps: Vec<String>,
    build: Box<dyn Fn() -> Result<Files> + Send + Sync + 'a>,
}

pub struct Workspace {
    root: PathBuf,
    manifest: Manifest,
    summary: RunSummary,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn stage_error(stage: Stage, artifact: &str, e: Error) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: stage.as_str().into(),
            artifact: artifact.into(),
            source: Box::new(other),
        },
    }
}

fn pair_file(s: &str, t: &str) -> String {
    format!("{s}__{t}")
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let path = root.join("manifest.json");
        let manifest = if path.exists() {
            serde_json::from_str(&read(&path)?).map_err(|e| Error::parse("workspace manifest", e.line(), e.to_string()))?
        } else {
            Manifest::default()
        };
        Ok(Workspace {
            root,
            manifest,
            summary: RunSummary::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn summary(&self) -> &RunSummary {
        &self.summary
    }

    fn save_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.root.join("manifest.json"), text.as_bytes())
    }

    fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn domains(&self) -> Vec<String> {
        self.manifest.domains.keys().cloned().collect()
    }

    fn key_of(&self, id: &str) -> Result<String> {
        self.manifest
            .artifacts
            .get(id)
            .map(|r| r.key.clone())
            .ok_or_else(|| Error::MissingArtifact(id.to_string()))
    }

    fn job_key(&self, job: &Job<'_>) -> Result<String> {
        let mut deps = BTreeMap::new();
        for d in &job.deps {
            deps.insert(d.clone(), self.key_of(d)?);
        }
        let material = serde_json::json!({ "id": job.id, "config": job.material, "deps": deps });
        Ok(sha256_hex(material.to_string().as_bytes()))
    }

    fn is_fresh(&self, job: &Job<'_>, key: &str) -> bool {
        let rebuilt: BTreeSet<&String> = self.summary.rebuilt.iter().collect();
        match self.manifest.artifacts.get(&job.id) {
            Some(r) => {
                r.key == key && r.files.iter().all(|f| self.resolve(f).exists()) && !job.deps.iter().any(|d| rebuilt.contains(d))
            }
            None => false,
        }
    }

    /// Builds stale jobs in parallel, then commits their files in job order.
    fn run_jobs(&mut self, jobs: Vec<Job<'_>>) -> Result<()> {
        let mut keyed = Vec::with_capacity(jobs.len());
        for job in jobs {
            let key = self.job_key(&job)?;
            if self.is_fresh(&job, &key) {
                log::debug!("up to date: {}", job.id);
                self.summary.reused.push(job.id.clone());
            } else {
                keyed.push((job, key));
            }
        }
        if keyed.is_empty() {
            return Ok(());
        }
        let built: Vec<Result<Files>> = keyed.par_iter().map(|(job, _)| (job.build)()).collect();
        let mut first_err = None;
        for ((job, key), result) in keyed.into_iter().zip(built) {
            match result.and_then(|files| self.commit(&job, key, files)) {
                Ok(()) => {
                    log::info!("built {}", job.id);
                    self.summary.rebuilt.push(job.id.clone());
                }
                Err(e) => {
                    self.discard(&job.id);
                    if first_err.is_none() {
                        first_err = Some(stage_error(job.stage, &job.id, e));
                    }
                }
            }
        }
        self.save_manifest()?;
        first_err.map_or(Ok(()), Err)
    }

    fn commit(&mut self, job: &Job<'_>, key: String, files: Files) -> Result<()> {
        let mut written = Vec::new();
        for (name, bytes) in &files {
            let path = self.resolve(name);
            if let Err(e) = write_atomic(&path, bytes) {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e);
            }
            written.push(path);
        }
        self.manifest.artifacts.insert(
            job.id.clone(),
            ArtifactRecord {
                key,
                seed: job.seed,
                files: files.into_iter().map(|f| f.0).collect(),
                deps: job.deps.clone(),
            },
        );
        Ok(())
    }

    /// Removes a failed artifact's files and manifest entry.
    fn discard(&mut self, id: &str) {
        if let Some(r) = self.manifest.artifacts.remove(id) {
            for f in r.files {
                let _ = std::fs::remove_file(self.resolve(&f));
            }
        }
    }

    // ---- loading -------------------------------------------------------

    pub fn load_corpus(&self, name: &str) -> Result<DomainCorpus> {
        let text = read(&self.root.join("corpus").join(format!("{name}.jsonl")))?;
        Ok(parse_jsonl(name, &text, None)?.corpus)
    }

    pub fn load_features(&self) -> Result<BTreeMap<(String, String), FeatureVector>> {
        let rows = features_from_csv(&read(&self.root.join("features/features.csv"))?)?;
        Ok(rows.into_iter().map(|r| ((r.source, r.target), r.features)).collect())
    }

    pub fn load_matrix(&self, variant: Variant) -> Result<(F1Matrix, MatrixManifest)> {
        let dir = self.root.join("downstream").join(variant.as_str());
        let manifest: MatrixManifest =
            serde_json::from_str(&read(&dir.join("manifest.json"))?).map_err(|e| Error::parse("matrix manifest", e.line(), e.to_string()))?;
        let mut domains = Vec::new();
        let mut per_seed = Vec::new();
        for s in &manifest.seeds {
            let (d, m) = F1Matrix::parse_matrix_csv(&read(&dir.join(format!("seed_{s}.csv")))?)?;
            domains = d;
            per_seed.push(m);
        }
        Ok((F1Matrix::from_per_seed(variant, domains, manifest.seeds.clone(), per_seed)?, manifest))
    }

    pub fn load_orderings(&self, variant: Variant, mode: Mode) -> Result<Vec<Ordering>> {
        orderings_from_csv(&read(&self.meta_dir(variant, mode).join("orderings.csv"))?)
    }

    fn meta_dir(&self, variant: Variant, mode: Mode) -> PathBuf {
        self.root.join("meta").join(variant.as_str()).join(mode.as_str())
    }

    fn sentence_provider(&self, cfg: &PipelineConfig) -> Result<SentenceEmbeddingProvider> {
        match cfg.sentence.source {
            SentenceSource::Universal => {
                let text = read(&self.root.join("sentence/universal.w2v"))?;
                Ok(SentenceEmbeddingProvider::MeanPooled(EmbeddingTable::from_word2vec("universal", &text)?))
            }
            SentenceSource::File => {
                let path = cfg.sentence.path.as_ref().expect("validated");
                SentenceEmbeddingProvider::from_jsonl(&read(path)?)
            }
        }
    }

    // ---- stages --------------------------------------------------------

    /// Registers and splits one input file, as the `ingest` subcommand does.
    pub fn ingest(&mut self, source: &DomainSource, split: &SplitConfig) -> Result<()> {
        validate_name(&source.name)?;
        self.manifest.domains.insert(
            source.name.clone(),
            DomainOrigin::File {
                path: source.path.clone(),
                format: source.format,
                binarize_threshold: source.binarize_threshold.map(|t| format!("{t:?}")),
            },
        );
        let job = self.file_ingest_job(source.clone(), split.clone())?;
        self.run_jobs(vec![job])
    }

    fn file_ingest_job(&self, source: DomainSource, split: SplitConfig) -> Result<Job<'static>> {
        let bytes = std::fs::read(&source.path).map_err(|e| Error::io(&source.path, e))?;
        let material = serde_json::json!({
            "path": source.path, "format": source.format,
            "binarize_threshold": source.binarize_threshold.map(|t| format!("{t:?}")),
            "content": sha256_hex(&bytes), "split": split,
        });
        let id = format!("corpus/{}", source.name);
        Ok(Job {
            id,
            stage: Stage::Ingest,
            material,
            seed: Some(split.seed),
            deps: Vec::new(),
            build: Box::new(move || {
                let text = String::from_utf8(bytes.clone()).map_err(|e| Error::parse("corpus", 1, e.to_string()))?;
                let loaded = corpus::parse_corpus(&source.name, &text, source.format, source.binarize_threshold)?;
                if loaded.rejected > 0 {
                    log::warn!("{}: rejected {} records with empty text", source.name, loaded.rejected);
                }
                let c = corpus::split(&loaded.corpus, split.ratios.into(), split.seed)?;
                Ok(vec![(format!("corpus/{}.jsonl", source.name), c.to_jsonl().into_bytes())])
            }),
        })
    }

    fn stage_ingest(&mut self, cfg: &PipelineConfig) -> Result<()> {
        let mut jobs = Vec::new();
        for d in &cfg.domains {
            self.manifest.domains.insert(
                d.name.clone(),
                DomainOrigin::File {
                    path: d.path.clone(),
                    format: d.format,
                    binarize_threshold: d.binarize_threshold.map(|t| format!("{t:?}")),
                },
            );
            jobs.push(self.file_ingest_job(d.clone(), cfg.split.clone())?);
        }
        if let Some(spec) = &cfg.synthetic {
            let world = std::sync::OnceLock::new();
            let world = std::sync::Arc::new(world);
            for i in 0..spec.domains {
                let name = synth::domain_name(i);
                self.manifest.domains.insert(name.clone(), DomainOrigin::Synthetic { index: i });
                let (spec, split, world) = (spec.clone(), cfg.split.clone(), world.clone());
                jobs.push(Job {
                    id: format!("corpus/{name}"),
                    stage: Stage::Ingest,
                    material: serde_json::json!({ "synthetic": spec, "index": i, "split": split }),
                    seed: Some(split.seed),
                    deps: Vec::new(),
                    build: Box::new(move || {
                        let all: &std::result::Result<Vec<DomainCorpus>, String> =
                            world.get_or_init(|| synth::generate_synthetic(&spec).map_err(|e| e.to_string()));
                        let all = all.as_ref().map_err(|e| Error::Config(e.clone()))?;
                        let c = corpus::split(&all[i], split.ratios.into(), split.seed)?;
                        Ok(vec![(format!("corpus/{name}.jsonl"), c.to_jsonl().into_bytes())])
                    }),
                });
            }
        }
        // Domains registered earlier through `ingest` keep their artifacts
        // when their source file is still readable.
        let configured: BTreeSet<String> = jobs.iter().map(|j| j.id.clone()).collect();
        for (name, origin) in self.manifest.domains.clone() {
            let id = format!("corpus/{name}");
            if configured.contains(&id) {
                continue;
            }
            match origin {
                DomainOrigin::File { path, format, binarize_threshold } if path.exists() => {
                    let source = DomainSource {
                        name: name.clone(),
                        path,
                        format,
                        binarize_threshold: binarize_threshold.and_then(|t| t.parse().ok()),
                    };
                    jobs.push(self.file_ingest_job(source, cfg.split.clone())?);
                }
                _ if self.manifest.artifacts.contains_key(&id) => {
                    log::warn!("{name}: source unavailable; reusing the stored corpus");
                }
                _ => return Err(Error::MissingArtifact(format!("{id} (source unavailable)"))),
            }
        }
        if self.manifest.domains.is_empty() {
            return Err(Error::Config("no domains: add `domains`, `synthetic`, or run `ingest` first".into()));
        }
        self.run_jobs(jobs)
    }

    fn stage_sentence(&mut self, cfg: &PipelineConfig) -> Result<()> {
        let domains = self.domains();
        let deps: Vec<String> = domains.iter().map(|d| format!("corpus/{d}")).collect();
        let job = match cfg.sentence.source {
            SentenceSource::Universal => {
                let sg = cfg.sentence.skipgram.clone();
                let root = self.root.clone();
                Job {
                    id: "sentence/universal".into(),
                    stage: Stage::Embed,
                    material: serde_json::json!({ "source": "universal", "skipgram": sg }),
                    seed: Some(sg.seed),
                    deps,
                    build: Box::new(move || {
                        let mut sentences = Vec::new();
                        for d in &domains {
                            let text = read(&root.join("corpus").join(format!("{d}.jsonl")))?;
                            let c = parse_jsonl(d, &text, None)?.corpus;
                            sentences.extend(c.texts(Some(Split::Train)).map(tokenize));
                        }
                        let (table, _) = embed::train_skipgram_sentences("universal", &sentences, &sg)?;
                        Ok(vec![("sentence/universal.w2v".into(), table.to_word2vec().into_bytes())])
                    }),
                }
            }
            SentenceSource::File => {
                let path = cfg.sentence.path.clone().expect("validated");
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                Job {
                    id: "sentence/file".into(),
                    stage: Stage::Embed,
                    material: serde_json::json!({ "source": "file", "path": path, "content": sha256_hex(&bytes) }),
                    seed: None,
                    deps,
                    build: Box::new(move || {
                        let text = String::from_utf8(bytes.clone()).map_err(|e| Error::parse("sentence vectors", 1, e.to_string()))?;
                        SentenceEmbeddingProvider::from_jsonl(&text)?;
                        Ok(vec![("sentence/vectors.jsonl".into(), bytes.clone())])
                    }),
                }
            }
        };
        self.run_jobs(vec![job])
    }

    fn sentence_id(cfg: &PipelineConfig) -> &'static str {
        match cfg.sentence.source {
            SentenceSource::Universal => "sentence/universal",
            SentenceSource::File => "sentence/file",
        }
    }

    fn stage_embed(&mut self, cfg: &PipelineConfig, only: Option<&[String]>) -> Result<()> {
        let root = self.root.clone();
        let jobs = self
            .domains()
            .into_iter()
            .filter(|d| only.is_none_or(|o| o.contains(d)))
            .map(|d| {
                let (sg, root) = (cfg.embed.clone(), root.clone());
                Job {
                    id: format!("embed/{d}"),
                    stage: Stage::Embed,
                    material: serde_json::json!({ "skipgram": sg }),
                    seed: Some(sg.seed),
                    deps: vec![format!("corpus/{d}")],
                    build: Box::new(move || {
                        let c = parse_jsonl(&d, &read(&root.join("corpus").join(format!("{d}.jsonl")))?, None)?.corpus;
                        let table = embed::train_skipgram(&c, &sg)?;
                        Ok(vec![(format!("embed/{d}.w2v"), table.to_word2vec().into_bytes())])
                    }),
                }
            })
            .collect();
        self.run_jobs(jobs)
    }

    fn stage_lm(&mut self, cfg: &PipelineConfig, only: Option<&[String]>) -> Result<()> {
        let root = self.root.clone();
        let jobs = self
            .domains()
            .into_iter()
            .filter(|d| only.is_none_or(|o| o.contains(d)))
            .map(|d| {
                let (lm, root) = (cfg.lm, root.clone());
                Job {
                    id: format!("lm/{d}"),
                    stage: Stage::Lm,
                    material: serde_json::json!({ "lm": lm }),
                    seed: None,
                    deps: vec![format!("corpus/{d}")],
                    build: Box::new(move || {
                        let c = parse_jsonl(&d, &read(&root.join("corpus").join(format!("{d}.jsonl")))?, None)?.corpus;
                        Ok(vec![(format!("lm/{d}.kn"), train_kn(&c, lm)?.to_text().into_bytes())])
                    }),
                }
            })
            .collect();
        self.run_jobs(jobs)
    }

    fn stage_features(&mut self, cfg: &PipelineConfig) -> Result<()> {
        let domains = self.domains();
        let deps = domains
            .iter()
            .flat_map(|d| [format!("corpus/{d}"), format!("embed/{d}"), format!("lm/{d}")])
            .collect();
        let (fc, root) = (cfg.features, self.root.clone());
        let job = Job {
            id: "features".into(),
            stage: Stage::Features,
            material: serde_json::json!({ "features": fc }),
            seed: None,
            deps,
            build: Box::new(move || {
                let mut corpora = Vec::new();
                let mut tables = Vec::new();
                let mut lms = Vec::new();
                for d in &domains {
                    corpora.push(parse_jsonl(d, &read(&root.join("corpus").join(format!("{d}.jsonl")))?, None)?.corpus);
                    tables.push(EmbeddingTable::from_word2vec(d, &read(&root.join("embed").join(format!("{d}.w2v")))?)?);
                    lms.push(TrigramLm::from_text(&read(&root.join("lm").join(format!("{d}.kn")))?)?);
                }
                let profiles = (0..domains.len())
                    .map(|i| DomainProfile::new(&corpora[i], &tables[i], &lms[i]))
                    .collect::<Result<Vec<_>>>()?;
                let pairs: Vec<(usize, usize)> = (0..domains.len())
                    .flat_map(|s| (0..domains.len()).filter(move |&t| t != s).map(move |t| (s, t)))
                    .collect();
                let rows = pairs
                    .par_iter()
                    .map(|&(s, t)| {
                        Ok(FeatureRow {
                            source: domains[s].clone(),
                            target: domains[t].clone(),
                            features: feature_vector(&profiles[s], &profiles[t], &fc)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(vec![("features/features.csv".into(), features_to_csv(&rows).into_bytes())])
            }),
        };
        self.run_jobs(vec![job])
    }

    fn stage_adapt(&mut self, cfg: &PipelineConfig, variants: &[Variant], pair: Option<&(String, String)>) -> Result<()> {
        let domains = self.domains();
        let sentence = Self::sentence_id(cfg);
        let provider = std::sync::Arc::new(self.sentence_provider(cfg)?);
        let corpora: std::sync::Arc<BTreeMap<String, DomainCorpus>> =
            std::sync::Arc::new(domains.iter().map(|d| Ok((d.clone(), self.load_corpus(d)?))).collect::<Result<_>>()?);
        let mut jobs = Vec::new();
        for &v in variants.iter().filter(|v| **v != Variant::Dt) {
            let acfg = cfg.adapt.config_for(v);
            for s in &domains {
                for t in &domains {
                    if s == t || pair.is_some_and(|p| (&p.0, &p.1) != (s, t)) {
                        continue;
                    }
                    let (acfg, seed) = (acfg.clone(), cfg.adapt.seed);
                    let (s, t, provider, corpora) = (s.clone(), t.clone(), provider.clone(), corpora.clone());
                    jobs.push(Job {
                        id: format!("adapt/{v}/{}", pair_file(&s, &t)),
                        stage: Stage::Adapt,
                        material: serde_json::json!({ "adapt": acfg, "seed": seed }),
                        seed: Some(seed),
                        deps: vec![format!("corpus/{s}"), format!("corpus/{t}"), sentence.to_string()],
                        build: Box::new(move || {
                            let xs = train_texts_matrix(&corpora[&s], &provider)?;
                            let xt = train_texts_matrix(&corpora[&t], &provider)?;
                            let model = adapt::train(&xs, &xt, &acfg, seed)?;
                            Ok(vec![(format!("adapt/{v}/{}.json", pair_file(&s, &t)), model.to_json().into_bytes())])
                        }),
                    });
                }
            }
        }
        self.run_jobs(jobs)
    }

    fn stage_downstream(&mut self, cfg: &PipelineConfig, variants: &[Variant]) -> Result<()> {
        let domains = self.domains();
        let sentence = Self::sentence_id(cfg);
        let mut jobs = Vec::new();
        for &v in variants {
            let mut deps: Vec<String> = domains.iter().map(|d| format!("corpus/{d}")).collect();
            deps.push(sentence.to_string());
            if v != Variant::Dt {
                for s in &domains {
                    for t in domains.iter().filter(|t| *t != s) {
                        deps.push(format!("adapt/{v}/{}", pair_file(s, t)));
                    }
                }
            }
            let ds = cfg.downstream.clone();
            let root = self.root.clone();
            let domains = domains.clone();
            let provider = self.sentence_provider(cfg)?;
            let corpora: Vec<DomainCorpus> = domains.iter().map(|d| self.load_corpus(d)).collect::<Result<_>>()?;
            jobs.push(Job {
                id: format!("downstream/{v}"),
                stage: Stage::Downstream,
                material: serde_json::json!({ "downstream": ds }),
                seed: ds.seeds.first().copied(),
                deps,
                build: Box::new(move || {
                    let splits = corpora.iter().map(|c| domain_splits(c, &provider)).collect::<Result<Vec<_>>>()?;
                    let mut models = BTreeMap::new();
                    if v != Variant::Dt {
                        for s in &domains {
                            for t in domains.iter().filter(|t| *t != s) {
                                let path = root.join("adapt").join(v.as_str()).join(format!("{}.json", pair_file(s, t)));
                                models.insert((s.clone(), t.clone()), AdaptModel::from_json(&read(&path)?)?);
                            }
                        }
                    }
                    let m = cross_domain_matrix(&splits, v, &models, &ds.seeds, &ds.classifier)?;
                    let dir = format!("downstream/{v}");
                    let mut files: Files = m
                        .seeds
                        .iter()
                        .zip(&m.per_seed)
                        .map(|(s, ps)| (format!("{dir}/seed_{s}.csv"), F1Matrix::matrix_csv(&m.domains, ps).into_bytes()))
                        .collect();
                    files.push((format!("{dir}/mean.csv"), F1Matrix::matrix_csv(&m.domains, &m.mean).into_bytes()));
                    let manifest = MatrixManifest {
                        variant: v,
                        seeds: ds.seeds.clone(),
                        threshold: ds.threshold,
                    };
                    files.push((format!("{dir}/manifest.json"), serde_json::to_string_pretty(&manifest).unwrap().into_bytes()));
                    Ok(files)
                }),
            });
        }
        self.run_jobs(jobs)
    }

    fn stage_meta(&mut self, cfg: &PipelineConfig, variants: &[Variant], modes: &[Mode]) -> Result<()> {
        let domains = self.domains();
        let features = std::sync::Arc::new(self.load_features()?);
        let mut jobs = Vec::new();
        for &v in variants {
            let (matrix, mm) = self.load_matrix(v)?;
            let matrix = std::sync::Arc::new(matrix);
            for &mode in modes {
                let (mc, features, matrix, domains) = (cfg.meta.clone(), features.clone(), matrix.clone(), domains.clone());
                let threshold = mm.threshold;
                jobs.push(Job {
                    id: format!("meta/{v}/{}", mode.as_str()),
                    stage: Stage::Meta,
                    material: serde_json::json!({ "meta": mc }),
                    seed: Some(mc.gbdt.seed),
                    deps: vec!["features".into(), format!("downstream/{v}")],
                    build: Box::new(move || {
                        let outcomes = match mode {
                            Mode::Predictor => {
                                let labels = success_labels(&matrix, threshold)?.success;
                                meta::loto_splits(&domains)?
                                    .par_iter()
                                    .map(|split| {
                                        meta::success_predictor(&features, &labels, split, &mc.gbdt)
                                            .map_err(|e| stage_error(Stage::Meta, &format!("{v}/predictor/{}", split.target), e))
                                    })
                                    .collect::<Result<Vec<_>>>()?
                            }
                            Mode::Ranker => meta::loto_ranker_splits(&domains)?
                                .par_iter()
                                .map(|split| {
                                    meta::domain_ranker(&features, &matrix, split, &mc.gbdt, mc.repeats)
                                        .map_err(|e| stage_error(Stage::Meta, &format!("{v}/ranker/{}", split.target), e))
                                })
                                .collect::<Result<Vec<_>>>()?,
                        };
                        let dir = format!("meta/{v}/{}", mode.as_str());
                        let orderings: Vec<Ordering> = outcomes.iter().map(|o| o.ordering.clone()).collect();
                        let mut metrics = String::from("target,f1,accuracy\n");
                        let mut importance: BTreeMap<String, f64> = BTreeMap::new();
                        let mut files: Files = Vec::new();
                        for o in &outcomes {
                            writeln!(metrics, "{},{:.16e},{:.16e}", o.ordering.target, o.f1, o.accuracy).unwrap();
                            for (k, x) in o.model.feature_importance() {
                                *importance.entry(k).or_insert(0.0) += x / outcomes.len() as f64;
                            }
                            files.push((format!("{dir}/models/{}.json", o.ordering.target), o.model.to_json().into_bytes()));
                        }
                        let mut imp = String::from("feature,importance\n");
                        let mut ranked: Vec<(String, f64)> = importance.into_iter().collect();
                        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                        for (k, x) in ranked {
                            writeln!(imp, "{k},{x:.16e}").unwrap();
                        }
                        files.push((format!("{dir}/orderings.csv"), orderings_to_csv(&orderings).into_bytes()));
                        files.push((format!("{dir}/metrics.csv"), metrics.into_bytes()));
                        files.push((format!("{dir}/importance.csv"), imp.into_bytes()));
                        Ok(files)
                    }),
                });
            }
        }
        self.run_jobs(jobs)
    }

    fn load_meta_metrics(&self, variant: Variant, mode: Mode) -> Result<BTreeMap<String, (f64, f64)>> {
        let text = read(&self.meta_dir(variant, mode).join("metrics.csv"))?;
        let mut out = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let c: Vec<&str> = line.split(',').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse("meta metrics", i + 1, e.to_string()));
            if c.len() != 3 {
                return Err(Error::parse("meta metrics", i + 1, "expected 3 cells"));
            }
            out.insert(c[0].to_string(), (num(c[1])?, num(c[2])?));
        }
        Ok(out)
    }

    fn stage_report(&mut self, cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
        let domains = self.domains();
        let variants = cfg.variants();
        let mut deps: Vec<String> = Vec::new();
        for v in &variants {
            deps.push(format!("downstream/{v}"));
            for m in Mode::ALL {
                deps.push(format!("meta/{v}/{}", m.as_str()));
            }
        }
        let pca_variant = cfg.report.pca_variant.unwrap_or(*variants.last().unwrap());
        let pairs: Vec<(String, String)> = if cfg.report.pca_pairs.is_empty() {
            domains.get(0..2).map(|d| vec![(d[0].clone(), d[1].clone())]).unwrap_or_default()
        } else {
            cfg.report.pca_pairs.clone()
        };
        for (s, t) in &pairs {
            if !domains.contains(s) || !domains.contains(t) || s == t {
                return Err(Error::Config(format!("report.pca_pairs: ({s}, {t}) is not a pair of distinct registered domains")));
            }
            if pca_variant != Variant::Dt && !variants.contains(&pca_variant) {
                return Err(Error::Config(format!("report.pca_variant {pca_variant} is not among the adapt variants")));
            }
            if pca_variant != Variant::Dt {
                deps.push(format!("adapt/{pca_variant}/{}", pair_file(s, t)));
            }
        }
        // Workspace-relative by default; an explicit --out is made absolute.
        let dir_str = match out {
            Some(p) if p.is_absolute() => p.to_string_lossy().into_owned(),
            Some(p) => std::env::current_dir()
                .map_err(|e| Error::io(p, e))?
                .join(p)
                .to_string_lossy()
                .into_owned(),
            None => "report".to_string(),
        };
        let file = |name: &str| format!("{dir_str}/{name}");

        let mut matrices = BTreeMap::new();
        let mut table1 = BTreeMap::new();
        for &v in &variants {
            let (m, mm) = self.load_matrix(v)?;
            let labels = success_labels(&m, mm.threshold)?;
            for mode in Mode::ALL {
                let orderings = self.load_orderings(v, mode)?;
                let metrics = self.load_meta_metrics(v, mode)?;
                let results = orderings
                    .into_iter()
                    .map(|o| {
                        let (f1, accuracy) = *metrics
                            .get(&o.target)
                            .ok_or_else(|| Error::MissingArtifact(format!("meta metrics for {v}/{}/{}", mode.as_str(), o.target)))?;
                        Ok(TargetResult {
                            target: o.target.clone(),
                            f1,
                            accuracy,
                            truth: report::true_ordering(&m, &o.target)?,
                            prediction: o,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                table1.entry(mode).or_insert_with(BTreeMap::new).insert(v, results);
            }
            matrices.insert(v, (m, labels));
        }
        let provider = self.sentence_provider(cfg)?;
        let mut pca_inputs = Vec::new();
        for (s, t) in &pairs {
            let mut xs = train_texts_matrix(&self.load_corpus(s)?, &provider)?;
            let mut xt = train_texts_matrix(&self.load_corpus(t)?, &provider)?;
            if pca_variant != Variant::Dt {
                let path = self.root.join("adapt").join(pca_variant.as_str()).join(format!("{}.json", pair_file(s, t)));
                let model = AdaptModel::from_json(&read(&path)?)?;
                xs = adapt::encode(&model, &xs)?;
                xt = adapt::encode(&model, &xt)?;
            }
            pca_inputs.push((s.clone(), t.clone(), xs, xt));
        }
        let hashes: BTreeMap<String, String> = deps.iter().map(|d| Ok((d.clone(), self.key_of(d)?))).collect::<Result<_>>()?;
        let report_manifest = serde_json::json!({
            "variants": variants,
            "downstream_seeds": cfg.downstream.seeds,
            "meta_seed": cfg.meta.gbdt.seed,
            "pca_variant": pca_variant,
            "artifacts": hashes,
        });
        let job = Job {
            id: "report".into(),
            stage: Stage::Report,
            material: serde_json::json!({ "report": cfg.report, "out": dir_str }),
            seed: None,
            deps,
            build: Box::new(move || {
                let mut files: Files = Vec::new();
                for (mode, results) in &table1 {
                    let rep = report::build_table1(results)?;
                    files.push((file(&format!("table1_{}.csv", mode.as_str())), rep.to_csv().into_bytes()));
                    files.push((file(&format!("table1_{}.txt", mode.as_str())), rep.to_text().into_bytes()));
                }
                let t2 = report::build_table2(&matrices)?;
                files.push((file("table2.csv"), t2.to_csv().into_bytes()));
                files.push((file("table2.txt"), t2.to_text().into_bytes()));
                for (s, t, xs, xt) in &pca_inputs {
                    files.push((file(&format!("pca_{}.csv", pair_file(s, t))), report::pca_export(s, xs, t, xt, 1)?.into_bytes()));
                }
                files.push((file("manifest.json"), serde_json::to_string_pretty(&report_manifest).unwrap().into_bytes()));
                Ok(files)
            }),
        };
        self.run_jobs(vec![job])
    }

    /// Runs every stage up to `target.last`, skipping up-to-date artifacts.
    pub fn run(&mut self, cfg: &PipelineConfig, target: &Target) -> Result<RunSummary> {
        cfg.validate()?;
        self.summary = RunSummary::default();
        write_atomic(&self.root.join("config.json"), cfg.to_json().as_bytes())?;
        self.stage_ingest(cfg)?;
        if self.domains().len() < 2 && target.last > Stage::Lm {
            return Err(Error::Config("at least 2 domains are needed beyond the lm stage".into()));
        }
        let only = target.domains.as_deref();
        if target.last >= Stage::Embed {
            self.stage_embed(cfg, if target.last == Stage::Embed { only } else { None })?;
        }
        if target.last >= Stage::Lm {
            self.stage_lm(cfg, if target.last == Stage::Lm { only } else { None })?;
        }
        if target.last >= Stage::Features {
            self.stage_features(cfg)?;
        }
        let all_variants = cfg.variants();
        let variants = target.variants.clone().unwrap_or_else(|| all_variants.clone());
        if let Some(v) = variants.iter().find(|v| !all_variants.contains(v)) {
            return Err(Error::Config(format!("variant {v} is not configured in adapt.variants")));
        }
        let at = |s: Stage| target.last == s;
        if target.last >= Stage::Adapt {
            self.stage_sentence(cfg)?;
            let adapt_variants = if at(Stage::Adapt) { &variants } else { &all_variants };
            let pair = if at(Stage::Adapt) { target.pair.as_ref() } else { None };
            self.stage_adapt(cfg, adapt_variants, pair)?;
        }
        if target.last >= Stage::Downstream {
            self.stage_downstream(cfg, if at(Stage::Downstream) || at(Stage::Meta) { &variants } else { &all_variants })?;
        }
        if target.last >= Stage::Meta {
            let modes = target.modes.clone().unwrap_or_else(|| Mode::ALL.to_vec());
            let (vs, ms) = if at(Stage::Meta) { (&variants, modes) } else { (&all_variants, Mode::ALL.to_vec()) };
            self.stage_meta(cfg, vs, &ms)?;
        }
        if at(Stage::Report) {
            self.stage_report(cfg, target.report_dir.as_deref())?;
        }
        Ok(self.summary.clone())
    }
}

/// Sentence vectors of all train texts (a then b per example), one column each.
pub fn train_texts_matrix(c: &DomainCorpus, provider: &SentenceEmbeddingProvider) -> Result<DMatrix<f64>> {
    let mut cols = Vec::new();
    for (i, ex) in c.iter_split(Some(Split::Train)) {
        cols.push(provider.embed(&sentence_key(c.name(), Split::Train, i, Side::A), &ex.text_a)?);
        cols.push(provider.embed(&sentence_key(c.name(), Split::Train, i, Side::B), &ex.text_b)?);
    }
    if cols.is_empty() {
        return Err(Error::invalid("sentence matrix", format!("{} has no train examples", c.name())));
    }
    Ok(DMatrix::from_fn(provider.dim(), cols.len(), |r, j| cols[j][r]))
}

fn split_pairs(c: &DomainCorpus, split: Split, provider: &SentenceEmbeddingProvider) -> Result<PairData> {
    let d = provider.dim();
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut labels = Vec::new();
    for (i, ex) in c.iter_split(Some(split)) {
        a.push(provider.embed(&sentence_key(c.name(), split, i, Side::A), &ex.text_a)?);
        b.push(provider.embed(&sentence_key(c.name(), split, i, Side::B), &ex.text_b)?);
        labels.push(ex.label);
    }
    if labels.is_empty() {
        return Err(Error::invalid("downstream data", format!("{} has an empty {split} split", c.name())));
    }
    PairData::new(
        DMatrix::from_fn(d, a.len(), |r, j| a[j][r]),
        DMatrix::from_fn(d, b.len(), |r, j| b[j][r]),
        labels,
    )
}

pub fn domain_splits(c: &DomainCorpus, provider: &SentenceEmbeddingProvider) -> Result<DomainSplits> {
    Ok(DomainSplits {
        name: c.name().to_string(),
        train: split_pairs(c, Split::Train, provider)?,
        val: split_pairs(c, Split::Val, provider)?,
        test: split_pairs(c, Split::Test, provider)?,
    })
}

/// Runs the whole pipeline in a thread pool of `jobs` workers.
pub fn run_pipeline(root: &Path, cfg: &PipelineConfig, target: &Target, jobs: usize) -> Result<RunSummary> {
    pool(jobs)?.install(|| Workspace::open(root)?.run(cfg, target))
}

pub type Pool = rayon::ThreadPool;

pub fn pool(jobs: usize) -> Result<Pool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_config_key_is_named() {
        let err = PipelineConfig::from_json(r#"{"split": {"ratios": [0.8, 0.1, 0.1], "sed": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("sed"), "{err}");
        assert!(err.is_validation());
        assert!(PipelineConfig::from_json(r#"{"bogus": 1}"#).unwrap_err().to_string().contains("bogus"));
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_seed(40);
        assert_eq!(cfg.split.seed, 40);
        assert_eq!(cfg.embed.seed, 40);
        assert_eq!(cfg.sentence.skipgram.seed, 40);
        assert_eq!(cfg.adapt.seed, 40);
        assert_eq!(cfg.downstream.seeds, vec![40, 41, 42]);
        assert_eq!(cfg.meta.gbdt.seed, 40);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.split.ratios = [0.5, 0.5, 0.1];
        assert!(bad.validate().is_err());
        let mut dup = cfg;
        dup.adapt.variants = vec![Variant::Sda, Variant::Sda];
        assert!(dup.validate().is_err());
    }

    #[test]
    fn manifest_flags_stale_keys() {
        let mut m = Manifest::default();
        m.artifacts.insert(
            "features".into(),
            ArtifactRecord { key: "k1".into(), seed: None, files: vec![], deps: vec![] },
        );
        let expected: BTreeMap<String, String> =
            [("features".to_string(), "k2".to_string()), ("lm/a".to_string(), "x".to_string())].into();
        assert_eq!(m.stale(&expected), vec!["features".to_string(), "lm/a".to_string()]);
    }
}
