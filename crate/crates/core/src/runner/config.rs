//! Experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{ClassifierKind, ClassifierSpec, FeatureMode};
use crate::cohort::CohortConfig;
use crate::corpus::SyntheticSpec;
use crate::embed::{EmbedderKind, EmbedderSpec, Granularity};
use crate::error::{Error, Result};
use crate::pooling::{Pooling, PoolingSpec};
use crate::textproc::WindowSpec;

/// Environment variable that replaces the endpoint of every sidecar embedder.
pub const SIDECAR_ENV: &str = "NOTEMATCH_SIDECAR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Path(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_ratio: f64,
    /// One run per seed; each seed drives the split, the pairs and the
    /// classifiers of its run.
    pub seeds: Vec<u64>,
    pub draws_per_patient: usize,
    pub distinct_negatives: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            seeds: vec![1, 2, 3],
            draws_per_patient: 1,
            distinct_negatives: false,
        }
    }
}

/// One model setting: an embedder and its windowing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setting {
    pub name: String,
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub window: WindowSpec,
}

/// An aggregation strategy: a name applied at every level, or explicit
/// per-level choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AggregationSpec {
    Uniform(Pooling),
    PerLevel(PoolingSpec),
}

impl AggregationSpec {
    pub fn resolve(&self, granularity: Granularity) -> PoolingSpec {
        match *self {
            AggregationSpec::Uniform(p) => PoolingSpec::uniform(p, granularity),
            AggregationSpec::PerLevel(s) => s,
        }
    }
}

fn default_aggregations() -> Vec<AggregationSpec> {
    Pooling::ALL.iter().map(|&p| AggregationSpec::Uniform(p)).collect()
}

fn default_classifiers() -> Vec<ClassifierSpec> {
    vec![ClassifierSpec::default_for(ClassifierKind::Boost)]
}

fn default_threshold() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusSource,
    /// Vocabulary file; synthetic corpora fall back to their own vocabulary.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub lowercase: bool,
    #[serde(default)]
    pub cohort: CohortConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub settings: Vec<Setting>,
    #[serde(default = "default_aggregations")]
    pub aggregations: Vec<AggregationSpec>,
    #[serde(default)]
    pub feature_mode: FeatureMode,
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<ClassifierSpec>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Where artifacts go; the `--out` flag takes precedence.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Embedding caches; defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a configuration; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let CorpusSource::Path(p) = &mut self.corpus {
            fix(p);
        }
        for p in [&mut self.vocab, &mut self.output_dir, &mut self.cache_dir].into_iter().flatten() {
            fix(p);
        }
        for s in &mut self.settings {
            if let Some(p) = &mut s.embedder.path {
                fix(p);
            }
        }
    }

    /// Replaces sidecar endpoints with `NOTEMATCH_SIDECAR` when it is set.
    pub fn apply_env(&mut self) {
        if let Ok(ep) = std::env::var(SIDECAR_ENV) {
            if !ep.is_empty() {
                for s in &mut self.settings {
                    if s.embedder.kind == EmbedderKind::Sidecar {
                        s.embedder.endpoint = Some(ep.clone());
                    }
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.corpus {
            CorpusSource::Synthetic(spec) => spec.validate()?,
            CorpusSource::Path(p) => {
                if !p.exists() {
                    return Err(Error::Config(format!("corpus file {} does not exist", p.display())));
                }
                if self.vocab.is_none() {
                    return Err(Error::Config("a vocab file is required for a corpus read from disk".into()));
                }
            }
        }
        if let Some(v) = &self.vocab {
            if !v.exists() {
                return Err(Error::Config(format!("vocab file {} does not exist", v.display())));
            }
        }
        self.cohort.validate()?;
        if self.split.seeds.is_empty() {
            return Err(Error::Config("split.seeds must not be empty".into()));
        }
        let mut seeds = self.split.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.split.seeds.len() {
            return Err(Error::Config("split.seeds contains duplicates".into()));
        }
        if self.settings.is_empty() {
            return Err(Error::Config("at least one setting is required".into()));
        }
        for (i, s) in self.settings.iter().enumerate() {
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                return Err(Error::Config(format!(
                    "setting name {:?} must be non-empty and use only [A-Za-z0-9._-]",
                    s.name
                )));
            }
            if self.settings[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Config(format!("duplicate setting name {:?}", s.name)));
            }
            s.embedder.validate()?;
            s.window.validate()?;
            if s.embedder.granularity != Granularity::Document && s.window.size > s.embedder.max_len() {
                return Err(Error::Config(format!(
                    "setting {}: window {} exceeds embedder max_len {}",
                    s.name,
                    s.window.size,
                    s.embedder.max_len()
                )));
            }
            for a in &self.aggregations {
                a.resolve(s.embedder.granularity).validate(s.embedder.granularity)?;
            }
        }
        if self.aggregations.is_empty() {
            return Err(Error::Config("at least one aggregation is required".into()));
        }
        if self.classifiers.is_empty() {
            return Err(Error::Config("at least one classifier is required".into()));
        }
        for (i, c) in self.classifiers.iter().enumerate() {
            if self.classifiers[..i].iter().any(|o| o.kind() == c.kind()) {
                return Err(Error::Config(format!("classifier {} listed twice", c.kind())));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring output locations.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
            obj.remove("cache_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}
