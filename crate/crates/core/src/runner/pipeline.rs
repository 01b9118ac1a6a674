//! End-to-end experiment execution.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{CorpusSource, PipelineConfig, Setting};
use crate::classify::{build_features, predict, ClassifierSpec, Dataset, FeatureMode};
use crate::cohort::{self, CohortReport};
use crate::corpus::{generate_synthetic, load_corpus, synthetic_vocabulary, Corpus};
use crate::embed::{self, Embedder, EmbedderKind, EmbeddingCache, Granularity};
use crate::error::{Error, Result};
use crate::evaluate::{
    aggregate_runs, compute_metrics, paired_ttest, AggregateRow, EvalReport, MetricSet, RunRow, SeedError, TTestEntry,
};
use crate::pairing::{build_pairs, split_patients, write_pairs, PairInstance, Split, SplitSpec};
use crate::pooling::{lift_target, note_repr, patient_repr, PoolingSpec, TokenPooling};
use crate::seed::derive_seed;
use crate::textproc::{split_sentences, Vocabulary, WordPiece};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub verbose: bool,
}

/// Token ids per sentence for every note; sentences without tokens are dropped.
pub type TokenizedCorpus = HashMap<String, Vec<Vec<u32>>>;

/// Vectors per note: flattened chunk vectors, or one document vector.
pub type NoteChunks = HashMap<String, Vec<Vec<f32>>>;

/// Inputs shared by every run of an experiment.
#[derive(Debug)]
pub struct Inputs {
    pub corpus: Corpus,
    pub cohort_report: CohortReport,
    pub tokenizer: WordPiece,
}

/// Loads or generates the corpus, loads the vocabulary and cleans the cohort.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    let raw = match &cfg.corpus {
        CorpusSource::Path(p) => load_corpus(p)?,
        CorpusSource::Synthetic(spec) => generate_synthetic(spec)?,
    };
    let vocab = match (&cfg.vocab, &cfg.corpus) {
        (Some(p), _) => Vocabulary::load(p)?,
        (None, CorpusSource::Synthetic(spec)) => Vocabulary::from_tokens(&synthetic_vocabulary(spec.vocab_size))?,
        (None, CorpusSource::Path(_)) => {
            return Err(Error::Config("a vocab file is required for a corpus read from disk".into()))
        }
    };
    let tokenizer = if cfg.lowercase {
        WordPiece::new(vocab)
    } else {
        WordPiece::cased(vocab)
    };
    let (corpus, cohort_report) = cohort::apply(&raw, &cfg.cohort)?;
    Ok(Inputs {
        corpus,
        cohort_report,
        tokenizer,
    })
}

pub fn tokenize_corpus(corpus: &Corpus, tokenizer: &WordPiece) -> TokenizedCorpus {
    let notes: Vec<_> = corpus.notes().collect();
    notes
        .par_iter()
        .map(|n| {
            let sentences = split_sentences(&n.text)
                .iter()
                .map(|s| tokenizer.tokenize(s))
                .filter(|ids| !ids.is_empty())
                .collect();
            (n.note_id.clone(), sentences)
        })
        .collect()
}

/// How one setting's vectors are produced and where they are cached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VectorKind {
    Chunks(TokenPoolingKey),
    Document,
}

/// Orderable stand-in for [`TokenPooling`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenPoolingKey(u8);

impl From<TokenPooling> for TokenPoolingKey {
    fn from(t: TokenPooling) -> Self {
        use crate::pooling::Pooling;
        TokenPoolingKey(match t {
            TokenPooling::Pool(Pooling::Avg) => 0,
            TokenPooling::Pool(Pooling::Max) => 1,
            TokenPooling::Pool(Pooling::MeanMax) => 2,
            TokenPooling::Cls => 3,
        })
    }
}

impl TokenPoolingKey {
    fn pooling(self) -> TokenPooling {
        use crate::pooling::Pooling;
        match self.0 {
            0 => TokenPooling::Pool(Pooling::Avg),
            1 => TokenPooling::Pool(Pooling::Max),
            2 => TokenPooling::Pool(Pooling::MeanMax),
            _ => TokenPooling::Cls,
        }
    }
}

impl VectorKind {
    pub fn for_spec(spec: &PoolingSpec, granularity: Granularity) -> Self {
        match granularity {
            Granularity::Document => VectorKind::Document,
            _ => VectorKind::Chunks(spec.token_level.into()),
        }
    }

    pub fn label(self) -> String {
        match self {
            VectorKind::Chunks(t) => t.pooling().as_str().to_string(),
            VectorKind::Document => "document".to_string(),
        }
    }
}

/// SHA-256 over every note id and its sentence token ids, in note id order.
pub fn tokens_digest(tokens: &TokenizedCorpus) -> String {
    let mut ids: Vec<&String> = tokens.keys().collect();
    ids.sort();
    let mut h = Sha256::new();
    for id in ids {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
        let sentences = &tokens[id];
        h.update((sentences.len() as u64).to_le_bytes());
        for s in sentences {
            h.update((s.len() as u64).to_le_bytes());
            for t in s {
                h.update(t.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// Cache file name for a setting: its name, the vector kind, and a digest
/// of everything the cached values depend on, including the token content
/// of the corpus so that reused note ids never pick up stale vectors.
/// The sidecar address is not part of the key.
pub fn cache_file_name(setting: &Setting, kind: VectorKind, tokens_digest: &str) -> String {
    let mut embedder = setting.embedder.clone();
    embedder.endpoint = None;
    let key = serde_json::json!({
        "embedder": embedder,
        "window": setting.window,
        "kind": kind.label(),
        "tokens": tokens_digest,
    });
    let digest = hex::encode(Sha256::digest(key.to_string().as_bytes()));
    format!("{}-{}-{}.nem", setting.name, kind.label(), &digest[..16])
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EmbedStats {
    pub cache_hits: usize,
    pub computed: usize,
    pub truncations: u64,
}

/// Cache key and token ids of one vector.
type Job = (String, Vec<u32>);

/// Keys and inputs of every vector a note needs.
fn note_jobs(setting: &Setting, kind: VectorKind, note_id: &str, sentences: &[Vec<u32>]) -> Result<Vec<Job>> {
    match kind {
        VectorKind::Document => Ok(vec![(note_id.to_string(), sentences.concat())]),
        VectorKind::Chunks(_) => {
            let mut jobs = vec![];
            for (s, ids) in sentences.iter().enumerate() {
                for c in setting.window.chunks(ids)? {
                    jobs.push((format!("{note_id}:{s}:{}", c.start), c.token_ids));
                }
            }
            Ok(jobs)
        }
    }
}

fn compute_vector(embedder: &dyn Embedder, kind: VectorKind, ids: &[u32]) -> Result<Vec<f32>> {
    match kind {
        VectorKind::Document => embedder.embed_document(ids),
        VectorKind::Chunks(t) => {
            let chunk = crate::textproc::Chunk {
                start: 0,
                end: ids.len(),
                token_ids: ids.to_vec(),
            };
            Ok(crate::pooling::chunk_vectors(std::slice::from_ref(&chunk), embedder, t.pooling())?.remove(0))
        }
    }
}

/// Vectors for every note of the corpus under one setting, reusing and
/// extending the cache at `cache_path` when one is given.
pub fn embed_setting(
    setting: &Setting,
    kind: VectorKind,
    corpus: &Corpus,
    tokens: &TokenizedCorpus,
    vocab_digest: &str,
    cache_path: Option<&Path>,
) -> Result<(NoteChunks, EmbedStats)> {
    let mut jobs: Vec<(String, Vec<Job>)> = vec![];
    for n in corpus.notes() {
        let sentences = &tokens[&n.note_id];
        if sentences.is_empty() {
            return Err(Error::invalid(format!("note {} has no tokens to embed", n.note_id)));
        }
        jobs.push((n.note_id.clone(), note_jobs(setting, kind, &n.note_id, sentences)?));
    }

    let mut stats = EmbedStats::default();
    let dim = match kind {
        VectorKind::Document => setting.embedder.dim,
        VectorKind::Chunks(t) => setting.embedder.dim * t.pooling().factor(),
    };
    if setting.embedder.kind == EmbedderKind::Cache {
        let path = setting.embedder.path.as_deref().expect("validated");
        let cache = EmbeddingCache::read(path)?;
        if !cache.is_empty() && cache.dim() != dim {
            return Err(Error::DimMismatch {
                left: cache.dim(),
                right: dim,
            });
        }
        let mut out = NoteChunks::new();
        for (note_id, note_jobs) in jobs {
            let mut vs = vec![];
            for (key, _) in note_jobs {
                let v = cache
                    .get(&key)
                    .ok_or_else(|| Error::invalid(format!("{}: no cached vector for key {key:?}", path.display())))?;
                vs.push(v.to_vec());
                stats.cache_hits += 1;
            }
            out.insert(note_id, vs);
        }
        return Ok((out, stats));
    }

    let mut cache = match cache_path {
        Some(p) if p.exists() => EmbeddingCache::read(p)?,
        _ => EmbeddingCache::new(dim),
    };
    let missing: Vec<Job> = jobs
        .iter()
        .flat_map(|(_, j)| j.iter())
        .filter(|(k, _)| cache.get(k).is_none())
        .cloned()
        .collect();
    stats.cache_hits = jobs.iter().map(|(_, j)| j.len()).sum::<usize>() - missing.len();
    stats.computed = missing.len();
    if !missing.is_empty() {
        let embedder = embed::open(&setting.embedder, Some(vocab_digest))?.expect("non-cache kinds open an embedder");
        let computed: Vec<Vec<f32>> = missing
            .par_iter()
            .map(|(_, ids)| compute_vector(embedder.as_ref(), kind, ids))
            .collect::<Result<_>>()?;
        stats.truncations = embedder.truncations();
        for ((key, _), v) in missing.into_iter().zip(computed) {
            cache.insert(key, v)?;
        }
        if let Some(p) = cache_path {
            if let Some(dir) = p.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            cache.write(p)?;
        }
    }
    let mut out = NoteChunks::new();
    for (note_id, note_jobs) in jobs {
        let vs = note_jobs
            .iter()
            .map(|(k, _)| cache.get(k).expect("filled above").to_vec())
            .collect();
        out.insert(note_id, vs);
    }
    Ok((out, stats))
}

/// Note vectors under one aggregation.
fn note_vectors(chunks: &NoteChunks, spec: &PoolingSpec, granularity: Granularity) -> Result<HashMap<String, Vec<f64>>> {
    let mut entries: Vec<(&String, &Vec<Vec<f32>>)> = chunks.iter().collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    entries
        .par_iter()
        .map(|(id, vs)| {
            let v = match granularity {
                Granularity::Document => vs[0].iter().map(|&x| f64::from(x)).collect(),
                _ => note_repr(vs, spec.note_level)?,
            };
            Ok(((*id).clone(), v))
        })
        .collect()
}

fn build_dataset(
    pairs: &[&PairInstance],
    notes: &HashMap<String, Vec<f64>>,
    spec: &PoolingSpec,
    mode: FeatureMode,
) -> Result<Dataset> {
    let rows: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|p| {
            let sources: Vec<&[f64]> = p.source_note_ids.iter().map(|id| notes[id].as_slice()).collect();
            let x1 = patient_repr(&p.patient_id, &sources, spec.patient_level)?;
            let x2 = lift_target(&notes[&p.target_note_id], spec.patient_level);
            build_features(&x1.vector, &x2, mode)
        })
        .collect::<Result<_>>()?;
    let d = rows.first().map_or(0, Vec::len);
    let labels = pairs.iter().map(|p| p.label).collect();
    let ids = pairs
        .iter()
        .map(|p| format!("{}|{}|{}", p.patient_id, p.target_note_id, p.draw_index))
        .collect();
    Dataset::new(d, rows.concat(), labels, ids)
}

fn train_and_score(spec: &ClassifierSpec, train: &Dataset, test: &Dataset, seed: u64, threshold: f64) -> Result<(MetricSet, String)> {
    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<_> {
        let model = spec.train(train, seed)?;
        let scores = predict(&model, test);
        Ok((compute_metrics(&scores, test.labels(), threshold)?, model.to_json()?))
    }));
    match outcome {
        Ok(r) => r,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Err(Error::invalid(format!("classifier panicked: {msg}")))
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Files written by a run and their SHA-256 digests, keyed by path
/// relative to the output directory. The report digest excludes its
/// timestamp so it is stable across re-runs.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub report: PathBuf,
    pub report_table: PathBuf,
    pub cohort_report: PathBuf,
    pub pairs: Vec<PathBuf>,
    pub caches: Vec<PathBuf>,
    pub models: Vec<PathBuf>,
    pub digests: BTreeMap<String, String>,
    pub embed_stats: BTreeMap<String, EmbedStats>,
}

#[derive(Debug)]
pub struct Outcome {
    pub report: EvalReport,
    pub artifacts: RunArtifacts,
}

struct Cell {
    seed: u64,
    setting: usize,
    aggregation: usize,
    classifier: usize,
    result: std::result::Result<MetricSet, String>,
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

pub fn run_experiment(cfg: &PipelineConfig, opts: &RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    let log = |msg: String| {
        if opts.verbose {
            eprintln!("[notematch] {msg}");
        }
    };
    let out = &opts.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cache_dir = cfg.cache_dir.clone().unwrap_or_else(|| out.join("cache"));
    let mut artifacts = RunArtifacts {
        out_dir: out.clone(),
        ..RunArtifacts::default()
    };

    let inputs = load_inputs(cfg)?;
    log(format!(
        "cohort: {} patients, {} notes",
        inputs.corpus.patients.len(),
        inputs.corpus.note_count()
    ));
    artifacts.cohort_report = out.join("cohort_report.json");
    write_file(
        &artifacts.cohort_report,
        serde_json::to_string_pretty(&inputs.cohort_report).expect("serializes").as_bytes(),
    )?;
    let tokens = tokenize_corpus(&inputs.corpus, &inputs.tokenizer);
    let vocab_digest = inputs.tokenizer.vocab().digest().to_string();
    let content_digest = tokens_digest(&tokens);

    // per setting: resolved aggregation specs and note vectors for each
    let mut note_vecs: Vec<Vec<HashMap<String, Vec<f64>>>> = vec![];
    let mut agg_specs: Vec<Vec<PoolingSpec>> = vec![];
    for setting in &cfg.settings {
        let g = setting.embedder.granularity;
        let specs: Vec<PoolingSpec> = cfg.aggregations.iter().map(|a| a.resolve(g)).collect();
        let mut by_kind: BTreeMap<VectorKind, NoteChunks> = BTreeMap::new();
        for spec in &specs {
            let kind = VectorKind::for_spec(spec, g);
            if by_kind.contains_key(&kind) {
                continue;
            }
            let cache_path = (setting.embedder.kind != EmbedderKind::Cache)
                .then(|| cache_dir.join(cache_file_name(setting, kind, &content_digest)));
            let (chunks, stats) = embed_setting(setting, kind, &inputs.corpus, &tokens, &vocab_digest, cache_path.as_deref())?;
            log(format!(
                "embed {} [{}]: {} cached, {} computed, {} truncated",
                setting.name,
                kind.label(),
                stats.cache_hits,
                stats.computed,
                stats.truncations
            ));
            if let Some(p) = cache_path {
                artifacts.caches.push(p);
            }
            artifacts.embed_stats.insert(format!("{}/{}", setting.name, kind.label()), stats);
            by_kind.insert(kind, chunks);
        }
        let per_agg = specs
            .iter()
            .map(|spec| note_vectors(&by_kind[&VectorKind::for_spec(spec, g)], spec, g))
            .collect::<Result<Vec<_>>>()?;
        note_vecs.push(per_agg);
        agg_specs.push(specs);
    }
    let agg_labels: Vec<Vec<String>> = cfg
        .settings
        .iter()
        .zip(&agg_specs)
        .map(|(s, specs)| specs.iter().map(|p| p.label(s.embedder.granularity)).collect())
        .collect();

    let mut cells: Vec<Cell> = vec![];
    let mut seed_errors = vec![];
    for &seed in &cfg.split.seeds {
        let split_spec = SplitSpec {
            train_ratio: cfg.split.train_ratio,
            seed,
            draws_per_patient: cfg.split.draws_per_patient,
            distinct_negatives: cfg.split.distinct_negatives,
        };
        let pairs = split_patients(&inputs.corpus, &split_spec).and_then(|s| build_pairs(&inputs.corpus, &s, &split_spec));
        let pairs = match pairs {
            Ok(p) => p,
            Err(e) => {
                log(format!("seed {seed}: pairs failed: {e}"));
                seed_errors.push(SeedError {
                    seed,
                    stage: "pairs".into(),
                    message: e.to_string(),
                });
                for (si, specs) in agg_specs.iter().enumerate() {
                    for ai in 0..specs.len() {
                        for ci in 0..cfg.classifiers.len() {
                            cells.push(Cell {
                                seed,
                                setting: si,
                                aggregation: ai,
                                classifier: ci,
                                result: Err(format!("seed aborted at pairs: {e}")),
                            });
                        }
                    }
                }
                continue;
            }
        };
        let pairs_path = out.join("pairs").join(format!("seed-{seed}.jsonl"));
        let mut buf = vec![];
        write_pairs(&pairs, &mut buf)?;
        write_file(&pairs_path, &buf)?;
        artifacts.pairs.push(pairs_path);
        let train: Vec<&PairInstance> = pairs.iter().filter(|p| p.split == Split::Train).collect();
        let test: Vec<&PairInstance> = pairs.iter().filter(|p| p.split == Split::Test).collect();
        let model_seed = derive_seed(seed, "classifier");

        for (si, setting) in cfg.settings.iter().enumerate() {
            for (ai, spec) in agg_specs[si].iter().enumerate() {
                let notes = &note_vecs[si][ai];
                let data = build_dataset(&train, notes, spec, cfg.feature_mode)
                    .and_then(|tr| build_dataset(&test, notes, spec, cfg.feature_mode).map(|te| (tr, te)));
                for (ci, clf) in cfg.classifiers.iter().enumerate() {
                    let result = match &data {
                        Err(e) => Err(format!("features: {e}")),
                        Ok((tr, te)) => match train_and_score(clf, tr, te, model_seed, cfg.threshold) {
                            Ok((metrics, model_json)) => {
                                let path = out
                                    .join("models")
                                    .join(format!("seed-{seed}"))
                                    .join(&setting.name)
                                    .join(slug(&agg_labels[si][ai]))
                                    .join(format!("{}.json", clf.kind().label().to_lowercase()));
                                write_file(&path, model_json.as_bytes())?;
                                artifacts.models.push(path);
                                Ok(metrics)
                            }
                            Err(e) => Err(e.to_string()),
                        },
                    };
                    match &result {
                        Ok(m) => log(format!(
                            "seed {seed} {} {} {}: auc {:.4}",
                            setting.name,
                            agg_labels[si][ai],
                            clf.kind(),
                            m.auc
                        )),
                        Err(e) => log(format!("seed {seed} {} {} {}: failed: {e}", setting.name, agg_labels[si][ai], clf.kind())),
                    }
                    cells.push(Cell {
                        seed,
                        setting: si,
                        aggregation: ai,
                        classifier: ci,
                        result,
                    });
                }
            }
        }
    }

    let report = assemble_report(cfg, &agg_labels, &cells, seed_errors);
    artifacts.report = out.join("report.json");
    artifacts.report_table = out.join("report.txt");
    write_file(&artifacts.report, report.to_json()?.as_bytes())?;
    write_file(&artifacts.report_table, report.render_table().as_bytes())?;

    let rel = |p: &Path| p.strip_prefix(out).unwrap_or(p).display().to_string();
    let mut digests = BTreeMap::new();
    digests.insert(
        rel(&artifacts.report),
        hex::encode(Sha256::digest(report.to_json_without_timestamp()?.as_bytes())),
    );
    for p in [&artifacts.report_table, &artifacts.cohort_report]
        .into_iter()
        .chain(&artifacts.pairs)
        .chain(&artifacts.caches)
        .chain(&artifacts.models)
    {
        digests.insert(rel(p), sha256_file(p)?);
    }
    artifacts.digests = digests;
    write_file(
        &out.join("artifacts.json"),
        serde_json::to_string_pretty(&artifacts).expect("serializes").as_bytes(),
    )?;
    Ok(Outcome { report, artifacts })
}

fn assemble_report(cfg: &PipelineConfig, agg_labels: &[Vec<String>], cells: &[Cell], seed_errors: Vec<SeedError>) -> EvalReport {
    let label = |c: &Cell| {
        (
            cfg.settings[c.setting].name.clone(),
            agg_labels[c.setting][c.aggregation].clone(),
            cfg.classifiers[c.classifier].kind().label().to_string(),
        )
    };
    let runs: Vec<RunRow> = cells
        .iter()
        .map(|c| {
            let (setting, aggregation, classifier) = label(c);
            RunRow {
                seed: c.seed,
                setting,
                aggregation,
                classifier,
                metrics: c.result.as_ref().ok().cloned(),
                error: c.result.as_ref().err().cloned(),
            }
        })
        .collect();

    let n_seeds = cfg.split.seeds.len();
    let mut aggregates = vec![];
    for (si, setting) in cfg.settings.iter().enumerate() {
        for (ai, agg) in agg_labels[si].iter().enumerate() {
            let start = aggregates.len();
            for (ci, clf) in cfg.classifiers.iter().enumerate() {
                let ok: Vec<MetricSet> = cells
                    .iter()
                    .filter(|c| c.setting == si && c.aggregation == ai && c.classifier == ci)
                    .filter_map(|c| c.result.as_ref().ok().cloned())
                    .collect();
                aggregates.push(AggregateRow {
                    setting: setting.name.clone(),
                    aggregation: agg.clone(),
                    classifier: clf.kind().label().to_string(),
                    partial: ok.len() < n_seeds,
                    summary: aggregate_runs(&ok).ok(),
                    best: false,
                });
            }
            let best = aggregates[start..]
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.summary.as_ref().map(|s| (i, s.mean.auc)))
                .fold(None, |acc: Option<(usize, f64)>, (i, auc)| match acc {
                    Some((_, b)) if b >= auc => acc,
                    _ => Some((i, auc)),
                });
            if let Some((i, _)) = best {
                aggregates[start + i].best = true;
            }
        }
    }

    let mut ttests = vec![];
    for (si, setting) in cfg.settings.iter().enumerate() {
        for (ci, clf) in cfg.classifiers.iter().enumerate() {
            let auc_by_seed = |ai: usize| -> BTreeMap<u64, f64> {
                cells
                    .iter()
                    .filter(|c| c.setting == si && c.aggregation == ai && c.classifier == ci)
                    .filter_map(|c| c.result.as_ref().ok().map(|m| (c.seed, m.auc)))
                    .collect()
            };
            let n_agg = agg_labels[si].len();
            for a in 0..n_agg {
                for b in a + 1..n_agg {
                    let (ma, mb) = (auc_by_seed(a), auc_by_seed(b));
                    let seeds: Vec<u64> = cfg.split.seeds.iter().copied().filter(|s| ma.contains_key(s) && mb.contains_key(s)).collect();
                    let va: Vec<f64> = seeds.iter().map(|s| ma[s]).collect();
                    let vb: Vec<f64> = seeds.iter().map(|s| mb[s]).collect();
                    let (result, error) = match paired_ttest(&va, &vb) {
                        Ok(r) => (Some(r), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    ttests.push(TTestEntry {
                        setting: setting.name.clone(),
                        classifier: clf.kind().label().to_string(),
                        metric: "auc".into(),
                        a: agg_labels[si][a].clone(),
                        b: agg_labels[si][b].clone(),
                        seeds,
                        result,
                        error,
                    });
                }
            }
        }
    }

    let partial = cells.iter().any(|c| c.result.is_err()) || !seed_errors.is_empty();
    EvalReport {
        generated_at: chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        config_digest: cfg.digest(),
        seeds: cfg.split.seeds.clone(),
        runs,
        aggregates,
        ttests,
        seed_errors,
        partial,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::ClassifierKind;

    fn small_config() -> PipelineConfig {
        PipelineConfig::from_json(
            r#"{
                "corpus": {"synthetic": {"n_patients": 30, "seed": 4}},
                "split": {"seeds": [1, 2, 3]},
                "settings": [{"name": "hash16", "embedder": {"kind": "hash", "dim": 16, "granularity": "token", "seed": 1}}],
                "aggregations": ["avg", "mean_max"],
                "classifiers": [{"kind": "lr"}, {"kind": "tree", "max_depth": 3}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn grid_counts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(
            &small_config(),
            &RunOptions {
                out_dir: dir.path().to_path_buf(),
                verbose: false,
            },
        )
        .unwrap();
        assert_eq!(out.report.runs.len(), 3 * 2 * 2);
        assert_eq!(out.report.aggregates.len(), 2 * 2);
        assert_eq!(out.report.ttests.len(), 2);
        assert!(!out.report.partial);
        for p in out.artifacts.pairs.iter().chain(&out.artifacts.models).chain(&out.artifacts.caches) {
            assert!(p.exists(), "{}", p.display());
        }
        assert_eq!(
            out.report.aggregates.iter().filter(|r| r.best).count(),
            2,
            "one best classifier per aggregation"
        );
    }

    #[test]
    fn classifier_failure_is_isolated() {
        let mut cfg = small_config();
        cfg.classifiers.push(ClassifierSpec::default_for(ClassifierKind::Boost));
        if let ClassifierSpec::Boost(p) = cfg.classifiers.last_mut().unwrap() {
            p.eta = f64::NAN;
        }
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(
            &cfg,
            &RunOptions {
                out_dir: dir.path().to_path_buf(),
                verbose: false,
            },
        )
        .unwrap();
        let boost: Vec<_> = out.report.runs.iter().filter(|r| r.classifier == "BOOST").collect();
        assert!(boost.iter().all(|r| r.error.is_some()));
        let others: Vec<_> = out.report.runs.iter().filter(|r| r.classifier != "BOOST").collect();
        assert_eq!(others.len(), 12);
        assert!(others.iter().all(|r| r.metrics.is_some()));
        assert!(out.report.partial);
    }

    #[test]
    fn note_without_tokens_is_an_error() {
        let setting: Setting = serde_json::from_str(
            r#"{"name": "h", "embedder": {"kind": "hash", "dim": 4, "granularity": "token"}}"#,
        )
        .unwrap();
        let corpus = crate::corpus::read_corpus(
            r#"{"patient_id":"p","note_id":"n","category":"c","chart_time":"2100-01-01T00:00:00Z","text":"..."}"#.as_bytes(),
            "t",
        )
        .unwrap();
        let tokens = TokenizedCorpus::from([("n".to_string(), vec![])]);
        let kind = VectorKind::Chunks(TokenPooling::Cls.into());
        assert!(embed_setting(&setting, kind, &corpus, &tokens, "", None).is_err());
    }
}
