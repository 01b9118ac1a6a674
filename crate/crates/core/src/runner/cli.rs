//! Command-line interface.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::config::PipelineConfig;
use super::pipeline::{embed_setting, load_inputs, run_experiment, tokenize_corpus, RunOptions, VectorKind};
use crate::cohort::{self, CohortConfig};
use crate::corpus::{generate_synthetic, load_corpus, synthetic_vocabulary, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluate::EvalReport;
use crate::pairing::{build_pairs, split_patients, write_pairs, SplitSpec};
use crate::pooling::TokenPooling;
use crate::textproc::{split_sentences, Vocabulary, WordPiece};

#[derive(Debug, Parser)]
#[command(name = "notematch", version, about = "Patient-note identification pipeline")]
struct Cli {
    /// Pipeline or stage configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the command; for `run` it replaces the configured seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Progress messages on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a planted-signal synthetic corpus.
    Generate {
        #[arg(long, default_value_t = 100)]
        patients: usize,
        #[arg(long, default_value_t = 2)]
        notes_min: usize,
        #[arg(long, default_value_t = 10)]
        notes_max: usize,
        #[arg(long, default_value_t = 2000)]
        vocab_size: usize,
        #[arg(long, default_value_t = 30)]
        topic_tokens: usize,
        #[arg(long, default_value_t = 0.35)]
        p_signal: f64,
        /// Also write the matching vocabulary file.
        #[arg(long)]
        vocab_out: Option<PathBuf>,
    },
    /// Clean a corpus: deduplication, category filter, IQR outliers, minimum notes.
    Cohort {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Split patients and build the balanced pair manifest.
    Pairs {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 1)]
        draws: usize,
        #[arg(long)]
        distinct_negatives: bool,
    },
    /// Tokenize a corpus with a WordPiece vocabulary.
    Tokenize {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Print token and sentence statistics instead of token ids.
        #[arg(long)]
        stats: bool,
        #[arg(long)]
        cased: bool,
    },
    /// Populate an embedding cache for one setting of a pipeline config.
    Embed {
        /// Setting name; defaults to the first one.
        #[arg(long)]
        setting: Option<String>,
        /// Token-level pooling of the cached chunk vectors.
        #[arg(long, default_value = "avg")]
        token_level: String,
    },
    /// Run the full experiment grid of a pipeline config.
    Run,
    /// Render a saved report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str, cmd: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Usage(format!("{cmd} requires --{flag}")))
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(p, bytes).map_err(|e| Error::io(p, e))
        }
        None => io::stdout().write_all(bytes).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn load_pipeline(cli: &Cli) -> Result<PipelineConfig> {
    let path = require(&cli.config, "config", "this command")?;
    let mut cfg = PipelineConfig::load(path)?;
    cfg.apply_env();
    if let Some(seed) = cli.seed {
        cfg.split.seeds = vec![seed];
    }
    Ok(cfg)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, s)
}

fn execute(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate {
            patients,
            notes_min,
            notes_max,
            vocab_size,
            topic_tokens,
            p_signal,
            vocab_out,
        } => {
            let spec = SyntheticSpec {
                n_patients: *patients,
                notes_min: *notes_min,
                notes_max: *notes_max,
                vocab_size: *vocab_size,
                topic_tokens: *topic_tokens,
                p_signal: *p_signal,
                seed: cli.seed.unwrap_or(0),
                ..SyntheticSpec::default()
            };
            let corpus = generate_synthetic(&spec).map_err(|e| match e {
                Error::Config(m) => Error::Usage(m),
                other => other,
            })?;
            let mut buf = vec![];
            corpus.write_jsonl(&mut buf)?;
            write_out(cli.out.as_deref(), &buf)?;
            if let Some(v) = vocab_out {
                let vocab = Vocabulary::from_tokens(&synthetic_vocabulary(*vocab_size))?;
                write_out(Some(v), &vocab.to_file_bytes())?;
            }
            Ok(())
        }
        Command::Cohort { input, report } => {
            let config = match &cli.config {
                None => CohortConfig::default(),
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    let v: serde_json::Value =
                        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    let cohort = v.get("cohort").cloned().unwrap_or(v);
                    serde_json::from_value(cohort).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
            };
            let corpus = load_corpus(input)?;
            let (clean, rep) = cohort::apply(&corpus, &config)?;
            let mut buf = vec![];
            clean.write_jsonl(&mut buf)?;
            write_out(cli.out.as_deref(), &buf)?;
            let rep_json = serde_json::to_string_pretty(&rep).expect("serializes") + "\n";
            match report {
                Some(p) => write_out(Some(p), rep_json.as_bytes())?,
                None => eprint!("{rep_json}"),
            }
            Ok(())
        }
        Command::Pairs {
            corpus,
            ratio,
            draws,
            distinct_negatives,
        } => {
            let spec = SplitSpec {
                train_ratio: *ratio,
                seed: cli.seed.unwrap_or(0),
                draws_per_patient: *draws,
                distinct_negatives: *distinct_negatives,
            };
            spec.validate().map_err(|e| match e {
                Error::Config(m) => Error::Usage(m),
                other => other,
            })?;
            let corpus = load_corpus(corpus)?;
            let split = split_patients(&corpus, &spec)?;
            let pairs = build_pairs(&corpus, &split, &spec)?;
            let mut buf = vec![];
            write_pairs(&pairs, &mut buf)?;
            write_out(cli.out.as_deref(), &buf)
        }
        Command::Tokenize {
            vocab,
            input,
            stats,
            cased,
        } => {
            let vocab = Vocabulary::load(vocab)?;
            let wp = if *cased { WordPiece::cased(vocab) } else { WordPiece::new(vocab) };
            let corpus = load_corpus(input)?;
            if *stats {
                let mut note_tokens = vec![];
                let mut note_sentences = vec![];
                let mut patient_tokens = vec![];
                let mut patient_sentences = vec![];
                let mut distinct = BTreeSet::new();
                for p in &corpus.patients {
                    let (mut pt, mut ps) = (0.0, 0.0);
                    for n in &p.notes {
                        let sentences = split_sentences(&n.text);
                        let mut t = 0usize;
                        for s in &sentences {
                            let ids = wp.tokenize(s);
                            t += ids.len();
                            distinct.extend(ids);
                        }
                        note_tokens.push(t as f64);
                        note_sentences.push(sentences.len() as f64);
                        pt += t as f64;
                        ps += sentences.len() as f64;
                    }
                    patient_tokens.push(pt);
                    patient_sentences.push(ps);
                }
                let fmt = |v: &[f64]| {
                    let (m, s) = mean_std(v);
                    format!("{m:.2} ± {s:.2}")
                };
                let text = format!(
                    "{:<10} {:>6}  {:>20}  {:>20}\n{:<10} {:>6}  {:>20}  {:>20}\n{:<10} {:>6}  {:>20}  {:>20}\nvocabulary size: {}\n",
                    "level",
                    "count",
                    "token count",
                    "sentence count",
                    "note",
                    note_tokens.len(),
                    fmt(&note_tokens),
                    fmt(&note_sentences),
                    "patient",
                    patient_tokens.len(),
                    fmt(&patient_tokens),
                    fmt(&patient_sentences),
                    distinct.len()
                );
                write_out(cli.out.as_deref(), text.as_bytes())
            } else {
                let mut buf = vec![];
                for n in corpus.notes() {
                    let ids: Vec<Vec<u32>> = split_sentences(&n.text).iter().map(|s| wp.tokenize(s)).collect();
                    let line = serde_json::json!({"note_id": n.note_id, "token_ids": ids});
                    buf.extend_from_slice(line.to_string().as_bytes());
                    buf.push(b'\n');
                }
                write_out(cli.out.as_deref(), &buf)
            }
        }
        Command::Embed { setting, token_level } => {
            let cfg = load_pipeline(&cli)?;
            cfg.validate()?;
            let out = require(&cli.out, "out", "embed")?;
            let s = match setting {
                Some(name) => cfg
                    .settings
                    .iter()
                    .find(|s| &s.name == name)
                    .ok_or_else(|| Error::Usage(format!("no setting named {name:?}")))?,
                None => &cfg.settings[0],
            };
            let tl: TokenPooling = token_level.parse().map_err(|e: Error| Error::Usage(e.to_string()))?;
            let kind = match s.embedder.granularity {
                crate::embed::Granularity::Document => VectorKind::Document,
                _ => VectorKind::Chunks(tl.into()),
            };
            let inputs = load_inputs(&cfg)?;
            let tokens = tokenize_corpus(&inputs.corpus, &inputs.tokenizer);
            let (_, stats) = embed_setting(
                s,
                kind,
                &inputs.corpus,
                &tokens,
                inputs.tokenizer.vocab().digest(),
                Some(out),
            )?;
            if cli.verbose {
                eprintln!(
                    "[notematch] {} cached, {} computed, {} truncated",
                    stats.cache_hits, stats.computed, stats.truncations
                );
            }
            Ok(())
        }
        Command::Run => {
            let cfg = load_pipeline(&cli)?;
            let out_dir = cli
                .out
                .clone()
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::Usage("run requires --out or output_dir in the config".into()))?;
            let outcome = run_experiment(
                &cfg,
                &RunOptions {
                    out_dir,
                    verbose: cli.verbose,
                },
            )?;
            print!("{}", outcome.report.render_table());
            Ok(())
        }
        Command::Report { input, format } => {
            let file = fs::File::open(input).map_err(|e| Error::io(input, e))?;
            let mut text = String::new();
            io::Read::read_to_string(&mut BufReader::new(file), &mut text).map_err(|e| Error::io(input, e))?;
            let report = EvalReport::from_json(&text)?;
            let rendered = match format {
                Format::Table => report.render_table(),
                Format::Json => report.to_json()?,
            };
            write_out(cli.out.as_deref(), rendered.as_bytes())
        }
    }
}
