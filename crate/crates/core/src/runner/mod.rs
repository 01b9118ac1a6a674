//! Configuration, orchestration, artifacts and the command line.

mod cli;
mod config;
mod pipeline;

pub use cli::main_with_args;
pub use config::{AggregationSpec, CorpusSource, PipelineConfig, Setting, SplitConfig, SIDECAR_ENV};
pub use pipeline::{
    cache_file_name, embed_setting, load_inputs, run_experiment, tokenize_corpus, EmbedStats, Inputs, NoteChunks,
    Outcome, RunArtifacts, RunOptions, TokenizedCorpus, VectorKind, tokens_digest,
};
