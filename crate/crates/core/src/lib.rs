//! Patient-note identification.
//!
//! Given the clinical notes of a patient and one candidate note, decide
//! whether the candidate belongs to that patient. The crate covers the whole
//! pipeline: corpus ingestion and cohort cleaning, leakage-free pair
//! construction, sentence splitting with WordPiece tokenization and sliding
//! windows, pluggable embedding backends, hierarchical pooling
//! (token → sentence → note → patient), five classical classifiers, and an
//! evaluation harness with repeated runs and paired t-tests.
//!
//! ```text
//! corpus ──► cohort ──► pairing ──► textproc ──► embed ──► pooling ──► classify ──► evaluate
//!                                                                      ▲
//!                                            runner (config, seeds, artifacts, CLI)
//! ```

pub mod classify;
pub mod cohort;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod evaluate;
pub mod pairing;
pub mod pooling;
pub mod runner;
pub mod seed;
pub mod textproc;

pub use error::{Error, Result};
