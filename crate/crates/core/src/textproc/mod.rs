//! Text preparation: sentence splitting, WordPiece tokenization and the
//! sliding-window chunker applied to over-long sentences.

mod chunk;
mod sentences;
mod wordpiece;

pub use chunk::{sliding_chunks, truncate_chunk, Chunk, WindowSpec};
pub use sentences::split_sentences;
pub use wordpiece::{Vocabulary, WordPiece, MAX_WORD_CHARS};
