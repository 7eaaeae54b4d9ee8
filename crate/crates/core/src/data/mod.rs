//! Corpus ingestion, vocabularies, pre-trained embeddings and batching.

mod batching;
mod corpus;
mod coverage;
mod embeddings;
pub mod synthetic;
mod vocab;

pub use batching::{make_batches, Batch};
pub use corpus::{load_corpus, read_corpus, read_tokens, write_corpus, write_tokens, Sentence, TaggedToken, Tagset};
pub use coverage::{coverage_report, Coverage};
pub use embeddings::{load_embeddings, read_embeddings, EmbeddingTable, PretrainedMode};
pub use vocab::{Vocab, Vocabularies, PAD_CHAR, UNK_CHAR, UNK_WORD};
