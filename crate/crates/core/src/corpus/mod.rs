//! Dataset parsing, vocabulary, negative sampling, fixed-extent encoding
//! and batching.
//!
//! CMUDoG turns carry the index of the document section under discussion.
//! A sample's knowledge is the section tagged on its response turn, split
//! into sentences and capped at `max_knowledge`.

mod cache;
mod dialogue;
mod encode;
mod negatives;
mod samples;
mod tokenize;
mod vocab;

pub use cache::{read_cache, write_cache, CACHE_VERSION};
pub use dialogue::{corpus_stats, parse_cmudog, parse_persona_chat, CorpusStats, Dialogue, Turn, CMUDOG_MIN_TURNS};
pub use encode::{
    batch_indices, decode_grid, decode_row, encode_sample, make_batches, EncodedSample, Limits, Sample, TokenGrid,
    TokenizedBatch,
};
pub use negatives::{sample_negatives, shuffle_candidates, NegativePool};
pub use samples::{cmudog_samples, persona_samples};
pub use tokenize::{split_sentences, tokenize};
pub use vocab::{build_vocabulary, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
