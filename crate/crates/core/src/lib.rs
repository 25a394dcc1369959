//! Multi-turn response selection grounded in a knowledge collection.
//!
//! The model encodes a dialogue context, a set of knowledge sentences and
//! each response candidate with a shared BiLSTM, softly pre-selects the
//! context utterances and knowledge sentences that matter for the latest
//! turns, matches both against the candidate with cross attention,
//! aggregates the matching signal (attending over knowledge a second time
//! after matching), and scores the candidate with an MLP.
//!
//! Module map:
//!
//! * [`numerics`]: tensors, reverse-mode gradients, Adam, gradient checks
//! * [`corpus`]: dataset parsing, vocabulary, negatives, padded batches
//! * [`embed`]: frozen word tables and character-convolution features
//! * [`encoder`]: the shared BiLSTM
//! * [`selector`]: attention blocks and multi-hop pre-selection
//! * [`matcher`]: cross attention and enriched matching features
//! * [`aggregator`]: sentence/session pooling and knowledge post-selection
//! * [`harness`]: model assembly, loss, training, evaluation, CLI plumbing

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregator;
pub mod corpus;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod matcher;
pub mod numerics;
pub mod selector;

pub use error::{Error, Result};
