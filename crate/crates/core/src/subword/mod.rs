//! Unigram subword tokenization.
//!
//! A sentence is turned into a single string by prefixing every word with
//! U+2581 (`▁`). Encoding picks the most probable segmentation of that
//! string under a unigram piece model; decoding concatenates the pieces and
//! splits at each `▁`, so `decode(encode(s)) == s` for every sentence whose
//! characters the model covers.

mod lattice;
mod model;
mod trainer;

use thiserror::Error;

pub use lattice::{log2_add, Edge, Path, SegmentationLattice};
pub use model::{tokens_per_word_ratio, Decoded, Encoding, SubwordModel, CONTROL_TOKENS};
pub use trainer::{
    e_step, m_step, prune, seed_vocabulary, train_unigram, training_words, ExpectedCounts, RoundLog, TrainLog,
    TrainerOptions, WeightedWord,
};

use crate::TokenId;

/// Word-boundary marker prefixed to word-initial pieces.
pub const WORD_BOUNDARY: char = '\u{2581}';

#[derive(Debug, Error)]
pub enum SubwordError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("character {0:?} is not covered by the model")]
    UncoveredCharacter(char),
    #[error("word `{0}` contains the reserved boundary marker U+2581")]
    ReservedCharacter(String),
    #[error("position {position} of `{word}` is unreachable in its lattice")]
    Unreachable { word: String, position: usize },
    #[error("invalid token id {0}")]
    InvalidId(TokenId),
    #[error("unknown piece `{0}`")]
    UnknownPiece(String),
    #[error("invalid expected counts: {0}")]
    InvalidCounts(String),
    #[error("target size {target} is below the minimum of {minimum} (specials plus characters)")]
    TargetTooSmall { target: usize, minimum: usize },
    #[error("target size {target} exceeds the {available} available candidates")]
    TargetTooLarge { target: usize, available: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
