//! Subword language modeling for highly inflected languages.
//!
//! The crate covers the whole pipeline from a pre-tokenized corpus to a
//! word-level perplexity:
//!
//! * [`corpus`]: counting, vocabulary extraction, deduplication, the
//!   reversible `<up>` capitalization transform, OOV replacement and
//!   train/validation splitting.
//! * [`subword`]: a unigram subword tokenizer trained by EM over
//!   segmentation lattices, with Viterbi encoding and lossless decoding.
//! * [`ngram`]: an interpolated Kneser-Ney n-gram model.
//! * [`neural`]: a small multi-layer LSTM language model trained with
//!   truncated BPTT, slanted triangular learning rates and optional sampled
//!   softmax.
//! * [`eval`]: cross-entropy and perplexity accounting, including the
//!   conversion of a subword-level perplexity into a word-level one.

pub mod corpus;
pub mod eval;
pub mod lm;
pub mod neural;
pub mod ngram;
pub mod subword;

pub use lm::{LanguageModel, LmError, SymbolTable, TokenId};

/// Unknown-token marker shared by word and subword vocabularies.
pub const UNK: &str = "<unk>";
/// Beginning-of-sentence marker. Used as context only, never scored.
pub const BOS: &str = "<s>";
/// End-of-sentence marker.
pub const EOS: &str = "</s>";
/// Padding marker, present only in subword vocabularies.
pub const PAD: &str = "<pad>";
/// Marks a word whose initial capital letter was lowercased.
pub const UP: &str = "<up>";

/// Returns true for any of the reserved marker tokens.
pub fn is_control_token(token: &str) -> bool {
    matches!(token, UNK | BOS | EOS | PAD | UP)
}
