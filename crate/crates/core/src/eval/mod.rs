//! Cross-entropy and perplexity accounting.
//!
//! For a test set of `N` sentences the empirical cross-entropy is
//! `H = -(1/N) Σ lg q(s)` bits per sentence and the perplexity per token is
//! `2^(H / E|s|)`, where `E|s|` is the mean number of scored tokens per
//! sentence. A subword model `q_V` and an injective tokenizer `F` define a
//! word-level model `q_W(s) = q_V(F(s))`; its word perplexity can be
//! obtained either directly or from the subword perplexity as
//! `ppl_V ^ (E|F(s)|_V / E|s|_W)`. Both routes are computed and compared.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Sentence;
pub use crate::corpus::{corpus_stats, oov_rate, overlap_stats, CorpusStats};
use crate::subword::{SubwordError, SubwordModel};
use crate::{LanguageModel, LmError, TokenId};

/// Largest accepted relative disagreement between the two word-level
/// perplexity computations.
pub const DUAL_PATH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no sentences to evaluate")]
    NoSentences,
    #[error("no tokens to evaluate")]
    NoTokens,
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Subword(#[from] SubwordError),
    #[error("word perplexity {direct} (direct) and {converted} (converted) disagree")]
    DualPathMismatch { direct: f64, converted: f64 },
    #[error("unknown token count policy `{0}` (expected `with-eos` or `words-only`)")]
    UnknownPolicy(String),
}

/// How tokens are counted in the perplexity denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenCountPolicy {
    /// Every scored prediction: the tokens plus one `</s>` per sentence.
    #[default]
    WithEos,
    /// Tokens only; `</s>` is scored but not counted.
    WordsOnly,
}

impl TokenCountPolicy {
    pub fn count(self, tokens: usize) -> usize {
        match self {
            TokenCountPolicy::WithEos => tokens + 1,
            TokenCountPolicy::WordsOnly => tokens,
        }
    }
}

impl FromStr for TokenCountPolicy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with-eos" => Ok(TokenCountPolicy::WithEos),
            "words-only" => Ok(TokenCountPolicy::WordsOnly),
            other => Err(EvalError::UnknownPolicy(other.to_string())),
        }
    }
}

impl fmt::Display for TokenCountPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenCountPolicy::WithEos => "with-eos",
            TokenCountPolicy::WordsOnly => "words-only",
        })
    }
}

/// `lg q(s)` for every sentence, scored in parallel.
pub fn sentence_log_probs<L>(lm: &L, sentences: &[Vec<TokenId>]) -> Result<Vec<f64>, LmError>
where
    L: LanguageModel + Sync + ?Sized,
{
    sentences.par_iter().map(|s| lm.sequence_log_prob(s)).collect()
}

fn mean_negative(log_probs: &[f64]) -> Result<f64, EvalError> {
    if log_probs.is_empty() {
        return Err(EvalError::NoSentences);
    }
    Ok(-log_probs.iter().sum::<f64>() / log_probs.len() as f64)
}

/// `H = -(1/N) Σ lg q(s)`, in bits per sentence.
pub fn cross_entropy<L>(lm: &L, sentences: &[Vec<TokenId>]) -> Result<f64, EvalError>
where
    L: LanguageModel + Sync + ?Sized,
{
    if sentences.is_empty() {
        return Err(EvalError::NoSentences);
    }
    mean_negative(&sentence_log_probs(lm, sentences)?)
}

/// `2^(H / mean_tokens)`.
pub fn perplexity_from(cross_entropy: f64, mean_tokens: f64) -> f64 {
    (cross_entropy / mean_tokens).exp2()
}

/// Perplexity per token with the denominator counted by `policy`.
pub fn perplexity_per_token<L>(lm: &L, sentences: &[Vec<TokenId>], policy: TokenCountPolicy) -> Result<f64, EvalError>
where
    L: LanguageModel + Sync + ?Sized,
{
    let h = cross_entropy(lm, sentences)?;
    let tokens: usize = sentences.iter().map(|s| policy.count(s.len())).sum();
    if tokens == 0 {
        return Err(EvalError::NoTokens);
    }
    Ok(perplexity_from(h, tokens as f64 / sentences.len() as f64))
}

/// Word-level perplexity of a subword language model, computed two ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordLevelPerplexity {
    pub sentences: usize,
    /// `Σ |s|_W` under the token count policy.
    pub word_tokens: usize,
    /// `Σ |F(s)|_V` under the token count policy.
    pub subword_tokens: usize,
    /// Bits per sentence.
    pub cross_entropy: f64,
    pub ppl_subword: f64,
    /// `2^(H / E|s|_W)`.
    pub direct: f64,
    /// `ppl_subword ^ (E|F(s)|_V / E|s|_W)`.
    pub converted: f64,
}

impl WordLevelPerplexity {
    /// Mean subword tokens per word token.
    pub fn ratio(&self) -> f64 {
        self.subword_tokens as f64 / self.word_tokens as f64
    }

    pub fn relative_gap(&self) -> f64 {
        (self.direct - self.converted).abs() / self.direct.abs().max(self.converted.abs())
    }

    /// Computes both routes from sentence scores and token totals.
    pub fn from_scores(log_probs: &[f64], word_tokens: usize, subword_tokens: usize) -> Result<Self, EvalError> {
        let h = mean_negative(log_probs)?;
        if word_tokens == 0 || subword_tokens == 0 {
            return Err(EvalError::NoTokens);
        }
        let n = log_probs.len() as f64;
        let mean_words = word_tokens as f64 / n;
        let mean_pieces = subword_tokens as f64 / n;
        let ppl_subword = perplexity_from(h, mean_pieces);
        Ok(WordLevelPerplexity {
            sentences: log_probs.len(),
            word_tokens,
            subword_tokens,
            cross_entropy: h,
            ppl_subword,
            direct: perplexity_from(h, mean_words),
            converted: ppl_subword.powf(mean_pieces / mean_words),
        })
    }

    /// Fails when the two routes disagree beyond [`DUAL_PATH_TOLERANCE`].
    pub fn check(self) -> Result<Self, EvalError> {
        if self.relative_gap() <= DUAL_PATH_TOLERANCE {
            Ok(self)
        } else {
            Err(EvalError::DualPathMismatch {
                direct: self.direct,
                converted: self.converted,
            })
        }
    }
}

/// Encodes `sentences` with `tokenizer`, maps the pieces to `lm` ids by
/// their text and scores them. Word counts exclude `<up>` markers.
pub fn word_level_perplexity<L>(
    lm: &L,
    tokenizer: &SubwordModel,
    sentences: &[Sentence],
    policy: TokenCountPolicy,
) -> Result<WordLevelPerplexity, EvalError>
where
    L: LanguageModel + Sync + ?Sized,
{
    if sentences.is_empty() {
        return Err(EvalError::NoSentences);
    }
    let encodings = tokenizer.encode_corpus(sentences)?;
    let symbols = lm.symbols();
    let mut word_tokens = 0;
    let mut subword_tokens = 0;
    let mut streams = Vec::with_capacity(encodings.len());
    for enc in encodings {
        word_tokens += policy.count(enc.source_word_count);
        subword_tokens += policy.count(enc.ids.len());
        let ids = tokenizer
            .id_to_text(&enc.ids)?
            .into_iter()
            .map(|piece| symbols.id_or_unk(piece))
            .collect::<Vec<_>>();
        streams.push(ids);
    }
    let scores = sentence_log_probs(lm, &streams)?;
    WordLevelPerplexity::from_scores(&scores, word_tokens, subword_tokens)?.check()
}

/// Scores a word-level model: the tokenizer is the identity, so both
/// perplexities coincide.
pub fn word_model_perplexity<L>(
    lm: &L,
    sentences: &[Sentence],
    policy: TokenCountPolicy,
) -> Result<WordLevelPerplexity, EvalError>
where
    L: LanguageModel + Sync + ?Sized,
{
    if sentences.is_empty() {
        return Err(EvalError::NoSentences);
    }
    let symbols = lm.symbols();
    let streams: Vec<Vec<TokenId>> = sentences.iter().map(|s| symbols.encode(s.tokens())).collect();
    let tokens: usize = streams.iter().map(|s| policy.count(s.len())).sum();
    let scores = sentence_log_probs(lm, &streams)?;
    WordLevelPerplexity::from_scores(&scores, tokens, tokens)?.check()
}

/// Everything reported for one evaluated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub policy: TokenCountPolicy,
    pub perplexity: WordLevelPerplexity,
    /// Word OOV rate against the training vocabulary, when known.
    pub oov_rate: Option<f64>,
    /// Fraction of test sentences present in the training data, when known.
    pub overlap_fraction: Option<f64>,
}

const NORMALIZATION_NOTE: &str = "ppl_word scores q_W(s) = q_V(F(s)) without renormalizing over word sequences; \
the omitted normalizer is at most 1, so ppl_word is an upper bound";

impl EvalReport {
    pub fn to_text(&self) -> String {
        let p = &self.perplexity;
        let mut out = String::new();
        let optional = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
        let rows: [(&str, String); 12] = [
            ("dataset", self.dataset.clone()),
            ("sentences", p.sentences.to_string()),
            ("token_count_policy", self.policy.to_string()),
            ("word_tokens", p.word_tokens.to_string()),
            ("subword_tokens", p.subword_tokens.to_string()),
            ("ratio", format!("{:.6}", p.ratio())),
            ("xent_bits", format!("{:.6}", p.cross_entropy)),
            ("ppl_subword", format!("{:.6}", p.ppl_subword)),
            ("ppl_word", format!("{:.6}", p.direct)),
            ("ppl_word_converted", format!("{:.6}", p.converted)),
            ("oov_rate", optional(self.oov_rate)),
            ("overlap_fraction", optional(self.overlap_fraction)),
        ];
        for (key, value) in rows {
            writeln!(out, "{key}\t{value}").expect("string write");
        }
        writeln!(out, "dual_path_gap\t{:.3e}", p.relative_gap()).expect("string write");
        writeln!(out, "note\t{NORMALIZATION_NOTE}").expect("string write");
        out
    }
}

/// One row per dataset: `dataset sentences word_tokens subword_tokens ratio
/// xent_bits ppl_subword ppl_word`, tab separated with a header.
pub fn report_tsv(reports: &[EvalReport]) -> String {
    let mut out =
        String::from("dataset\tsentences\tword_tokens\tsubword_tokens\tratio\txent_bits\tppl_subword\tppl_word\n");
    for r in reports {
        let p = &r.perplexity;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.dataset,
            p.sentences,
            p.word_tokens,
            p.subword_tokens,
            p.ratio(),
            p.cross_entropy,
            p.ppl_subword,
            p.direct
        )
        .expect("string write");
    }
    out
}
