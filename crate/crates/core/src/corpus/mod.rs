//! Corpus ingestion and preprocessing.
//!
//! The training pipeline runs, in order: token counting, vocabulary
//! extraction, deduplication, the optional `<up>` capitalization transform
//! and OOV replacement. Corpus files hold one sentence per line with tokens
//! separated by single spaces; sentence markers are never stored in files.

mod case;
mod stats;
pub mod synthetic;
mod vocab;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use case::{apply_case_transform, invert_case_transform};
pub use stats::{corpus_stats, oov_rate, overlap_stats, stats_table, CorpusStats};
pub use vocab::{build_vocab, Vocabulary};

use crate::UNK;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: invalid UTF-8")]
    InvalidUtf8 { line: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("sentence already contains the `<up>` marker")]
    AlreadyTransformed,
    #[error("`<up>` at position {0} is not followed by a word")]
    DanglingUp(usize),
    #[error("`<up>` at position {position} precedes `{token}`, which has no capitalized form")]
    NotInvertible { position: usize, token: String },
    #[error("validation target of {target} tokens exceeds the corpus size of {available}")]
    ValidTargetTooLarge { target: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sentence as an ordered list of word tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence(Vec<String>);

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        Sentence(tokens)
    }

    /// Splits a corpus line on whitespace.
    pub fn parse(line: &str) -> Self {
        Sentence(line.split_whitespace().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, token) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(token)?;
        }
        Ok(())
    }
}

impl<S: Into<String>> FromIterator<S> for Sentence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Sentence(iter.into_iter().map(Into::into).collect())
    }
}

/// Reads a corpus, one sentence per line. Invalid UTF-8 is reported with
/// its 1-based line number.
pub fn read_sentences<R: BufRead>(mut reader: R) -> Result<Vec<Sentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut buf = Vec::new();
    let mut line = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line += 1;
        let text = std::str::from_utf8(&buf).map_err(|_| CorpusError::InvalidUtf8 { line })?;
        sentences.push(Sentence::parse(text));
    }
    Ok(sentences)
}

pub fn write_sentences<W: Write>(mut writer: W, sentences: &[Sentence]) -> std::io::Result<()> {
    for sentence in sentences {
        writeln!(writer, "{sentence}")?;
    }
    writer.flush()
}

/// Occurrence count of every word token.
pub fn count_tokens(corpus: &[Sentence]) -> HashMap<String, u64> {
    corpus
        .par_chunks(4096)
        .map(|chunk| {
            let mut counts: HashMap<String, u64> = HashMap::new();
            for token in chunk.iter().flat_map(Sentence::tokens) {
                match counts.get_mut(token.as_str()) {
                    Some(c) => *c += 1,
                    None => {
                        counts.insert(token.clone(), 1);
                    }
                }
            }
            counts
        })
        .reduce(HashMap::new, |mut a, b| {
            for (token, count) in b {
                *a.entry(token).or_insert(0) += count;
            }
            a
        })
}

/// Keeps the first occurrence of every distinct sentence, in input order.
pub fn deduplicate(sentences: Vec<Sentence>) -> Vec<Sentence> {
    let mut seen: HashSet<Sentence> = HashSet::with_capacity(sentences.len());
    let mut out = Vec::new();
    for sentence in sentences {
        if !seen.contains(&sentence) {
            seen.insert(sentence.clone());
            out.push(sentence);
        }
    }
    out
}

/// How out-of-vocabulary word tokens are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovMode {
    /// Substitute `<unk>`; sentence lengths are preserved.
    #[default]
    Replace,
    /// Drop the token.
    Remove,
}

impl std::str::FromStr for OovMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "replace" => Ok(OovMode::Replace),
            "remove" => Ok(OovMode::Remove),
            other => Err(format!("unknown OOV mode `{other}` (expected replace or remove)")),
        }
    }
}

/// Replaces every token outside `vocab.entries` by `<unk>`.
pub fn replace_oov(sentence: &Sentence, vocab: &Vocabulary) -> Sentence {
    handle_oov(sentence, vocab, OovMode::Replace)
}

pub fn handle_oov(sentence: &Sentence, vocab: &Vocabulary, mode: OovMode) -> Sentence {
    let tokens = sentence.iter().filter_map(|t| {
        if vocab.contains(t) {
            Some(t.to_string())
        } else {
            match mode {
                OovMode::Replace => Some(UNK.to_string()),
                OovMode::Remove => None,
            }
        }
    });
    Sentence(tokens.collect())
}

/// Shuffles in place with a ChaCha generator seeded from `seed`.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
}

/// Splits an already shuffled list into `(train, valid)`, where `valid` is
/// the shortest prefix holding at least `valid_target` tokens as measured by
/// `len`.
pub fn split_train_valid<T, F>(items: Vec<T>, valid_target: usize, len: F) -> Result<(Vec<T>, Vec<T>), CorpusError>
where
    F: Fn(&T) -> usize,
{
    let available: usize = items.iter().map(&len).sum();
    if valid_target > available {
        return Err(CorpusError::ValidTargetTooLarge {
            target: valid_target,
            available,
        });
    }
    let mut taken = 0;
    let mut cut = 0;
    while taken < valid_target {
        taken += len(&items[cut]);
        cut += 1;
    }
    let mut valid = items;
    let train = valid.split_off(cut);
    Ok((train, valid))
}
