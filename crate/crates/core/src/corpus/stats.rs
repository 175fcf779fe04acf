use std::collections::HashSet;
use std::fmt;

use super::{Sentence, Vocabulary};

/// Sentence and token totals plus the OOV rate. Sentence markers are not
/// counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub sentence_count: usize,
    pub token_count: usize,
    pub oov_count: usize,
    pub oov_rate: f64,
}

pub fn corpus_stats(sentences: &[Sentence], vocab: &Vocabulary) -> CorpusStats {
    let token_count: usize = sentences.iter().map(Sentence::len).sum();
    let oov_count = sentences
        .iter()
        .flat_map(Sentence::iter)
        .filter(|t| !vocab.contains(t))
        .count();
    CorpusStats {
        sentence_count: sentences.len(),
        token_count,
        oov_count,
        oov_rate: if token_count == 0 {
            0.0
        } else {
            oov_count as f64 / token_count as f64
        },
    }
}

/// Fraction of word tokens outside the vocabulary. `<unk>` itself counts
/// as out of vocabulary, so the rate survives OOV replacement unchanged.
pub fn oov_rate(sentences: &[Sentence], vocab: &Vocabulary) -> f64 {
    corpus_stats(sentences, vocab).oov_rate
}

/// Fraction of test sentences that also occur in the training set, under
/// the same exact-match relation used for deduplication. `None` for an
/// empty test set.
pub fn overlap_stats(train: &[Sentence], test: &[Sentence]) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let known: HashSet<&Sentence> = train.iter().collect();
    let shared = test.iter().filter(|s| known.contains(s)).count();
    Some(shared as f64 / test.len() as f64)
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sentences\t{}", self.sentence_count)?;
        writeln!(f, "tokens\t{}", self.token_count)?;
        writeln!(f, "oov_rate\t{:.6}", self.oov_rate)
    }
}

/// One row per dataset with the columns `dataset sentences tokens oov_rate`.
pub fn stats_table<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a CorpusStats)>,
{
    let mut out = String::from("dataset\tsentences\ttokens\toov_rate\n");
    for (name, s) in rows {
        out.push_str(&format!(
            "{name}\t{}\t{}\t{:.6}\n",
            s.sentence_count, s.token_count, s.oov_rate
        ));
    }
    out
}
