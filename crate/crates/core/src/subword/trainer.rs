//! EM training of the unigram piece inventory.
//!
//! Training works on distinct marker-prefixed words weighted by their corpus
//! frequency: since no piece crosses a word boundary, the lattice of a
//! sentence is the concatenation of its word lattices.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use log::debug;
use rayon::prelude::*;

use super::lattice::SegmentationLattice;
use super::model::{SubwordModel, CONTROL_TOKENS};
use super::{SubwordError, WORD_BOUNDARY};
use crate::corpus::Sentence;
use crate::UP;

/// A marker-prefixed word and its corpus frequency.
pub type WeightedWord = (String, u64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerOptions {
    /// Longest candidate piece in characters, the marker included.
    pub max_piece_len: usize,
    /// Seed candidates per target vocabulary entry.
    pub seed_factor: usize,
    pub sub_iterations: usize,
    pub shrink: f64,
}

impl Default for TrainerOptions {
    fn default() -> Self {
        TrainerOptions {
            max_piece_len: 8,
            seed_factor: 25,
            sub_iterations: 2,
            shrink: 0.75,
        }
    }
}

/// Expected piece counts from one E-step, aligned with `model.pieces()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    pub counts: Vec<f64>,
    /// Base-2 corpus log-likelihood under the model that produced the counts.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub size: usize,
    /// Corpus log-likelihood before the first EM pass and after every pass.
    pub log_likelihoods: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rounds: Vec<RoundLog>,
}

impl TrainLog {
    /// True when the likelihood never drops by more than `rel_tol` (relative)
    /// between consecutive EM passes inside a round.
    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.rounds.iter().all(|r| {
            r.log_likelihoods
                .windows(2)
                .all(|w| w[1] >= w[0] - rel_tol * w[0].abs().max(1.0))
        })
    }
}

impl fmt::Display for TrainLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "round\tsize\tlog_likelihoods")?;
        for (i, r) in self.rounds.iter().enumerate() {
            let lls: Vec<String> = r.log_likelihoods.iter().map(|l| format!("{l:.6}")).collect();
            writeln!(f, "{i}\t{}\t{}", r.size, lls.join(","))?;
        }
        Ok(())
    }
}

/// Collects marker-prefixed training words and the user symbols found in
/// the corpus. Words equal to control tokens are skipped; `<up>` becomes a
/// user symbol.
pub fn training_words(corpus: &[Sentence]) -> Result<(Vec<WeightedWord>, Vec<String>), SubwordError> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut has_up = false;
    for word in corpus.iter().flat_map(Sentence::iter) {
        if word == UP {
            has_up = true;
            continue;
        }
        if CONTROL_TOKENS.contains(&word) {
            continue;
        }
        if word.contains(WORD_BOUNDARY) {
            return Err(SubwordError::ReservedCharacter(word.to_string()));
        }
        *counts.entry(word).or_insert(0) += 1;
    }
    let words = counts
        .into_iter()
        .map(|(w, c)| (format!("{WORD_BOUNDARY}{w}"), c))
        .collect();
    let user = if has_up { vec![UP.to_string()] } else { Vec::new() };
    Ok((words, user))
}

fn is_special(text: &str) -> bool {
    CONTROL_TOKENS.contains(&text) || text == UP
}

/// Initial candidate inventory: every character, plus the `seed_size`
/// best multi-character substrings of at most `max_piece_len` characters.
///
/// Candidates seen at least twice rank ahead of singletons; within each
/// group the score is frequency times length. Initial probabilities are
/// proportional to substring frequency.
pub fn seed_vocabulary(
    words: &[WeightedWord],
    max_piece_len: usize,
    seed_size: usize,
) -> Result<SubwordModel, SubwordError> {
    if words.iter().all(|(w, c)| w.is_empty() || *c == 0) {
        return Err(SubwordError::EmptyCorpus);
    }
    let max_piece_len = max_piece_len.max(1);
    let mut chars: HashMap<&str, u64> = HashMap::new();
    let mut substrings: HashMap<&str, u64> = HashMap::new();
    for (word, freq) in words {
        let offsets: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let n = offsets.len() - 1;
        for start in 0..n {
            *chars.entry(&word[offsets[start]..offsets[start + 1]]).or_insert(0) += freq;
            for end in start + 2..=(start + max_piece_len).min(n) {
                *substrings.entry(&word[offsets[start]..offsets[end]]).or_insert(0) += freq;
            }
        }
    }
    let mut candidates: Vec<(&str, u64)> = substrings.into_iter().filter(|(s, _)| !is_special(s)).collect();
    let key = |&(s, c): &(&str, u64)| (c >= 2, c as u128 * s.chars().count() as u128);
    candidates.sort_by(|a, b| key(b).cmp(&key(a)).then_with(|| a.0.cmp(b.0)));
    candidates.truncate(seed_size);

    let mut pieces: Vec<(String, u64)> = chars
        .into_iter()
        .chain(candidates)
        .map(|(s, c)| (s.to_string(), c))
        .collect();
    pieces.sort_by(|a, b| a.0.cmp(&b.0));
    let total: f64 = pieces.iter().map(|p| p.1 as f64).sum();
    let pieces = pieces
        .into_iter()
        .map(|(s, c)| (s, (c as f64 / total).log2()))
        .collect();
    SubwordModel::new(pieces, &[])
}

/// Work is split into at most 64 fixed chunks so that the summation order,
/// and therefore the result, does not depend on the thread count.
fn chunk_size(len: usize) -> usize {
    len.div_ceil(64).max(256)
}

/// Forward-backward over every word lattice. Counts are posterior edge
/// probabilities weighted by word frequency.
pub fn e_step(model: &SubwordModel, words: &[WeightedWord]) -> Result<ExpectedCounts, SubwordError> {
    let n = model.pieces().len();
    let partial: Vec<Result<(Vec<f64>, f64), SubwordError>> = words
        .par_chunks(chunk_size(words.len()))
        .map(|chunk| {
            let mut counts = vec![0.0; n];
            let mut ll = 0.0;
            for (word, freq) in chunk {
                let lattice = model.lattice(word);
                let (z, post) = lattice.marginals().ok_or_else(|| unreachable_error(&lattice, word))?;
                let freq = *freq as f64;
                ll += freq * z;
                for (edge, p) in lattice.edges().iter().zip(post) {
                    counts[edge.piece as usize] += freq * p;
                }
            }
            Ok((counts, ll))
        })
        .collect();
    let mut counts = vec![0.0; n];
    let mut log_likelihood = 0.0;
    for part in partial {
        let (c, ll) = part?;
        for (acc, x) in counts.iter_mut().zip(c) {
            *acc += x;
        }
        log_likelihood += ll;
    }
    Ok(ExpectedCounts { counts, log_likelihood })
}

fn unreachable_error(lattice: &SegmentationLattice, word: &str) -> SubwordError {
    let pos = lattice.first_unreachable().unwrap_or(0);
    SubwordError::Unreachable {
        word: word.to_string(),
        position: pos,
    }
}

/// Re-estimates piece probabilities as normalized expected counts. Pieces
/// with a zero count keep the smallest positive probability so the
/// inventory (and character coverage) is unchanged.
pub fn m_step(model: &SubwordModel, counts: &ExpectedCounts) -> Result<SubwordModel, SubwordError> {
    if counts.counts.len() != model.pieces().len() {
        return Err(SubwordError::InvalidCounts("length mismatch".into()));
    }
    if counts.counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(SubwordError::InvalidCounts("negative or non-finite count".into()));
    }
    let total: f64 = counts.counts.iter().sum();
    if total <= 0.0 {
        return Err(SubwordError::InvalidCounts("all counts are zero".into()));
    }
    let pieces = model
        .pieces()
        .iter()
        .zip(&counts.counts)
        .map(|((text, _), &c)| (text.clone(), (c.max(f64::MIN_POSITIVE) / total).log2()))
        .collect();
    SubwordModel::new(pieces, model.user_symbols())
}

/// One pruning round: shrinks the inventory to `max(target, size * shrink)`
/// entries by removing the multi-character pieces whose removal costs the
/// least estimated likelihood, then renormalizes.
///
/// The estimated loss of a piece is its expected count times the gap between
/// its own log-probability and that of the best segmentation of its text
/// that avoids it.
pub fn prune(
    model: &SubwordModel,
    counts: &ExpectedCounts,
    target_size: usize,
    shrink: f64,
) -> Result<SubwordModel, SubwordError> {
    let floor = model.specials().len() + model.char_count();
    if target_size < floor {
        return Err(SubwordError::TargetTooSmall {
            target: target_size,
            minimum: floor,
        });
    }
    let size = model.len();
    if size <= target_size {
        return Ok(model.clone());
    }
    let new_size = ((size as f64 * shrink).floor() as usize).max(target_size);
    let remove = size - new_size;

    let pieces = model.pieces();
    let mut losses: Vec<(f64, usize)> = pieces
        .par_iter()
        .enumerate()
        .filter(|(_, (text, _))| text.chars().count() > 1)
        .map(|(i, (text, lp))| {
            let lattice = SegmentationLattice::new(text, model.max_piece_chars(), |s| {
                model
                    .piece_index(s)
                    .filter(|&j| j as usize != i)
                    .map(|j| (j, pieces[j as usize].1))
            });
            let alt = lattice.viterbi().map_or(f64::NEG_INFINITY, |p| p.log_prob);
            (counts.counts[i] * (lp - alt), i)
        })
        .collect();
    losses.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| pieces[a.1].0.cmp(&pieces[b.1].0))
    });
    let mut dropped = vec![false; pieces.len()];
    for &(_, i) in losses.iter().take(remove) {
        dropped[i] = true;
    }
    let kept: Vec<(String, f64)> = pieces
        .iter()
        .zip(&dropped)
        .filter(|(_, d)| !**d)
        .map(|(p, _)| p.clone())
        .collect();
    let norm = kept.iter().map(|(_, lp)| lp.exp2()).sum::<f64>().log2();
    let kept = kept.into_iter().map(|(t, lp)| (t, lp - norm)).collect();
    SubwordModel::new(kept, model.user_symbols())
}

/// Trains a model with exactly `vocab_size` entries, specials included.
pub fn train_unigram(
    corpus: &[Sentence],
    vocab_size: usize,
    options: &TrainerOptions,
) -> Result<(SubwordModel, TrainLog), SubwordError> {
    let (words, user) = training_words(corpus)?;
    let seed_size = options.seed_factor.max(1) * vocab_size;
    let seed = seed_vocabulary(&words, options.max_piece_len, seed_size)?;
    let mut model = SubwordModel::new(seed.pieces().to_vec(), &user)?;

    let minimum = model.specials().len() + model.char_count();
    if vocab_size < minimum {
        return Err(SubwordError::TargetTooSmall {
            target: vocab_size,
            minimum,
        });
    }
    if vocab_size > model.len() {
        return Err(SubwordError::TargetTooLarge {
            target: vocab_size,
            available: model.len(),
        });
    }

    let mut log = TrainLog::default();
    loop {
        let mut lls = Vec::with_capacity(options.sub_iterations + 1);
        let mut counts = e_step(&model, &words)?;
        lls.push(counts.log_likelihood);
        for _ in 0..options.sub_iterations {
            model = m_step(&model, &counts)?;
            counts = e_step(&model, &words)?;
            lls.push(counts.log_likelihood);
        }
        debug!("round {}: size {} ll {:?}", log.rounds.len(), model.len(), lls);
        log.rounds.push(RoundLog {
            size: model.len(),
            log_likelihoods: lls,
        });
        if model.len() <= vocab_size {
            break;
        }
        model = prune(&model, &counts, vocab_size, options.shrink)?;
    }

    let mut pieces = model.pieces().to_vec();
    pieces.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok((SubwordModel::new(pieces, &user)?, log))
}
