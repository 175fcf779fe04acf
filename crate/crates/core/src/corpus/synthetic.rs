//! Seeded corpus generators for desk-scale experiments and tests.

use std::io::BufRead;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Sentence};

/// Draws words i.i.d. from a weighted word list.
#[derive(Debug, Clone)]
pub struct WordSampler {
    words: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl WordSampler {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self, CorpusError> {
        let malformed = |message: &str| CorpusError::Malformed {
            line: 0,
            message: message.to_string(),
        };
        let (words, weights): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let dist = WeightedIndex::new(weights).map_err(|e| malformed(&e.to_string()))?;
        Ok(WordSampler { words, dist })
    }

    /// Reads `word<TAB>weight` lines.
    pub fn from_frequency_list<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let malformed = || CorpusError::Malformed {
                line: i + 1,
                message: "expected word<TAB>weight".to_string(),
            };
            let (word, weight) = line.split_once('\t').ok_or_else(malformed)?;
            let weight: f64 = weight.trim().parse().map_err(|_| malformed())?;
            entries.push((word.to_string(), weight));
        }
        WordSampler::new(entries)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.words.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> &str {
        &self.words[self.dist.sample(rng)]
    }

    /// Sentences of 3 to 18 sampled words closed by a period, the first word
    /// capitalized, until at least `min_tokens` tokens were produced.
    pub fn generate(&self, min_tokens: usize, seed: u64) -> Vec<Sentence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        let mut total = 0;
        while total < min_tokens {
            let len = rng.random_range(3..=18);
            let mut tokens: Vec<String> = (0..len).map(|_| self.sample(&mut rng).to_string()).collect();
            tokens[0] = capitalize(&tokens[0]);
            tokens.push(".".to_string());
            total += tokens.len();
            out.push(Sentence::new(tokens));
        }
        out
    }
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

const SCRIPTS: &[(u32, u32)] = &[
    (0x61, 0x7a),       // a-z
    (0x41, 0x5a),       // A-Z
    (0x30, 0x39),       // digits
    (0x21, 0x2f),       // punctuation
    (0x104, 0x17e),     // Latin Extended-A
    (0x3b1, 0x3c9),     // Greek
    (0x430, 0x44f),     // Cyrillic
    (0x5d0, 0x5ea),     // Hebrew
    (0x3041, 0x3096),   // Hiragana
    (0x1f600, 0x1f64f), // emoticons
];

/// A random non-whitespace word drawn from several scripts. Never contains
/// the subword boundary marker U+2581 and is never a marker token.
pub fn random_word<R: Rng>(rng: &mut R, max_len: usize) -> String {
    let len = rng.random_range(1..=max_len.max(1));
    (0..len)
        .map(|_| {
            let (lo, hi) = SCRIPTS[rng.random_range(0..SCRIPTS.len())];
            char::from_u32(rng.random_range(lo..=hi)).unwrap_or('x')
        })
        .collect()
}

pub fn random_sentence<R: Rng>(rng: &mut R, max_words: usize) -> Sentence {
    let n = rng.random_range(0..=max_words);
    Sentence::new((0..n).map(|_| random_word(rng, 8)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let sampler = WordSampler::new(vec![("ala".into(), 3.0), ("ma".into(), 2.0), ("kota".into(), 1.0)]).unwrap();
        let a = sampler.generate(500, 1);
        assert_eq!(a, sampler.generate(500, 1));
        assert!(a.iter().map(Sentence::len).sum::<usize>() >= 500);
        assert!(a.iter().all(|s| s.tokens().last().unwrap() == "."));
    }

    #[test]
    fn random_words_are_clean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let w = random_word(&mut rng, 8);
            assert!(!w.is_empty());
            assert!(!w.contains(char::is_whitespace));
            assert!(!w.contains('\u{2581}'));
        }
    }
}
