//! Brute-force reference implementations shared by the integration tests
//! and the acceptance suite.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sublm::corpus::synthetic::{random_sentence, WordSampler};
use sublm::corpus::Sentence;
use sublm::neural::{DropoutMasks, LstmConfig, LstmLm, LstmState};
use sublm::ngram::{train_kn, NgramModel};
use sublm::subword::{train_unigram, SegmentationLattice, SubwordError, SubwordModel, TrainerOptions, WORD_BOUNDARY};
use sublm::{LanguageModel, SymbolTable, TokenId};

/// One complete segmentation: piece indices, piece lengths in characters
/// and the summed log-probability.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub pieces: Vec<u32>,
    pub lengths: Vec<usize>,
    pub log_prob: f64,
}

/// Every way to cover `text` with `pieces` (text, log-probability).
pub fn all_segmentations(text: &str, pieces: &[(String, f64)]) -> Vec<Segmentation> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut stack: Vec<(u32, usize)> = Vec::new();
    fn walk(
        chars: &[char],
        pos: usize,
        pieces: &[(String, f64)],
        stack: &mut Vec<(u32, usize)>,
        out: &mut Vec<Segmentation>,
    ) {
        if pos == chars.len() {
            // Summed from the right, the order a right-to-left dynamic
            // program accumulates in.
            let mut log_prob = 0.0;
            for &(p, _) in stack.iter().rev() {
                log_prob += pieces[p as usize].1;
            }
            out.push(Segmentation {
                pieces: stack.iter().map(|&(p, _)| p).collect(),
                lengths: stack.iter().map(|&(_, l)| l).collect(),
                log_prob,
            });
            return;
        }
        for (i, (piece, _)) in pieces.iter().enumerate() {
            let len = piece.chars().count();
            if pos + len <= chars.len() && chars[pos..pos + len].iter().copied().eq(piece.chars()) {
                stack.push((i as u32, len));
                walk(chars, pos + len, pieces, stack, out);
                stack.pop();
            }
        }
    }
    walk(&chars, 0, pieces, &mut stack, &mut out);
    out
}

/// Total probability of all segmentations (linear space).
pub fn total_probability(segmentations: &[Segmentation]) -> f64 {
    segmentations.iter().map(|s| s.log_prob.exp2()).sum()
}

/// Highest-scoring segmentation; ties go to fewer pieces, then to the
/// lexicographically largest sequence of piece lengths.
pub fn best_segmentation(segmentations: &[Segmentation]) -> Option<&Segmentation> {
    segmentations.iter().max_by(|a, b| {
        a.log_prob
            .partial_cmp(&b.log_prob)
            .unwrap()
            .then(b.pieces.len().cmp(&a.pieces.len()))
            .then(a.lengths.cmp(&b.lengths))
    })
}

/// Interpolated Kneser-Ney probability evaluated straight from the
/// definition over raw sentences. `vocab` is the full id range including
/// `<s>`; the base distribution is uniform over the `vocab - 1` predictable
/// ids.
pub struct KneserNeyOracle {
    order: usize,
    discount: f64,
    vocab: usize,
    bos: u32,
    /// `grams[k]`: every k-gram occurrence in the padded data.
    grams: Vec<Vec<Vec<u32>>>,
}

impl KneserNeyOracle {
    pub fn new(sentences: &[Vec<u32>], order: usize, discount: f64, vocab: usize, bos: u32, eos: u32) -> Self {
        let mut grams = vec![Vec::new(); order + 1];
        for s in sentences {
            let mut padded = vec![bos; order - 1];
            padded.extend_from_slice(s);
            padded.push(eos);
            for i in order - 1..padded.len() {
                for k in 1..=order {
                    grams[k].push(padded[i + 1 - k..=i].to_vec());
                }
            }
        }
        KneserNeyOracle {
            order,
            discount,
            vocab,
            bos,
            grams,
        }
    }

    fn adjusted(&self, gram: &[u32]) -> f64 {
        let k = gram.len();
        if k == self.order {
            self.grams[k].iter().filter(|g| g.as_slice() == gram).count() as f64
        } else {
            let left: HashSet<u32> = self.grams[k + 1]
                .iter()
                .filter(|g| &g[1..] == gram)
                .map(|g| g[0])
                .collect();
            left.len() as f64
        }
    }

    fn level(&self, history: &[u32], token: u32) -> f64 {
        let k = history.len() + 1;
        if k == 0 {
            unreachable!()
        }
        let lower = if k == 1 {
            1.0 / (self.vocab - 1) as f64
        } else {
            self.level(&history[1..], token)
        };
        let mut total = 0.0;
        let mut types = 0.0;
        for w in 0..self.vocab as u32 {
            let mut g = history.to_vec();
            g.push(w);
            let a = self.adjusted(&g);
            if a > 0.0 {
                total += a;
                types += 1.0;
            }
        }
        if total == 0.0 {
            return lower;
        }
        let mut g = history.to_vec();
        g.push(token);
        ((self.adjusted(&g) - self.discount).max(0.0) + self.discount * types * lower) / total
    }

    /// `P(token | context)` with the context padded or truncated to
    /// `order - 1` tokens.
    pub fn prob(&self, context: &[u32], token: u32) -> f64 {
        let n = self.order - 1;
        let history: Vec<u32> = if context.len() >= n {
            context[context.len() - n..].to_vec()
        } else {
            let mut h = vec![self.bos; n - context.len()];
            h.extend_from_slice(context);
            h
        };
        self.level(&history, token)
    }
}

/// Random corpus of `sentences` sentences over a pool of `pool` random
/// words drawn from `alphabet`.
pub fn random_corpus<R: Rng>(rng: &mut R, alphabet: &[char], pool: usize, sentences: usize) -> Vec<Sentence> {
    let words: Vec<String> = (0..pool)
        .map(|_| {
            let len = rng.random_range(1..=6);
            (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect()
        })
        .collect();
    (0..sentences)
        .map(|_| {
            let len = rng.random_range(1..=8);
            Sentence::new((0..len).map(|_| words[rng.random_range(0..pool)].clone()).collect())
        })
        .collect()
}

/// Token frequencies counted independently of the library.
pub fn hand_count(sentences: &[Sentence]) -> HashMap<String, u64> {
    let mut out = HashMap::new();
    for s in sentences {
        for t in s.tokens() {
            *out.entry(t.clone()).or_insert(0) += 1;
        }
    }
    out
}

/// The bundled Polish word-frequency list.
pub const WORD_LIST: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/pl_word_freq.tsv");

pub fn natural_sampler() -> WordSampler {
    let file = std::fs::File::open(WORD_LIST).expect("word list");
    WordSampler::from_frequency_list(std::io::BufReader::new(file)).expect("valid list")
}

pub fn natural_corpus(tokens: usize, seed: u64) -> Vec<Sentence> {
    natural_sampler().generate(tokens, seed)
}

/// Mixed corpus: half sampled Polish text, half random multi-script words.
pub fn mixed_corpus(n: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = natural_corpus(n * 6, seed);
    out.truncate(n / 2);
    while out.len() < n {
        out.push(random_sentence(&mut rng, 10));
    }
    out
}

// Kneser-Ney corpora.

/// A symbol table of `words` words plus markers and `sentences` random
/// sentences over it, `<unk>` included.
pub fn kn_corpus(rng: &mut ChaCha8Rng, words: usize, sentences: usize) -> (SymbolTable, Vec<Vec<TokenId>>) {
    let names: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
    let symbols = SymbolTable::new(names.iter().map(String::as_str));
    let data = (0..sentences)
        .map(|_| {
            let len = rng.random_range(0..=6);
            (0..len)
                .map(|_| {
                    let r = rng.random_range(0..=words);
                    if r == words {
                        symbols.unk()
                    } else {
                        symbols.id(&names[r]).unwrap()
                    }
                })
                .collect()
        })
        .collect();
    (symbols, data)
}

/// A random context, sometimes opening with `<s>`.
pub fn random_context(rng: &mut ChaCha8Rng, symbols: &SymbolTable) -> Vec<TokenId> {
    let len = rng.random_range(0..=4);
    let mut ctx: Vec<TokenId> = (0..len)
        .map(|_| rng.random_range(0..symbols.len() as TokenId))
        .filter(|&t| t != symbols.bos())
        .collect();
    if rng.random_bool(0.5) {
        ctx.insert(0, symbols.bos());
    }
    ctx
}

// Segmentation lattices.

const ALPHABET: [char; 3] = ['a', 'b', WORD_BOUNDARY];

/// Up to 12 distinct pieces over a three-letter alphabet. With `integral`
/// the scores are whole numbers so that exact ties occur.
fn random_inventory(rng: &mut ChaCha8Rng, integral: bool) -> Vec<(String, f64)> {
    let size = rng.random_range(1..=12);
    let mut pieces: Vec<(String, f64)> = Vec::new();
    while pieces.len() < size {
        let len = rng.random_range(1..=4);
        let text: String = (0..len).map(|_| ALPHABET[rng.random_range(0..3)]).collect();
        if pieces.iter().any(|(t, _)| *t == text) {
            continue;
        }
        let score = if integral {
            -(rng.random_range(1..=4) as f64)
        } else {
            rng.random_range(-9.0..-0.05)
        };
        pieces.push((text, score));
    }
    pieces
}

fn lattice_for(text: &str, pieces: &[(String, f64)]) -> SegmentationLattice {
    let index: HashMap<&str, u32> = pieces
        .iter()
        .enumerate()
        .map(|(i, (t, _))| (t.as_str(), i as u32))
        .collect();
    let longest = pieces.iter().map(|(t, _)| t.chars().count()).max().unwrap_or(1);
    SegmentationLattice::new(text, longest, |s| index.get(s).map(|&i| (i, pieces[i as usize].1)))
}

/// Compares lattice Viterbi paths, forward sums and edge posteriors with
/// exhaustive enumeration on `cases` random strings of at most 12
/// characters over inventories of at most 12 pieces. Panics on the first
/// mismatch; returns the number of segmentable cases.
pub fn check_lattices(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reachable = 0;
    for case in 0..cases {
        let integral = case % 2 == 0;
        let pieces = random_inventory(&mut rng, integral);
        // Mostly concatenations of pieces, so that a segmentation exists.
        let mut text = String::new();
        let target = rng.random_range(1..=12);
        while text.chars().count() < target {
            if rng.random_bool(0.8) {
                text.push_str(&pieces[rng.random_range(0..pieces.len())].0);
            } else {
                text.push(ALPHABET[rng.random_range(0..3)]);
            }
        }
        let text: String = text.chars().take(target).collect();
        let len = target;
        let all = all_segmentations(&text, &pieces);
        let lattice = lattice_for(&text, &pieces);

        let Some(expected) = best_segmentation(&all) else {
            assert!(lattice.viterbi().is_none(), "{text}");
            assert_eq!(lattice.forward()[len], f64::NEG_INFINITY);
            continue;
        };
        reachable += 1;
        let path = lattice.viterbi().unwrap();
        let tol = 1e-9 * expected.log_prob.abs().max(1.0);
        assert!((path.log_prob - expected.log_prob).abs() <= tol);
        if integral {
            // Sums of whole numbers are exact, so ties are real and the tie
            // rule decides the path.
            assert_eq!(path.pieces, expected.pieces, "{text} over {pieces:?}");
        } else {
            // Reorderings of the same pieces differ only by rounding; any
            // optimal path within tolerance is accepted.
            let same = all
                .iter()
                .find(|s| s.pieces == path.pieces)
                .expect("path is a segmentation");
            assert!(
                (same.log_prob - expected.log_prob).abs() <= tol,
                "{text} over {pieces:?}"
            );
        }

        let z = total_probability(&all);
        let forward = lattice.forward()[len];
        assert!(
            (forward - z.log2()).abs() <= 1e-9 * forward.abs().max(1.0),
            "{forward} vs {}",
            z.log2()
        );

        // Edge posteriors: the share of probability mass through each edge.
        let (_, posteriors) = lattice.marginals().unwrap();
        for (edge, posterior) in lattice.edges().iter().zip(posteriors) {
            let through: f64 = all
                .iter()
                .filter(|s| {
                    let mut pos = 0;
                    s.pieces.iter().zip(&s.lengths).any(|(&p, &l)| {
                        let hit = pos == edge.start && p == edge.piece;
                        pos += l;
                        hit
                    })
                })
                .map(|s| s.log_prob.exp2())
                .sum();
            assert!((posterior - through / z).abs() <= 1e-9);
        }
    }
    reachable
}

// Word-level perplexity triples.

/// A random test set with a tokenizer and a KN model trained on
/// companion sentences.
pub struct Triple {
    pub test: Vec<Sentence>,
    pub tokenizer: SubwordModel,
    pub lm: NgramModel,
}

pub fn random_triple(rng: &mut ChaCha8Rng) -> Triple {
    let alphabet: Vec<char> = "abcdeąęł".chars().take(rng.random_range(3..=8)).collect();
    let pool = rng.random_range(5..40);
    let corpus = random_corpus(rng, &alphabet, pool, 60);
    let (train, test) = corpus.split_at(40);
    let chars: HashSet<char> = train.iter().flat_map(|s| s.iter().flat_map(str::chars)).collect();
    // Test sentences need characters the tokenizer has seen.
    let test: Vec<Sentence> = test
        .iter()
        .filter(|s| s.iter().flat_map(str::chars).all(|c| chars.contains(&c)))
        .cloned()
        .collect();
    let options = TrainerOptions::default();
    let minimum = chars.len() + 5;
    let mut size = rng.random_range(minimum..minimum + 60);
    let tokenizer = loop {
        match train_unigram(train, size, &options) {
            Ok((model, _)) => break model,
            Err(SubwordError::TargetTooLarge { available, .. }) => size = available,
            Err(e) => panic!("{e}"),
        }
    };
    let symbols = tokenizer.symbols();
    let stream: Vec<Vec<TokenId>> = tokenizer
        .encode_corpus(train)
        .unwrap()
        .into_iter()
        .map(|e| e.ids)
        .collect();
    let order = rng.random_range(1..=3);
    let lm = train_kn(symbols, &stream, order, rng.random_range(0.3..0.95)).unwrap();
    Triple { test, tokenizer, lm }
}

/// `lg q(s)` summed token by token from conditional probabilities.
pub fn score_by_hand(lm: &NgramModel, ids: &[TokenId]) -> f64 {
    let symbols = lm.symbols();
    let mut context = vec![symbols.bos()];
    let mut total = 0.0;
    for &t in ids.iter().chain([symbols.eos()].iter()) {
        total += lm.log_prob(&context, t).unwrap();
        context.push(t);
    }
    total
}

// LSTM gradients.

pub fn grad_config(tie: bool) -> LstmConfig {
    LstmConfig {
        layers: 2,
        embedding_dim: 8,
        hidden_dim: 12,
        vocab_size: 20,
        bptt_len: 5,
        dropout_embedding: 0.0,
        dropout_hidden: 0.0,
        dropout_output: 0.0,
        tie_weights: tie,
        seed: 2024,
    }
}

pub fn random_ids(rng: &mut ChaCha8Rng, rows: usize, cols: usize, vocab: u32) -> Array2<TokenId> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0..vocab))
}

/// Relative error between analytic and central-difference gradients for
/// every tensor: `max |a - n| / max(|a|, |n|)` over the whole tensor, and the
/// largest per-entry relative error among entries above 1e-5 in magnitude,
/// where finite-difference rounding noise (about 1e-11) is negligible.
pub fn gradient_errors(tie: bool) -> Vec<(String, f64, f64)> {
    let mut model = LstmLm::new(grad_config(tie)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let inputs = random_ids(&mut rng, 2, 5, 20);
    let targets = random_ids(&mut rng, 2, 5, 20);
    let masks = DropoutMasks::none(2);
    // Start from a non-zero state so the recurrent inputs are exercised.
    let warm = random_ids(&mut rng, 2, 3, 20);
    let (_, state): (_, LstmState) = model.forward(warm.view(), &model.zero_state(2)).unwrap();

    let (_, analytic, _) = model
        .loss_and_gradients(inputs.view(), targets.view(), None, &state, &masks, None)
        .unwrap();
    let eps = 1e-5;
    let names: Vec<String> = analytic.tensors().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let len = analytic.tensors()[k].1.len();
        let (mut diff, mut size, mut entry): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for idx in 0..len {
            let mut loss_at = |delta: f64| {
                {
                    let mut tensors = model.params_mut().tensors_mut();
                    let v = tensors[k].1.as_slice_mut().unwrap();
                    v[idx] += delta;
                }
                let (loss, _, _) = model
                    .loss_and_gradients(inputs.view(), targets.view(), None, &state, &masks, None)
                    .unwrap();
                {
                    let mut tensors = model.params_mut().tensors_mut();
                    let v = tensors[k].1.as_slice_mut().unwrap();
                    v[idx] -= delta;
                }
                loss
            };
            let numeric = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
            let exact = analytic.tensors()[k].1.as_slice().unwrap()[idx];
            let scale = exact.abs().max(numeric.abs());
            diff = diff.max((exact - numeric).abs());
            size = size.max(scale);
            if scale > 1e-5 {
                entry = entry.max((exact - numeric).abs() / scale);
            }
        }
        out.push((name.clone(), diff / size, entry));
    }
    out
}
