//! Interpolated Kneser-Ney n-gram language model with a fixed discount.
//!
//! Sentences are padded on the left with `order - 1` copies of `<s>` and
//! closed with `</s>`. The highest order uses raw counts; every lower order
//! uses continuation counts (the number of distinct left extensions), and
//! the unigram level interpolates with the uniform distribution over all
//! predictable tokens, so every probability is strictly positive.
//!
//! After estimation the model is stored in backoff form: for every seen
//! n-gram the fully interpolated log-probability, and for every seen context
//! the log of its interpolation weight `D * N1+(h .) / total(h)`.

mod io;

use std::collections::HashMap;

use thiserror::Error;

use crate::{LanguageModel, LmError, SymbolTable, TokenId};

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("order must be at least 1")]
    InvalidOrder,
    #[error("discount {0} must lie strictly between 0 and 1")]
    InvalidDiscount(f64),
    #[error("empty training stream")]
    EmptyStream,
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw n-gram counts for orders `1..=order`, collected from padded
/// sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramCounts {
    order: usize,
    bos: TokenId,
    /// `counts[k - 1]` maps k-grams to occurrence counts.
    counts: Vec<HashMap<Vec<TokenId>, u64>>,
}

impl NgramCounts {
    pub fn new(order: usize, bos: TokenId) -> Self {
        NgramCounts {
            order,
            bos,
            counts: vec![HashMap::new(); order],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Records one prediction of `token` after `context`. The context is
    /// left-padded with `<s>` (or truncated) to `order - 1` tokens, and the
    /// occurrence is counted at every order.
    pub fn add_occurrence(&mut self, context: &[TokenId], token: TokenId) {
        let mut gram = padded_history(context, self.order - 1, self.bos);
        gram.push(token);
        for k in 1..=self.order {
            let key = &gram[gram.len() - k..];
            match self.counts[k - 1].get_mut(key) {
                Some(c) => *c += 1,
                None => {
                    self.counts[k - 1].insert(key.to_vec(), 1);
                }
            }
        }
    }

    pub fn add_sentence(&mut self, sentence: &[TokenId], eos: TokenId) {
        let mut history: Vec<TokenId> = vec![self.bos; self.order - 1];
        for &token in sentence.iter().chain(std::iter::once(&eos)) {
            self.add_occurrence(&history[history.len() + 1 - self.order..], token);
            history.push(token);
        }
    }

    pub fn count(&self, gram: &[TokenId]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        self.counts[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }
}

fn padded_history(context: &[TokenId], len: usize, bos: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(len + 1);
    if context.len() < len {
        out.extend(std::iter::repeat_n(bos, len - context.len()));
        out.extend_from_slice(context);
    } else {
        out.extend_from_slice(&context[context.len() - len..]);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Level {
    /// n-gram -> lg P(token | context), fully interpolated.
    pub(crate) probs: HashMap<Vec<TokenId>, f64>,
    /// context -> lg of the weight given to the next lower order.
    pub(crate) backoffs: HashMap<Vec<TokenId>, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    discount: f64,
    symbols: SymbolTable,
    /// `levels[k - 1]` holds order-k entries.
    levels: Vec<Level>,
}

/// Counts every sentence of `stream` and estimates an interpolated
/// Kneser-Ney model.
pub fn train_kn(
    symbols: SymbolTable,
    stream: &[Vec<TokenId>],
    order: usize,
    discount: f64,
) -> Result<NgramModel, NgramError> {
    if order == 0 {
        return Err(NgramError::InvalidOrder);
    }
    if stream.is_empty() {
        return Err(NgramError::EmptyStream);
    }
    let mut counts = NgramCounts::new(order, symbols.bos());
    for sentence in stream {
        for &t in sentence {
            symbols.check(t)?;
        }
        counts.add_sentence(sentence, symbols.eos());
    }
    estimate_kn(symbols, &counts, discount)
}

/// Estimates the model from precomputed counts.
pub fn estimate_kn(symbols: SymbolTable, counts: &NgramCounts, discount: f64) -> Result<NgramModel, NgramError> {
    if !(discount > 0.0 && discount < 1.0) {
        return Err(NgramError::InvalidDiscount(discount));
    }
    let order = counts.order;
    if order == 0 {
        return Err(NgramError::InvalidOrder);
    }
    // Adjusted counts: raw at the top order, continuation counts below.
    let mut adjusted: Vec<HashMap<&[TokenId], f64>> = vec![HashMap::new(); order];
    for (gram, &c) in &counts.counts[order - 1] {
        adjusted[order - 1].insert(gram.as_slice(), c as f64);
    }
    for k in (1..order).rev() {
        let (lower, upper) = adjusted.split_at_mut(k);
        for gram in upper[0].keys() {
            *lower[k - 1].entry(&gram[1..]).or_insert(0.0) += 1.0;
        }
    }

    let uniform = -((symbols.len() - 1) as f64).log2();
    let mut model = NgramModel {
        order,
        discount,
        symbols,
        levels: Vec::with_capacity(order),
    };
    for k in 1..=order {
        // Per-context totals and type counts.
        let mut totals: HashMap<&[TokenId], (f64, f64)> = HashMap::new();
        for (gram, &c) in &adjusted[k - 1] {
            let entry = totals.entry(&gram[..k - 1]).or_insert((0.0, 0.0));
            entry.0 += c;
            entry.1 += 1.0;
        }
        let mut level = Level::default();
        for (&context, &(total, types)) in &totals {
            level
                .backoffs
                .insert(context.to_vec(), (discount * types / total).log2());
        }
        let lower = |context: &[TokenId], token: TokenId| -> f64 {
            if k == 1 {
                uniform
            } else {
                model.level_log_prob(k - 1, &context[1..], token)
            }
        };
        for (&gram, &c) in &adjusted[k - 1] {
            let (context, token) = (&gram[..k - 1], gram[k - 1]);
            let (total, types) = totals[context];
            let p = ((c - discount).max(0.0) + discount * types * lower(context, token).exp2()) / total;
            level.probs.insert(gram.to_vec(), p.log2());
        }
        if k == 1 {
            // Unseen tokens receive only the uniform share.
            let weight = level.backoffs.get(&[][..]).copied().unwrap_or(0.0);
            for token in model.symbols.predictable() {
                level.probs.entry(vec![token]).or_insert(weight + uniform);
            }
        }
        model.levels.push(level);
    }
    Ok(model)
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Number of stored n-grams per order.
    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.probs.len()).collect()
    }

    /// lg P at order `k` for a history of at least `k - 1` tokens.
    fn level_log_prob(&self, k: usize, history: &[TokenId], token: TokenId) -> f64 {
        let mut gram: Vec<TokenId> = Vec::with_capacity(k);
        let mut weight = 0.0;
        for j in (1..=k).rev() {
            gram.clear();
            gram.extend_from_slice(&history[history.len() + 1 - j..]);
            gram.push(token);
            let level = &self.levels[j - 1];
            if let Some(&lp) = level.probs.get(&gram) {
                return weight + lp;
            }
            if let Some(&b) = level.backoffs.get(&gram[..j - 1]) {
                weight += b;
            }
        }
        f64::NEG_INFINITY
    }
}

impl LanguageModel for NgramModel {
    fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    fn log_prob(&self, context: &[TokenId], token: TokenId) -> Result<f64, LmError> {
        self.symbols.check(token)?;
        if token == self.symbols.bos() {
            return Err(LmError::PredictedBos);
        }
        let history = padded_history(context, self.order - 1, self.symbols.bos());
        let lp = self.level_log_prob(self.order, &history, token);
        if lp.is_finite() {
            Ok(lp)
        } else {
            Err(LmError::NonFinite(token))
        }
    }
}
