//! The language model interface shared by the n-gram and LSTM models.

use std::collections::HashMap;

use thiserror::Error;

use crate::{BOS, EOS, UNK};

pub type TokenId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum LmError {
    #[error("token id {id} is outside the vocabulary of size {size}")]
    UnknownToken { id: TokenId, size: usize },
    #[error("the beginning-of-sentence marker is never predicted")]
    PredictedBos,
    #[error("non-finite log-probability for token {0}")]
    NonFinite(TokenId),
}

/// Bidirectional mapping between token strings and dense ids.
///
/// Always contains `<unk>`, `<s>` and `</s>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    unk: TokenId,
    bos: TokenId,
    eos: TokenId,
}

impl SymbolTable {
    /// Builds a table from tokens in id order. Duplicates are dropped (first
    /// occurrence wins) and missing markers are appended.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut table = SymbolTable {
            tokens: Vec::new(),
            index: HashMap::new(),
            unk: 0,
            bos: 0,
            eos: 0,
        };
        for token in tokens {
            table.insert(token.into());
        }
        table.unk = table.insert(UNK.to_string());
        table.bos = table.insert(BOS.to_string());
        table.eos = table.insert(EOS.to_string());
        table
    }

    fn insert(&mut self, token: String) -> TokenId {
        if let Some(&id) = self.index.get(&token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Total lookup: unknown strings resolve to `<unk>`.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(self.unk)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    /// Ids that a model may be asked to predict: everything except `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = TokenId> + '_ {
        let bos = self.bos;
        (0..self.tokens.len() as TokenId).filter(move |&id| id != bos)
    }

    pub(crate) fn check(&self, id: TokenId) -> Result<(), LmError> {
        if (id as usize) < self.tokens.len() {
            Ok(())
        } else {
            Err(LmError::UnknownToken {
                id,
                size: self.tokens.len(),
            })
        }
    }
}

/// Conditional next-token model over a fixed, finite vocabulary.
///
/// All log-probabilities are base 2.
pub trait LanguageModel {
    fn symbols(&self) -> &SymbolTable;

    /// `lg P(token | context)`. The context is the full history since the
    /// sentence start; models that need a fixed-length history pad it on
    /// the left with `<s>`.
    fn log_prob(&self, context: &[TokenId], token: TokenId) -> Result<f64, LmError>;

    /// `lg q(s)`: every token of `sentence` plus the closing `</s>`, each
    /// conditioned on `<s>` followed by the preceding tokens.
    fn sequence_log_prob(&self, sentence: &[TokenId]) -> Result<f64, LmError> {
        let symbols = self.symbols();
        let mut context = Vec::with_capacity(sentence.len() + 1);
        context.push(symbols.bos());
        let mut total = 0.0;
        for &token in sentence {
            total += self.log_prob(&context, token)?;
            context.push(token);
        }
        total += self.log_prob(&context, symbols.eos())?;
        Ok(total)
    }
}

/// Assigns the same probability to every predictable token.
#[derive(Debug, Clone)]
pub struct UniformLm {
    symbols: SymbolTable,
}

impl UniformLm {
    pub fn new(symbols: SymbolTable) -> Self {
        UniformLm { symbols }
    }
}

impl LanguageModel for UniformLm {
    fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    fn log_prob(&self, _context: &[TokenId], token: TokenId) -> Result<f64, LmError> {
        self.symbols.check(token)?;
        if token == self.symbols.bos() {
            return Err(LmError::PredictedBos);
        }
        Ok(-((self.symbols.len() - 1) as f64).log2())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_are_always_present() {
        let table = SymbolTable::new(["a", "b"]);
        assert_eq!(table.len(), 5);
        assert_eq!(table.token(table.unk()), Some(UNK));
        assert_eq!(table.id_or_unk("zzz"), table.unk());
        assert_eq!(table.id("a"), Some(0));
    }

    #[test]
    fn duplicates_keep_first_id() {
        let table = SymbolTable::new(["<unk>", "a", "a", "<s>"]);
        assert_eq!(table.id(UNK), Some(0));
        assert_eq!(table.id("a"), Some(1));
        assert_eq!(table.bos(), 2);
        assert_eq!(table.eos(), 3);
    }

    #[test]
    fn uniform_over_four_predictable_types() {
        // a, b, <unk>, </s> are predictable; <s> is not.
        let lm = UniformLm::new(SymbolTable::new(["a", "b"]));
        let a = lm.symbols().id("a").unwrap();
        assert_eq!(lm.log_prob(&[], a).unwrap(), -2.0);
        let b = lm.symbols().id("b").unwrap();
        assert_eq!(lm.sequence_log_prob(&[a, b]).unwrap(), -6.0);
        assert!(lm.log_prob(&[], 99).is_err());
    }
}
