//! Multi-layer LSTM language model.
//!
//! Tokens are embedded, passed through a stack of LSTM layers and projected
//! back onto the vocabulary. The last layer's output size equals the
//! embedding size so the output projection can share the embedding matrix.
//! Training is truncated backpropagation through time with randomized window
//! lengths, plain SGD with gradient clipping, a slanted triangular learning
//! rate schedule and variational dropout. All arithmetic is `f64`.

mod checkpoint;
mod model;
mod params;
mod schedule;
mod softmax;
mod train;

use thiserror::Error;

pub use model::{cross_entropy_bits, DropoutMasks, LstmLm, LstmState, StepOutcome};
pub use params::{LayerParams, LstmParams};
pub use schedule::{sample_window_length, stlr, TrainSchedule};
pub use softmax::{full_softmax_loss, sampled_softmax_loss, NegativeSampler, SoftmaxOutput};
pub use train::{batchify, train_lstm, EpochLog, NeuralLm, TrainOptions, TrainReport};

use crate::{LmError, TokenId};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("token id {id} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { id: TokenId, vocab: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sample count {count} must be below the vocabulary size {vocab}")]
    SampleCount { count: usize, vocab: usize },
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("training stream has {0} tokens, at least 2 are needed")]
    ShortStream(usize),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and regularization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmConfig {
    pub layers: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub bptt_len: usize,
    /// Dropout on the embedded input.
    pub dropout_embedding: f64,
    /// Dropout between LSTM layers.
    pub dropout_hidden: f64,
    /// Dropout on the last layer's output.
    pub dropout_output: f64,
    pub tie_weights: bool,
    pub seed: u64,
}

impl LstmConfig {
    pub fn new(vocab_size: usize) -> Self {
        LstmConfig {
            layers: 4,
            embedding_dim: 400,
            hidden_dim: 1150,
            vocab_size,
            bptt_len: 70,
            dropout_embedding: 0.1,
            dropout_hidden: 0.2,
            dropout_output: 0.3,
            tie_weights: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let dims = [
            ("layers", self.layers),
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("vocab_size", self.vocab_size),
            ("bptt_len", self.bptt_len),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(NeuralError::Config(format!("{name} must be at least 1")));
            }
        }
        let rates = [
            ("dropout_embedding", self.dropout_embedding),
            ("dropout_hidden", self.dropout_hidden),
            ("dropout_output", self.dropout_output),
        ];
        for (name, p) in rates {
            if !(0.0..1.0).contains(&p) {
                return Err(NeuralError::Config(format!("{name} = {p} is outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// `(input, output)` sizes of every LSTM layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let input = if l == 0 { self.embedding_dim } else { self.hidden_dim };
                let output = if l + 1 == self.layers {
                    self.embedding_dim
                } else {
                    self.hidden_dim
                };
                (input, output)
            })
            .collect()
    }
}
