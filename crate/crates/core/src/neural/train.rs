use std::fmt::Write as _;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schedule::sample_window_length;
use super::softmax::NegativeSampler;
use super::{LstmConfig, LstmLm, NeuralError, TrainSchedule};
use crate::{LanguageModel, LmError, SymbolTable, TokenId};

/// Optimization settings for [`train_lstm`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub cut_frac: f64,
    pub ratio: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
    /// Negatives per position for sampled softmax; 0 uses the full softmax.
    pub sampled_softmax: usize,
    /// Randomize the truncation length around `bptt_len`.
    pub randomize_bptt: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 12,
            batch_size: 32,
            lr_max: 20.0,
            cut_frac: 0.1,
            ratio: 32.0,
            clip: 0.25,
            sampled_softmax: 0,
            randomize_bptt: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training cross-entropy in bits per scored token.
    pub train_xent: f64,
    /// Sentence-level validation perplexity per token; NaN without
    /// validation data.
    pub val_ppl: f64,
    /// Learning rate at the end of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub steps: usize,
}

impl TrainReport {
    /// `epoch  train_xent  val_ppl  lr`, tab separated with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_xent\tval_ppl\tlr\n");
        for e in &self.epochs {
            writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6e}", e.epoch, e.train_xent, e.val_ppl, e.lr).expect("string write");
        }
        out
    }
}

/// Lays `stream` out as `batch` contiguous rows, dropping the remainder.
pub fn batchify(stream: &[TokenId], batch: usize) -> Array2<TokenId> {
    let width = stream.len() / batch.max(1);
    Array2::from_shape_fn((batch, width), |(b, t)| stream[b * width + t])
}

/// An LSTM together with the vocabulary its ids refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralLm {
    model: LstmLm,
    symbols: SymbolTable,
}

impl NeuralLm {
    pub fn new(model: LstmLm, symbols: SymbolTable) -> Result<Self, NeuralError> {
        if model.vocab_size() != symbols.len() {
            return Err(NeuralError::Config(format!(
                "model vocabulary {} differs from symbol table {}",
                model.vocab_size(),
                symbols.len()
            )));
        }
        Ok(NeuralLm { model, symbols })
    }

    pub fn model(&self) -> &LstmLm {
        &self.model
    }

    pub fn into_parts(self) -> (LstmLm, SymbolTable) {
        (self.model, self.symbols)
    }

    /// Log-probabilities of `targets[t]` after `<s> inputs[..=t]`, scored
    /// from a zero state.
    fn score(&self, history: &[TokenId], targets: &[TokenId]) -> Vec<f64> {
        let ids = Array2::from_shape_vec((1, history.len()), history.to_vec()).expect("row shape");
        let (lp, _) = self
            .model
            .forward(ids.view(), &self.model.zero_state(1))
            .expect("ids validated against the symbol table");
        let offset = history.len() - targets.len();
        targets
            .iter()
            .enumerate()
            .map(|(i, &t)| lp[[0, offset + i, t as usize]])
            .collect()
    }

    fn with_bos(&self, context: &[TokenId]) -> Vec<TokenId> {
        let bos = self.symbols.bos();
        let mut history = Vec::with_capacity(context.len() + 1);
        if context.first() != Some(&bos) {
            history.push(bos);
        }
        history.extend_from_slice(context);
        history
    }
}

impl LanguageModel for NeuralLm {
    fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    fn log_prob(&self, context: &[TokenId], token: TokenId) -> Result<f64, LmError> {
        self.symbols.check(token)?;
        if token == self.symbols.bos() {
            return Err(LmError::PredictedBos);
        }
        for &t in context {
            self.symbols.check(t)?;
        }
        let lp = self.score(&self.with_bos(context), &[token])[0];
        if lp.is_finite() {
            Ok(lp)
        } else {
            Err(LmError::NonFinite(token))
        }
    }

    fn sequence_log_prob(&self, sentence: &[TokenId]) -> Result<f64, LmError> {
        let bos = self.symbols.bos();
        for &t in sentence {
            self.symbols.check(t)?;
            if t == bos {
                return Err(LmError::PredictedBos);
            }
        }
        let history = self.with_bos(sentence);
        let mut targets = sentence.to_vec();
        targets.push(self.symbols.eos());
        let mut total = 0.0;
        for (lp, &t) in self.score(&history, &targets).into_iter().zip(&targets) {
            if !lp.is_finite() {
                return Err(LmError::NonFinite(t));
            }
            total += lp;
        }
        Ok(total)
    }
}

fn sentence_perplexity(lm: &NeuralLm, sentences: &[Vec<TokenId>]) -> Result<f64, LmError> {
    let mut bits = 0.0;
    let mut tokens = 0usize;
    for s in sentences {
        bits -= lm.sequence_log_prob(s)?;
        tokens += s.len() + 1;
    }
    Ok((bits / tokens as f64).exp2())
}

/// Trains on the concatenation of `<s> sentence </s>` over `train`, keeping
/// the parameters of the epoch with the best validation perplexity (or the
/// best training loss when `valid` is empty).
pub fn train_lstm(
    config: LstmConfig,
    symbols: SymbolTable,
    train: &[Vec<TokenId>],
    valid: &[Vec<TokenId>],
    options: &TrainOptions,
) -> Result<(NeuralLm, TrainReport), NeuralError> {
    if config.vocab_size != symbols.len() {
        return Err(NeuralError::Config(format!(
            "vocab_size {} differs from the symbol table size {}",
            config.vocab_size,
            symbols.len()
        )));
    }
    if options.epochs == 0 || options.batch_size == 0 {
        return Err(NeuralError::Config("epochs and batch_size must be at least 1".into()));
    }
    let (bos, eos) = (symbols.bos(), symbols.eos());
    let mut stream = Vec::new();
    for s in train.iter().chain(valid) {
        for &t in s {
            if t as usize >= symbols.len() {
                return Err(NeuralError::TokenOutOfRange {
                    id: t,
                    vocab: symbols.len(),
                });
            }
        }
    }
    for s in train {
        stream.push(bos);
        stream.extend_from_slice(s);
        stream.push(eos);
    }
    if stream.len() < 2 {
        return Err(NeuralError::ShortStream(stream.len()));
    }
    let batch = options.batch_size.min(stream.len() / 2).max(1);
    let data = batchify(&stream, batch);
    let width = data.ncols();
    let bptt = config.bptt_len;
    let steps_per_epoch = (width - 1).div_ceil(bptt);
    let mut schedule = TrainSchedule::new(steps_per_epoch * options.epochs, options.lr_max);
    schedule.cut_frac = options.cut_frac;
    schedule.ratio = options.ratio;
    schedule.validate()?;

    let sampler = if options.sampled_softmax > 0 {
        let mut counts = vec![0u64; symbols.len()];
        for &t in &stream {
            counts[t as usize] += 1;
        }
        Some(NegativeSampler::new(&counts, options.sampled_softmax)?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut lm = NeuralLm::new(LstmLm::new(config)?, symbols)?;
    let mut best: Option<(f64, usize, LstmLm)> = None;
    let mut report = TrainReport {
        epochs: Vec::with_capacity(options.epochs),
        best_epoch: 0,
        steps: 0,
    };
    let mut step = 0;
    for epoch in 1..=options.epochs {
        let mut state = lm.model.zero_state(batch);
        let (mut bits, mut positions) = (0.0, 0usize);
        let mut pos = 0;
        while pos + 1 < width {
            let len = if options.randomize_bptt {
                sample_window_length(bptt, &mut rng)
            } else {
                bptt
            };
            let len = len.min(width - 1 - pos);
            let inputs = data.slice(s![.., pos..pos + len]);
            let targets = data.slice(s![.., pos + 1..pos + len + 1]);
            let (outcome, next) = lm.model.backward_and_step(
                inputs,
                targets,
                Some(bos),
                &state,
                &schedule,
                step,
                options.clip,
                sampler.as_ref(),
                &mut rng,
            )?;
            let scored = targets.iter().filter(|&&t| t != bos).count();
            bits += outcome.loss * scored as f64;
            positions += scored;
            state = next;
            step += 1;
            pos += len;
        }
        let train_xent = if positions > 0 { bits / positions as f64 } else { 0.0 };
        let val_ppl = if valid.is_empty() {
            f64::NAN
        } else {
            sentence_perplexity(&lm, valid)?
        };
        let lr = schedule.rate(step);
        log::info!("epoch {epoch}: train {train_xent:.4} bits, valid ppl {val_ppl:.3}, lr {lr:.4e}");
        report.epochs.push(EpochLog {
            epoch,
            train_xent,
            val_ppl,
            lr,
        });
        let score = if valid.is_empty() { train_xent } else { val_ppl };
        if !score.is_finite() {
            return Err(NeuralError::NonFinite { step });
        }
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, lm.model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    lm.model = model;
    report.best_epoch = best_epoch;
    report.steps = step;
    Ok((lm, report))
}
