//! Output layer losses: the exact softmax and a sampled approximation.
//!
//! The sampled loss scores each position against its target plus `k`
//! negatives drawn without replacement from a unigram proposal restricted to
//! the other tokens. Negative logits are corrected by subtracting the log of
//! their inclusion probability, approximated for weighted sampling without
//! replacement by `1 - exp(-tau * q_j)` with `tau` chosen so the
//! probabilities sum to `k`. When every other token is drawn the correction
//! vanishes and the loss equals the exact softmax.

use std::collections::HashMap;
use std::sync::Mutex;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use rand::Rng;

use super::NeuralError;
use crate::TokenId;

/// Loss in bits per position and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxOutput {
    pub loss: f64,
    pub d_hidden: Array2<f64>,
    pub d_decoder: Array2<f64>,
    pub d_bias: Array2<f64>,
}

/// Draws negatives for sampled softmax.
#[derive(Debug)]
pub struct NegativeSampler {
    proposal: Vec<f64>,
    sample_count: usize,
    thresholds: Mutex<HashMap<TokenId, f64>>,
}

impl NegativeSampler {
    /// Proposal = add-one smoothed unigram distribution of `counts`.
    pub fn new(counts: &[u64], sample_count: usize) -> Result<Self, NeuralError> {
        let vocab = counts.len();
        if sample_count == 0 || sample_count >= vocab {
            return Err(NeuralError::SampleCount {
                count: sample_count,
                vocab,
            });
        }
        let total: f64 = counts.iter().map(|&c| c as f64 + 1.0).sum();
        Ok(NegativeSampler {
            proposal: counts.iter().map(|&c| (c as f64 + 1.0) / total).collect(),
            sample_count,
            thresholds: Mutex::new(HashMap::new()),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.proposal.len()
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn proposal(&self) -> &[f64] {
        &self.proposal
    }

    fn threshold(&self, target: TokenId) -> f64 {
        if let Some(&tau) = self.thresholds.lock().expect("sampler lock").get(&target) {
            return tau;
        }
        let rest = 1.0 - self.proposal[target as usize];
        let k = self.sample_count as f64;
        let excess = |tau: f64| -> f64 {
            let total: f64 = self
                .proposal
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != target as usize)
                .map(|(_, &q)| -(-tau * q / rest).exp_m1())
                .sum();
            total - k
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while excess(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * hi {
                break;
            }
        }
        let tau = 0.5 * (lo + hi);
        self.thresholds.lock().expect("sampler lock").insert(target, tau);
        tau
    }

    /// Negatives for one position as `(id, ln inclusion probability)`,
    /// sorted by id.
    pub fn sample<R: Rng>(&self, target: TokenId, rng: &mut R) -> Vec<(TokenId, f64)> {
        let vocab = self.proposal.len();
        if self.sample_count + 1 == vocab {
            return (0..vocab as TokenId)
                .filter(|&j| j != target)
                .map(|j| (j, 0.0))
                .collect();
        }
        let rest = 1.0 - self.proposal[target as usize];
        // Efraimidis-Spirakis: the k largest ln(u) / w form a weighted sample
        // without replacement.
        let mut keys: Vec<(f64, TokenId)> = (0..vocab as TokenId)
            .filter(|&j| j != target)
            .map(|j| {
                let u: f64 = 1.0 - rng.random::<f64>();
                (u.ln() / (self.proposal[j as usize] / rest), j)
            })
            .collect();
        let k = self.sample_count;
        keys.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0));
        keys.truncate(k);
        keys.sort_by_key(|&(_, j)| j);
        let tau = self.threshold(target);
        keys.into_iter()
            .map(|(_, j)| {
                let x = tau * self.proposal[j as usize] / rest;
                (j, (-(-x).exp_m1()).ln())
            })
            .collect()
    }
}

/// Exact softmax over all rows whose target is present. Returns the summed
/// loss in nats, the number of scored rows and the gradient with respect to
/// `hidden`; decoder gradients are accumulated. Gradients are of the summed
/// nats.
pub(crate) fn accumulate_full(
    hidden: &Array2<f64>,
    targets: &[Option<TokenId>],
    decoder: &Array2<f64>,
    bias: &Array2<f64>,
    d_decoder: &mut Array2<f64>,
    d_bias: &mut Array2<f64>,
) -> (f64, usize, Array2<f64>) {
    let mut logits = hidden.dot(&decoder.t()) + bias;
    let mut nats = 0.0;
    let mut count = 0;
    for (mut row, target) in logits.rows_mut().into_iter().zip(targets) {
        let Some(t) = *target else {
            row.fill(0.0);
            continue;
        };
        let lse = log_sum_exp(row.iter().copied());
        nats += lse - row[t as usize];
        count += 1;
        row.mapv_inplace(|l| (l - lse).exp());
        row[t as usize] -= 1.0;
    }
    general_mat_mul(1.0, &logits.t(), hidden, 1.0, d_decoder);
    d_bias.row_mut(0).scaled_add(1.0, &logits.sum_axis(Axis(0)));
    let d_hidden = logits.dot(decoder);
    (nats, count, d_hidden)
}

/// Sampled counterpart of [`accumulate_full`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_sampled<R: Rng>(
    hidden: &Array2<f64>,
    targets: &[Option<TokenId>],
    decoder: &Array2<f64>,
    bias: &Array2<f64>,
    d_decoder: &mut Array2<f64>,
    d_bias: &mut Array2<f64>,
    sampler: &NegativeSampler,
    rng: &mut R,
) -> (f64, usize, Array2<f64>) {
    let mut d_hidden = Array2::zeros(hidden.raw_dim());
    let mut nats = 0.0;
    let mut count = 0;
    for (n, target) in targets.iter().enumerate() {
        let Some(t) = *target else { continue };
        let h = hidden.row(n);
        let candidates: Vec<(TokenId, f64)> = std::iter::once((t, 0.0)).chain(sampler.sample(t, rng)).collect();
        let logits: Vec<f64> = candidates
            .iter()
            .map(|&(c, ln_pi)| h.dot(&decoder.row(c as usize)) + bias[[0, c as usize]] - ln_pi)
            .collect();
        let lse = log_sum_exp(logits.iter().copied());
        nats += lse - logits[0];
        count += 1;
        for (idx, (&(c, _), &l)) in candidates.iter().zip(&logits).enumerate() {
            let g = (l - lse).exp() - if idx == 0 { 1.0 } else { 0.0 };
            let c = c as usize;
            d_hidden.row_mut(n).scaled_add(g, &decoder.row(c));
            d_decoder.row_mut(c).scaled_add(g, &h);
            d_bias[[0, c]] += g;
        }
    }
    (nats, count, d_hidden)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_inputs(
    hidden: &Array2<f64>,
    targets: &[TokenId],
    decoder: &Array2<f64>,
    bias: &Array2<f64>,
) -> Result<(), NeuralError> {
    let vocab = decoder.nrows();
    if hidden.nrows() != targets.len() || hidden.ncols() != decoder.ncols() || bias.dim() != (1, vocab) {
        return Err(NeuralError::Shape(format!(
            "hidden {:?}, {} targets, decoder {:?}, bias {:?}",
            hidden.dim(),
            targets.len(),
            decoder.dim(),
            bias.dim()
        )));
    }
    if targets.is_empty() {
        return Err(NeuralError::Shape("no positions to score".into()));
    }
    if let Some(&id) = targets.iter().find(|&&t| t as usize >= vocab) {
        return Err(NeuralError::TokenOutOfRange { id, vocab });
    }
    Ok(())
}

fn finish(
    nats: f64,
    count: usize,
    d_hidden: Array2<f64>,
    d_decoder: Array2<f64>,
    d_bias: Array2<f64>,
) -> SoftmaxOutput {
    let scale = 1.0 / (count as f64 * std::f64::consts::LN_2);
    SoftmaxOutput {
        loss: nats * scale,
        d_hidden: d_hidden * scale,
        d_decoder: d_decoder * scale,
        d_bias: d_bias * scale,
    }
}

/// Mean cross-entropy in bits of `hidden · decoderᵀ + bias` against
/// `targets`, with gradients.
pub fn full_softmax_loss(
    hidden: &Array2<f64>,
    targets: &[TokenId],
    decoder: &Array2<f64>,
    bias: &Array2<f64>,
) -> Result<SoftmaxOutput, NeuralError> {
    check_inputs(hidden, targets, decoder, bias)?;
    let mut d_decoder = Array2::zeros(decoder.raw_dim());
    let mut d_bias = Array2::zeros(bias.raw_dim());
    let targets: Vec<Option<TokenId>> = targets.iter().copied().map(Some).collect();
    let (nats, count, d_hidden) = accumulate_full(hidden, &targets, decoder, bias, &mut d_decoder, &mut d_bias);
    Ok(finish(nats, count, d_hidden, d_decoder, d_bias))
}

/// Sampled-softmax estimate of [`full_softmax_loss`].
pub fn sampled_softmax_loss<R: Rng>(
    hidden: &Array2<f64>,
    targets: &[TokenId],
    decoder: &Array2<f64>,
    bias: &Array2<f64>,
    sampler: &NegativeSampler,
    rng: &mut R,
) -> Result<SoftmaxOutput, NeuralError> {
    check_inputs(hidden, targets, decoder, bias)?;
    if sampler.vocab_size() != decoder.nrows() {
        return Err(NeuralError::Shape(format!(
            "sampler vocabulary {} differs from decoder rows {}",
            sampler.vocab_size(),
            decoder.nrows()
        )));
    }
    let mut d_decoder = Array2::zeros(decoder.raw_dim());
    let mut d_bias = Array2::zeros(bias.raw_dim());
    let targets: Vec<Option<TokenId>> = targets.iter().copied().map(Some).collect();
    let (nats, count, d_hidden) = accumulate_sampled(
        hidden,
        &targets,
        decoder,
        bias,
        &mut d_decoder,
        &mut d_bias,
        sampler,
        rng,
    );
    Ok(finish(nats, count, d_hidden, d_decoder, d_bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(
        vocab: usize,
        dim: usize,
        rows: usize,
        seed: u64,
    ) -> (Array2<f64>, Vec<TokenId>, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c, s: f64| Array2::from_shape_simple_fn((r, c), || rng.random_range(-s..s));
        let hidden = draw(rows, dim, 1.0);
        let decoder = draw(vocab, dim, 0.5);
        let bias = draw(1, vocab, 0.2);
        let targets = (0..rows).map(|n| ((n * 7 + 3) % vocab) as TokenId).collect();
        (hidden, targets, decoder, bias)
    }

    fn counts(vocab: usize) -> Vec<u64> {
        (0..vocab as u64).map(|i| (i * 37) % 11).collect()
    }

    #[test]
    fn full_loss_by_scalar_recomputation() {
        let (hidden, targets, decoder, bias) = setup(7, 3, 4, 1);
        let out = full_softmax_loss(&hidden, &targets, &decoder, &bias).unwrap();
        let mut bits = 0.0;
        for (n, &t) in targets.iter().enumerate() {
            let logits: Vec<f64> = (0..7)
                .map(|v| (0..3).map(|d| hidden[[n, d]] * decoder[[v, d]]).sum::<f64>() + bias[[0, v]])
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            bits -= (logits[t as usize].exp() / z).log2();
        }
        assert!((out.loss - bits / 4.0).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_sampling_equals_full_softmax() {
        let vocab = 9;
        let (hidden, targets, decoder, bias) = setup(vocab, 4, 6, 2);
        let sampler = NegativeSampler::new(&counts(vocab), vocab - 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = full_softmax_loss(&hidden, &targets, &decoder, &bias).unwrap();
        let sampled = sampled_softmax_loss(&hidden, &targets, &decoder, &bias, &sampler, &mut rng).unwrap();
        assert!((full.loss - sampled.loss).abs() < 1e-9);
        for (a, b) in [
            (&full.d_hidden, &sampled.d_hidden),
            (&full.d_decoder, &sampled.d_decoder),
            (&full.d_bias, &sampled.d_bias),
        ] {
            assert!((a - b).iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn sampling_is_deterministic_and_excludes_target() {
        let vocab = 30;
        let (hidden, targets, decoder, bias) = setup(vocab, 4, 5, 3);
        let sampler = NegativeSampler::new(&counts(vocab), 6).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sampled_softmax_loss(&hidden, &targets, &decoder, &bias, &sampler, &mut rng).unwrap()
        };
        assert_eq!(run(4), run(4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let negatives = sampler.sample(3, &mut rng);
            assert_eq!(negatives.len(), 6);
            assert!(negatives.iter().all(|&(j, lp)| j != 3 && lp <= 0.0));
            assert!(negatives.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    #[test]
    fn inclusion_probabilities_sum_to_sample_count() {
        let vocab = 25;
        let sampler = NegativeSampler::new(&counts(vocab), 8).unwrap();
        let target = 4;
        let tau = sampler.threshold(target);
        let rest = 1.0 - sampler.proposal()[target as usize];
        let total: f64 = (0..vocab)
            .filter(|&j| j != target as usize)
            .map(|j| 1.0 - (-tau * sampler.proposal()[j] / rest).exp())
            .sum();
        assert!((total - 8.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_sample_counts() {
        assert!(NegativeSampler::new(&[1, 2, 3], 3).is_err());
        assert!(NegativeSampler::new(&[1, 2, 3], 0).is_err());
        assert!(NegativeSampler::new(&[1, 2, 3], 2).is_ok());
    }
}
