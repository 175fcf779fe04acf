use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::softmax::{accumulate_full, accumulate_sampled, NegativeSampler};
use super::{LstmConfig, LstmParams, NeuralError, TrainSchedule};
use crate::TokenId;

/// Hidden and cell state of every layer, each `batch x layer width`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl LstmState {
    pub fn batch_size(&self) -> usize {
        self.h.first().map_or(0, |h| h.nrows())
    }
}

/// Variational dropout masks: one `batch x width` mask per site, reused at
/// every time step of a window. Entries are 0 or `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub embedding: Option<Array2<f64>>,
    /// Applied to the output of layer `l` before it feeds layer `l + 1`.
    pub hidden: Vec<Option<Array2<f64>>>,
    pub output: Option<Array2<f64>>,
}

fn bernoulli_mask<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Option<Array2<f64>> {
    (p > 0.0).then(|| {
        let keep = 1.0 / (1.0 - p);
        Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
    })
}

impl DropoutMasks {
    pub fn none(layers: usize) -> Self {
        DropoutMasks {
            embedding: None,
            hidden: vec![None; layers.saturating_sub(1)],
            output: None,
        }
    }

    pub fn sample<R: Rng>(config: &LstmConfig, batch: usize, rng: &mut R) -> Self {
        let dims = config.layer_dims();
        DropoutMasks {
            embedding: bernoulli_mask(batch, config.embedding_dim, config.dropout_embedding, rng),
            hidden: dims[..dims.len() - 1]
                .iter()
                .map(|&(_, out)| bernoulli_mask(batch, out, config.dropout_hidden, rng))
                .collect(),
            output: bernoulli_mask(batch, config.embedding_dim, config.dropout_output, rng),
        }
    }
}

fn apply(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

/// Result of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Mean cross-entropy in bits over the window, before the update.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub lr: f64,
}

struct CellCache {
    /// `[input, h_prev]`.
    z: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

struct Trace {
    cells: Vec<Vec<CellCache>>,
    outputs: Vec<Array2<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLm {
    config: LstmConfig,
    params: LstmParams,
}

impl LstmLm {
    /// Randomly initialized model, deterministic in `config.seed`.
    pub fn new(config: LstmConfig) -> Result<Self, NeuralError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = LstmParams::init(&config, &mut rng);
        Ok(LstmLm { config, params })
    }

    pub fn from_parts(config: LstmConfig, params: LstmParams) -> Result<Self, NeuralError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let expected = LstmParams::init(&config, &mut rng);
        let shapes = |p: &LstmParams| -> Vec<(String, (usize, usize))> {
            p.tensors().into_iter().map(|(n, t)| (n, t.dim())).collect()
        };
        if shapes(&expected) != shapes(&params) {
            return Err(NeuralError::Shape("tensors do not match the configuration".into()));
        }
        Ok(LstmLm { config, params })
    }

    pub fn config(&self) -> &LstmConfig {
        &self.config
    }

    pub fn params(&self) -> &LstmParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut LstmParams {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn zero_state(&self, batch: usize) -> LstmState {
        let dims = self.config.layer_dims();
        let zeros = || dims.iter().map(|&(_, out)| Array2::zeros((batch, out))).collect();
        LstmState { h: zeros(), c: zeros() }
    }

    fn check_ids(&self, ids: ArrayView2<TokenId>) -> Result<(), NeuralError> {
        let vocab = self.config.vocab_size;
        match ids.iter().find(|&&t| t as usize >= vocab) {
            Some(&id) => Err(NeuralError::TokenOutOfRange { id, vocab }),
            None => Ok(()),
        }
    }

    fn check_state(&self, batch: usize, state: &LstmState) -> Result<(), NeuralError> {
        let dims = self.config.layer_dims();
        let ok = state.h.len() == dims.len()
            && state.c.len() == dims.len()
            && dims
                .iter()
                .zip(state.h.iter().zip(&state.c))
                .all(|(&(_, out), (h, c))| h.dim() == (batch, out) && c.dim() == (batch, out));
        if ok {
            Ok(())
        } else {
            Err(NeuralError::Shape(format!("state does not fit batch size {batch}")))
        }
    }

    fn run(&self, ids: ArrayView2<TokenId>, state: &LstmState, masks: &DropoutMasks, keep: bool) -> (Trace, LstmState) {
        let steps = ids.ncols();
        let layers = self.params.layers.len();
        let mut next = state.clone();
        let mut trace = Trace {
            cells: (0..layers)
                .map(|_| Vec::with_capacity(if keep { steps } else { 0 }))
                .collect(),
            outputs: Vec::with_capacity(steps),
        };
        for t in 0..steps {
            let rows: Vec<usize> = ids.column(t).iter().map(|&id| id as usize).collect();
            let mut x = apply(self.params.embedding.select(Axis(0), &rows), &masks.embedding);
            for (l, layer) in self.params.layers.iter().enumerate() {
                let width = next.h[l].ncols();
                let z = concatenate(Axis(1), &[x.view(), next.h[l].view()]).expect("batch sizes agree");
                let a = z.dot(&layer.weight.t()) + &layer.bias;
                let i = a.slice(s![.., 0..width]).mapv(sigmoid);
                let f = a.slice(s![.., width..2 * width]).mapv(sigmoid);
                let g = a.slice(s![.., 2 * width..3 * width]).mapv(f64::tanh);
                let o = a.slice(s![.., 3 * width..]).mapv(sigmoid);
                let c = &f * &next.c[l] + &i * &g;
                let tanh_c = c.mapv(f64::tanh);
                let h = &o * &tanh_c;
                let c_prev = std::mem::replace(&mut next.c[l], c);
                next.h[l] = h.clone();
                if keep {
                    trace.cells[l].push(CellCache {
                        z,
                        c_prev,
                        i,
                        f,
                        g,
                        o,
                        tanh_c,
                    });
                }
                x = if l + 1 < layers { apply(h, &masks.hidden[l]) } else { h };
            }
            trace.outputs.push(apply(x, &masks.output));
        }
        (trace, next)
    }

    /// Base-2 log-probabilities `[batch x time x vocab]` for every position
    /// of `ids`, continuing from `state`. Dropout is off.
    pub fn forward(
        &self,
        ids: ArrayView2<TokenId>,
        state: &LstmState,
    ) -> Result<(Array3<f64>, LstmState), NeuralError> {
        self.check_ids(ids)?;
        self.check_state(ids.nrows(), state)?;
        let (batch, steps) = ids.dim();
        let vocab = self.config.vocab_size;
        let masks = DropoutMasks::none(self.config.layers);
        let (trace, next) = self.run(ids, state, &masks, false);
        let mut out = Array3::zeros((batch, steps, vocab));
        let decoder = self.params.decoder_weight();
        for (t, y) in trace.outputs.iter().enumerate() {
            let logits = y.dot(&decoder.t()) + &self.params.decoder_bias;
            for (b, row) in logits.rows().into_iter().enumerate() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for (v, &l) in row.iter().enumerate() {
                    out[[b, t, v]] = (l - lse) / std::f64::consts::LN_2;
                }
            }
        }
        Ok((out, next))
    }

    /// Mean cross-entropy in bits of `targets` given `inputs`, and its
    /// gradient with respect to every parameter. Targets equal to `skip`
    /// are not scored.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_gradients(
        &self,
        inputs: ArrayView2<TokenId>,
        targets: ArrayView2<TokenId>,
        skip: Option<TokenId>,
        state: &LstmState,
        masks: &DropoutMasks,
        sampled: Option<(&NegativeSampler, &mut ChaCha8Rng)>,
    ) -> Result<(f64, LstmParams, LstmState), NeuralError> {
        if inputs.dim() != targets.dim() {
            return Err(NeuralError::Shape(format!(
                "inputs {:?} and targets {:?} differ",
                inputs.dim(),
                targets.dim()
            )));
        }
        self.check_ids(inputs)?;
        self.check_ids(targets)?;
        self.check_state(inputs.nrows(), state)?;
        let (trace, next) = self.run(inputs, state, masks, true);

        let mut grads = self.params.zeros_like();
        let decoder = self.params.decoder_weight();
        let bias = &self.params.decoder_bias;
        let mut d_decoder = Array2::zeros(decoder.raw_dim());
        let mut d_bias = Array2::zeros(bias.raw_dim());
        let mut nats = 0.0;
        let mut count = 0;
        let mut d_outputs = Vec::with_capacity(trace.outputs.len());
        let mut sampled = sampled;
        for (t, y) in trace.outputs.iter().enumerate() {
            let column: Vec<Option<TokenId>> = targets
                .column(t)
                .iter()
                .map(|&id| (Some(id) != skip).then_some(id))
                .collect();
            let (n, c, d_y) = match sampled.as_mut() {
                Some((sampler, rng)) => accumulate_sampled(
                    y,
                    &column,
                    decoder,
                    bias,
                    &mut d_decoder,
                    &mut d_bias,
                    sampler,
                    &mut **rng,
                ),
                None => accumulate_full(y, &column, decoder, bias, &mut d_decoder, &mut d_bias),
            };
            nats += n;
            count += c;
            d_outputs.push(apply(d_y, &masks.output));
        }
        grads.decoder_weight_mut().scaled_add(1.0, &d_decoder);
        grads.decoder_bias = d_bias;
        if count == 0 {
            return Ok((0.0, self.params.zeros_like(), next));
        }
        self.backward(inputs, trace, d_outputs, masks, &mut grads);
        let scale = 1.0 / (count as f64 * std::f64::consts::LN_2);
        grads.scale(scale);
        Ok((nats * scale, grads, next))
    }

    fn backward(
        &self,
        inputs: ArrayView2<TokenId>,
        trace: Trace,
        mut d_above: Vec<Array2<f64>>,
        masks: &DropoutMasks,
        grads: &mut LstmParams,
    ) {
        let (batch, steps) = inputs.dim();
        for (l, cells) in trace.cells.iter().enumerate().rev() {
            let layer = &self.params.layers[l];
            let width = layer.bias.ncols() / 4;
            let input = layer.weight.ncols() - width;
            let mut dh_next = Array2::<f64>::zeros((batch, width));
            let mut dc_next = Array2::<f64>::zeros((batch, width));
            let mut d_below = Vec::with_capacity(steps);
            for t in (0..steps).rev() {
                let cell = &cells[t];
                let dh = &d_above[t] + &dh_next;
                let d_o = &dh * &cell.tanh_c;
                let dc = &dc_next + &(&dh * &cell.o * cell.tanh_c.mapv(|v| 1.0 - v * v));
                let d_i = &dc * &cell.g;
                let d_g = &dc * &cell.i;
                let d_f = &dc * &cell.c_prev;
                dc_next = &dc * &cell.f;
                let mut da = Array2::zeros((batch, 4 * width));
                da.slice_mut(s![.., 0..width])
                    .assign(&(d_i * cell.i.mapv(|v| v * (1.0 - v))));
                da.slice_mut(s![.., width..2 * width])
                    .assign(&(d_f * cell.f.mapv(|v| v * (1.0 - v))));
                da.slice_mut(s![.., 2 * width..3 * width])
                    .assign(&(d_g * cell.g.mapv(|v| 1.0 - v * v)));
                da.slice_mut(s![.., 3 * width..])
                    .assign(&(d_o * cell.o.mapv(|v| v * (1.0 - v))));
                general_mat_mul(1.0, &da.t(), &cell.z, 1.0, &mut grads.layers[l].weight);
                grads.layers[l].bias.row_mut(0).scaled_add(1.0, &da.sum_axis(Axis(0)));
                let dz = da.dot(&layer.weight);
                dh_next = dz.slice(s![.., input..]).to_owned();
                d_below.push(dz.slice(s![.., ..input]).to_owned());
            }
            d_below.reverse();
            if l > 0 {
                d_above = d_below.into_iter().map(|d| apply(d, &masks.hidden[l - 1])).collect();
            } else {
                for (t, d) in d_below.into_iter().enumerate() {
                    let d = apply(d, &masks.embedding);
                    for (b, row) in d.rows().into_iter().enumerate() {
                        let id = inputs[[b, t]] as usize;
                        grads.embedding.row_mut(id).scaled_add(1.0, &row);
                    }
                }
                break;
            }
        }
    }

    /// One SGD step on a window: samples dropout masks, backpropagates
    /// through the whole window, clips the global gradient norm to `clip`
    /// and applies the scheduled learning rate. `<s>` targets (given as
    /// `skip`) are not scored.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_and_step(
        &mut self,
        inputs: ArrayView2<TokenId>,
        targets: ArrayView2<TokenId>,
        skip: Option<TokenId>,
        state: &LstmState,
        schedule: &TrainSchedule,
        step: usize,
        clip: f64,
        sampler: Option<&NegativeSampler>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(StepOutcome, LstmState), NeuralError> {
        let masks = DropoutMasks::sample(&self.config, inputs.nrows(), rng);
        let sampled = sampler.map(|s| (s, &mut *rng));
        let (loss, mut grads, next) = self.loss_and_gradients(inputs, targets, skip, state, &masks, sampled)?;
        if !loss.is_finite() {
            return Err(NeuralError::NonFinite { step });
        }
        let grad_norm = grads.norm();
        if !grad_norm.is_finite() {
            return Err(NeuralError::NonFinite { step });
        }
        if clip > 0.0 && grad_norm > clip {
            grads.scale(clip / grad_norm);
        }
        let lr = schedule.rate(step);
        if lr != 0.0 {
            self.params.scaled_add(-lr, &grads);
        }
        if !self.params.is_finite() {
            return Err(NeuralError::NonFinite { step });
        }
        Ok((StepOutcome { loss, grad_norm, lr }, next))
    }
}

/// Mean of `-log_probs[b, t, targets[b, t]]` over all positions.
pub fn cross_entropy_bits(log_probs: &Array3<f64>, targets: ArrayView2<TokenId>) -> Result<f64, NeuralError> {
    let (batch, steps, vocab) = log_probs.dim();
    if targets.dim() != (batch, steps) {
        return Err(NeuralError::Shape(format!(
            "log-probabilities {:?} and targets {:?} differ",
            log_probs.dim(),
            targets.dim()
        )));
    }
    if batch * steps == 0 {
        return Err(NeuralError::Shape("no positions to score".into()));
    }
    let mut total = 0.0;
    for ((b, t), &id) in targets.indexed_iter() {
        if id as usize >= vocab {
            return Err(NeuralError::TokenOutOfRange { id, vocab });
        }
        total -= log_probs[[b, t, id as usize]];
    }
    Ok(total / (batch * steps) as f64)
}
