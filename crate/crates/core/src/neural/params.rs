use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::LstmConfig;

/// Weights of one LSTM layer. `weight` is `4h x (input + h)` with gate
/// blocks in the order input, forget, cell, output; `bias` is `1 x 4h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

/// Every trainable tensor. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    /// Separate output projection, `None` when tied to the embedding.
    pub decoder: Option<Array2<f64>>,
    pub decoder_bias: Array2<f64>,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

impl LstmParams {
    pub(crate) fn init(config: &LstmConfig, rng: &mut ChaCha8Rng) -> Self {
        let (v, e) = (config.vocab_size, config.embedding_dim);
        let embedding = uniform(v, e, 0.1, rng);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(input, hidden)| {
                let bound = 1.0 / (hidden as f64).sqrt();
                LayerParams {
                    weight: uniform(4 * hidden, input + hidden, bound, rng),
                    bias: uniform(1, 4 * hidden, bound, rng),
                }
            })
            .collect();
        let decoder = (!config.tie_weights).then(|| uniform(v, e, 0.1, rng));
        LstmParams {
            embedding,
            layers,
            decoder,
            decoder_bias: Array2::zeros((1, v)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let zeros = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        LstmParams {
            embedding: zeros(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: zeros(&l.weight),
                    bias: zeros(&l.bias),
                })
                .collect(),
            decoder: self.decoder.as_ref().map(zeros),
            decoder_bias: zeros(&self.decoder_bias),
        }
    }

    /// The output projection: the embedding when tied.
    pub fn decoder_weight(&self) -> &Array2<f64> {
        self.decoder.as_ref().unwrap_or(&self.embedding)
    }

    pub(crate) fn decoder_weight_mut(&mut self) -> &mut Array2<f64> {
        self.decoder.as_mut().unwrap_or(&mut self.embedding)
    }

    /// Tensors by name in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.weight"), &layer.weight));
            out.push((format!("layer{l}.bias"), &layer.bias));
        }
        if let Some(d) = &self.decoder {
            out.push(("decoder.weight".to_string(), d));
        }
        out.push(("decoder.bias".to_string(), &self.decoder_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.weight"), &mut layer.weight));
            out.push((format!("layer{l}.bias"), &mut layer.bias));
        }
        if let Some(d) = &mut self.decoder {
            out.push(("decoder.weight".to_string(), d));
        }
        out.push(("decoder.bias".to_string(), &mut self.decoder_bias));
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &LstmParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * alpha);
        }
    }
}
