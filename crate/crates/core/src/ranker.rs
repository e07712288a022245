//! The word ranker: a four-layer perceptron (tanh, tanh, tanh, sigmoid)
//! scoring each token vector in (0, 1), with hand-written backpropagation
//! and an Adam optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::TokenEmbeddingBatch;
use crate::error::{Error, Result};

/// Rank assigned to pad positions; never inside the redaction set.
pub const PAD_RANK: f64 = 1.0;

const RANK_FLOOR: f64 = f64::EPSILON;
const RANK_CEIL: f64 = 1.0 - f64::EPSILON;

/// Per-sentence ranks over a padded row: real tokens first, pads after.
#[derive(Clone, Debug, PartialEq)]
pub struct RankVector {
    ranks: Vec<f64>,
    len: usize,
}

impl RankVector {
    /// `ranks` spans the full padded width; the first `len` entries are real
    /// tokens and must lie strictly inside (0, 1), the rest must equal
    /// [`PAD_RANK`].
    pub fn new(ranks: Vec<f64>, len: usize) -> Result<Self> {
        if len > ranks.len() {
            return Err(Error::invalid("rank vector shorter than its real length"));
        }
        if let Some(r) = ranks[..len].iter().find(|&&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::invalid(format!("rank {r} outside (0, 1)")));
        }
        if ranks[len..].iter().any(|&r| r != PAD_RANK) {
            return Err(Error::invalid("pad positions must carry the pad rank"));
        }
        Ok(RankVector { ranks, len })
    }

    /// Real-token ranks padded out to `width` with [`PAD_RANK`].
    pub fn padded(mut real: Vec<f64>, width: usize) -> Result<Self> {
        let len = real.len();
        if width < len {
            return Err(Error::invalid("width smaller than the number of ranks"));
        }
        real.resize(width, PAD_RANK);
        RankVector::new(real, len)
    }

    pub fn ranks(&self) -> &[f64] {
        &self.ranks
    }

    /// Ranks of the real tokens only.
    pub fn real(&self) -> &[f64] {
        &self.ranks[..self.len]
    }

    /// Number of real (non-pad) positions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.ranks.len()
    }
}

/// Layer sizes: input d, then three hidden widths; the output is scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerDims {
    pub input: usize,
    pub hidden: [usize; 3],
}

impl RankerDims {
    pub const DEFAULT_HIDDEN: [usize; 3] = [256, 128, 64];

    pub fn new(input: usize, hidden: [usize; 3]) -> Result<Self> {
        if input == 0 || hidden.contains(&0) {
            return Err(Error::invalid("all ranker dimensions must be at least 1"));
        }
        Ok(RankerDims { input, hidden })
    }

    pub fn with_default_hidden(input: usize) -> Result<Self> {
        RankerDims::new(input, Self::DEFAULT_HIDDEN)
    }

    /// (fan_in, fan_out) of each of the four layers.
    pub fn layer_shapes(&self) -> [(usize, usize); 4] {
        let [h1, h2, h3] = self.hidden;
        [(self.input, h1), (h1, h2), (h2, h3), (h3, 1)]
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }
}

/// All weights and biases in one flat buffer, layer by layer, each layer a
/// row-major fan_in×fan_out weight matrix followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct RankerParams {
    dims: RankerDims,
    data: Vec<f64>,
}

impl RankerParams {
    pub fn zeros(dims: RankerDims) -> Self {
        RankerParams {
            dims,
            data: vec![0.0; dims.num_params()],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: RankerDims, seed: u64) -> Self {
        let mut params = RankerParams::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, (fan_in, fan_out)) in dims.layer_shapes().into_iter().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in params.weights_mut(l) {
                *w = rng.random_range(-bound..=bound);
            }
        }
        params
    }

    pub fn from_flat(dims: RankerDims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.num_params() {
            return Err(Error::DimensionMismatch {
                expected: dims.num_params(),
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ranker parameter".into()));
        }
        Ok(RankerParams { dims, data })
    }

    pub fn dims(&self) -> RankerDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let shapes = self.dims.layer_shapes();
        let start: usize = shapes[..layer].iter().map(|(i, o)| i * o + o).sum();
        let (i, o) = shapes[layer];
        (start, start + i * o, start + i * o + o)
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let (s, m, _) = self.offsets(layer);
        &self.data[s..m]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (_, m, e) = self.offsets(layer);
        &self.data[m..e]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let (s, m, _) = self.offsets(layer);
        &mut self.data[s..m]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let (_, m, e) = self.offsets(layer);
        &mut self.data[m..e]
    }

    fn forward(&self, x: &[f64]) -> Activations {
        let mut acts: [Vec<f64>; 3] = Default::default();
        let mut input = x;
        for (l, act) in acts.iter_mut().enumerate() {
            *act = affine(input, self.weights(l), self.bias(l));
            act.iter_mut().for_each(|z| *z = z.tanh());
            input = act;
        }
        let z = affine(&acts[2], self.weights(3), self.bias(3))[0];
        Activations {
            hidden: acts,
            output: sigmoid(z),
        }
    }

    /// Rank of a single token vector.
    pub fn rank_token(&self, x: &[f64]) -> f64 {
        self.forward(x).output.clamp(RANK_FLOOR, RANK_CEIL)
    }

    /// Ranks every real position of the batch; pads get [`PAD_RANK`].
    pub fn rank_words(&self, batch: &TokenEmbeddingBatch) -> Result<Vec<RankVector>> {
        self.check_dim(batch)?;
        (0..batch.rows())
            .map(|b| {
                let real = (0..batch.lengths()[b])
                    .map(|w| self.rank_token(batch.vector(b, w)))
                    .collect();
                RankVector::padded(real, batch.width())
            })
            .collect()
    }

    /// Gradient of Σ upstream[b][w]·rank(b, w) with respect to every
    /// parameter, accumulated over real positions in row-major order.
    pub fn backprop(
        &self,
        batch: &TokenEmbeddingBatch,
        upstream: &[Vec<f64>],
    ) -> Result<RankerParams> {
        self.check_dim(batch)?;
        if upstream.len() != batch.rows() || upstream.iter().any(|r| r.len() != batch.width()) {
            return Err(Error::invalid("upstream gradient does not match batch shape"));
        }
        let mut grad = RankerParams::zeros(self.dims);
        for (b, row) in upstream.iter().enumerate() {
            for (w, &g) in row.iter().enumerate().take(batch.lengths()[b]) {
                if g != 0.0 {
                    self.backprop_token(batch.vector(b, w), g, &mut grad);
                }
            }
        }
        Ok(grad)
    }

    fn backprop_token(&self, x: &[f64], upstream: f64, grad: &mut RankerParams) {
        let acts = self.forward(x);
        let r = acts.output;
        let mut delta = vec![upstream * r * (1.0 - r)];
        for l in (0..4).rev() {
            let input: &[f64] = if l == 0 { x } else { &acts.hidden[l - 1] };
            let fan_out = delta.len();
            {
                let gw = grad.weights_mut(l);
                for (i, &a) in input.iter().enumerate() {
                    let row = &mut gw[i * fan_out..(i + 1) * fan_out];
                    row.iter_mut().zip(&delta).for_each(|(g, d)| *g += a * d);
                }
            }
            grad.bias_mut(l)
                .iter_mut()
                .zip(&delta)
                .for_each(|(g, d)| *g += d);
            if l == 0 {
                break;
            }
            let weights = self.weights(l);
            delta = input
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let row = &weights[i * fan_out..(i + 1) * fan_out];
                    let back: f64 = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                    back * (1.0 - a * a)
                })
                .collect();
        }
    }

    fn check_dim(&self, batch: &TokenEmbeddingBatch) -> Result<()> {
        if batch.dim() != self.dims.input {
            return Err(Error::DimensionMismatch {
                expected: self.dims.input,
                actual: batch.dim(),
            });
        }
        Ok(())
    }
}

struct Activations {
    hidden: [Vec<f64>; 3],
    output: f64,
}

fn affine(x: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let fan_out = bias.len();
    let mut out = bias.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = &weights[i * fan_out..(i + 1) * fan_out];
        out.iter_mut().zip(row).for_each(|(o, w)| *o += xi * w);
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators aligned with the flat parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn for_params(params: &RankerParams, config: AdamConfig) -> Self {
        AdamState::new(params.as_slice().len(), config)
    }

    pub fn from_parts(config: AdamConfig, m: Vec<f64>, v: Vec<f64>, t: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                actual: v.len(),
            });
        }
        Ok(AdamState { config, m, v, t })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update of `theta` in place.
    pub fn update(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, &g), m), v) in theta
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_step(
    params: &RankerParams,
    grads: &RankerParams,
    state: &AdamState,
) -> Result<(RankerParams, AdamState)> {
    if params.dims() != grads.dims() {
        return Err(Error::invalid("gradient shape differs from parameters"));
    }
    let mut next = params.clone();
    let mut state = state.clone();
    state.update(next.as_mut_slice(), grads.as_slice())?;
    Ok((next, state))
}
