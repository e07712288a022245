//! Ranker training loop.
//!
//! One step pads a sensitive and a safe batch to a shared width, embeds them,
//! ranks every word, turns ranks into a relaxed keep-mask, scales the token
//! vectors by it, mean-pools to sentence vectors and takes the KL loss
//! between the two pooled sets. Gradients flow back through pooling, the
//! mask and the ranker; the embeddings, the mask thresholds and the kernel
//! bandwidth are constants.

use std::borrow::Borrow;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{pad_pair, Corpus, Role, Sentence};
use crate::divloss::{bandwidth, kl_loss_grad_with_bandwidth, EmbeddingSample, KdeConfig};
use crate::embed::{mean_pool, mean_pool_backward, EmbeddingProvider, TokenEmbeddingBatch};
use crate::error::{Error, Result};
use crate::mask::{soft_mask_at, soft_mask_grad_from, soft_topk_mask, MaskConfig, SoftMask};
use crate::ranker::{AdamConfig, AdamState, RankerDims, RankerParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub mask: MaskConfig,
    pub kde: KdeConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss_log_every: usize,
    /// Draw a fresh permutation of both corpora every epoch instead of once.
    pub reshuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 64,
            mask: MaskConfig::default(),
            kde: KdeConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            loss_log_every: 10,
            reshuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if self.loss_log_every == 0 {
            return Err(Error::invalid("loss_log_every must be at least 1"));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::invalid("invalid Adam hyperparameters"));
        }
        self.mask.validate()?;
        self.kde.validate()
    }
}

/// (step, mean loss over the preceding block of steps).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    entries: Vec<(usize, f64)>,
}

impl LossTrace {
    pub fn new() -> Self {
        LossTrace::default()
    }

    pub fn push(&mut self, step: usize, avg_loss: f64) -> Result<()> {
        if self.entries.last().is_some_and(|&(s, _)| s >= step) {
            return Err(Error::invalid("loss trace steps must strictly increase"));
        }
        self.entries.push((step, avg_loss));
        Ok(())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,avg_loss");
        for (step, loss) in &self.entries {
            out.push_str(&format!("\n{step},{loss}"));
        }
        out
    }
}

/// Writes `step,avg_loss` CSV. Lines are newline-separated with no newline
/// after the last row.
pub fn loss_trace_export(trace: &LossTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if trace.is_empty() {
        return Err(Error::invalid("cannot export an empty loss trace"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(trace.to_csv().as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Quantities held constant when differentiating one step: the per-sentence
/// mask thresholds of both sides and the kernel bandwidth.
#[derive(Clone, Debug, PartialEq)]
pub struct DetachedStats {
    pub thresholds0: Vec<f64>,
    pub thresholds1: Vec<f64>,
    pub bandwidth: f64,
}

#[derive(Clone, Debug)]
pub struct StepGradient {
    pub loss: f64,
    pub grad: RankerParams,
    pub detached: DetachedStats,
}

struct SideForward {
    masks: Vec<SoftMask>,
    pooled: Vec<Vec<f64>>,
}

fn forward_side(
    params: &RankerParams,
    embedded: &TokenEmbeddingBatch,
    mask: &MaskConfig,
    thresholds: Option<&[f64]>,
) -> Result<SideForward> {
    let ranks = params.rank_words(embedded)?;
    if thresholds.is_some_and(|t| t.len() != ranks.len()) {
        return Err(Error::invalid("one detached threshold per sentence is required"));
    }
    let masks: Vec<SoftMask> = ranks
        .iter()
        .enumerate()
        .map(|(b, r)| match thresholds {
            Some(t) => soft_mask_at(r, mask.temperature, t[b]),
            None => soft_topk_mask(r, mask),
        })
        .collect();
    let weights: Vec<Vec<f64>> = masks.iter().map(|m| m.values.clone()).collect();
    let pooled = mean_pool(&embedded.weighted(&weights)?)?
        .into_iter()
        .map(|s| s.vector)
        .collect();
    Ok(SideForward { masks, pooled })
}

fn backward_side(
    params: &RankerParams,
    embedded: &TokenEmbeddingBatch,
    forward: &SideForward,
    temperature: f64,
    pooled_grad: &[Vec<f64>],
) -> Result<RankerParams> {
    let (width, dim) = (embedded.width(), embedded.dim());
    let token_grad = mean_pool_backward(embedded.lengths(), width, dim, pooled_grad);
    let upstream: Vec<Vec<f64>> = forward
        .masks
        .iter()
        .enumerate()
        .map(|(b, m)| {
            let mask_grad: Vec<f64> = (0..width)
                .map(|w| {
                    let start = (b * width + w) * dim;
                    embedded
                        .vector(b, w)
                        .iter()
                        .zip(&token_grad[start..start + dim])
                        .map(|(e, g)| e * g)
                        .sum()
                })
                .collect();
            soft_mask_grad_from(m, embedded.lengths()[b], temperature, &mask_grad)
        })
        .collect();
    params.backprop(embedded, &upstream)
}

fn sample_of(points: Vec<Vec<f64>>, role: Role) -> Result<EmbeddingSample> {
    EmbeddingSample::new(points, role)
}

/// Loss and exact gradient of one step with the detached quantities either
/// computed here or supplied by the caller.
pub fn loss_and_grad(
    params: &RankerParams,
    e0: &TokenEmbeddingBatch,
    e1: &TokenEmbeddingBatch,
    mask: &MaskConfig,
    kde: &KdeConfig,
    frozen: Option<&DetachedStats>,
) -> Result<StepGradient> {
    let f0 = forward_side(params, e0, mask, frozen.map(|f| f.thresholds0.as_slice()))?;
    let f1 = forward_side(params, e1, mask, frozen.map(|f| f.thresholds1.as_slice()))?;
    let s0 = sample_of(f0.pooled.clone(), Role::Sensitive)?;
    let s1 = sample_of(f1.pooled.clone(), Role::Safe)?;
    let h = match frozen {
        Some(f) => f.bandwidth,
        None => bandwidth(&s0, &s1, kde)?,
    };
    let kl = kl_loss_grad_with_bandwidth(&s0, &s1, h)?;
    let mut grad = backward_side(params, e0, &f0, mask.temperature, &kl.grad0)?;
    let g1 = backward_side(params, e1, &f1, mask.temperature, &kl.grad1)?;
    grad.as_mut_slice()
        .iter_mut()
        .zip(g1.as_slice())
        .for_each(|(a, b)| *a += b);
    let detached = DetachedStats {
        thresholds0: f0.masks.iter().map(|m| m.threshold).collect(),
        thresholds1: f1.masks.iter().map(|m| m.threshold).collect(),
        bandwidth: h,
    };
    Ok(StepGradient {
        loss: kl.loss,
        grad,
        detached,
    })
}

/// Forward-only loss, optionally with frozen thresholds and bandwidth.
pub fn step_loss(
    params: &RankerParams,
    e0: &TokenEmbeddingBatch,
    e1: &TokenEmbeddingBatch,
    mask: &MaskConfig,
    kde: &KdeConfig,
    frozen: Option<&DetachedStats>,
) -> Result<f64> {
    let f0 = forward_side(params, e0, mask, frozen.map(|f| f.thresholds0.as_slice()))?;
    let f1 = forward_side(params, e1, mask, frozen.map(|f| f.thresholds1.as_slice()))?;
    let s0 = sample_of(f0.pooled, Role::Sensitive)?;
    let s1 = sample_of(f1.pooled, Role::Safe)?;
    let h = match frozen {
        Some(f) => f.bandwidth,
        None => bandwidth(&s0, &s1, kde)?,
    };
    crate::divloss::kl_loss_with_bandwidth(&s0, &s1, h)
}

/// Pads both batches to the longest sentence across them and embeds each.
pub fn embed_pair<S: Borrow<Sentence>, T: Borrow<Sentence>>(
    db0: &[S],
    db1: &[T],
    provider: &dyn EmbeddingProvider,
) -> Result<(TokenEmbeddingBatch, TokenEmbeddingBatch)> {
    let (p0, p1) = pad_pair(db0, db1)?;
    Ok((
        provider.embed(Role::Sensitive, &p0)?,
        provider.embed(Role::Safe, &p1)?,
    ))
}

/// One optimizer step on a sensitive batch and a safe batch.
pub fn train_step<S: Borrow<Sentence>, T: Borrow<Sentence>>(
    params: &RankerParams,
    adam: &AdamState,
    db0: &[S],
    db1: &[T],
    provider: &dyn EmbeddingProvider,
    cfg: &TrainConfig,
) -> Result<(RankerParams, AdamState, f64)> {
    if db0.is_empty() || db1.is_empty() {
        return Err(Error::invalid("both batches must be non-empty"));
    }
    let (e0, e1) = embed_pair(db0, db1, provider)?;
    let step = loss_and_grad(params, &e0, &e1, &cfg.mask, &cfg.kde, None)?;
    if !step.loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss (bandwidth {})",
            step.detached.bandwidth
        )));
    }
    let mut next = params.clone();
    let mut adam = adam.clone();
    adam.update(next.as_mut_slice(), step.grad.as_slice())?;
    Ok((next, adam, step.loss))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: RankerParams,
    pub adam: AdamState,
    pub trace: LossTrace,
    pub steps: usize,
}

/// Number of lockstep steps in one epoch: full batches plus a trailing
/// partial batch when it holds at least two sentences per side.
pub fn steps_per_epoch(len0: usize, len1: usize, batch_size: usize) -> usize {
    let n = len0.min(len1);
    n / batch_size + usize::from(n % batch_size >= 2)
}

fn shuffle_seed(seed: u64) -> u64 {
    seed ^ 0x5851_F42D_4C95_7F2D
}

/// Trains a freshly initialized ranker with hidden sizes `hidden`.
pub fn train_ranker(
    d0: &Corpus,
    d1: &Corpus,
    provider: &dyn EmbeddingProvider,
    hidden: [usize; 3],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let dims = RankerDims::new(provider.dim(), hidden)?;
    let params = RankerParams::init(dims, cfg.seed);
    let adam = AdamState::for_params(&params, cfg.adam);
    train_ranker_from(params, adam, d0, d1, provider, cfg)
}

pub fn train_ranker_from(
    mut params: RankerParams,
    mut adam: AdamState,
    d0: &Corpus,
    d1: &Corpus,
    provider: &dyn EmbeddingProvider,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let bsz = cfg.batch_size;
    if d0.len() < bsz || d1.len() < bsz {
        return Err(Error::invalid(format!(
            "corpora have {} and {} sentences but the batch size is {bsz}; use a smaller batch size",
            d0.len(),
            d1.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed(cfg.seed));
    let mut order0: Vec<&Sentence> = d0.sentences().iter().collect();
    let mut order1: Vec<&Sentence> = d1.sentences().iter().collect();
    let per_epoch = steps_per_epoch(d0.len(), d1.len(), bsz);

    let mut trace = LossTrace::new();
    let mut block = Vec::with_capacity(cfg.loss_log_every);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        if epoch == 0 || cfg.reshuffle_each_epoch {
            order0.shuffle(&mut rng);
            order1.shuffle(&mut rng);
        }
        for t in 0..per_epoch {
            let lo = t * bsz;
            let hi0 = (lo + bsz).min(order0.len());
            let hi1 = (lo + bsz).min(order1.len());
            let hi = hi0.min(hi1);
            let (next, next_adam, loss) =
                train_step(&params, &adam, &order0[lo..hi], &order1[lo..hi], provider, cfg)
                    .map_err(|e| match e {
                        Error::NonFinite(what) => {
                            Error::NonFinite(format!("{what} at epoch {epoch}, step {t}"))
                        }
                        other => other,
                    })?;
            params = next;
            adam = next_adam;
            step += 1;
            block.push(loss);
            if block.len() == cfg.loss_log_every {
                trace.push(step, block.iter().sum::<f64>() / block.len() as f64)?;
                block.clear();
            }
        }
    }
    if !block.is_empty() {
        trace.push(step, block.iter().sum::<f64>() / block.len() as f64)?;
    }
    Ok(TrainOutcome {
        params,
        adam,
        trace,
        steps: step,
    })
}
