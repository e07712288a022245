//! Lowest-K% selection over rank vectors: a sigmoid relaxation for training
//! and an exact selection for redaction.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::{sigmoid, RankVector};

/// Where the relaxed mask crosses one half.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Subtract the k-th smallest rank itself; that word lands at 0.5.
    KthRank,
    /// Subtract the midpoint between the k-th and (k+1)-th smallest ranks.
    Midpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// K, a percentage in [0, 100].
    pub redact_percent: f64,
    /// T > 0.
    pub temperature: f64,
    pub threshold_mode: ThresholdMode,
}

impl MaskConfig {
    pub fn new(redact_percent: f64, temperature: f64, threshold_mode: ThresholdMode) -> Result<Self> {
        let cfg = MaskConfig {
            redact_percent,
            temperature,
            threshold_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.redact_percent) {
            return Err(Error::invalid(format!(
                "redaction percentage {} outside [0, 100]",
                self.redact_percent
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive and finite"));
        }
        Ok(())
    }
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            redact_percent: 10.0,
            temperature: 100.0,
            threshold_mode: ThresholdMode::Midpoint,
        }
    }
}

/// Relaxed keep-mask over a padded row plus the (detached) threshold used.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    pub values: Vec<f64>,
    pub threshold: f64,
}

/// ceil(K/100 · n), clamped to [0, n].
pub fn redact_count(num_real_tokens: usize, redact_percent: f64) -> usize {
    let exact = redact_percent * num_real_tokens as f64 / 100.0;
    // Absorb representation error so that e.g. 30% of 10 is 3, not 4.
    let count = (exact - 1e-9).ceil().max(0.0) as usize;
    count.min(num_real_tokens)
}

/// Real positions ordered by rank, earlier index first among equal ranks.
fn rank_order(ranks: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ranks.len()).collect();
    order.sort_by(|&a, &b| match ranks[a].total_cmp(&ranks[b]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

/// Threshold separating the k lowest ranks from the rest.
pub fn kth_smallest_threshold(real_ranks: &[f64], k: usize, mode: ThresholdMode) -> Result<f64> {
    if k == 0 || k > real_ranks.len() {
        return Err(Error::invalid(format!(
            "k = {k} outside 1..={}",
            real_ranks.len()
        )));
    }
    let order = rank_order(real_ranks);
    let kth = real_ranks[order[k - 1]];
    Ok(match mode {
        ThresholdMode::KthRank => kth,
        ThresholdMode::Midpoint if k < order.len() => 0.5 * (kth + real_ranks[order[k]]),
        ThresholdMode::Midpoint => kth + 1.0,
    })
}

fn threshold_for(ranks: &RankVector, cfg: &MaskConfig) -> f64 {
    let k = redact_count(ranks.len(), cfg.redact_percent);
    if k == 0 {
        0.0
    } else {
        // k is in range by construction.
        kth_smallest_threshold(ranks.real(), k, cfg.threshold_mode).unwrap_or(0.0)
    }
}

/// sigmoid(T·(rank − k_r)) at real positions; pads are pinned to 1.
pub fn soft_topk_mask(ranks: &RankVector, cfg: &MaskConfig) -> SoftMask {
    let threshold = threshold_for(ranks, cfg);
    soft_mask_at(ranks, cfg.temperature, threshold)
}

/// The relaxed mask for an externally fixed threshold.
pub fn soft_mask_at(ranks: &RankVector, temperature: f64, threshold: f64) -> SoftMask {
    let values = ranks
        .ranks()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if i < ranks.len() {
                sigmoid(temperature * (r - threshold))
            } else {
                1.0
            }
        })
        .collect();
    SoftMask { values, threshold }
}

/// Chain rule through the relaxed mask with the threshold held constant:
/// d mask_i / d rank_i = T·mask_i·(1 − mask_i), no cross terms.
pub fn soft_mask_grad(ranks: &RankVector, cfg: &MaskConfig, upstream: &[f64]) -> Vec<f64> {
    let mask = soft_topk_mask(ranks, cfg);
    soft_mask_grad_from(&mask, ranks.len(), cfg.temperature, upstream)
}

pub(crate) fn soft_mask_grad_from(
    mask: &SoftMask,
    len: usize,
    temperature: f64,
    upstream: &[f64],
) -> Vec<f64> {
    mask.values
        .iter()
        .zip(upstream)
        .enumerate()
        .map(|(i, (&m, &g))| {
            if i < len {
                temperature * m * (1.0 - m) * g
            } else {
                0.0
            }
        })
        .collect()
}

/// The redact_count lowest-ranked real positions (earlier index wins ties).
pub fn hard_topk_indices(ranks: &RankVector, redact_percent: f64) -> BTreeSet<usize> {
    let k = redact_count(ranks.len(), redact_percent);
    rank_order(ranks.real()).into_iter().take(k).collect()
}
