//! Corpus-level redaction with any word ranker.

use std::collections::BTreeSet;

use crate::corpus::{pad_batch, Corpus};
use crate::embed::EmbeddingProvider;
use crate::error::Result;
use crate::mask::hard_topk_indices;
use crate::ranker::{RankVector, RankerParams};

/// Sentences per embedding call when ranking a whole corpus.
pub const RANK_CHUNK: usize = 256;

/// Anything that scores each word of each sentence; lower ranks are
/// redacted first. Returned vectors have no pad columns.
pub trait WordRanker {
    fn rank_corpus(&self, corpus: &Corpus, provider: &dyn EmbeddingProvider) -> Result<Vec<RankVector>>;
}

/// The trained perceptron as a [`WordRanker`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpRanker {
    pub params: RankerParams,
}

impl MlpRanker {
    pub fn new(params: RankerParams) -> Self {
        MlpRanker { params }
    }
}

impl WordRanker for MlpRanker {
    fn rank_corpus(&self, corpus: &Corpus, provider: &dyn EmbeddingProvider) -> Result<Vec<RankVector>> {
        let mut out = Vec::with_capacity(corpus.len());
        for chunk in corpus.sentences().chunks(RANK_CHUNK) {
            let batch = pad_batch(chunk)?;
            let embedded = provider.embed(corpus.role(), &batch)?;
            for (ranks, s) in self.params.rank_words(&embedded)?.into_iter().zip(chunk) {
                out.push(RankVector::padded(ranks.real().to_vec(), s.len())?);
            }
        }
        Ok(out)
    }
}

pub fn redaction_indices(ranks: &[RankVector], redact_percent: f64) -> Vec<BTreeSet<usize>> {
    ranks
        .iter()
        .map(|r| hard_topk_indices(r, redact_percent))
        .collect()
}

/// Masks the lowest-ranked `redact_percent` of every sentence.
pub fn redact_corpus(
    corpus: &Corpus,
    ranker: &dyn WordRanker,
    provider: &dyn EmbeddingProvider,
    redact_percent: f64,
) -> Result<(Corpus, Vec<BTreeSet<usize>>)> {
    let ranks = ranker.rank_corpus(corpus, provider)?;
    let indices = redaction_indices(&ranks, redact_percent);
    Ok((corpus.redacted(&indices)?, indices))
}
