//! Per-token embeddings for padded batches and mean pooling to sentences.
//!
//! Two providers sit behind [`EmbeddingProvider`]: a deterministic
//! hash-seeded embedder for experiments without a language model, and
//! precomputed contextual vectors read from a JSON-lines file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::corpus::{PaddedBatch, Role, MASK_TOKEN};
use crate::error::{Error, Result};

/// B×W×d token vectors, row-major, with zero vectors at pad positions.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenEmbeddingBatch {
    values: Vec<f64>,
    lengths: Vec<usize>,
    width: usize,
    dim: usize,
}

impl TokenEmbeddingBatch {
    /// Validates shape, finiteness and zeroed pads.
    pub fn new(values: Vec<f64>, lengths: Vec<usize>, width: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let expected = lengths.len() * width * dim;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(&len) = lengths.iter().find(|&&l| l > width) {
            return Err(Error::invalid(format!("row length {len} exceeds width {width}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token embedding".into()));
        }
        let batch = TokenEmbeddingBatch {
            values,
            lengths,
            width,
            dim,
        };
        for b in 0..batch.rows() {
            for w in batch.lengths[b]..width {
                if batch.vector(b, w).iter().any(|&v| v != 0.0) {
                    return Err(Error::invalid("pad positions must hold zero vectors"));
                }
            }
        }
        Ok(batch)
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Non-pad token counts per row.
    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_real(&self, b: usize, w: usize) -> bool {
        w < self.lengths[b]
    }

    pub fn pad_mask(&self) -> Vec<Vec<bool>> {
        self.lengths
            .iter()
            .map(|&len| (0..self.width).map(|w| w < len).collect())
            .collect()
    }

    pub fn vector(&self, b: usize, w: usize) -> &[f64] {
        let start = (b * self.width + w) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Scales each position's vector by a per-position weight. Pads stay zero.
    pub fn weighted(&self, weights: &[Vec<f64>]) -> Result<TokenEmbeddingBatch> {
        if weights.len() != self.rows() || weights.iter().any(|r| r.len() != self.width) {
            return Err(Error::invalid("weight grid does not match batch shape"));
        }
        let mut values = self.values.clone();
        for (b, row) in weights.iter().enumerate() {
            for (w, &m) in row.iter().enumerate().take(self.lengths[b]) {
                let start = (b * self.width + w) * self.dim;
                values[start..start + self.dim].iter_mut().for_each(|v| *v *= m);
            }
        }
        TokenEmbeddingBatch::new(values, self.lengths.clone(), self.width, self.dim)
    }

    /// Keeps only the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> TokenEmbeddingBatch {
        let stride = self.width * self.dim;
        let mut values = Vec::with_capacity(rows.len() * stride);
        for &b in rows {
            values.extend_from_slice(&self.values[b * stride..(b + 1) * stride]);
        }
        TokenEmbeddingBatch {
            values,
            lengths: rows.iter().map(|&b| self.lengths[b]).collect(),
            width: self.width,
            dim: self.dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: Vec<f64>,
}

/// Source of token embeddings. The role lets file-backed providers keep
/// separate id spaces for the two corpora.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embed(&self, role: Role, batch: &PaddedBatch) -> Result<TokenEmbeddingBatch>;
}

/// Hash-seeded unit Gaussian vectors, a pure function of (token, seed, dim).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuiltinEmbedder {
    dim: usize,
    seed: u64,
}

impl BuiltinEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("built-in embedding dimension must be at least 2"));
        }
        Ok(BuiltinEmbedder { dim, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        token_vector(token, self.dim, self.seed)
    }
}

impl EmbeddingProvider for BuiltinEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _role: Role, batch: &PaddedBatch) -> Result<TokenEmbeddingBatch> {
        builtin_embed(batch, self.dim, self.seed)
    }
}

/// Unit-norm vector for `token`: d standard normals drawn from a generator
/// seeded with SHA-256(seed, token), then normalized.
pub fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn builtin_embed(batch: &PaddedBatch, dim: usize, seed: u64) -> Result<TokenEmbeddingBatch> {
    if dim < 2 {
        return Err(Error::invalid("built-in embedding dimension must be at least 2"));
    }
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut values = vec![0.0; batch.rows() * batch.width() * dim];
    for (b, row) in batch.token_grid().iter().enumerate() {
        for (w, token) in row.iter().enumerate().take(batch.lengths()[b]) {
            let v = cache
                .entry(token.as_str())
                .or_insert_with(|| token_vector(token, dim, seed));
            let start = (b * batch.width() + w) * dim;
            values[start..start + dim].copy_from_slice(v);
        }
    }
    TokenEmbeddingBatch::new(values, batch.lengths().to_vec(), batch.width(), dim)
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    id: String,
    tokens: Vec<String>,
    embeddings: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
struct StoredSentence {
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

/// Precomputed contextual token vectors keyed by sentence id.
///
/// A `[MASK]` in the batch at a position whose stored token is something
/// else gets a zero vector, matching the training-time weighting where
/// redacted words contribute nothing.
#[derive(Clone, Debug)]
pub struct ContextualEmbeddings {
    dim: usize,
    records: HashMap<String, StoredSentence>,
}

impl ContextualEmbeddings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dim: Option<usize> = None;
        let mut records = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord =
                serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if rec.tokens.len() != rec.embeddings.len() {
                return Err(Error::TokenCountMismatch {
                    id: rec.id,
                    expected: rec.tokens.len(),
                    actual: rec.embeddings.len(),
                });
            }
            for v in &rec.embeddings {
                let d = *dim.get_or_insert(v.len());
                if v.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("embedding for sentence {}", rec.id)));
                }
            }
            if records.contains_key(&rec.id) {
                return Err(Error::invalid(format!("duplicate embedding record {:?}", rec.id)));
            }
            records.insert(
                rec.id,
                StoredSentence {
                    tokens: rec.tokens,
                    vectors: rec.embeddings,
                },
            );
        }
        let dim = dim.unwrap_or(0);
        if !records.is_empty() && dim < 2 {
            return Err(Error::invalid("contextual embedding dimension must be at least 2"));
        }
        Ok(ContextualEmbeddings { dim, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embed_batch(&self, batch: &PaddedBatch) -> Result<TokenEmbeddingBatch> {
        let (width, dim) = (batch.width(), self.dim);
        let mut values = vec![0.0; batch.rows() * width * dim];
        for (b, id) in batch.ids().iter().enumerate() {
            let stored = self
                .records
                .get(id)
                .ok_or_else(|| Error::MissingSentence(id.clone()))?;
            let len = batch.lengths()[b];
            if stored.vectors.len() != len {
                return Err(Error::TokenCountMismatch {
                    id: id.clone(),
                    expected: len,
                    actual: stored.vectors.len(),
                });
            }
            for w in 0..len {
                let masked_here =
                    batch.row(b)[w] == MASK_TOKEN && stored.tokens[w] != MASK_TOKEN;
                if masked_here {
                    continue;
                }
                let start = (b * width + w) * dim;
                values[start..start + dim].copy_from_slice(&stored.vectors[w]);
            }
        }
        TokenEmbeddingBatch::new(values, batch.lengths().to_vec(), width, dim.max(1))
    }
}

impl EmbeddingProvider for ContextualEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _role: Role, batch: &PaddedBatch) -> Result<TokenEmbeddingBatch> {
        self.embed_batch(batch)
    }
}

/// Reads a contextual embedding file and places its vectors on the batch grid.
pub fn load_contextual_embeddings(
    path: impl AsRef<Path>,
    batch: &PaddedBatch,
) -> Result<TokenEmbeddingBatch> {
    ContextualEmbeddings::load(path)?.embed_batch(batch)
}

/// One contextual table per corpus role, since ids restart in every file.
#[derive(Clone, Debug)]
pub struct CorpusEmbeddings {
    sensitive: ContextualEmbeddings,
    safe: ContextualEmbeddings,
}

impl CorpusEmbeddings {
    pub fn new(sensitive: ContextualEmbeddings, safe: ContextualEmbeddings) -> Result<Self> {
        if sensitive.dim != safe.dim {
            return Err(Error::DimensionMismatch {
                expected: sensitive.dim,
                actual: safe.dim,
            });
        }
        Ok(CorpusEmbeddings { sensitive, safe })
    }
}

impl EmbeddingProvider for CorpusEmbeddings {
    fn dim(&self) -> usize {
        self.sensitive.dim
    }

    fn embed(&self, role: Role, batch: &PaddedBatch) -> Result<TokenEmbeddingBatch> {
        match role {
            Role::Sensitive => self.sensitive.embed_batch(batch),
            Role::Safe => self.safe.embed_batch(batch),
        }
    }
}

/// Average of each row's non-pad vectors; pads count in neither sum nor
/// denominator.
pub fn mean_pool(batch: &TokenEmbeddingBatch) -> Result<Vec<SentenceEmbedding>> {
    (0..batch.rows())
        .map(|b| {
            let len = batch.lengths()[b];
            if len == 0 {
                return Err(Error::invalid(format!("row {b} has no real tokens")));
            }
            let mut acc = vec![0.0; batch.dim()];
            for w in 0..len {
                acc.iter_mut()
                    .zip(batch.vector(b, w))
                    .for_each(|(a, v)| *a += v);
            }
            let n = len as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            Ok(SentenceEmbedding { vector: acc })
        })
        .collect()
}

/// Gradient of a loss with respect to every token vector, given its gradient
/// with respect to each pooled sentence vector. Flattened B×W×d; pads zero.
pub fn mean_pool_backward(
    lengths: &[usize],
    width: usize,
    dim: usize,
    upstream: &[Vec<f64>],
) -> Vec<f64> {
    let mut grad = vec![0.0; lengths.len() * width * dim];
    for (b, (&len, g)) in lengths.iter().zip(upstream).enumerate() {
        let scale = 1.0 / len as f64;
        for w in 0..len {
            let start = (b * width + w) * dim;
            grad[start..start + dim]
                .iter_mut()
                .zip(g)
                .for_each(|(out, gi)| *out = gi * scale);
        }
    }
    grad
}
