//! TF-IDF + logistic regression word ranker.
//!
//! Words whose weight has the largest magnitude are the most indicative of
//! either corpus and get the lowest ranks, so they are redacted first.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence};
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::ranker::RankVector;
use crate::redact::WordRanker;

/// Rank given to words the model has no weight for.
pub const OOV_RANK: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub struct TfidfVocab {
    index: BTreeMap<String, usize>,
    idf: Vec<f64>,
    num_docs: usize,
}

/// Sparse L2-normalized TF-IDF row: (column, value) sorted by column.
pub type SparseRow = Vec<(usize, f64)>;

impl TfidfVocab {
    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn column(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn idf(&self, word: &str) -> Option<f64> {
        self.column(word).map(|c| self.idf[c])
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// Raw term counts times idf, scaled to unit length. Unknown words are
    /// ignored.
    pub fn transform(&self, sentence: &Sentence) -> SparseRow {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in &sentence.tokens {
            if let Some(c) = self.column(t) {
                *counts.entry(c).or_default() += 1.0;
            }
        }
        let mut row: SparseRow = counts.into_iter().map(|(c, tf)| (c, tf * self.idf[c])).collect();
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        row
    }
}

/// Vocabulary over both corpora with one document per sentence.
pub fn fit_tfidf(d0: &Corpus, d1: &Corpus) -> Result<TfidfVocab> {
    if d0.is_empty() || d1.is_empty() {
        return Err(Error::invalid("both corpora must be non-empty"));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let docs = d0.sentences().iter().chain(d1.sentences());
    for s in docs {
        let mut seen: Vec<&String> = s.tokens.iter().collect();
        seen.sort();
        seen.dedup();
        for t in seen {
            *df.entry(t.clone()).or_default() += 1;
        }
    }
    let n = (d0.len() + d1.len()) as f64;
    let idf = df
        .values()
        .map(|&k| ((1.0 + n) / (1.0 + k as f64)).ln() + 1.0)
        .collect();
    let index = df.into_keys().enumerate().map(|(i, w)| (w, i)).collect();
    Ok(TfidfVocab {
        index,
        idf,
        num_docs: d0.len() + d1.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            epochs: 200,
            lr: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trained: bool,
}

fn logistic(z: f64) -> f64 {
    crate::ranker::sigmoid(z)
}

impl LogRegModel {
    pub fn untrained(num_features: usize) -> Self {
        LogRegModel {
            weights: vec![0.0; num_features],
            bias: 0.0,
            trained: false,
        }
    }

    pub fn logit(&self, row: &SparseRow) -> f64 {
        self.bias + row.iter().map(|&(c, v)| self.weights[c] * v).sum::<f64>()
    }

    /// Probability that the row comes from the sensitive corpus.
    pub fn predict(&self, row: &SparseRow) -> f64 {
        logistic(self.logit(row))
    }
}

/// Mean binary cross-entropy, computed from logits for stability.
fn bce(logit: f64, label: f64) -> f64 {
    let softplus = |z: f64| z.max(0.0) + (-z.abs()).exp().ln_1p();
    label * softplus(-logit) + (1.0 - label) * softplus(logit)
}

/// Full-batch gradient descent on cross-entropy from zero weights; label 1
/// is the sensitive corpus.
pub fn train_logreg(d0: &Corpus, d1: &Corpus, vocab: &TfidfVocab, cfg: &LogRegConfig) -> Result<LogRegModel> {
    if d0.is_empty() || d1.is_empty() {
        return Err(Error::invalid("both corpora must be non-empty"));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let rows: Vec<(SparseRow, f64)> = d0
        .sentences()
        .iter()
        .map(|s| (vocab.transform(s), 1.0))
        .chain(d1.sentences().iter().map(|s| (vocab.transform(s), 0.0)))
        .collect();
    let n = rows.len() as f64;
    let mut model = LogRegModel::untrained(vocab.len());
    let mut grad = vec![0.0; vocab.len()];
    for epoch in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (row, y) in &rows {
            let z = model.logit(row);
            loss += bce(z, *y);
            let r = logistic(z) - y;
            grad_b += r;
            for &(c, v) in row {
                grad[c] += r * v;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("logistic regression loss at epoch {epoch}")));
        }
        model.bias -= cfg.lr * grad_b / n;
        model
            .weights
            .iter_mut()
            .zip(&grad)
            .for_each(|(w, g)| *w -= cfg.lr * g / n);
    }
    model.trained = true;
    Ok(model)
}

/// Share of sentences classified correctly; p ≥ 0.5 counts as sensitive.
pub fn accuracy(model: &LogRegModel, vocab: &TfidfVocab, d0: &Corpus, d1: &Corpus) -> f64 {
    let hits = d0
        .sentences()
        .iter()
        .filter(|s| model.predict(&vocab.transform(s)) >= 0.5)
        .count()
        + d1
            .sentences()
            .iter()
            .filter(|s| model.predict(&vocab.transform(s)) < 0.5)
            .count();
    hits as f64 / (d0.len() + d1.len()) as f64
}

/// Fitted vocabulary and weights, usable as a [`WordRanker`].
#[derive(Clone, Debug, PartialEq)]
pub struct Baseline {
    pub vocab: TfidfVocab,
    pub model: LogRegModel,
    pub config: LogRegConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineRecord {
    format_version: u32,
    bias: f64,
    weights: BTreeMap<String, f64>,
    idf: BTreeMap<String, f64>,
    num_docs: usize,
    config: LogRegConfig,
}

impl Baseline {
    pub fn fit(d0: &Corpus, d1: &Corpus, cfg: &LogRegConfig) -> Result<Self> {
        let vocab = fit_tfidf(d0, d1)?;
        let model = train_logreg(d0, d1, &vocab, cfg)?;
        Ok(Baseline {
            vocab,
            model,
            config: *cfg,
        })
    }

    pub fn weight(&self, word: &str) -> f64 {
        self.vocab.column(word).map_or(0.0, |c| self.model.weights[c])
    }

    /// 0.25 + 0.5 / (1 + |w|): larger magnitudes give lower ranks, unknown
    /// words get [`OOV_RANK`].
    pub fn rank_sentence(&self, sentence: &Sentence) -> Result<RankVector> {
        if !self.model.trained {
            return Err(Error::invalid("baseline model is not trained"));
        }
        let ranks = sentence
            .tokens
            .iter()
            .map(|t| 0.25 + 0.5 / (1.0 + self.weight(t).abs()))
            .collect();
        RankVector::padded(ranks, sentence.len())
    }

    pub fn to_json(&self) -> Result<String> {
        let words: Vec<&str> = self.vocab.words().collect();
        let record = BaselineRecord {
            format_version: 1,
            bias: self.model.bias,
            weights: words
                .iter()
                .map(|w| (w.to_string(), self.weight(w)))
                .collect(),
            idf: words
                .iter()
                .map(|w| (w.to_string(), self.vocab.idf(w).unwrap_or(1.0)))
                .collect(),
            num_docs: self.vocab.num_docs,
            config: self.config,
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: BaselineRecord = serde_json::from_str(text)?;
        if record.format_version != 1 {
            return Err(Error::invalid(format!(
                "unsupported baseline checkpoint version {}",
                record.format_version
            )));
        }
        if record.weights.len() != record.idf.len()
            || record.weights.keys().zip(record.idf.keys()).any(|(a, b)| a != b)
        {
            return Err(Error::invalid("baseline weights and idf cover different words"));
        }
        if record.weights.values().chain(record.idf.values()).any(|x| !x.is_finite()) || !record.bias.is_finite() {
            return Err(Error::NonFinite("baseline checkpoint".into()));
        }
        let index = record.idf.keys().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Baseline {
            vocab: TfidfVocab {
                index,
                idf: record.idf.into_values().collect(),
                num_docs: record.num_docs,
            },
            model: LogRegModel {
                weights: record.weights.into_values().collect(),
                bias: record.bias,
                trained: true,
            },
            config: record.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Baseline::from_json(&text)
    }
}

impl WordRanker for Baseline {
    fn rank_corpus(&self, corpus: &Corpus, _provider: &dyn EmbeddingProvider) -> Result<Vec<RankVector>> {
        corpus.sentences().iter().map(|s| self.rank_sentence(s)).collect()
    }
}

/// Mean rank per distinct word over a corpus.
pub fn mean_rank_by_word(corpus: &Corpus, ranks: &[RankVector]) -> HashMap<String, f64> {
    let mut acc: HashMap<String, (f64, usize)> = HashMap::new();
    for (s, r) in corpus.sentences().iter().zip(ranks) {
        for (t, &x) in s.tokens.iter().zip(r.real()) {
            let e = acc.entry(t.clone()).or_default();
            e.0 += x;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(w, (s, n))| (w, s / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Role;
    use crate::embed::BuiltinEmbedder;
    use crate::privacy::{epsilon_curve, CurveConfig};
    use crate::redact::redact_corpus;
    use crate::synthetic::{is_marker, SyntheticConfig};
    use proptest::prelude::*;

    fn markers(n: usize, seed: u64) -> (Corpus, Corpus) {
        let pair = SyntheticConfig {
            sentences_per_side: n,
            seed,
            ..SyntheticConfig::default()
        }
        .generate()
        .unwrap();
        (pair.sensitive, pair.safe)
    }

    #[test]
    fn idf_examples() {
        let d0 = Corpus::from_texts(Role::Sensitive, &["a b", "a c", "a", "a", "a"]).unwrap();
        let d1 = Corpus::from_texts(Role::Safe, &["a", "a", "a", "a"]).unwrap();
        let v = fit_tfidf(&d0, &d1).unwrap();
        assert_eq!(v.num_docs(), 9);
        assert!((v.idf("a").unwrap() - 1.0).abs() < 1e-15);
        assert!((v.idf("b").unwrap() - (5.0f64.ln() + 1.0)).abs() < 1e-12);
        assert!((v.idf("b").unwrap() - 2.609).abs() < 1e-3);
        assert_eq!(v.len(), 3);
        assert!(v.words().all(|w| w != "[pad]" && w != "[MASK]"));
        let row = v.transform(&d0.sentences()[0]);
        assert!((row.iter().map(|(_, x)| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separable_markers_train_well_and_rank_first() {
        let (d0, d1) = markers(300, 1);
        let base = Baseline::fit(&d0, &d1, &LogRegConfig::default()).unwrap();
        assert!(accuracy(&base.model, &base.vocab, &d0, &d1) >= 0.9);
        let provider = BuiltinEmbedder::new(4, 0).unwrap();
        let ranks = base.rank_corpus(&d0, &provider).unwrap();
        let means = mean_rank_by_word(&d0, &ranks);
        let worst_marker = means.iter().filter(|(w, _)| is_marker(w)).map(|(_, &r)| r).fold(0.0, f64::max);
        let best_background = means
            .iter()
            .filter(|(w, _)| !is_marker(w))
            .map(|(_, &r)| r)
            .fold(1.0, f64::min);
        assert!(worst_marker < best_background);
    }

    #[test]
    fn zero_epochs_and_determinism() {
        let (d0, d1) = markers(50, 2);
        let vocab = fit_tfidf(&d0, &d1).unwrap();
        let cfg = LogRegConfig {
            epochs: 0,
            ..LogRegConfig::default()
        };
        let m = train_logreg(&d0, &d1, &vocab, &cfg).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert_eq!(accuracy(&m, &vocab, &d0, &d1), 0.5);
        assert!(m.predict(&vocab.transform(&d0.sentences()[0])) == 0.5);
        let a = train_logreg(&d0, &d1, &vocab, &LogRegConfig::default()).unwrap();
        let b = train_logreg(&d0, &d1, &vocab, &LogRegConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ordering_rules() {
        let d0 = Corpus::from_texts(Role::Sensitive, &["big small"]).unwrap();
        let d1 = Corpus::from_texts(Role::Safe, &["small"]).unwrap();
        let vocab = fit_tfidf(&d0, &d1).unwrap();
        let mut model = LogRegModel::untrained(vocab.len());
        model.weights[vocab.column("big").unwrap()] = 3.0;
        model.weights[vocab.column("small").unwrap()] = -0.1;
        let untrained = Baseline {
            vocab,
            model,
            config: LogRegConfig::default(),
        };
        let s = Sentence::from_tokens("x", &["small", "big", "unseen"]);
        assert!(untrained.rank_sentence(&s).is_err());
        let mut base = untrained;
        base.model.trained = true;
        let r = base.rank_sentence(&s).unwrap();
        assert_eq!(r.real()[2], OOV_RANK);
        assert!(r.real()[1] < r.real()[0] && r.real()[0] < r.real()[2]);
        let picked = crate::mask::hard_topk_indices(&r, 33.0);
        assert_eq!(picked.into_iter().collect::<Vec<_>>(), [1]);
    }

    #[test]
    fn full_redaction_masks_everything_and_json_round_trips() {
        let (d0, d1) = markers(40, 3);
        let base = Baseline::fit(&d0, &d1, &LogRegConfig::default()).unwrap();
        let provider = BuiltinEmbedder::new(4, 0).unwrap();
        let (red, _) = redact_corpus(&d0, &base, &provider, 100.0).unwrap();
        assert!(red.sentences().iter().flat_map(|s| &s.tokens).all(|t| t == "[MASK]"));
        let back = Baseline::from_json(&base.to_json().unwrap()).unwrap();
        assert_eq!(back, base);
        let file = tempfile::NamedTempFile::new().unwrap();
        base.save(file.path()).unwrap();
        assert_eq!(Baseline::load(file.path()).unwrap(), base);
        assert!(Baseline::from_json("{\"format_version\":1}").is_err());
    }

    #[test]
    fn plugs_into_epsilon_curve() {
        let (d0, d1) = markers(60, 4);
        let base = Baseline::fit(&d0, &d1, &LogRegConfig::default()).unwrap();
        let provider = BuiltinEmbedder::new(8, 0).unwrap();
        let cfg = CurveConfig {
            k_grid: vec![0.0, 20.0],
            ..CurveConfig::default()
        };
        let rows = epsilon_curve(&d0, &d1, &base, &provider, &cfg).unwrap();
        assert_eq!(rows.len(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ordering_invariant_under_positive_rescaling(
            ws in prop::collection::vec(-5.0f64..5.0, 6),
            scale in 0.01f64..100.0,
        ) {
            let words = ["a", "b", "c", "d", "e", "f"];
            let d0 = Corpus::from_texts(Role::Sensitive, &["a b c d e f"]).unwrap();
            let d1 = Corpus::from_texts(Role::Safe, &["a"]).unwrap();
            let vocab = fit_tfidf(&d0, &d1).unwrap();
            let mut model = LogRegModel::untrained(vocab.len());
            for (w, &x) in words.iter().zip(&ws) {
                model.weights[vocab.column(w).unwrap()] = x;
            }
            model.trained = true;
            let mut scaled = model.clone();
            scaled.weights.iter_mut().for_each(|w| *w *= scale);
            let a = Baseline { vocab: vocab.clone(), model, config: LogRegConfig::default() };
            let b = Baseline { vocab, model: scaled, config: LogRegConfig::default() };
            let s = &d0.sentences()[0];
            for k in [0.0, 20.0, 50.0, 80.0, 100.0] {
                prop_assert_eq!(
                    crate::mask::hard_topk_indices(&a.rank_sentence(s).unwrap(), k),
                    crate::mask::hard_topk_indices(&b.rank_sentence(s).unwrap(), k)
                );
            }
        }
    }
}
