//! Synthetic marker-token corpora.
//!
//! Sensitive sentences carry a few marker words drawn from a small marker
//! vocabulary, scattered among background words. Safe sentences have the
//! same length and contain background words only, so markers are the sole
//! signal separating the two sides.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Role, Sentence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub sentences_per_side: usize,
    pub markers_per_sentence: usize,
    pub background_per_sentence: usize,
    pub marker_vocab: usize,
    pub background_vocab: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            sentences_per_side: 2000,
            markers_per_sentence: 2,
            background_per_sentence: 10,
            marker_vocab: 8,
            background_vocab: 200,
            seed: 0,
        }
    }
}

/// A generated sensitive/safe pair.
#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub sensitive: Corpus,
    pub safe: Corpus,
}

pub fn marker_token(i: usize) -> String {
    format!("mk{i:02}")
}

pub fn background_token(i: usize) -> String {
    format!("w{i:03}")
}

pub fn is_marker(token: &str) -> bool {
    token.len() > 2 && token.starts_with("mk") && token[2..].bytes().all(|b| b.is_ascii_digit())
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sentences_per_side == 0 {
            return Err(Error::invalid("sentences_per_side must be positive"));
        }
        if self.background_per_sentence == 0 || self.background_vocab == 0 {
            return Err(Error::invalid("background words are required"));
        }
        if self.markers_per_sentence > self.marker_vocab {
            return Err(Error::invalid("markers_per_sentence exceeds the marker vocabulary"));
        }
        Ok(())
    }

    pub fn sentence_len(&self) -> usize {
        self.markers_per_sentence + self.background_per_sentence
    }

    pub fn generate(&self) -> Result<SyntheticPair> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.sentence_len();
        let mut sensitive = Vec::with_capacity(self.sentences_per_side);
        let mut safe = Vec::with_capacity(self.sentences_per_side);
        for i in 0..self.sentences_per_side {
            let mut tokens: Vec<String> = (0..self.background_per_sentence)
                .map(|_| background_token(rng.random_range(0..self.background_vocab)))
                .collect();
            let markers = sample(&mut rng, self.marker_vocab, self.markers_per_sentence);
            for m in markers.iter() {
                let at = rng.random_range(0..=tokens.len());
                tokens.insert(at, marker_token(m));
            }
            sensitive.push(Sentence::new(format!("s{i}"), tokens));

            let tokens = (0..n)
                .map(|_| background_token(rng.random_range(0..self.background_vocab)))
                .collect();
            safe.push(Sentence::new(format!("p{i}"), tokens));
        }
        Ok(SyntheticPair {
            sensitive: Corpus::new(Role::Sensitive, sensitive)?,
            safe: Corpus::new(Role::Safe, safe)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_markers() {
        let cfg = SyntheticConfig {
            sentences_per_side: 50,
            ..SyntheticConfig::default()
        };
        let pair = cfg.generate().unwrap();
        assert_eq!(pair.sensitive.len(), 50);
        assert_eq!(pair.safe.len(), 50);
        for s in pair.sensitive.sentences() {
            assert_eq!(s.len(), 12);
            assert_eq!(s.tokens.iter().filter(|t| is_marker(t)).count(), 2);
        }
        for s in pair.safe.sentences() {
            assert_eq!(s.len(), 12);
            assert!(!s.tokens.iter().any(|t| is_marker(t)));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig {
            sentences_per_side: 20,
            seed: 4,
            ..SyntheticConfig::default()
        };
        let a = cfg.generate().unwrap();
        let b = cfg.generate().unwrap();
        assert_eq!(a.sensitive, b.sensitive);
        let c = SyntheticConfig { seed: 5, ..cfg }.generate().unwrap();
        assert_ne!(a.sensitive, c.sensitive);
    }

    #[test]
    fn marker_names() {
        assert!(is_marker(&marker_token(3)));
        assert!(!is_marker(&background_token(3)));
        assert!(!is_marker("mk"));
        assert!(!is_marker("mkx"));
    }
}
