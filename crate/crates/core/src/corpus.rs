//! Sentence corpora: ingestion, tokenization, padding and redaction.
//!
//! Corpora live on disk as JSON-lines files, one `{"text": ...}` object per
//! line. Redacted output uses the same layout with the redacted tokens joined
//! by single spaces plus a `redacted_indices` array.

use std::borrow::Borrow;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Replacement symbol for redacted words.
pub const MASK_TOKEN: &str = "[MASK]";
/// Filler for padded grid positions.
pub const PAD_TOKEN: &str = "[pad]";

/// Which side of the comparison a corpus is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sensitive,
    Safe,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Sensitive => f.write_str("sensitive"),
            Role::Safe => f.write_str("safe"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Self {
        Sentence {
            id: id.into(),
            tokens,
        }
    }

    /// Builds a sentence from already-normalized tokens.
    pub fn from_tokens<S: AsRef<str>>(id: impl Into<String>, tokens: &[S]) -> Self {
        Sentence::new(id, tokens.iter().map(|t| t.as_ref().to_owned()).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The tokens joined by single spaces.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// A role-tagged collection of sentences with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    role: Role,
    sentences: Vec<Sentence>,
    skipped: usize,
}

impl Corpus {
    pub fn new(role: Role, sentences: Vec<Sentence>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(sentences.len());
        for s in &sentences {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sentence id {:?}", s.id)));
            }
            if s.tokens.iter().any(|t| t.is_empty()) {
                return Err(Error::invalid(format!("sentence {:?} has an empty token", s.id)));
            }
        }
        Ok(Corpus {
            role,
            sentences,
            skipped: 0,
        })
    }

    /// Tokenizes each text in order, assigning ids `line-1`, `line-2`, ...
    /// Texts that tokenize to nothing are skipped and counted.
    pub fn from_texts<S: AsRef<str>>(role: Role, texts: &[S]) -> Result<Self> {
        let mut sentences = Vec::with_capacity(texts.len());
        let mut skipped = 0;
        for (i, text) in texts.iter().enumerate() {
            let line = i + 1;
            check_reserved(text.as_ref(), line)?;
            let tokens = tokenize(text.as_ref());
            if tokens.is_empty() {
                skipped += 1;
                continue;
            }
            sentences.push(Sentence::new(format!("line-{line}"), tokens));
        }
        let mut corpus = Corpus::new(role, sentences)?;
        corpus.skipped = skipped;
        Ok(corpus)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn into_sentences(self) -> Vec<Sentence> {
        self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Number of input lines dropped because they held no tokens.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Returns a corpus with the same role and ids whose sentences have been
    /// redacted at the given positions, one index set per sentence.
    pub fn redacted(&self, indices: &[BTreeSet<usize>]) -> Result<Corpus> {
        if indices.len() != self.sentences.len() {
            return Err(Error::invalid(format!(
                "{} index sets supplied for {} sentences",
                indices.len(),
                self.sentences.len()
            )));
        }
        let sentences = self
            .sentences
            .iter()
            .zip(indices)
            .map(|(s, idx)| apply_redaction(s, idx))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            role: self.role,
            sentences,
            skipped: self.skipped,
        })
    }
}

#[derive(Deserialize)]
struct TextRecord {
    text: String,
}

#[derive(Serialize)]
struct RawRecord {
    text: String,
}

#[derive(Serialize)]
struct RedactedRecord<'a> {
    text: String,
    redacted_indices: &'a [usize],
}

/// Loads a raw JSON-lines corpus. Each line must carry a `text` string.
pub fn load_corpus(path: impl AsRef<Path>, role: Role) -> Result<Corpus> {
    load_lines(path.as_ref(), role, false)
}

/// Loads a corpus written by [`write_redacted`]: the `text` field is split on
/// whitespace as-is so that `[MASK]` tokens survive.
pub fn load_redacted_corpus(path: impl AsRef<Path>, role: Role) -> Result<Corpus> {
    load_lines(path.as_ref(), role, true)
}

fn load_lines(path: &Path, role: Role, redacted: bool) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut sentences = Vec::new();
    let mut skipped = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TextRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        let tokens = if redacted {
            let tokens: Vec<String> = record.text.split_whitespace().map(str::to_owned).collect();
            if let Some(t) = tokens.iter().find(|t| t.as_str() == PAD_TOKEN) {
                return Err(Error::ReservedToken {
                    line: line_no,
                    token: t.clone(),
                });
            }
            tokens
        } else {
            check_reserved(&record.text, line_no)?;
            tokenize(&record.text)
        };
        if tokens.is_empty() {
            skipped += 1;
            continue;
        }
        sentences.push(Sentence::new(format!("line-{line_no}"), tokens));
    }
    let mut corpus = Corpus::new(role, sentences)?;
    corpus.skipped = skipped;
    Ok(corpus)
}

fn check_reserved(text: &str, line: usize) -> Result<()> {
    for piece in text.split_whitespace() {
        let lower = piece.to_lowercase();
        for reserved in [MASK_TOKEN, PAD_TOKEN] {
            if lower.contains(&reserved.to_lowercase()) {
                return Err(Error::ReservedToken {
                    line,
                    token: reserved.to_owned(),
                });
            }
        }
    }
    Ok(())
}

/// Writes redacted sentences as JSON-lines, one record per sentence.
pub fn write_redacted(
    path: impl AsRef<Path>,
    sentences: &[Sentence],
    indices: &[BTreeSet<usize>],
) -> Result<()> {
    let path = path.as_ref();
    if sentences.len() != indices.len() {
        return Err(Error::invalid("one index set per sentence is required"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = 0;
    for (s, idx) in sentences.iter().zip(indices) {
        let idx: Vec<usize> = idx.iter().copied().collect();
        skip_to_line(&mut out, &mut line, &s.id).map_err(|e| Error::io(path, e))?;
        let record = RedactedRecord {
            text: s.text(),
            redacted_indices: &idx,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes sentences as `{"text": ...}` JSON-lines readable by [`load_corpus`].
pub fn write_corpus(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = 0;
    for s in sentences {
        skip_to_line(&mut out, &mut line, &s.id).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(&mut out, &RawRecord { text: s.text() })?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Emits blank lines so a sentence with id `line-<n>` lands on line n again,
/// keeping ids stable across a write and reload. `line` counts lines written.
fn skip_to_line(out: &mut impl Write, line: &mut usize, id: &str) -> std::io::Result<()> {
    let target = id.strip_prefix("line-").and_then(|n| n.parse::<usize>().ok());
    if let Some(n) = target {
        while *line + 1 < n {
            out.write_all(b"\n")?;
            *line += 1;
        }
    }
    *line += 1;
    Ok(())
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}')
}

/// Whitespace tokenizer: lowercases and trims punctuation from both ends of
/// every word, dropping words that end up empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(is_punctuation).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// A right-padded token grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    ids: Vec<String>,
    grid: Vec<Vec<String>>,
    lengths: Vec<usize>,
    width: usize,
}

impl PaddedBatch {
    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    /// W: the padded row length.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn token_grid(&self) -> &[Vec<String>] {
        &self.grid
    }

    pub fn row(&self, b: usize) -> &[String] {
        &self.grid[b]
    }

    pub fn is_real(&self, b: usize, w: usize) -> bool {
        w < self.lengths[b]
    }

    /// Row-major B×W mask, `true` at real tokens.
    pub fn pad_mask(&self) -> Vec<Vec<bool>> {
        self.lengths
            .iter()
            .map(|&len| (0..self.width).map(|w| w < len).collect())
            .collect()
    }

    /// Drops pad columns, recovering the original token lists.
    pub fn unpad(&self) -> Vec<Vec<String>> {
        self.grid
            .iter()
            .zip(&self.lengths)
            .map(|(row, &len)| row[..len].to_vec())
            .collect()
    }
}

/// Pads a batch to the length of its longest sentence.
pub fn pad_batch<S: Borrow<Sentence>>(sentences: &[S]) -> Result<PaddedBatch> {
    let width = sentences
        .iter()
        .map(|s| s.borrow().len())
        .max()
        .unwrap_or(0);
    pad_to_width(sentences, width)
}

/// Pads two batches to a shared width, the longest sentence across both.
pub fn pad_pair<S: Borrow<Sentence>, T: Borrow<Sentence>>(
    first: &[S],
    second: &[T],
) -> Result<(PaddedBatch, PaddedBatch)> {
    let width = first
        .iter()
        .map(|s| s.borrow().len())
        .chain(second.iter().map(|s| s.borrow().len()))
        .max()
        .unwrap_or(0);
    Ok((pad_to_width(first, width)?, pad_to_width(second, width)?))
}

fn pad_to_width<S: Borrow<Sentence>>(sentences: &[S], width: usize) -> Result<PaddedBatch> {
    if sentences.is_empty() {
        return Err(Error::invalid("cannot pad an empty batch"));
    }
    let mut ids = Vec::with_capacity(sentences.len());
    let mut grid = Vec::with_capacity(sentences.len());
    let mut lengths = Vec::with_capacity(sentences.len());
    for s in sentences {
        let s = s.borrow();
        if s.is_empty() {
            return Err(Error::invalid(format!("sentence {:?} is empty", s.id)));
        }
        let mut row = s.tokens.clone();
        row.resize(width, PAD_TOKEN.to_owned());
        ids.push(s.id.clone());
        lengths.push(s.len());
        grid.push(row);
    }
    Ok(PaddedBatch {
        ids,
        grid,
        lengths,
        width,
    })
}

/// Replaces the tokens at `redact_indices` with [`MASK_TOKEN`].
pub fn apply_redaction(sentence: &Sentence, redact_indices: &BTreeSet<usize>) -> Result<Sentence> {
    if let Some(&bad) = redact_indices.iter().find(|&&i| i >= sentence.len()) {
        return Err(Error::invalid(format!(
            "redaction index {bad} out of range for sentence {:?} of length {}",
            sentence.id,
            sentence.len()
        )));
    }
    let tokens = sentence
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if redact_indices.contains(&i) {
                MASK_TOKEN.to_owned()
            } else {
                t.clone()
            }
        })
        .collect();
    Ok(Sentence::new(sentence.id.clone(), tokens))
}
