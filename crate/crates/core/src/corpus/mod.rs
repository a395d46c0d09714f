//! Text ingestion, vocabulary, batching, word dropout and the synthetic
//! template corpus.

mod batch;
pub mod synthetic;
mod vocab;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use batch::{make_batches, Batch};
pub use synthetic::{gen_synthetic, SyntheticExample, SyntheticSpec};
pub use vocab::{Vocab, BOS, EOS, PAD, SPECIALS, UNK};

pub const DEFAULT_MAX_LEN: usize = 24;

/// Whitespace-tokenized, lowercased sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub tokens: Vec<String>,
}

impl TokenizedSentence {
    pub fn from_text(line: &str) -> Self {
        TokenizedSentence {
            tokens: line.split_whitespace().map(str::to_lowercase).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn ids(&self, vocab: &Vocab) -> Vec<usize> {
        vocab.encode(&self.tokens)
    }

    /// `[BOS] ids [EOS]`.
    pub fn framed(&self, vocab: &Vocab) -> Vec<usize> {
        frame(&self.ids(vocab))
    }
}

pub fn frame(ids: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(BOS);
    out.extend_from_slice(ids);
    out.push(EOS);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<TokenizedSentence>,
    /// Lines dropped for exceeding `max_len`.
    pub skipped: usize,
}

/// Parses one-sentence-per-line text. Blank lines are ignored and lines
/// longer than `max_len` tokens are skipped.
pub fn parse_corpus(text: &str, max_len: usize) -> Corpus {
    let mut sentences = Vec::new();
    let mut skipped = 0;
    for line in text.lines() {
        let s = TokenizedSentence::from_text(line);
        if s.is_empty() {
            continue;
        }
        if s.len() > max_len {
            skipped += 1;
            continue;
        }
        sentences.push(s);
    }
    if skipped > 0 {
        log::info!("skipped {skipped} sentences longer than {max_len} tokens");
    }
    Corpus { sentences, skipped }
}

pub fn load_corpus(path: impl AsRef<Path>, max_len: usize) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_corpus(&text, max_len))
}

pub fn build_vocab(sentences: &[TokenizedSentence], min_freq: usize) -> Result<Vocab> {
    let lists: Vec<&[String]> = sentences.iter().map(|s| s.tokens.as_slice()).collect();
    Vocab::build(&lists, min_freq)
}

/// Replaces each non-special id by UNK with probability `p`.
pub fn word_dropout<R: Rng + ?Sized>(ids: &[usize], p: f64, rng: &mut R) -> Vec<usize> {
    assert!((0.0..=1.0).contains(&p), "dropout probability {p} outside [0, 1]");
    ids.iter()
        .map(|&id| {
            let eligible = !matches!(id, PAD | BOS | EOS);
            if eligible && p > 0.0 && rng.random::<f64>() < p {
                UNK
            } else {
                id
            }
        })
        .collect()
}
