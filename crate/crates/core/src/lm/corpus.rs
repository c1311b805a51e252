//! Character vocabulary and synthetic text corpora.
//!
//! The synthetic language draws a small random lexicon per document and
//! emits space-separated words from it, so the same words recur within a
//! context window. A model trained on it learns to copy from context, which is
//! what makes retrieved keys and values useful to it.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    /// Sorted set of the characters in `text`.
    pub fn from_text(text: &str) -> Self {
        let chars: BTreeSet<char> = text.chars().collect();
        Self { chars: chars.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> Option<u32> {
        self.chars.binary_search(&c).ok().map(|i| i as u32)
    }

    pub fn char(&self, id: u32) -> Option<char> {
        self.chars.get(id as usize).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.chars()
            .map(|c| self.id(c).ok_or_else(|| Error::InvalidInput(format!("character {c:?} is not in the vocabulary"))))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().filter_map(|&i| self.char(i)).collect()
    }

    /// Printable label for a token, used in slot logs.
    pub fn label(&self, id: u32) -> String {
        match self.char(id) {
            Some(' ') => "<sp>".into(),
            Some('\n') => "<nl>".into(),
            Some(c) => c.to_string(),
            None => format!("<{id}>"),
        }
    }
}

/// Occurrences of each token id in a training stream.
pub fn frequency_table(tokens: &[u32], vocab_size: usize) -> Vec<u64> {
    let mut counts = vec![0u64; vocab_size];
    for &t in tokens {
        if let Some(c) = counts.get_mut(t as usize) {
            *c += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LexiconSpec {
    pub alphabet: String,
    pub min_words: usize,
    pub max_words: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    /// When non-zero, each corpus document is a passage of between
    /// `min_passage` and `max_passage` characters (log-uniform) repeated to
    /// length.
    pub min_passage: usize,
    pub max_passage: usize,
}

impl Default for LexiconSpec {
    fn default() -> Self {
        Self {
            alphabet: "abcdefghijklmnopqrstuvwxyz".into(),
            min_words: 6,
            max_words: 24,
            min_word_len: 2,
            max_word_len: 6,
            min_passage: 0,
            max_passage: 0,
        }
    }
}

impl LexiconSpec {
    fn validate(&self) -> Result<()> {
        if self.alphabet.is_empty()
            || !self.alphabet.is_ascii()
            || self.alphabet.contains(['\n', ' '])
            || self.min_words == 0
            || self.min_passage > self.max_passage
            || (self.max_passage > 0 && self.min_passage == 0)
            || self.min_words > self.max_words
            || self.min_word_len == 0
            || self.min_word_len > self.max_word_len
        {
            return Err(Error::InvalidConfig(format!("bad lexicon spec {self:?}")));
        }
        Ok(())
    }

    fn lexicon(&self, rng: &mut ChaCha8Rng, words: usize) -> Vec<String> {
        let alphabet: Vec<char> = self.alphabet.chars().collect();
        (0..words)
            .map(|_| {
                let len = rng.random_range(self.min_word_len..=self.max_word_len);
                (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
            })
            .collect()
    }

    /// `len` characters of words drawn from one fresh lexicon.
    pub fn document(&self, rng: &mut ChaCha8Rng, len: usize) -> Result<String> {
        self.validate()?;
        let words = rng.random_range(self.min_words..=self.max_words);
        if self.max_passage == 0 {
            return self.document_with_words(rng, len, words);
        }
        // log-uniform, so short passages are as common as long ones per octave
        let u: f64 = rng.random();
        let span = (self.max_passage as f64 / self.min_passage as f64).ln();
        let passage_len =
            ((self.min_passage as f64 * (u * span).exp()).round() as usize).clamp(self.min_passage, self.max_passage);
        let passage = self.document_with_words(rng, passage_len, words)?;
        Ok(passage.repeat(len.div_ceil(passage_len)).chars().take(len).collect())
    }

    pub fn document_with_words(&self, rng: &mut ChaCha8Rng, len: usize, words: usize) -> Result<String> {
        self.validate()?;
        let lexicon = self.lexicon(rng, words.max(1));
        let mut text = String::with_capacity(len + self.max_word_len + 1);
        while text.chars().count() < len {
            text.push_str(lexicon.choose(rng).unwrap());
            text.push(' ');
        }
        Ok(text.chars().take(len).collect())
    }

    /// Newline-separated documents totalling `total_chars` characters.
    pub fn corpus(&self, seed: u64, total_chars: usize, doc_len: usize) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = String::with_capacity(total_chars);
        while out.len() < total_chars {
            let n = doc_len.min(total_chars - out.len()).max(1);
            out.push_str(&self.document(&mut rng, n)?);
            out.push('\n');
        }
        out.truncate(total_chars);
        Ok(out)
    }

    /// One passage of `passage_len` characters repeated `repeats` times.
    pub fn repetition_document(&self, seed: u64, passage_len: usize, repeats: usize, words: usize) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let passage = self.document_with_words(&mut rng, passage_len, words)?;
        Ok(passage.repeat(repeats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_round_trip() {
        let v = Vocab::from_text("hello world\n");
        assert_eq!(v.len(), 9);
        let ids = v.encode("low\n").unwrap();
        assert_eq!(v.decode(&ids), "low\n");
        assert!(v.encode("xyz").is_err());
        assert_eq!(v.label(v.id(' ').unwrap()), "<sp>");
    }

    #[test]
    fn frequencies() {
        assert_eq!(frequency_table(&[0, 1, 1, 3], 4), vec![1, 2, 0, 1]);
    }

    #[test]
    fn corpus_is_deterministic_and_sized() {
        let spec = LexiconSpec::default();
        let a = spec.corpus(3, 5_000, 400).unwrap();
        assert_eq!(a.len(), 5_000);
        assert_eq!(a, spec.corpus(3, 5_000, 400).unwrap());
        assert_ne!(a, spec.corpus(4, 5_000, 400).unwrap());
        assert!(a.contains('\n'));
    }

    #[test]
    fn passages_repeat_within_documents() {
        let spec = LexiconSpec { min_passage: 10, max_passage: 10, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = spec.document(&mut rng, 35).unwrap();
        assert_eq!(d.len(), 35);
        assert_eq!(&d[..10], &d[10..20]);
        assert_eq!(&d[..5], &d[30..]);
        assert!(LexiconSpec { min_passage: 10, max_passage: 5, ..Default::default() }.corpus(0, 10, 5).is_err());
        assert!(LexiconSpec { alphabet: "aé".into(), ..Default::default() }.corpus(0, 10, 5).is_err());
    }

    #[test]
    fn repetition_document_repeats() {
        let spec = LexiconSpec::default();
        let d = spec.repetition_document(1, 256, 20, 24).unwrap();
        assert_eq!(d.chars().count(), 256 * 20);
        assert_eq!(&d[..256], &d[256..512]);
    }
}
