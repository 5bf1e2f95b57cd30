//! Vocabulary and token sequences.
//!
//! All probabilities in the crate are defined over a fixed vocabulary of `K`
//! distinct string tokens produced by a deterministic whitespace tokenizer.
//! Token sequences carry per-position role markers so losses and metrics can
//! select the question or answer region of a question∘answer sample.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Padding token id.
pub const PAD: u32 = 0;
/// End-of-sequence id; greedy decoding stops when it is emitted.
pub const EOS: u32 = 1;
/// Unknown-word id; the tokenizer maps out-of-vocabulary words here.
pub const UNK: u32 = 2;
/// Begin-of-sequence id; prepended internally so the first real token has a
/// conditioning context. It is never produced by the tokenizer.
pub const BOS: u32 = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<eos>", "<unk>", "<bos>"];

/// Fixed token universe with reserved special ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from regular word tokens. Words are deduplicated
    /// and sorted so the id assignment depends only on the word set.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut uniq: Vec<String> = Vec::new();
        let mut seen = HashMap::new();
        for w in words {
            let w = w.as_ref();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad vocabulary word {w:?}")));
            }
            if SPECIALS.contains(&w) {
                continue;
            }
            if seen.insert(w.to_string(), ()).is_none() {
                uniq.push(w.to_string());
            }
        }
        uniq.sort();
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(uniq);
        Ok(Self::from_token_list(tokens))
    }

    /// Rebuilds a vocabulary from a full token list (specials first), as
    /// stored in checkpoints.
    pub fn from_token_list(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    /// Vocabulary size `K`.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("token id {id} out of range")))
    }

    /// Whitespace tokenization; unknown words map to [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| self.id_of(w).unwrap_or(UNK))
            .collect()
    }

    /// Inverse of [`Vocab::encode`] up to whitespace normalization.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let words: Result<Vec<&str>> = ids.iter().map(|&id| self.token_of(id)).collect();
        Ok(words?.join(" "))
    }

    /// Restores the token→id index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }
}

/// Region selector over a [`TokenSeq`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Question,
    Answer,
    All,
}

/// A token sequence with a question/answer boundary: positions before
/// `question_len` are the question (x), the rest are the answer (y), so the
/// whole sequence is the concatenation x∘y.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    ids: Vec<u32>,
    question_len: usize,
}

impl TokenSeq {
    /// Creates a sequence where everything is answer (used for prompts and
    /// free-standing text).
    pub fn new(ids: Vec<u32>, vocab_size: usize) -> Result<Self> {
        Self::with_question_len(ids, 0, vocab_size)
    }

    /// Creates a question∘answer sequence. Question positions always precede
    /// answer positions by construction. An empty sequence is allowed (greedy
    /// decoding may produce one); operations that need tokens reject it at
    /// their own boundary.
    pub fn with_question_len(ids: Vec<u32>, question_len: usize, vocab_size: usize) -> Result<Self> {
        if question_len > ids.len() {
            return Err(Error::invalid(format!(
                "question length {question_len} exceeds sequence length {}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocabulary of size {vocab_size}"
            )));
        }
        Ok(Self { ids, question_len })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn question_len(&self) -> usize {
        self.question_len
    }

    /// Position range selected by `region`.
    pub fn region_range(&self, region: Region) -> std::ops::Range<usize> {
        match region {
            Region::Question => 0..self.question_len,
            Region::Answer => self.question_len..self.ids.len(),
            Region::All => 0..self.ids.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_tokens_through_ids() {
        let v = Vocab::from_words(["paris", "is", "a", "city"]).unwrap();
        assert!(v.size() >= 4);
        for id in 0..v.size() as u32 {
            let tok = v.token_of(id).unwrap().to_string();
            assert_eq!(v.id_of(&tok), Some(id));
        }
    }

    #[test]
    fn special_ids_are_distinct_and_first() {
        let v = Vocab::from_words(["x"]).unwrap();
        let ids = [PAD, EOS, UNK, BOS];
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(v.token_of(PAD).unwrap(), "<pad>");
        assert_eq!(v.token_of(BOS).unwrap(), "<bos>");
    }

    #[test]
    fn encode_maps_unknown_words_to_unk() {
        let v = Vocab::from_words(["known"]).unwrap();
        assert_eq!(v.encode("known unknown"), vec![v.id_of("known").unwrap(), UNK]);
    }

    #[test]
    fn id_assignment_ignores_word_order() {
        let a = Vocab::from_words(["b", "a", "c"]).unwrap();
        let b = Vocab::from_words(["c", "b", "a", "a"]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_out_of_range_ids() {
        assert!(TokenSeq::new(vec![9], 8).is_err());
        assert!(TokenSeq::new(vec![7], 8).is_ok());
    }

    #[test]
    fn region_ranges_partition_the_sequence() {
        let s = TokenSeq::with_question_len(vec![4, 5, 6, 7], 2, 8).unwrap();
        assert_eq!(s.region_range(Region::Question), 0..2);
        assert_eq!(s.region_range(Region::Answer), 2..4);
        assert_eq!(s.region_range(Region::All), 0..4);
    }
}
