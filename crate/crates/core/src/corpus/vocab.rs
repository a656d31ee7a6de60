use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type WordId = usize;

pub const PAD: WordId = 0;
pub const BOS: WordId = 1;
pub const EOS: WordId = 2;
pub const UNK: WordId = 3;
pub const N_RESERVED: usize = 4;

pub const RESERVED_SURFACES: [&str; N_RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Dense word <-> id bijection with four reserved ids up front.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, WordId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        let words: Vec<String> = RESERVED_SURFACES.iter().map(|s| s.to_string()).collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary { words, index }
    }

    /// Rebuild the word->id map after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Result<Self> {
        let mut v = Vocabulary::new();
        for w in words {
            v.intern(&w)?;
        }
        Ok(v)
    }

    /// Insert a word if absent, returning its id.
    pub fn intern(&mut self, word: &str) -> Result<WordId> {
        if word.is_empty() {
            return Err(Error::Vocab("empty word".into()));
        }
        if let Some(&id) = self.index.get(word) {
            return Ok(id);
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.words.get(id).map(|s| s.as_str())
    }

    /// Total number of ids, reserved included.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_reserved(id: WordId) -> bool {
        id < N_RESERVED
    }

    /// Ids of non-reserved words.
    pub fn word_ids(&self) -> impl Iterator<Item = WordId> + '_ {
        N_RESERVED..self.len()
    }

    pub fn n_words(&self) -> usize {
        self.len() - N_RESERVED
    }

    pub fn check_token(&self, id: WordId) -> Result<()> {
        if id >= self.len() {
            return Err(Error::Vocab(format!("token id {id} out of range")));
        }
        if Self::is_reserved(id) {
            return Err(Error::Vocab(format!(
                "reserved id {id} inside exercise body"
            )));
        }
        Ok(())
    }

    pub fn text(&self, tokens: &[WordId]) -> String {
        tokens
            .iter()
            .filter_map(|&t| self.word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

/// Lower-case and split punctuation runs into separate tokens.
pub fn tokenize(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in raw.split_whitespace() {
        let lower = chunk.to_lowercase();
        let mut cur = String::new();
        let mut cur_is_word = true;
        for ch in lower.chars() {
            let is_word = ch.is_alphanumeric() || ch == '\'';
            if !cur.is_empty() && is_word != cur_is_word {
                out.push(std::mem::take(&mut cur));
            }
            cur_is_word = is_word;
            cur.push(ch);
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}
