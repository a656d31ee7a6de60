//! Template grammar used to synthesize exercises and to check grammaticality
//! of generated output.
//!
//! JSON format:
//! ```json
//! {
//!   "classes": { "noun": ["dog", "cat"], "verb": ["runs"] },
//!   "templates": [["the", "noun", "verb"], ["noun", "verb"]]
//! }
//! ```
//! A template entry naming a class is a class slot; anything else is a
//! literal token.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{Vocabulary, WordId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grammar {
    pub classes: IndexMap<String, Vec<String>>,
    pub templates: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub enum Slot<'a> {
    Literal(&'a str),
    Class(&'a str),
}

impl Grammar {
    pub fn from_json(json: &str) -> Result<Self> {
        let g: Grammar = serde_json::from_str(json)?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::Config("grammar has no templates".into()));
        }
        for class in self.classes.values() {
            if class.is_empty() {
                return Err(Error::Config("empty word class".into()));
            }
        }
        Ok(())
    }

    pub fn slots<'a>(&'a self, template: &'a [String]) -> Vec<Slot<'a>> {
        template
            .iter()
            .map(|entry| {
                if self.classes.contains_key(entry) {
                    Slot::Class(entry)
                } else {
                    Slot::Literal(entry)
                }
            })
            .collect()
    }

    /// Every surface form the grammar can produce, in deterministic order.
    pub fn surface_words(&self) -> Vec<String> {
        let mut seen = indexmap::IndexSet::new();
        for class in self.classes.values() {
            for w in class {
                seen.insert(w.clone());
            }
        }
        for template in &self.templates {
            for slot in self.slots(template) {
                if let Slot::Literal(w) = slot {
                    seen.insert(w.to_string());
                }
            }
        }
        seen.into_iter().collect()
    }

    pub fn build_vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_words(self.surface_words())
    }

    /// Sample a sentence from a random template.
    pub fn sample(&self, vocab: &Vocabulary, rng: &mut impl Rng) -> Vec<WordId> {
        let template = self.templates.choose(rng).unwrap();
        self.fill(template, vocab, rng)
    }

    pub fn fill(&self, template: &[String], vocab: &Vocabulary, rng: &mut impl Rng) -> Vec<WordId> {
        self.slots(template)
            .iter()
            .map(|slot| {
                let surface = match slot {
                    Slot::Literal(w) => w,
                    Slot::Class(c) => self.classes[*c].choose(rng).unwrap().as_str(),
                };
                vocab.id(surface).expect("grammar word not in vocabulary")
            })
            .collect()
    }

    /// Whether a token sequence parses under some template.
    pub fn accepts(&self, tokens: &[WordId], vocab: &Vocabulary) -> bool {
        let surfaces: Vec<&str> = match tokens.iter().map(|&t| vocab.word(t)).collect() {
            Some(s) => s,
            None => return false,
        };
        self.templates.iter().any(|template| {
            template.len() == surfaces.len()
                && self
                    .slots(template)
                    .iter()
                    .zip(&surfaces)
                    .all(|(slot, &tok)| match slot {
                        Slot::Literal(w) => *w == tok,
                        Slot::Class(c) => self.classes[*c].iter().any(|w| w == tok),
                    })
        })
    }

    /// A deterministic grammar with enough lexical variety for desk-scale
    /// experiments. Produces `3 * class_size + fixed function words` surface
    /// forms across 24 templates.
    pub fn synthetic(class_size: usize) -> Grammar {
        let nouns: Vec<String> = (0..class_size).map(|k| format!("noun{k:02}")).collect();
        let verbs: Vec<String> = (0..class_size).map(|k| format!("verb{k:02}")).collect();
        let adjs: Vec<String> = (0..class_size).map(|k| format!("adj{k:02}")).collect();
        let mut classes = IndexMap::new();
        classes.insert("noun".to_string(), nouns);
        classes.insert("verb".to_string(), verbs);
        classes.insert("adj".to_string(), adjs);
        let t = |words: &[&str]| -> Vec<String> { words.iter().map(|w| w.to_string()).collect() };
        let templates = vec![
            t(&["the", "noun", "verb"]),
            t(&["a", "noun", "verb"]),
            t(&["the", "adj", "noun", "verb"]),
            t(&["a", "adj", "noun", "verb"]),
            t(&["the", "noun", "verb", "the", "noun"]),
            t(&["a", "noun", "verb", "a", "noun"]),
            t(&["the", "adj", "noun", "verb", "the", "noun"]),
            t(&["the", "noun", "verb", "the", "adj", "noun"]),
            t(&["the", "noun", "is", "adj"]),
            t(&["a", "noun", "is", "adj"]),
            t(&["the", "noun", "is", "not", "adj"]),
            t(&["the", "adj", "noun", "is", "adj"]),
            t(&["i", "verb", "the", "noun"]),
            t(&["you", "verb", "the", "adj", "noun"]),
            t(&["we", "verb", "a", "noun"]),
            t(&["they", "verb", "the", "noun", "and", "the", "noun"]),
            t(&["i", "verb", "and", "you", "verb"]),
            t(&["the", "noun", "and", "the", "noun", "verb"]),
            t(&["where", "is", "the", "noun"]),
            t(&["where", "is", "the", "adj", "noun"]),
            t(&["the", "noun", "verb", "here"]),
            t(&["the", "noun", "verb", "there"]),
            t(&["my", "noun", "is", "adj"]),
            t(&["your", "adj", "noun", "verb"]),
        ];
        Grammar { classes, templates }
    }
}
