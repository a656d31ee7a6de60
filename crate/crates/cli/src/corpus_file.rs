//! On-disk corpus format shared by all subcommands.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use exgen_core::corpus::{Grammar, LearningHistory, Vocabulary};
use exgen_core::corpus::synth::SyntheticStudentModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusFile {
    pub vocab: Vocabulary,
    pub histories: Vec<LearningHistory>,
    /// Present only for synthetic corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub students: Option<Vec<SyntheticStudentModel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grammar: Option<Grammar>,
}

impl CorpusFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading corpus {}", path.display()))?;
        let mut corpus: CorpusFile =
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
        corpus.vocab.reindex();
        Ok(corpus)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?)
            .with_context(|| format!("writing corpus {}", path.display()))?;
        Ok(())
    }

    pub fn history(&self, student_id: &str) -> Result<&LearningHistory> {
        self.histories
            .iter()
            .find(|h| h.student_id == student_id)
            .with_context(|| format!("student '{student_id}' not in corpus"))
    }
}
