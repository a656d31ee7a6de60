use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{Vocabulary, WordId};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_EXERCISE_LEN: usize = 24;

/// A translation-exercise sentence as word ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Exercise {
    pub tokens: Vec<WordId>,
}

impl Exercise {
    pub fn new(tokens: Vec<WordId>, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("empty exercise".into()));
        }
        if tokens.len() > max_len {
            return Err(Error::Data(format!(
                "exercise length {} exceeds max {max_len}",
                tokens.len()
            )));
        }
        for &t in &tokens {
            vocab.check_token(t)?;
        }
        Ok(Exercise { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One practiced exercise with per-token correctness labels (1 = correct).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub exercise: Exercise,
    pub labels: Vec<u8>,
    pub seq_index: usize,
}

impl Interaction {
    pub fn new(exercise: Exercise, labels: Vec<u8>, seq_index: usize) -> Result<Self> {
        if labels.len() != exercise.len() {
            return Err(Error::Data(format!(
                "label count {} != token count {}",
                labels.len(),
                exercise.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Data("label outside {0,1}".into()));
        }
        Ok(Interaction {
            exercise,
            labels,
            seq_index,
        })
    }

    /// Ground-truth difficulty: number of incorrect tokens.
    pub fn error_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 0).count()
    }
}

/// A student's chronologically ordered interactions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningHistory {
    pub student_id: String,
    pub interactions: Vec<Interaction>,
}

impl LearningHistory {
    pub fn new(student_id: String, interactions: Vec<Interaction>) -> Result<Self> {
        for (k, it) in interactions.iter().enumerate() {
            if it.seq_index != k + 1 {
                return Err(Error::Data(format!(
                    "seq_index must increase from 1; got {} at position {k}",
                    it.seq_index
                )));
            }
        }
        Ok(LearningHistory {
            student_id,
            interactions,
        })
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// Contiguous chronological (train, dev, test) split.
pub fn split_history(
    h: &LearningHistory,
    ratios: (f64, f64, f64),
) -> Result<(LearningHistory, LearningHistory, LearningHistory)> {
    let (tr, dv, _te) = ratios;
    if ((tr + dv + _te) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios must sum to 1, got {ratios:?}")));
    }
    let n = h.len();
    if n < 3 {
        return Err(Error::Split(format!(
            "student {} has {n} interactions (< 3)",
            h.student_id
        )));
    }
    let n_train = (n as f64 * tr).floor() as usize;
    let n_dev = (n as f64 * dv).floor() as usize;
    let reseq = |slice: &[Interaction]| -> Vec<Interaction> {
        slice
            .iter()
            .cloned()
            .enumerate()
            .map(|(k, mut it)| {
                it.seq_index = k + 1;
                it
            })
            .collect()
    };
    let mk = |slice: &[Interaction]| LearningHistory {
        student_id: h.student_id.clone(),
        interactions: reseq(slice),
    };
    Ok((
        mk(&h.interactions[..n_train]),
        mk(&h.interactions[n_train..n_train + n_dev]),
        mk(&h.interactions[n_train + n_dev..]),
    ))
}
