//! Synthetic student corpus with a ground-truth mastery oracle.
//!
//! Each student starts with per-word mastery
//! sigmoid(ability - word bias + idiosyncrasy), answers each token
//! correctly with probability (1-slip)*m + guess*(1-m), and gains
//! `learning_rate` mastery on every practiced word.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::grammar::Grammar;
use crate::corpus::types::{Exercise, Interaction, LearningHistory};
use crate::corpus::vocab::{Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::tape::sigmoid;

const MASTERY_FLOOR: f64 = 1e-3;
const MASTERY_CEIL: f64 = 1.0 - 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticStudentModel {
    pub student_id: String,
    pub true_mastery: Vec<f64>,
    pub learning_rate: f64,
    pub slip: f64,
    pub guess: f64,
}

impl SyntheticStudentModel {
    pub fn correct_probability(&self, word: WordId) -> f64 {
        let m = self.true_mastery[word];
        (1.0 - self.slip) * m + self.guess * (1.0 - m)
    }

    pub fn practice(&mut self, word: WordId) {
        let m = &mut self.true_mastery[word];
        *m = (*m + self.learning_rate).clamp(MASTERY_FLOOR, MASTERY_CEIL);
    }

    pub fn mean_mastery(&self, vocab: &Vocabulary) -> f64 {
        let ids: Vec<WordId> = vocab.word_ids().collect();
        ids.iter().map(|&w| self.true_mastery[w]).sum::<f64>() / ids.len() as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_students: usize,
    pub n_interactions: usize,
    pub seed: u64,
    /// Ability spread; initial mastery =
    /// sigmoid(ability - word_bias + idiosyncrasy).
    pub ability_range: (f64, f64),
    pub word_bias_range: (f64, f64),
    /// Spread of the per-student-per-word logit offset: individual strong
    /// and weak words beyond the global difficulty ordering.
    pub idiosyncrasy_range: (f64, f64),
    pub learning_rate_range: (f64, f64),
    pub slip_range: (f64, f64),
    pub guess_range: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_students: 100,
            n_interactions: 30,
            seed: 7,
            ability_range: (-1.5, 1.5),
            word_bias_range: (-1.0, 1.0),
            idiosyncrasy_range: (-0.8, 0.8),
            learning_rate_range: (0.02, 0.08),
            slip_range: (0.02, 0.12),
            guess_range: (0.05, 0.20),
        }
    }
}

fn sample_range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

pub fn generate_synthetic_corpus(
    grammar: &Grammar,
    cfg: &SynthConfig,
) -> Result<(Vocabulary, Vec<LearningHistory>, Vec<SyntheticStudentModel>)> {
    grammar.validate()?;
    let n_surface = grammar.surface_words().len();
    if grammar.templates.len() < 20 {
        return Err(Error::Config(format!(
            "grammar needs >= 20 templates, has {}",
            grammar.templates.len()
        )));
    }
    if !(100..=2000).contains(&n_surface) {
        return Err(Error::Config(format!(
            "grammar vocabulary must be 100..=2000 words, has {n_surface}"
        )));
    }
    let vocab = grammar.build_vocabulary()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let word_bias: Vec<f64> = (0..vocab.len())
        .map(|_| sample_range(&mut rng, cfg.word_bias_range))
        .collect();

    let mut histories = Vec::with_capacity(cfg.n_students);
    let mut students = Vec::with_capacity(cfg.n_students);
    for s in 0..cfg.n_students {
        let ability = sample_range(&mut rng, cfg.ability_range);
        let true_mastery: Vec<f64> = (0..vocab.len())
            .map(|w| {
                let idio = sample_range(&mut rng, cfg.idiosyncrasy_range);
                sigmoid(ability - word_bias[w] + idio)
            })
            .collect();
        let mut student = SyntheticStudentModel {
            student_id: format!("synth-{s:04}"),
            true_mastery,
            learning_rate: sample_range(&mut rng, cfg.learning_rate_range),
            slip: sample_range(&mut rng, cfg.slip_range),
            guess: sample_range(&mut rng, cfg.guess_range),
        };
        let mut interactions = Vec::with_capacity(cfg.n_interactions);
        for k in 0..cfg.n_interactions {
            let tokens = grammar.sample(&vocab, &mut rng);
            let labels: Vec<u8> = tokens
                .iter()
                .map(|&w| {
                    let p = student.correct_probability(w);
                    u8::from(rng.gen_bool(p.clamp(0.0, 1.0)))
                })
                .collect();
            for &w in &tokens {
                student.practice(w);
            }
            interactions.push(Interaction::new(Exercise { tokens }, labels, k + 1)?);
        }
        histories.push(LearningHistory::new(student.student_id.clone(), interactions)?);
        students.push(student);
    }
    Ok((vocab, histories, students))
}
