//! ExpectiMax curriculum recommendation.
//!
//! Scores a candidate exercise by the expected gain in mean mastery after
//! the learner attempts it, with response outcomes drawn from the tracer's
//! own predictions:
//!
//!   F(e) = E_{r ~ Bernoulli(s[e])} [ mean(s-after) ] - mean(s-before)
//!
//! The expectation is exact (full outcome enumeration) for short exercises
//! and Monte Carlo otherwise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::types::{Exercise, Interaction};
use crate::corpus::vocab::{WordId, N_RESERVED};
use crate::decoder::{constrained_beam_search_nbest, DecodeConfig};
use crate::error::{Error, Result};
use crate::generator::{ControlSpec, GenModel};
use crate::nn::ParameterStore;
use crate::tracer::{DktModel, TracerState};

/// Exact enumeration is capped at this many tokens (2^n outcome vectors).
pub const MAX_EXACT_LEN: usize = 12;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum ExpectationMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

fn mean_word_mastery(mastery: &[f64]) -> f64 {
    let n = mastery.len() - N_RESERVED;
    mastery[N_RESERVED..].iter().sum::<f64>() / n as f64
}

/// Mean mastery after attempting `exercise`, averaged over response
/// outcomes.
pub fn expected_mean_mastery(
    tracer: &DktModel,
    store: &ParameterStore,
    state: &TracerState,
    exercise: &Exercise,
    mode: ExpectationMode,
) -> Result<f64> {
    let probs: Vec<f64> = {
        let ks = tracer.read_state(store, state);
        exercise.tokens.iter().map(|&w| ks.mastery[w]).collect()
    };
    let n = exercise.tokens.len();
    let simulate = |labels: &[u8]| -> Result<f64> {
        let mut st = state.clone();
        let it = Interaction {
            exercise: exercise.clone(),
            labels: labels.to_vec(),
            seq_index: state.n_interactions + 1,
        };
        tracer.advance(store, &mut st, &it)?;
        Ok(mean_word_mastery(&tracer.read_state(store, &st).mastery))
    };
    match mode {
        ExpectationMode::Exact => {
            if n > MAX_EXACT_LEN {
                return Err(Error::Mode(format!(
                    "exact expectation over {n} tokens exceeds the {MAX_EXACT_LEN}-token cap; use Monte Carlo"
                )));
            }
            let mut total = 0.0;
            for bits in 0..(1u64 << n) {
                let labels: Vec<u8> = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
                let mut weight = 1.0;
                for (i, &l) in labels.iter().enumerate() {
                    weight *= if l == 1 { probs[i] } else { 1.0 - probs[i] };
                }
                if weight == 0.0 {
                    continue;
                }
                total += weight * simulate(&labels)?;
            }
            Ok(total)
        }
        ExpectationMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::Mode("Monte Carlo needs at least one sample".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0.0;
            for _ in 0..samples {
                let labels: Vec<u8> = probs
                    .iter()
                    .map(|&p| u8::from(rng.gen_bool(p.clamp(0.0, 1.0))))
                    .collect();
                total += simulate(&labels)?;
            }
            Ok(total / samples as f64)
        }
    }
}

/// Expected gain in mean mastery from attempting `exercise`.
pub fn expectimax_score(
    tracer: &DktModel,
    store: &ParameterStore,
    state: &TracerState,
    exercise: &Exercise,
    mode: ExpectationMode,
) -> Result<f64> {
    let before = mean_word_mastery(&tracer.read_state(store, state).mastery);
    Ok(expected_mean_mastery(tracer, store, state, exercise, mode)? - before)
}

/// Index of the pool exercise with the highest expected gain; ties keep the
/// earliest index.
pub fn expectimax_select(
    tracer: &DktModel,
    store: &ParameterStore,
    state: &TracerState,
    pool: &[Exercise],
    mode: ExpectationMode,
) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::Selection("empty exercise pool".into()));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, e) in pool.iter().enumerate() {
        let score = expectimax_score(tracer, store, state, e, mode)?;
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    Ok(best)
}

/// Difficulty requested from the generator by the generative recommender.
pub const GEN_STEP_DIFFICULTY: f64 = 1.0;

/// Generative ExpectiMax: pick the single word whose practice has the
/// highest expected gain, decode exercises targeting it, and return the
/// beam candidate with the highest expected gain (the ranking function
/// folded into decoding). Falls back to the bare one-word exercise when no
/// finished candidate keeps the word.
pub fn expectimax_gen_step(
    tracer: &DktModel,
    gen: &GenModel,
    store: &ParameterStore,
    state: &TracerState,
    decode_cfg: &DecodeConfig,
    mode: ExpectationMode,
) -> Result<Exercise> {
    let words: Vec<WordId> = (N_RESERVED..tracer.vocab_size).collect();
    let pool: Vec<Exercise> = words.iter().map(|&w| Exercise { tokens: vec![w] }).collect();
    // single-word exercises have two outcomes: exact is cheaper than
    // sampling and noiseless
    let best = expectimax_select(tracer, store, state, &pool, ExpectationMode::Exact)?;
    let word = words[best];
    let control = ControlSpec {
        mastery: tracer.read_state(store, state).mastery,
        difficulty: GEN_STEP_DIFFICULTY,
        targets: vec![word],
    };
    let candidates: Vec<Exercise> = constrained_beam_search_nbest(gen, store, &control, decode_cfg)?
        .into_iter()
        .filter(|c| c.finished && c.tokens.contains(&word))
        .map(|c| Exercise { tokens: c.tokens })
        .collect();
    if candidates.is_empty() {
        return Ok(Exercise {
            tokens: vec![word],
        });
    }
    let best = expectimax_select(tracer, store, state, &candidates, mode)?;
    Ok(candidates[best].clone())
}
