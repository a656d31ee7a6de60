//! Lexically constrained beam search with lookahead rescoring.
//!
//! Each step expands every live hypothesis over the full vocabulary, prunes
//! to the union of the per-criterion top-k sets (target-word coverage,
//! difficulty fit, log-probability), rescores the survivors with a greedy
//! soft-token lookahead, and keeps the best `beam_size`. Hypotheses that
//! emit the stop symbol are frozen and re-enter the ranking with their
//! complete-sequence objective.

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{WordId, BOS, EOS};
use crate::error::Result;
use crate::generator::{ControlSpec, GenModel, GenState};
use crate::joint::sequence_difficulty;
use crate::nn::{log_softmax, softmax_with_temperature};
use crate::nn::ParameterStore;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Weight of the target-word coverage score.
    pub alpha_c: f64,
    /// Weight of the difficulty-fit score.
    pub alpha_d: f64,
    /// Number of greedy soft steps scored past each candidate.
    pub lookahead_depth: usize,
    pub max_steps: usize,
    pub use_lookahead: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 4,
            alpha_c: 0.1,
            alpha_d: 0.5,
            lookahead_depth: 2,
            max_steps: 24,
            use_lookahead: true,
        }
    }
}

/// How many target words the sequence covers (each counted once).
pub fn word_constraint_score(tokens: &[WordId], targets: &[WordId]) -> f64 {
    targets
        .iter()
        .filter(|c| tokens.contains(c))
        .count() as f64
}

/// Negative absolute gap between the requested difficulty and the realized
/// sequence difficulty.
pub fn difficulty_score(tokens: &[WordId], difficulty: f64, mastery: &[f64]) -> f64 {
    -(difficulty - sequence_difficulty(tokens, mastery)).abs()
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub tokens: Vec<WordId>,
    pub logprob: f64,
    /// Complete-sequence objective: logP + alpha_c * F_c + alpha_d * F_d.
    pub score: f64,
    /// False when the length cap was hit before any hypothesis emitted the
    /// stop symbol.
    pub finished: bool,
}

#[derive(Clone)]
struct Beam {
    tokens: Vec<WordId>,
    logprob: f64,
    finished: bool,
    /// State after feeding the last token (or `BOS`); absent on frozen beams.
    state: Option<GenState>,
    /// Log-softmax over the next token; absent on frozen beams.
    next_logp: Option<Vec<f64>>,
}

struct Candidate {
    tokens: Vec<WordId>,
    logprob: f64,
    finished: bool,
    /// Index of the parent beam; used to derive the state lazily.
    parent: usize,
    /// Token fed to reach this candidate (None for frozen pass-throughs).
    step_token: Option<WordId>,
    score: f64,
    state: Option<GenState>,
    next_logp: Option<Vec<f64>>,
}

fn complete_objective(tokens: &[WordId], logprob: f64, control: &ControlSpec, cfg: &DecodeConfig) -> f64 {
    logprob
        + cfg.alpha_c * word_constraint_score(tokens, &control.targets)
        + cfg.alpha_d * difficulty_score(tokens, control.difficulty, &control.mastery)
}

/// Greedy soft lookahead from a candidate's state. Returns the relaxed
/// coverage and difficulty scores for `tokens` extended by up to
/// `depth` expected steps.
fn lookahead_scores(
    gen: &GenModel,
    store: &ParameterStore,
    state: &GenState,
    next_logits_logp: &[f64],
    tokens: &[WordId],
    control: &ControlSpec,
    depth: usize,
) -> Result<(f64, f64)> {
    let mut step_probs: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut state = state.clone();
    let mut logp = next_logits_logp.to_vec();
    for j in 0..depth {
        let probs = softmax_with_temperature(&logp, 1.0)?;
        let next = argmax(&probs);
        step_probs.push(probs);
        if next == EOS || j + 1 == depth {
            break;
        }
        let logits = gen.step(store, &mut state, next)?;
        logp = log_softmax(&logits);
    }
    let f_c: f64 = control
        .targets
        .iter()
        .map(|&c| {
            let seen: f64 = if tokens.contains(&c) { 1.0 } else { 0.0 };
            let soft = step_probs
                .iter()
                .map(|p| p[c])
                .fold(0.0_f64, f64::max);
            seen.max(soft)
        })
        .sum();
    let realized = sequence_difficulty(tokens, &control.mastery);
    let expected: f64 = step_probs
        .iter()
        .map(|p| crate::joint::expected_difficulty(std::slice::from_ref(p), &control.mastery))
        .sum();
    let f_d = -(control.difficulty - realized - expected).abs();
    Ok((f_c, f_d))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Indices of the top `k` candidates under `key` (descending).
fn top_k_indices(n: usize, k: usize, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| key(b).partial_cmp(&key(a)).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Decode one exercise under lexical and difficulty constraints.
pub fn constrained_beam_search(
    gen: &GenModel,
    store: &ParameterStore,
    control: &ControlSpec,
    cfg: &DecodeConfig,
) -> Result<DecodeResult> {
    Ok(constrained_beam_search_nbest(gen, store, control, cfg)?
        .into_iter()
        .next()
        .expect("beam never empty"))
}

/// Like [`constrained_beam_search`] but returns every surviving hypothesis,
/// best first, for callers that rerank with their own criterion.
pub fn constrained_beam_search_nbest(
    gen: &GenModel,
    store: &ParameterStore,
    control: &ControlSpec,
    cfg: &DecodeConfig,
) -> Result<Vec<DecodeResult>> {
    control.validate(gen.vocab_size)?;
    let mut state0 = gen.start(store, control)?;
    let logits0 = gen.step(store, &mut state0, BOS)?;
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: false,
        next_logp: Some(log_softmax(&logits0)),
        state: Some(state0),
    }];

    for _ in 0..cfg.max_steps {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut cands: Vec<Candidate> = Vec::new();
        for (bi, beam) in beams.iter().enumerate() {
            if beam.finished {
                cands.push(Candidate {
                    tokens: beam.tokens.clone(),
                    logprob: beam.logprob,
                    finished: true,
                    parent: bi,
                    step_token: None,
                    score: 0.0,
                    state: None,
                    next_logp: None,
                });
                continue;
            }
            let logp = beam.next_logp.as_ref().unwrap();
            for (w, &lp) in logp.iter().enumerate() {
                if lp < -1e20 {
                    continue; // masked token
                }
                if w == EOS {
                    cands.push(Candidate {
                        tokens: beam.tokens.clone(),
                        logprob: beam.logprob + lp,
                        finished: true,
                        parent: bi,
                        step_token: None,
                        score: 0.0,
                        state: None,
                        next_logp: None,
                    });
                } else {
                    let mut tokens = beam.tokens.clone();
                    tokens.push(w);
                    cands.push(Candidate {
                        tokens,
                        logprob: beam.logprob + lp,
                        finished: false,
                        parent: bi,
                        step_token: Some(w),
                        score: 0.0,
                        state: None,
                        next_logp: None,
                    });
                }
            }
        }

        // prune to the union of per-criterion top-k sets
        let k = cfg.beam_size;
        let n = cands.len();
        let mut keep = vec![false; n];
        for i in top_k_indices(n, k, |i| {
            word_constraint_score(&cands[i].tokens, &control.targets)
        }) {
            keep[i] = true;
        }
        for i in top_k_indices(n, k, |i| {
            difficulty_score(&cands[i].tokens, control.difficulty, &control.mastery)
        }) {
            keep[i] = true;
        }
        for i in top_k_indices(n, k, |i| cands[i].logprob) {
            keep[i] = true;
        }
        let mut kept: Vec<Candidate> = cands
            .into_iter()
            .zip(keep)
            .filter_map(|(c, k)| k.then_some(c))
            .collect();

        // rescore with lookahead (frozen candidates use the complete objective)
        for c in kept.iter_mut() {
            if c.finished {
                c.score = complete_objective(&c.tokens, c.logprob, control, cfg);
                continue;
            }
            let parent_state = beams[c.parent].state.as_ref().unwrap();
            let mut st = parent_state.clone();
            let logits = gen.step(store, &mut st, c.step_token.unwrap())?;
            let logp = log_softmax(&logits);
            if cfg.use_lookahead && cfg.lookahead_depth > 0 {
                let (f_c, f_d) = lookahead_scores(
                    gen,
                    store,
                    &st,
                    &logp,
                    &c.tokens,
                    control,
                    cfg.lookahead_depth,
                )?;
                c.score = c.logprob + cfg.alpha_c * f_c + cfg.alpha_d * f_d;
            } else {
                c.score = complete_objective(&c.tokens, c.logprob, control, cfg);
            }
            c.state = Some(st);
            c.next_logp = Some(logp);
        }

        // deterministic selection: score descending, then the
        // lexicographically smaller token sequence
        kept.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        kept.truncate(cfg.beam_size);
        beams = kept
            .into_iter()
            .map(|c| Beam {
                tokens: c.tokens,
                logprob: c.logprob,
                finished: c.finished,
                state: c.state,
                next_logp: c.next_logp,
            })
            .collect();
    }

    // final ranking by the complete-sequence objective: finished first,
    // then score descending, ties to the lexicographically smaller sequence
    let mut results: Vec<DecodeResult> = beams
        .iter()
        .map(|b| DecodeResult {
            tokens: b.tokens.clone(),
            logprob: b.logprob,
            score: complete_objective(&b.tokens, b.logprob, control, cfg),
            finished: b.finished,
        })
        .collect();
    results.sort_by(|a, b| {
        b.finished
            .cmp(&a.finished)
            .then_with(|| b.score.partial_cmp(&a.score).unwrap())
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(results)
}

/// Brute-force argmax of the complete objective over every word sequence up
/// to `max_len`; tractable only for tiny vocabularies.
pub fn exhaustive_decode(
    gen: &GenModel,
    store: &ParameterStore,
    control: &ControlSpec,
    cfg: &DecodeConfig,
    max_len: usize,
) -> Result<DecodeResult> {
    control.validate(gen.vocab_size)?;
    let words: Vec<WordId> = (crate::corpus::vocab::N_RESERVED..gen.vocab_size).collect();
    let mut best: Option<DecodeResult> = None;
    let mut stack: Vec<Vec<WordId>> = vec![Vec::new()];
    while let Some(tokens) = stack.pop() {
        let logprob = -gen.nll(store, control, &tokens)?;
        let score = complete_objective(&tokens, logprob, control, cfg);
        let cand = DecodeResult {
            tokens: tokens.clone(),
            logprob,
            score,
            finished: true,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                score > b.score || (score == b.score && tokens < b.tokens)
            }
        };
        if better {
            best = Some(cand);
        }
        if tokens.len() < max_len {
            for &w in &words {
                let mut t = tokens.clone();
                t.push(w);
                stack.push(t);
            }
        }
    }
    Ok(best.unwrap())
}
