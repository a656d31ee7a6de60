//! Joint tracer/generator objective.
//!
//! Total loss = L_T + gamma1 * L_G + gamma2 * L_inc, where L_T is the
//! knowledge-tracing loss, L_G the teacher-forced generation loss (state
//! input detached), and L_inc penalizes the gap between the requested
//! difficulty and the expected difficulty of the generator's tempered output
//! distribution:
//!
//!   L_inc = | d - sum_t sum_w p_t(w) * (1 - s_w) |
//!
//! with p_t a temperature-tau softmax over step logits and reserved tokens
//! (including the stop symbol) contributing zero difficulty.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::types::LearningHistory;
use crate::corpus::vocab::{Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::generator::{make_training_example, GenModel};
use crate::nn::{softmax_with_temperature, Adam, ParameterStore};
use crate::tape::{NodeId, Tape};
use crate::tracer::{DktModel, KnowledgeState};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    /// Weight of the generation loss.
    pub gamma1: f64,
    /// Weight of the inconsistency loss.
    pub gamma2: f64,
    /// Softmax temperature for the expected-difficulty relaxation.
    pub tau: f64,
    /// Whether the inconsistency term backpropagates into the tracer.
    pub inc_grad_to_tracer: bool,
    pub pretrain_tracer_epochs: usize,
    pub pretrain_gen_epochs: usize,
    pub joint_epochs: usize,
    pub learning_rate: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            gamma1: 1.0,
            gamma2: 0.8,
            tau: 2.0,
            inc_grad_to_tracer: true,
            pretrain_tracer_epochs: 10,
            pretrain_gen_epochs: 10,
            joint_epochs: 10,
            learning_rate: 1e-3,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.gamma1 < 0.0 || self.gamma2 < 0.0 {
            return Err(Error::Config("gamma weights must be >= 0".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Difficulty of a realized token sequence: sum of (1 - s_w) over
/// non-reserved tokens.
pub fn sequence_difficulty(tokens: &[WordId], mastery: &[f64]) -> f64 {
    tokens
        .iter()
        .filter(|&&w| !Vocabulary::is_reserved(w))
        .map(|&w| 1.0 - mastery[w])
        .sum()
}

/// Expected difficulty of per-step token distributions.
pub fn expected_difficulty(step_probs: &[Vec<f64>], mastery: &[f64]) -> f64 {
    step_probs
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .filter(|(w, _)| !Vocabulary::is_reserved(*w))
                .map(|(w, &pw)| pw * (1.0 - mastery[w]))
                .sum::<f64>()
        })
        .sum()
}

/// Plain-value inconsistency: |d - expected difficulty| with tempered
/// softmax over raw step logits.
pub fn inconsistency(step_logits: &[Vec<f64>], mastery: &[f64], d: f64, tau: f64) -> Result<f64> {
    let mut probs = Vec::with_capacity(step_logits.len());
    for logits in step_logits {
        probs.push(softmax_with_temperature(logits, tau)?);
    }
    Ok((d - expected_difficulty(&probs, mastery)).abs())
}

/// Tape-side inconsistency over generator step logits. `state` holds the
/// mastery vector; pass a constant node to cut the gradient to the tracer.
pub fn inconsistency_tape(
    tape: &mut Tape,
    step_logits: &[NodeId],
    state: NodeId,
    d: f64,
    tau: f64,
) -> NodeId {
    let vocab = tape.value(state).len();
    let ones = tape.constv(vec![1.0; vocab]);
    let unmastered = tape.sub(ones, state);
    let keep: Vec<f64> = (0..vocab)
        .map(|w| if Vocabulary::is_reserved(w) { 0.0 } else { 1.0 })
        .collect();
    let keep = tape.constv(keep);
    let u = tape.mul(unmastered, keep);
    let mut terms = Vec::with_capacity(step_logits.len());
    for &logits in step_logits {
        let p = tape.softmax_temp(logits, tau);
        terms.push(tape.dot(p, u));
    }
    let d_node = tape.const_scalar(d);
    let predicted = if terms.is_empty() {
        tape.const_scalar(0.0)
    } else {
        tape.add_n(&terms)
    };
    let gap = tape.sub(d_node, predicted);
    tape.abs(gap)
}

/// Per-term values of one joint step.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct JointBreakdown {
    pub l_t: f64,
    pub l_g: f64,
    pub l_inc: f64,
    pub total: f64,
}

/// Build the joint loss for one student's history on an existing tape.
///
/// Each interaction contributes a generation example conditioned on the
/// traced state before it. The generator's state input is detached; the
/// inconsistency term sees the differentiable state when
/// `inc_grad_to_tracer` is set.
pub fn joint_loss_tape(
    tracer: &DktModel,
    gen: &GenModel,
    tape: &mut Tape,
    store: &ParameterStore,
    history: &LearningHistory,
    cfg: &JointConfig,
    rng: &mut impl rand::Rng,
) -> Result<(NodeId, JointBreakdown)> {
    cfg.validate()?;
    if tracer.vocab_size != gen.vocab_size {
        return Err(Error::Config(format!(
            "tracer vocab {} != generator vocab {}",
            tracer.vocab_size, gen.vocab_size
        )));
    }
    let tnodes = tracer.load(tape, store);
    let gnodes = gen.load(tape, store);
    let (l_t, graph) = tracer.total_loss_tape(tape, &tnodes, history)?;

    let mut gen_terms = Vec::new();
    let mut inc_terms = Vec::new();
    // boundary i is the state after i interactions; cap may truncate it
    let usable = graph.boundary_logits.len().saturating_sub(1).min(history.len());
    for i in 0..usable {
        let it = &history.interactions[i];
        let state_node = tape.sigmoid(graph.boundary_logits[i]);
        let mastery = tape.value(state_node).data.clone();
        let ks = KnowledgeState {
            mastery: mastery.clone(),
            as_of_interaction: i,
        };
        let ex = make_training_example(&ks, it, gen.cfg.sample_ratio, rng);
        let detached = tape.constv(mastery);
        let prefix = gen.build_prefix(tape, &gnodes, detached, ex.control.difficulty, &ex.control.targets);
        let (nll, step_logits) = gen.nll_tape(tape, &gnodes, &prefix, &ex.target)?;
        gen_terms.push(nll);
        let inc_state = if cfg.inc_grad_to_tracer { state_node } else { detached };
        inc_terms.push(inconsistency_tape(
            tape,
            &step_logits,
            inc_state,
            ex.control.difficulty,
            cfg.tau,
        ));
    }
    let l_g = tape.add_n(&gen_terms);
    let l_inc = tape.add_n(&inc_terms);
    let g1 = tape.scale(l_g, cfg.gamma1);
    let g2 = tape.scale(l_inc, cfg.gamma2);
    let total = tape.add_n(&[l_t, g1, g2]);
    let breakdown = JointBreakdown {
        l_t: tape.value(l_t).item(),
        l_g: tape.value(l_g).item(),
        l_inc: tape.value(l_inc).item(),
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

/// Pretrain both models, then optimize the joint objective with per-student
/// Adam steps. Returns the mean per-student breakdown for each joint epoch.
pub fn train_joint(
    tracer: &DktModel,
    gen: &GenModel,
    store: &mut ParameterStore,
    histories: &[LearningHistory],
    cfg: &JointConfig,
    seed: u64,
) -> Result<Vec<JointBreakdown>> {
    cfg.validate()?;
    if histories.is_empty() {
        return Err(Error::Data("no training histories".into()));
    }
    let mut opt = Adam::new(cfg.learning_rate);
    crate::tracer::train_tracer(tracer, store, &mut opt, histories, cfg.pretrain_tracer_epochs, seed)?;
    if cfg.pretrain_gen_epochs > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
        let mut examples = Vec::new();
        for h in histories {
            examples.extend(crate::generator::make_training_examples(
                tracer,
                store,
                h,
                gen.cfg.sample_ratio,
                &mut rng,
            )?);
        }
        crate::generator::train_generator(
            gen,
            store,
            &mut opt,
            &examples,
            cfg.pretrain_gen_epochs,
            seed.wrapping_add(1),
        )?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..histories.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.joint_epochs);
    for _ in 0..cfg.joint_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut mean = JointBreakdown::default();
        for &i in &order {
            store.zero_grads();
            let mut tape = Tape::new();
            let (loss, b) =
                joint_loss_tape(tracer, gen, &mut tape, store, &histories[i], cfg, &mut rng)?;
            tape.backward(loss, store)?;
            opt.step(store)?;
            mean.l_t += b.l_t;
            mean.l_g += b.l_g;
            mean.l_inc += b.l_inc;
            mean.total += b.total;
        }
        let n = histories.len() as f64;
        mean.l_t /= n;
        mean.l_g /= n;
        mean.l_inc /= n;
        mean.total /= n;
        epochs.push(mean);
    }
    Ok(epochs)
}
