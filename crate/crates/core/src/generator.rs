//! Exercise generator: an attention-equipped LSTM decoder conditioned on a
//! control prefix built from the learner's knowledge state, a target
//! difficulty, and a set of target words.
//!
//! The prefix memory is `[f_s(s); f_d(d); Emb(c_1); ..; Emb(c_k)]`; each
//! decode step attends over it with a dot-product query derived from the
//! decoder hidden state.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::types::{Interaction, LearningHistory};
use crate::corpus::vocab::{Vocabulary, WordId, BOS, EOS, N_RESERVED, PAD, UNK};
use crate::error::{Error, Result};
use crate::nn::{log_softmax, Adam, Embedding, Linear, LinearNodes, LstmCell, LstmState, ParameterStore};
use crate::tape::{NodeId, Tape};
use crate::tracer::KnowledgeState;

/// Additive logit mask for tokens the decoder must never emit.
pub const LOGIT_MASK: f64 = -1e30;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub hidden_size: usize,
    pub n_layers: usize,
    pub embed_dim: usize,
    /// When false the state slot of the control prefix is zeroed, yielding a
    /// non-adaptive generator conditioned only on targets and difficulty.
    pub use_state: bool,
    /// Fraction of a sentence's distinct words sampled as target words when
    /// building training examples.
    pub sample_ratio: f64,
    /// Hard cap on decoded sequence length.
    pub max_len: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            hidden_size: 100,
            n_layers: 1,
            embed_dim: 100,
            use_state: true,
            sample_ratio: 0.3,
            max_len: 24,
        }
    }
}

impl GeneratorConfig {
    /// Small settings for fast experiments and tests.
    pub fn desk_scale() -> Self {
        GeneratorConfig {
            hidden_size: 32,
            n_layers: 1,
            embed_dim: 32,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.n_layers == 0 || self.embed_dim == 0 {
            return Err(Error::Config("generator dims must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sample_ratio) {
            return Err(Error::Config(format!(
                "sample_ratio must be in [0,1], got {}",
                self.sample_ratio
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

/// Conditioning inputs for one decode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlSpec {
    /// Per-word mastery probabilities, indexed by word id (reserved slots
    /// included, ignored by the model).
    pub mastery: Vec<f64>,
    pub difficulty: f64,
    pub targets: Vec<WordId>,
}

impl ControlSpec {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.mastery.len() != vocab_size {
            return Err(Error::Shape(format!(
                "mastery length {} != vocab size {vocab_size}",
                self.mastery.len()
            )));
        }
        for &c in &self.targets {
            if c >= vocab_size {
                return Err(Error::Vocab(format!("target id {c} >= vocab {vocab_size}")));
            }
            if Vocabulary::is_reserved(c) {
                return Err(Error::Vocab(format!("target id {c} is reserved")));
            }
        }
        if !self.difficulty.is_finite() || self.difficulty < 0.0 {
            return Err(Error::Config(format!(
                "difficulty must be finite and >= 0, got {}",
                self.difficulty
            )));
        }
        Ok(())
    }
}

/// Round a difficulty label to the nearest quarter.
pub fn round_quarter(d: f64) -> f64 {
    (d * 4.0).round() / 4.0
}

#[derive(Debug, Clone)]
pub struct GenModel {
    pub vocab_size: usize,
    pub cfg: GeneratorConfig,
    word_emb: Embedding,
    f_s: Linear,
    f_d: Linear,
    query: Linear,
    cells: Vec<LstmCell>,
    out: Linear,
    ctx_out: Linear,
}

/// Loaded parameter nodes for one tape.
pub struct GenNodes {
    word_emb: NodeId,
    f_s: LinearNodes,
    f_d: LinearNodes,
    query: LinearNodes,
    cells: Vec<crate::nn::LstmNodes>,
    out: LinearNodes,
    ctx_out: LinearNodes,
}

/// Incremental decoding state for the inference path.
#[derive(Debug, Clone)]
pub struct GenState {
    pub layers: Vec<LstmState>,
    /// Prefix memory vectors, each `embed_dim` long.
    memory: Vec<Vec<f64>>,
    pub n_steps: usize,
}

impl GenModel {
    pub fn new(vocab_size: usize, cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        if vocab_size <= N_RESERVED {
            return Err(Error::Config(format!(
                "vocab size {vocab_size} leaves no usable words"
            )));
        }
        let cells = (0..cfg.n_layers)
            .map(|l| {
                let input = if l == 0 { cfg.embed_dim } else { cfg.hidden_size };
                LstmCell::new(format!("gen.lstm{l}"), input, cfg.hidden_size)
            })
            .collect();
        Ok(GenModel {
            word_emb: Embedding::new("gen.word_emb", vocab_size, cfg.embed_dim),
            f_s: Linear::new("gen.f_s", vocab_size, cfg.embed_dim),
            f_d: Linear::new("gen.f_d", 1, cfg.embed_dim),
            query: Linear::new("gen.query", cfg.hidden_size, cfg.embed_dim),
            out: Linear::new("gen.out", cfg.hidden_size, vocab_size),
            ctx_out: Linear::new("gen.ctx", cfg.embed_dim, vocab_size),
            cells,
            vocab_size,
            cfg,
        })
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        self.word_emb.init(store, rng)?;
        self.f_s.init(store, rng)?;
        self.f_d.init(store, rng)?;
        self.query.init(store, rng)?;
        for cell in &self.cells {
            cell.init(store, rng)?;
        }
        self.out.init(store, rng)?;
        self.ctx_out.init(store, rng)
    }

    fn mask(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.vocab_size];
        m[PAD] = LOGIT_MASK;
        m[BOS] = LOGIT_MASK;
        m[UNK] = LOGIT_MASK;
        m
    }

    // ----- inference path -----

    /// Build the decoding state for a control spec; the first decode input is
    /// `BOS`.
    pub fn start(&self, store: &ParameterStore, control: &ControlSpec) -> Result<GenState> {
        control.validate(self.vocab_size)?;
        let state_in: Vec<f64> = if self.cfg.use_state {
            control.mastery.clone()
        } else {
            vec![0.0; self.vocab_size]
        };
        let mut memory = Vec::with_capacity(2 + control.targets.len());
        memory.push(self.f_s.infer(store, &state_in));
        memory.push(self.f_d.infer(store, &[control.difficulty]));
        for &c in &control.targets {
            memory.push(self.word_emb.infer(store, c).to_vec());
        }
        Ok(GenState {
            layers: (0..self.cfg.n_layers)
                .map(|_| LstmState::zeros(self.cfg.hidden_size))
                .collect(),
            memory,
            n_steps: 0,
        })
    }

    /// Feed `input` (previous token, `BOS` first) and return masked logits
    /// over the vocabulary for the next token.
    pub fn step(&self, store: &ParameterStore, state: &mut GenState, input: WordId) -> Result<Vec<f64>> {
        if input >= self.vocab_size {
            return Err(Error::Vocab(format!(
                "token id {input} >= vocab size {}",
                self.vocab_size
            )));
        }
        let mut x = self.word_emb.infer(store, input).to_vec();
        for (cell, layer) in self.cells.iter().zip(&mut state.layers) {
            cell.step_infer(store, &x, layer);
            x = layer.h.clone();
        }
        let h = &state.layers[self.cfg.n_layers - 1].h;
        let q = self.query.infer(store, h);
        let scores: Vec<f64> = state
            .memory
            .iter()
            .map(|m| m.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect();
        let attn = crate::nn::softmax_with_temperature(&scores, 1.0)?;
        let mut ctx = vec![0.0; self.cfg.embed_dim];
        for (a, m) in attn.iter().zip(&state.memory) {
            for (c, v) in ctx.iter_mut().zip(m) {
                *c += a * v;
            }
        }
        let mut logits = self.out.infer(store, h);
        for (l, v) in logits.iter_mut().zip(self.ctx_out.infer(store, &ctx)) {
            *l += v;
        }
        for (l, m) in logits.iter_mut().zip(self.mask()) {
            *l += m;
        }
        state.n_steps += 1;
        Ok(logits)
    }

    /// Greedy argmax decode until `EOS` or the length cap.
    pub fn greedy_decode(&self, store: &ParameterStore, control: &ControlSpec) -> Result<Vec<WordId>> {
        let mut state = self.start(store, control)?;
        let mut out = Vec::new();
        let mut input = BOS;
        for _ in 0..self.cfg.max_len {
            let logits = self.step(store, &mut state, input)?;
            let next = argmax(&logits);
            if next == EOS {
                break;
            }
            out.push(next);
            input = next;
        }
        Ok(out)
    }

    // ----- tape path -----

    pub fn load(&self, tape: &mut Tape, store: &ParameterStore) -> GenNodes {
        GenNodes {
            word_emb: self.word_emb.load(tape, store),
            f_s: self.f_s.load(tape, store),
            f_d: self.f_d.load(tape, store),
            query: self.query.load(tape, store),
            cells: self.cells.iter().map(|c| c.load(tape, store)).collect(),
            out: self.out.load(tape, store),
            ctx_out: self.ctx_out.load(tape, store),
        }
    }

    /// Prefix memory nodes. `state` is a node holding the mastery vector so a
    /// joint objective can differentiate through it.
    pub fn build_prefix(
        &self,
        tape: &mut Tape,
        nodes: &GenNodes,
        state: NodeId,
        difficulty: f64,
        targets: &[WordId],
    ) -> Vec<NodeId> {
        let state_in = if self.cfg.use_state {
            state
        } else {
            tape.constv(vec![0.0; self.vocab_size])
        };
        let mut memory = Vec::with_capacity(2 + targets.len());
        memory.push(self.f_s.apply(tape, &nodes.f_s, state_in));
        let d = tape.constv(vec![difficulty]);
        memory.push(self.f_d.apply(tape, &nodes.f_d, d));
        for &c in targets {
            memory.push(self.word_emb.row(tape, nodes.word_emb, c));
        }
        memory
    }

    /// Teacher-forced unroll; returns one masked logit node per decode step,
    /// covering each target token and the final `EOS` step.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        nodes: &GenNodes,
        prefix: &[NodeId],
        target: &[WordId],
    ) -> Result<Vec<NodeId>> {
        for &t in target {
            if t >= self.vocab_size {
                return Err(Error::Vocab(format!(
                    "token id {t} >= vocab size {}",
                    self.vocab_size
                )));
            }
        }
        let mask = tape.constv(self.mask());
        let zeros = tape.constv(vec![0.0; self.cfg.hidden_size]);
        let mut layers: Vec<(NodeId, NodeId)> = vec![(zeros, zeros); self.cfg.n_layers];
        let mut step_logits = Vec::with_capacity(target.len() + 1);
        let mut input = BOS;
        for t in 0..=target.len() {
            let mut x = self.word_emb.row(tape, nodes.word_emb, input);
            for (l, (cell, (h, c))) in self.cells.iter().zip(&mut layers).enumerate() {
                let (hn, cn) = cell.step(tape, &nodes.cells[l], x, *h, *c);
                *h = hn;
                *c = cn;
                x = hn;
            }
            let h = layers[self.cfg.n_layers - 1].0;
            let q = self.query.apply(tape, &nodes.query, h);
            let scores: Vec<NodeId> = prefix.iter().map(|&m| tape.dot(q, m)).collect();
            let score_vec = tape.stack(&scores);
            let attn = tape.softmax_temp(score_vec, 1.0);
            let terms: Vec<NodeId> = prefix
                .iter()
                .enumerate()
                .map(|(j, &m)| {
                    let a = tape.index(attn, j);
                    tape.scale_by(m, a)
                })
                .collect();
            let ctx = tape.add_n(&terms);
            let base = self.out.apply(tape, &nodes.out, h);
            let from_ctx = self.ctx_out.apply(tape, &nodes.ctx_out, ctx);
            let raw = tape.add(base, from_ctx);
            let logits = tape.add(raw, mask);
            step_logits.push(logits);
            if t < target.len() {
                input = target[t];
            }
        }
        Ok(step_logits)
    }

    /// Teacher-forced negative log-likelihood of `target ++ [EOS]`.
    pub fn nll_tape(
        &self,
        tape: &mut Tape,
        nodes: &GenNodes,
        prefix: &[NodeId],
        target: &[WordId],
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let step_logits = self.unroll(tape, nodes, prefix, target)?;
        let mut terms = Vec::with_capacity(step_logits.len());
        for (t, &logits) in step_logits.iter().enumerate() {
            let y = if t < target.len() { target[t] } else { EOS };
            let lse = tape.logsumexp(logits);
            let picked = tape.index(logits, y);
            terms.push(tape.sub(lse, picked));
        }
        let total = tape.add_n(&terms);
        Ok((total, step_logits))
    }

    /// Plain-value NLL of `target ++ [EOS]` under a control spec.
    pub fn nll(
        &self,
        store: &ParameterStore,
        control: &ControlSpec,
        target: &[WordId],
    ) -> Result<f64> {
        let mut state = self.start(store, control)?;
        let mut input = BOS;
        let mut nll = 0.0;
        for t in 0..=target.len() {
            let logits = self.step(store, &mut state, input)?;
            let logp = log_softmax(&logits);
            let y = if t < target.len() { target[t] } else { EOS };
            nll -= logp[y];
            if t < target.len() {
                input = target[t];
            }
        }
        Ok(nll)
    }
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

// ---------------------------------------------------------------------------
// Training examples
// ---------------------------------------------------------------------------

/// One supervised example for the generator: reproduce `target` given the
/// state before the interaction, the observed difficulty, and sampled target
/// words.
#[derive(Debug, Clone)]
pub struct GenExample {
    pub control: ControlSpec,
    pub target: Vec<WordId>,
}

/// Build a training example from interaction `interaction` answered under
/// knowledge state `state`. Difficulty is the observed error count rounded to
/// the nearest quarter; targets are a seeded sample of the sentence's
/// distinct words.
pub fn make_training_example(
    state: &KnowledgeState,
    interaction: &Interaction,
    sample_ratio: f64,
    rng: &mut impl Rng,
) -> GenExample {
    let mut distinct: Vec<WordId> = Vec::new();
    for &w in &interaction.exercise.tokens {
        if !Vocabulary::is_reserved(w) && !distinct.contains(&w) {
            distinct.push(w);
        }
    }
    let k = ((distinct.len() as f64 * sample_ratio).round() as usize).max(1);
    let k = k.min(distinct.len());
    distinct.shuffle(rng);
    let mut targets: Vec<WordId> = distinct.into_iter().take(k).collect();
    targets.sort_unstable();
    GenExample {
        control: ControlSpec {
            mastery: state.mastery.clone(),
            difficulty: round_quarter(interaction.error_count() as f64),
            targets,
        },
        target: interaction.exercise.tokens.clone(),
    }
}

/// Examples for a whole history, conditioning each interaction on the traced
/// state before it.
pub fn make_training_examples(
    tracer: &crate::tracer::DktModel,
    tracer_store: &ParameterStore,
    history: &LearningHistory,
    sample_ratio: f64,
    rng: &mut impl Rng,
) -> Result<Vec<GenExample>> {
    let mut state = tracer.initial_state();
    let mut out = Vec::with_capacity(history.len());
    for it in &history.interactions {
        let ks = tracer.read_state(tracer_store, &state);
        out.push(make_training_example(&ks, it, sample_ratio, rng));
        tracer.advance(tracer_store, &mut state, it)?;
    }
    Ok(out)
}

/// Train the generator on teacher-forced examples with per-example Adam
/// steps. Returns the mean NLL per epoch.
pub fn train_generator(
    model: &GenModel,
    store: &mut ParameterStore,
    opt: &mut Adam,
    examples: &[GenExample],
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Data("no generator training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let ex = &examples[i];
            ex.control.validate(model.vocab_size)?;
            store.zero_grads();
            let mut tape = Tape::new();
            let nodes = model.load(&mut tape, store);
            let s = tape.constv(ex.control.mastery.clone());
            let prefix =
                model.build_prefix(&mut tape, &nodes, s, ex.control.difficulty, &ex.control.targets);
            let (loss, _) = model.nll_tape(&mut tape, &nodes, &prefix, &ex.target)?;
            total += tape.value(loss).item();
            tape.backward(loss, store)?;
            opt.step(store)?;
        }
        losses.push(total / examples.len() as f64);
    }
    Ok(losses)
}
