//! Deep knowledge tracing: a stacked LSTM over the flattened token/label
//! stream, reading out a per-word mastery vector at exercise boundaries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Exercise, Interaction, LearningHistory, WordId};
use crate::error::{Error, Result};
use crate::nn::{Embedding, Linear, LstmCell, LstmState, ParameterStore};
use crate::tape::{sigmoid, NodeId, Tape};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracerConfig {
    pub hidden_size: usize,
    pub n_layers: usize,
    pub embed_dim: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Histories are truncated to this many tokens during training.
    pub max_tokens: usize,
}

impl Default for TracerConfig {
    fn default() -> Self {
        TracerConfig {
            hidden_size: 100,
            n_layers: 3,
            embed_dim: 100,
            lambda1: 0.5,
            lambda2: 0.1,
            max_tokens: 512,
        }
    }
}

impl TracerConfig {
    /// Smaller model for fast experiments and tests.
    pub fn desk_scale() -> Self {
        TracerConfig {
            hidden_size: 32,
            n_layers: 2,
            embed_dim: 32,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("regularizer weights must be >= 0".into()));
        }
        if self.hidden_size == 0 || self.n_layers == 0 || self.embed_dim == 0 {
            return Err(Error::Config("tracer dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Per-word mastery probabilities after `as_of_interaction` interactions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeState {
    pub mastery: Vec<f64>,
    pub as_of_interaction: usize,
}

impl KnowledgeState {
    pub fn mean(&self, word_ids: impl Iterator<Item = WordId>) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for w in word_ids {
            sum += self.mastery[w];
            n += 1;
        }
        sum / n.max(1) as f64
    }
}

/// Plain-value recurrent state of the tracer.
#[derive(Debug, Clone)]
pub struct TracerState {
    pub layers: Vec<LstmState>,
    pub n_interactions: usize,
}

pub struct DktModel {
    pub vocab_size: usize,
    pub cfg: TracerConfig,
    word_emb: Embedding,
    label_emb: Embedding,
    cells: Vec<LstmCell>,
    out: Linear,
}

/// Loaded parameter nodes for one tape.
pub struct TracerNodes {
    word_emb: NodeId,
    label_emb: NodeId,
    cells: Vec<crate::nn::LstmNodes>,
    out: crate::nn::LinearNodes,
}

/// Result of unrolling a history on the tape.
pub struct TracerGraph {
    /// Pre-sigmoid state read-outs; entry `i` is the state after `i`
    /// interactions (entry 0 is the initial state).
    pub boundary_logits: Vec<NodeId>,
}

impl DktModel {
    pub fn new(vocab_size: usize, cfg: TracerConfig) -> Result<Self> {
        cfg.validate()?;
        let cells = (0..cfg.n_layers)
            .map(|l| {
                let input = if l == 0 { cfg.embed_dim } else { cfg.hidden_size };
                LstmCell::new(format!("tracer.lstm{l}"), input, cfg.hidden_size)
            })
            .collect();
        Ok(DktModel {
            word_emb: Embedding::new("tracer.word_emb", vocab_size, cfg.embed_dim),
            label_emb: Embedding::new("tracer.label_emb", 2, cfg.embed_dim),
            out: Linear::new("tracer.out", cfg.hidden_size, vocab_size),
            cells,
            vocab_size,
            cfg,
        })
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        self.word_emb.init(store, rng)?;
        self.label_emb.init(store, rng)?;
        for cell in &self.cells {
            cell.init(store, rng)?;
        }
        self.out.init(store, rng)
    }

    // ----- inference path -----

    pub fn initial_state(&self) -> TracerState {
        TracerState {
            layers: (0..self.cfg.n_layers)
                .map(|_| LstmState::zeros(self.cfg.hidden_size))
                .collect(),
            n_interactions: 0,
        }
    }

    fn check_tokens(&self, tokens: &[WordId]) -> Result<()> {
        for &t in tokens {
            if t >= self.vocab_size {
                return Err(Error::Vocab(format!(
                    "token id {t} >= vocab size {}",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }

    fn step_token(&self, store: &ParameterStore, state: &mut TracerState, word: WordId, label: u8) {
        let we = self.word_emb.infer(store, word);
        let le = self.label_emb.infer(store, label as usize);
        let mut x: Vec<f64> = we.iter().zip(le).map(|(a, b)| a + b).collect();
        for (cell, layer) in self.cells.iter().zip(&mut state.layers) {
            cell.step_infer(store, &x, layer);
            x = layer.h.clone();
        }
    }

    /// Advance the recurrence over one interaction.
    pub fn advance(
        &self,
        store: &ParameterStore,
        state: &mut TracerState,
        interaction: &Interaction,
    ) -> Result<()> {
        self.check_tokens(&interaction.exercise.tokens)?;
        for (&w, &r) in interaction.exercise.tokens.iter().zip(&interaction.labels) {
            self.step_token(store, state, w, r);
        }
        state.n_interactions += 1;
        Ok(())
    }

    pub fn state_logits(&self, store: &ParameterStore, state: &TracerState) -> Vec<f64> {
        self.out.infer(store, &state.layers[self.cfg.n_layers - 1].h)
    }

    pub fn read_state(&self, store: &ParameterStore, state: &TracerState) -> KnowledgeState {
        KnowledgeState {
            mastery: self
                .state_logits(store, state)
                .iter()
                .map(|&z| sigmoid(z))
                .collect(),
            as_of_interaction: state.n_interactions,
        }
    }

    /// Knowledge state after interactions `1..=upto`.
    pub fn trace(
        &self,
        store: &ParameterStore,
        history: &LearningHistory,
        upto: usize,
    ) -> Result<KnowledgeState> {
        if upto > history.len() {
            return Err(Error::Data(format!(
                "upto {upto} exceeds history length {}",
                history.len()
            )));
        }
        let mut state = self.initial_state();
        for it in &history.interactions[..upto] {
            self.advance(store, &mut state, it)?;
        }
        Ok(self.read_state(store, &state))
    }

    /// Per-token correct-probabilities for the next exercise.
    pub fn predict_labels(
        &self,
        store: &ParameterStore,
        history: &LearningHistory,
        exercise: &Exercise,
    ) -> Result<Vec<f64>> {
        self.check_tokens(&exercise.tokens)?;
        let state = self.trace(store, history, history.len())?;
        Ok(exercise.tokens.iter().map(|&w| state.mastery[w]).collect())
    }

    // ----- tape path -----

    pub fn load(&self, tape: &mut Tape, store: &ParameterStore) -> TracerNodes {
        TracerNodes {
            word_emb: self.word_emb.load(tape, store),
            label_emb: self.label_emb.load(tape, store),
            cells: self.cells.iter().map(|c| c.load(tape, store)).collect(),
            out: self.out.load(tape, store),
        }
    }

    /// Unroll the recurrence over a history, reading pre-sigmoid states at
    /// every exercise boundary. Token count is capped at `max_tokens`.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        nodes: &TracerNodes,
        history: &LearningHistory,
    ) -> Result<TracerGraph> {
        let mut h: Vec<NodeId> = Vec::with_capacity(self.cfg.n_layers);
        let mut c: Vec<NodeId> = Vec::with_capacity(self.cfg.n_layers);
        for _ in 0..self.cfg.n_layers {
            h.push(tape.constv(vec![0.0; self.cfg.hidden_size]));
            c.push(tape.constv(vec![0.0; self.cfg.hidden_size]));
        }
        let read = |tape: &mut Tape, h: &[NodeId]| {
            self.out.apply(tape, &nodes.out, h[self.cfg.n_layers - 1])
        };
        let mut boundary_logits = vec![read(tape, &h)];
        let mut tokens_used = 0usize;
        for it in &history.interactions {
            self.check_tokens(&it.exercise.tokens)?;
            if tokens_used + it.exercise.len() > self.cfg.max_tokens {
                break;
            }
            tokens_used += it.exercise.len();
            for (&w, &r) in it.exercise.tokens.iter().zip(&it.labels) {
                let we = tape.row(nodes.word_emb, w);
                let le = tape.row(nodes.label_emb, r as usize);
                let mut x = tape.add(we, le);
                for l in 0..self.cfg.n_layers {
                    let (nh, nc) = self.cells[l].step(tape, &nodes.cells[l], x, h[l], c[l]);
                    h[l] = nh;
                    c[l] = nc;
                    x = nh;
                }
            }
            boundary_logits.push(read(tape, &h));
        }
        Ok(TracerGraph { boundary_logits })
    }

    /// Build the KT loss terms on the tape. Returns (L_ce, L_r1, L_r2).
    pub fn kt_loss_tape(
        &self,
        tape: &mut Tape,
        nodes: &TracerNodes,
        history: &LearningHistory,
    ) -> Result<(NodeId, NodeId, NodeId, TracerGraph)> {
        if history.is_empty() {
            return Err(Error::Loss("empty history".into()));
        }
        let graph = self.unroll(tape, nodes, history)?;
        let n_scored = graph.boundary_logits.len() - 1;

        // cross-entropy: tokens of interaction i are scored by the state
        // traced from interactions < i
        let mut ce_terms = Vec::new();
        for (i, it) in history.interactions[..n_scored].iter().enumerate() {
            let z = graph.boundary_logits[i];
            for (&w, &r) in it.exercise.tokens.iter().zip(&it.labels) {
                let zw = tape.index(z, w);
                let sp = tape.softplus(zw);
                let term = if r == 1 { tape.sub(sp, zw) } else { sp };
                ce_terms.push(term);
            }
        }
        let stacked = tape.stack(&ce_terms);
        let ce = tape.sum(stacked);

        // state-change regularizers over post-interaction boundaries,
        // normalized per word and transition so their scale is independent
        // of vocabulary size and history length
        let (r1, r2) = if n_scored >= 2 {
            let mut abs_terms = Vec::new();
            let mut sq_terms = Vec::new();
            for i in 2..=n_scored {
                let a = tape.sigmoid(graph.boundary_logits[i]);
                let b = tape.sigmoid(graph.boundary_logits[i - 1]);
                let d = tape.sub(a, b);
                let ad = tape.abs(d);
                abs_terms.push(tape.sum(ad));
                let sq = tape.mul(d, d);
                sq_terms.push(tape.sum(sq));
            }
            let s1 = tape.stack(&abs_terms);
            let s2 = tape.stack(&sq_terms);
            let norm = 1.0 / (self.vocab_size * (n_scored - 1)) as f64;
            let r1 = tape.sum(s1);
            let r2 = tape.sum(s2);
            (tape.scale(r1, norm), tape.scale(r2, norm))
        } else {
            (tape.const_scalar(0.0), tape.const_scalar(0.0))
        };
        Ok((ce, r1, r2, graph))
    }

    /// Evaluate the loss terms without differentiation.
    pub fn kt_loss(
        &self,
        store: &ParameterStore,
        history: &LearningHistory,
    ) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let nodes = self.load(&mut tape, store);
        let (ce, r1, r2, _) = self.kt_loss_tape(&mut tape, &nodes, history)?;
        Ok((
            tape.value(ce).item(),
            tape.value(r1).item(),
            tape.value(r2).item(),
        ))
    }

    /// Combined L_T = L_ce + lambda1*L_r1 + lambda2*L_r2 on the tape.
    pub fn total_loss_tape(
        &self,
        tape: &mut Tape,
        nodes: &TracerNodes,
        history: &LearningHistory,
    ) -> Result<(NodeId, TracerGraph)> {
        let (ce, r1, r2, graph) = self.kt_loss_tape(tape, nodes, history)?;
        let r1s = tape.scale(r1, self.cfg.lambda1);
        let r2s = tape.scale(r2, self.cfg.lambda2);
        let total = tape.add_n(&[ce, r1s, r2s]);
        Ok((total, graph))
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Token-level predictions for one evaluated exercise.
#[derive(Debug, Clone)]
pub struct ExercisePrediction {
    pub exercise: Exercise,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Score eval interactions with states traced through `context` first.
pub fn collect_predictions(
    model: &DktModel,
    store: &ParameterStore,
    context: &LearningHistory,
    eval: &LearningHistory,
) -> Result<Vec<ExercisePrediction>> {
    let mut state = model.initial_state();
    for it in &context.interactions {
        model.advance(store, &mut state, it)?;
    }
    let mut out = Vec::with_capacity(eval.len());
    for it in &eval.interactions {
        let ks = model.read_state(store, &state);
        out.push(ExercisePrediction {
            exercise: it.exercise.clone(),
            scores: it.exercise.tokens.iter().map(|&w| ks.mastery[w]).collect(),
            labels: it.labels.clone(),
        });
        model.advance(store, &mut state, it)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AucLevel {
    Word,
    Exercise,
}

/// Mann-Whitney AUC with midranks (ties count 0.5).
pub fn auc(pairs: &[(f64, u8)]) -> Result<f64> {
    let n_pos = pairs.iter().filter(|(_, l)| *l == 1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "single-class labels ({n_pos} pos, {n_neg} neg)"
        )));
    }
    let mut sorted: Vec<(f64, u8)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0; // ranks are 1-based
        for item in &sorted[i..j] {
            if item.1 == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn auc_of_predictions(preds: &[ExercisePrediction], level: AucLevel) -> Result<f64> {
    match level {
        AucLevel::Word => {
            let pairs: Vec<(f64, u8)> = preds
                .iter()
                .flat_map(|p| p.scores.iter().cloned().zip(p.labels.iter().cloned()))
                .collect();
            auc(&pairs)
        }
        AucLevel::Exercise => {
            // average a sentence's token predictions and score against the
            // exercise-mean label (binarized at 0.5 for ranking labels)
            let pairs: Vec<(f64, u8)> = preds
                .iter()
                .map(|p| {
                    let score = p.scores.iter().sum::<f64>() / p.scores.len() as f64;
                    let mean_label =
                        p.labels.iter().map(|&l| l as f64).sum::<f64>() / p.labels.len() as f64;
                    (score, u8::from(mean_label >= 0.5))
                })
                .collect();
            auc(&pairs)
        }
    }
}

/// Train the tracer with per-student Adam steps.
pub fn train_tracer(
    model: &DktModel,
    store: &mut ParameterStore,
    opt: &mut crate::nn::Adam,
    histories: &[LearningHistory],
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..histories.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for &k in &order {
            let h = &histories[k];
            if h.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let nodes = model.load(&mut tape, store);
            let (loss, _) = model.total_loss_tape(&mut tape, &nodes, h)?;
            store.zero_grads();
            tape.backward(loss, store)?;
            opt.step(store)?;
            total += tape.value(loss).item();
            count += 1;
        }
        epoch_losses.push(total / count.max(1) as f64);
    }
    Ok(epoch_losses)
}
