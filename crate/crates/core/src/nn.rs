//! Trainable building blocks: parameter storage, embeddings, linear layers,
//! an LSTM cell with both a differentiable (tape) path and a plain inference
//! path, an Adam optimizer with global-norm clipping, and a finite-difference
//! gradient checker.

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{sigmoid, softmax_with_temperature_unchecked, NodeId, Tape};
use crate::tensor::Tensor;

/// Named parameters with matching gradient accumulators.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParameterStore {
    params: IndexMap<String, Tensor>,
    #[serde(skip)]
    grads: IndexMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.grads.insert(name.to_string(), Tensor::zeros(&t.shape));
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        // Grad slots may be missing after deserialization; rebuild them.
        for (name, p) in &self.params {
            match self.grads.get_mut(name) {
                Some(g) => g.data.iter_mut().for_each(|v| *v = 0.0),
                None => {
                    self.grads.insert(name.clone(), Tensor::zeros(&p.shape));
                }
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let slot = self
            .grads
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no gradient slot for {name}")))?;
        if slot.shape != g.shape {
            return Err(Error::Shape(format!("gradient shape mismatch for {name}")));
        }
        for (d, v) in slot.data.iter_mut().zip(&g.data) {
            *d += v;
        }
        Ok(())
    }

    /// Merge another store's parameters under the invariant of unique names.
    pub fn absorb(&mut self, other: ParameterStore) -> Result<()> {
        for (name, t) in other.params {
            self.insert(&name, t)?;
        }
        Ok(())
    }
}

/// Uniform initialization in [-0.08, 0.08].
pub const INIT_RANGE: f64 = 0.08;

pub fn init_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
        .collect();
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

/// Temperature softmax over a logit vector.
pub fn softmax_with_temperature(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    Ok(softmax_with_temperature_unchecked(logits, tau))
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

pub struct LinearNodes {
    pub w: NodeId,
    pub b: NodeId,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        store.insert(
            &format!("{}.w", self.name),
            init_tensor(&[self.out_dim, self.in_dim], rng),
        )?;
        store.insert(&format!("{}.b", self.name), init_tensor(&[self.out_dim], rng))
    }

    pub fn load(&self, tape: &mut Tape, store: &ParameterStore) -> LinearNodes {
        LinearNodes {
            w: tape.param(store, &format!("{}.w", self.name)),
            b: tape.param(store, &format!("{}.b", self.name)),
        }
    }

    pub fn apply(&self, tape: &mut Tape, nodes: &LinearNodes, x: NodeId) -> NodeId {
        let wx = tape.matvec(nodes.w, x);
        tape.add(wx, nodes.b)
    }

    pub fn infer(&self, store: &ParameterStore, x: &[f64]) -> Vec<f64> {
        let w = store.get(&format!("{}.w", self.name)).unwrap();
        let b = store.get(&format!("{}.b", self.name)).unwrap();
        let mut out = b.data.clone();
        for i in 0..self.out_dim {
            let row = w.row(i);
            let mut acc = 0.0;
            for j in 0..self.in_dim {
                acc += row[j] * x[j];
            }
            out[i] += acc;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub name: String,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, rows: usize, dim: usize) -> Self {
        Embedding {
            name: name.into(),
            rows,
            dim,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        store.insert(&self.name, init_tensor(&[self.rows, self.dim], rng))
    }

    pub fn load(&self, tape: &mut Tape, store: &ParameterStore) -> NodeId {
        tape.param(store, &self.name)
    }

    pub fn row(&self, tape: &mut Tape, table: NodeId, r: usize) -> NodeId {
        tape.row(table, r)
    }

    pub fn infer<'a>(&self, store: &'a ParameterStore, r: usize) -> &'a [f64] {
        store.get(&self.name).unwrap().row(r)
    }
}

/// LSTM-style gated recurrent cell (input/forget/output gates + candidate).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub name: String,
    pub input_dim: usize,
    pub hidden: usize,
}

pub struct LstmNodes {
    gates: [LinearNodes; 4], // i, f, o, g: each has w_x, w_h folded as two matvecs
    wh: [NodeId; 4],
}

/// Plain-value recurrent state for the inference path.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

const GATE_NAMES: [&str; 4] = ["i", "f", "o", "g"];

impl LstmCell {
    pub fn new(name: impl Into<String>, input_dim: usize, hidden: usize) -> Self {
        LstmCell {
            name: name.into(),
            input_dim,
            hidden,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        for g in GATE_NAMES {
            store.insert(
                &format!("{}.wx_{}", self.name, g),
                init_tensor(&[self.hidden, self.input_dim], rng),
            )?;
            store.insert(
                &format!("{}.wh_{}", self.name, g),
                init_tensor(&[self.hidden, self.hidden], rng),
            )?;
            store.insert(
                &format!("{}.b_{}", self.name, g),
                init_tensor(&[self.hidden], rng),
            )?;
        }
        Ok(())
    }

    pub fn load(&self, tape: &mut Tape, store: &ParameterStore) -> LstmNodes {
        let mk = |tape: &mut Tape, g: &str| LinearNodes {
            w: tape.param(store, &format!("{}.wx_{}", self.name, g)),
            b: tape.param(store, &format!("{}.b_{}", self.name, g)),
        };
        let gates = [
            mk(tape, "i"),
            mk(tape, "f"),
            mk(tape, "o"),
            mk(tape, "g"),
        ];
        let wh = [
            tape.param(store, &format!("{}.wh_i", self.name)),
            tape.param(store, &format!("{}.wh_f", self.name)),
            tape.param(store, &format!("{}.wh_o", self.name)),
            tape.param(store, &format!("{}.wh_g", self.name)),
        ];
        LstmNodes { gates, wh }
    }

    /// One gated recurrent update on the tape.
    pub fn step(
        &self,
        tape: &mut Tape,
        nodes: &LstmNodes,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> (NodeId, NodeId) {
        let pre = |tape: &mut Tape, k: usize| {
            let wx = tape.matvec(nodes.gates[k].w, x);
            let whh = tape.matvec(nodes.wh[k], h);
            tape.add_n(&[wx, whh, nodes.gates[k].b])
        };
        let pi = pre(tape, 0);
        let i = tape.sigmoid(pi);
        let pf = pre(tape, 1);
        let f = tape.sigmoid(pf);
        let po = pre(tape, 2);
        let o = tape.sigmoid(po);
        let pg = pre(tape, 3);
        let g = tape.tanh(pg);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_new = tape.add(fc, ig);
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc);
        (h_new, c_new)
    }

    /// Same update on plain values.
    pub fn step_infer(&self, store: &ParameterStore, x: &[f64], state: &mut LstmState) {
        debug_assert_eq!(x.len(), self.input_dim);
        let gate = |g: &str, act: fn(f64) -> f64, state: &LstmState| -> Vec<f64> {
            let wx = store.get(&format!("{}.wx_{}", self.name, g)).unwrap();
            let wh = store.get(&format!("{}.wh_{}", self.name, g)).unwrap();
            let b = store.get(&format!("{}.b_{}", self.name, g)).unwrap();
            (0..self.hidden)
                .map(|r| {
                    let mut acc = b.data[r];
                    let rx = wx.row(r);
                    for j in 0..self.input_dim {
                        acc += rx[j] * x[j];
                    }
                    let rh = wh.row(r);
                    for j in 0..self.hidden {
                        acc += rh[j] * state.h[j];
                    }
                    act(acc)
                })
                .collect()
        };
        let i = gate("i", sigmoid, state);
        let f = gate("f", sigmoid, state);
        let o = gate("o", sigmoid, state);
        let g = gate("g", f64::tanh, state);
        for r in 0..self.hidden {
            state.c[r] = f[r] * state.c[r] + i[r] * g[r];
            state.h[r] = o[r] * state.c[r].tanh();
        }
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with global-norm gradient clipping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    t: u64,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        self.t += 1;
        let names: Vec<String> = store.names().cloned().collect();
        let mut norm_sq = 0.0;
        for name in &names {
            let g = store.grad(name).unwrap();
            norm_sq += g.data.iter().map(|v| v * v).sum::<f64>();
        }
        let norm = norm_sq.sqrt();
        let scale = if self.clip_norm > 0.0 && norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for name in &names {
            let g: Vec<f64> = store
                .grad(name)
                .unwrap()
                .data
                .iter()
                .map(|v| v * scale)
                .collect();
            let shape = store.get(name).unwrap().shape.clone();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&shape));
            for (mi, gi) in m.data.iter_mut().zip(&g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let m_snapshot = m.data.clone();
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&shape));
            for (vi, gi) in v.data.iter_mut().zip(&g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let v_snapshot = v.data.clone();
            let p = store.get_mut(name).unwrap();
            for k in 0..p.data.len() {
                let mhat = m_snapshot[k] / bc1;
                let vhat = v_snapshot[k] / bc2;
                p.data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Compare reverse-mode gradients against central finite differences.
///
/// `build` must construct the loss graph on the given tape from the current
/// parameter values and return the scalar loss node. Returns the maximum over
/// all parameter entries of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
pub fn check_gradients<F>(store: &mut ParameterStore, eps: f64, mut build: F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParameterStore) -> NodeId,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    let lv = tape.value(loss).item();
    if !lv.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {lv}")));
    }
    tape.backward(loss, store)?;
    let names: Vec<String> = store.names().cloned().collect();
    let ad: IndexMap<String, Tensor> = names
        .iter()
        .map(|n| (n.clone(), store.grad(n).unwrap().clone()))
        .collect();

    let mut max_rel = 0.0f64;
    for name in &names {
        let len = store.get(name).unwrap().len();
        for k in 0..len {
            let orig = store.get(name).unwrap().data[k];
            store.get_mut(name).unwrap().data[k] = orig + eps;
            let mut t1 = Tape::new();
            let l1 = build(&mut t1, store);
            let f1 = t1.value(l1).item();
            store.get_mut(name).unwrap().data[k] = orig - eps;
            let mut t2 = Tape::new();
            let l2 = build(&mut t2, store);
            let f2 = t2.value(l2).item();
            store.get_mut(name).unwrap().data[k] = orig;
            if !f1.is_finite() || !f2.is_finite() {
                return Err(Error::Numeric("non-finite loss during perturbation".into()));
            }
            let g_fd = (f1 - f2) / (2.0 * eps);
            let g_ad = ad[name].data[k];
            let rel = (g_ad - g_fd).abs() / g_ad.abs().max(g_fd.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
