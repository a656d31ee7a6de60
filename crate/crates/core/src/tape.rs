//! Define-by-run reverse-mode differentiation tape.
//!
//! Values are computed eagerly as nodes are appended; `backward` walks the
//! tape in reverse and accumulates parameter gradients into the owning
//! [`ParameterStore`](crate::nn::ParameterStore).

use crate::error::{Error, Result};
use crate::nn::ParameterStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf with no gradient flow.
    Const,
    /// Leaf tied to a named parameter; gradient lands in the store.
    Param(String),
    /// w[m,n] * x[n] -> [m]
    MatVec { w: NodeId, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Scale { x: NodeId, c: f64 },
    /// Vector scaled by a scalar node.
    ScaleBy { x: NodeId, s: NodeId },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Log(NodeId),
    Abs(NodeId),
    SoftmaxTemp { x: NodeId, tau: f64 },
    /// Scalar log(sum(exp(x))).
    LogSumExp(NodeId),
    /// Scalar x[i].
    Index { x: NodeId, i: usize },
    Dot(NodeId, NodeId),
    /// Scalar sum of all entries.
    Sum(NodeId),
    /// Row of a 2-d node (typically an embedding table parameter).
    Row { table: NodeId, row: usize },
    /// Vector built from scalar nodes.
    Stack(Vec<NodeId>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Const)
    }

    pub fn constv(&mut self, v: Vec<f64>) -> NodeId {
        self.constant(Tensor::from_vec(v))
    }

    pub fn const_scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Load a named parameter's current value as a leaf node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> NodeId {
        let t = store.get(name).expect("unknown parameter").clone();
        self.push(t, Op::Param(name.to_string()))
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let wt = &self.nodes[w.0].value;
        let xt = &self.nodes[x.0].value;
        let (m, n) = (wt.rows(), wt.cols());
        debug_assert_eq!(n, xt.len(), "matvec dims");
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &wt.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * xt.data[j];
            }
            out[i] = acc;
        }
        self.push(Tensor::from_vec(out), Op::MatVec { w, x })
    }

    fn zip(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let at = &self.nodes[a.0].value;
        let bt = &self.nodes[b.0].value;
        debug_assert_eq!(at.len(), bt.len(), "elementwise dims");
        let data = at
            .data
            .iter()
            .zip(&bt.data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = at.shape.clone();
        self.push(Tensor { shape, data }, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_n(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let mut data = self.nodes[xs[0].0].value.data.clone();
        let shape = self.nodes[xs[0].0].value.shape.clone();
        for x in &xs[1..] {
            for (d, v) in data.iter_mut().zip(&self.nodes[x.0].value.data) {
                *d += v;
            }
        }
        self.push(Tensor { shape, data }, Op::AddN(xs.to_vec()))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.nodes[x.0].value.data.iter().map(|v| v * c).collect();
        let shape = self.nodes[x.0].value.shape.clone();
        self.push(Tensor { shape, data }, Op::Scale { x, c })
    }

    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let sv = self.nodes[s.0].value.item();
        let data = self.nodes[x.0].value.data.iter().map(|v| v * sv).collect();
        let shape = self.nodes[x.0].value.shape.clone();
        self.push(Tensor { shape, data }, Op::ScaleBy { x, s })
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let data = self.nodes[x.0].value.data.iter().map(|v| f(*v)).collect();
        let shape = self.nodes[x.0].value.shape.clone();
        self.push(Tensor { shape, data }, op)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.map(x, softplus, Op::Softplus(x))
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.map(x, f64::ln, Op::Log(x))
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.map(x, f64::abs, Op::Abs(x))
    }

    pub fn softmax_temp(&mut self, x: NodeId, tau: f64) -> NodeId {
        assert!(tau > 0.0, "temperature must be positive");
        let p = softmax_with_temperature_unchecked(&self.nodes[x.0].value.data, tau);
        self.push(Tensor::from_vec(p), Op::SoftmaxTemp { x, tau })
    }

    pub fn logsumexp(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value.data;
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s = v.iter().map(|a| (a - m).exp()).sum::<f64>();
        self.push(Tensor::scalar(m + s.ln()), Op::LogSumExp(x))
    }

    pub fn index(&mut self, x: NodeId, i: usize) -> NodeId {
        let v = self.nodes[x.0].value.data[i];
        self.push(Tensor::scalar(v), Op::Index { x, i })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let at = &self.nodes[a.0].value;
        let bt = &self.nodes[b.0].value;
        debug_assert_eq!(at.len(), bt.len(), "dot dims");
        let v = at.data.iter().zip(&bt.data).map(|(x, y)| x * y).sum();
        self.push(Tensor::scalar(v), Op::Dot(a, b))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.data.iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(x))
    }

    pub fn row(&mut self, table: NodeId, row: usize) -> NodeId {
        let t = &self.nodes[table.0].value;
        let v = t.row(row).to_vec();
        self.push(Tensor::from_vec(v), Op::Row { table, row })
    }

    pub fn stack(&mut self, xs: &[NodeId]) -> NodeId {
        let data: Vec<f64> = xs.iter().map(|x| self.nodes[x.0].value.item()).collect();
        self.push(Tensor::from_vec(data), Op::Stack(xs.to_vec()))
    }

    /// Backpropagate from a scalar `loss` node, accumulating parameter
    /// gradients into `store.grads`.
    pub fn backward(&self, loss: NodeId, store: &mut ParameterStore) -> Result<()> {
        let lv = self.nodes[loss.0].value.item();
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {lv}")));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(name) => {
                    store.accumulate_grad(name, &g)?;
                }
                Op::MatVec { w, x } => {
                    let wt = &self.nodes[w.0].value;
                    let xt = &self.nodes[x.0].value;
                    let (m, n) = (wt.rows(), wt.cols());
                    {
                        let gw = ensure(&mut grads, w.0, &wt.shape);
                        for i in 0..m {
                            let gi = g.data[i];
                            let row = &mut gw.data[i * n..(i + 1) * n];
                            for j in 0..n {
                                row[j] += gi * xt.data[j];
                            }
                        }
                    }
                    let mut gx_acc = vec![0.0; n];
                    for i in 0..m {
                        let gi = g.data[i];
                        let row = &wt.data[i * n..(i + 1) * n];
                        for j in 0..n {
                            gx_acc[j] += gi * row[j];
                        }
                    }
                    let gx = ensure(&mut grads, x.0, &xt.shape);
                    for (d, v) in gx.data.iter_mut().zip(gx_acc) {
                        *d += v;
                    }
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, self, *a, &g.data, 1.0);
                    add_grad(&mut grads, self, *b, &g.data, 1.0);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, self, *a, &g.data, 1.0);
                    add_grad(&mut grads, self, *b, &g.data, -1.0);
                }
                Op::Mul(a, b) => {
                    let bt = self.nodes[b.0].value.data.clone();
                    let at = self.nodes[a.0].value.data.clone();
                    add_grad_mul(&mut grads, self, *a, &g.data, &bt);
                    add_grad_mul(&mut grads, self, *b, &g.data, &at);
                }
                Op::AddN(xs) => {
                    for x in xs {
                        add_grad(&mut grads, self, *x, &g.data, 1.0);
                    }
                }
                Op::Scale { x, c } => {
                    add_grad(&mut grads, self, *x, &g.data, *c);
                }
                Op::ScaleBy { x, s } => {
                    let sv = self.nodes[s.0].value.item();
                    add_grad(&mut grads, self, *x, &g.data, sv);
                    let dot: f64 = g
                        .data
                        .iter()
                        .zip(&self.nodes[x.0].value.data)
                        .map(|(gi, xi)| gi * xi)
                        .sum();
                    let gs = ensure(&mut grads, s.0, &[1]);
                    gs.data[0] += dot;
                }
                Op::Sigmoid(x) => {
                    let local: Vec<f64> =
                        node.value.data.iter().map(|y| y * (1.0 - y)).collect();
                    add_grad_mul(&mut grads, self, *x, &g.data, &local);
                }
                Op::Tanh(x) => {
                    let local: Vec<f64> = node.value.data.iter().map(|y| 1.0 - y * y).collect();
                    add_grad_mul(&mut grads, self, *x, &g.data, &local);
                }
                Op::Softplus(x) => {
                    let local: Vec<f64> = self.nodes[x.0]
                        .value
                        .data
                        .iter()
                        .map(|v| sigmoid(*v))
                        .collect();
                    add_grad_mul(&mut grads, self, *x, &g.data, &local);
                }
                Op::Log(x) => {
                    let local: Vec<f64> =
                        self.nodes[x.0].value.data.iter().map(|v| 1.0 / v).collect();
                    add_grad_mul(&mut grads, self, *x, &g.data, &local);
                }
                Op::Abs(x) => {
                    let local: Vec<f64> = self.nodes[x.0]
                        .value
                        .data
                        .iter()
                        .map(|v| {
                            if *v > 0.0 {
                                1.0
                            } else if *v < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    add_grad_mul(&mut grads, self, *x, &g.data, &local);
                }
                Op::SoftmaxTemp { x, tau } => {
                    let p = &node.value.data;
                    let inner: f64 = g.data.iter().zip(p).map(|(gi, pi)| gi * pi).sum();
                    let local: Vec<f64> = g
                        .data
                        .iter()
                        .zip(p)
                        .map(|(gi, pi)| pi * (gi - inner) / tau)
                        .collect();
                    let gx = ensure(&mut grads, x.0, &self.nodes[x.0].value.shape.clone());
                    for (d, v) in gx.data.iter_mut().zip(local) {
                        *d += v;
                    }
                }
                Op::LogSumExp(x) => {
                    let p = softmax_with_temperature_unchecked(&self.nodes[x.0].value.data, 1.0);
                    let go = g.item();
                    let gx = ensure(&mut grads, x.0, &self.nodes[x.0].value.shape.clone());
                    for (d, pi) in gx.data.iter_mut().zip(p) {
                        *d += go * pi;
                    }
                }
                Op::Index { x, i } => {
                    let go = g.item();
                    let gx = ensure(&mut grads, x.0, &self.nodes[x.0].value.shape.clone());
                    gx.data[*i] += go;
                }
                Op::Dot(a, b) => {
                    let go = g.item();
                    let bt = self.nodes[b.0].value.data.clone();
                    let at = self.nodes[a.0].value.data.clone();
                    {
                        let ga = ensure(&mut grads, a.0, &self.nodes[a.0].value.shape.clone());
                        for (d, v) in ga.data.iter_mut().zip(&bt) {
                            *d += go * v;
                        }
                    }
                    let gb = ensure(&mut grads, b.0, &self.nodes[b.0].value.shape.clone());
                    for (d, v) in gb.data.iter_mut().zip(&at) {
                        *d += go * v;
                    }
                }
                Op::Sum(x) => {
                    let go = g.item();
                    let gx = ensure(&mut grads, x.0, &self.nodes[x.0].value.shape.clone());
                    for d in gx.data.iter_mut() {
                        *d += go;
                    }
                }
                Op::Row { table, row } => {
                    let shape = self.nodes[table.0].value.shape.clone();
                    let cols = shape[1];
                    let gt = ensure(&mut grads, table.0, &shape);
                    let dst = &mut gt.data[row * cols..(row + 1) * cols];
                    for (d, v) in dst.iter_mut().zip(&g.data) {
                        *d += v;
                    }
                }
                Op::Stack(xs) => {
                    for (k, x) in xs.iter().enumerate() {
                        let gx = ensure(&mut grads, x.0, &[1]);
                        gx.data[0] += g.data[k];
                    }
                }
            }
        }
        Ok(())
    }
}

fn ensure<'a>(grads: &'a mut [Option<Tensor>], idx: usize, shape: &[usize]) -> &'a mut Tensor {
    if grads[idx].is_none() {
        grads[idx] = Some(Tensor::zeros(shape));
    }
    grads[idx].as_mut().unwrap()
}

fn add_grad(grads: &mut [Option<Tensor>], tape: &Tape, x: NodeId, g: &[f64], c: f64) {
    let shape = tape.nodes[x.0].value.shape.clone();
    let gx = ensure(grads, x.0, &shape);
    for (d, v) in gx.data.iter_mut().zip(g) {
        *d += c * v;
    }
}

fn add_grad_mul(grads: &mut [Option<Tensor>], tape: &Tape, x: NodeId, g: &[f64], local: &[f64]) {
    let shape = tape.nodes[x.0].value.shape.clone();
    let gx = ensure(grads, x.0, &shape);
    for i in 0..g.len() {
        gx.data[i] += g[i] * local[i];
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-(x.abs())).exp().ln_1p()
    }
}

pub(crate) fn softmax_with_temperature_unchecked(logits: &[f64], tau: f64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| ((v - m) / tau).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParameterStore;

    #[test]
    fn matvec_forward() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::from_shape(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let x = tape.constv(vec![1.0, 0.0, -1.0]);
        let y = tape.matvec(w, x);
        assert_eq!(tape.value(y).data, vec![-2.0, -2.0]);
    }

    #[test]
    fn backward_through_quadratic() {
        // loss = sum(theta^2), gradient must be 2*theta
        let mut store = ParameterStore::new();
        store
            .insert("theta", Tensor::from_vec(vec![1.5, -2.0, 0.25]))
            .unwrap();
        let mut tape = Tape::new();
        let t = tape.param(&store, "theta");
        let sq = tape.mul(t, t);
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        let g = store.grad("theta").unwrap();
        assert_eq!(g.data, vec![3.0, -4.0, 0.5]);
    }

    #[test]
    fn logsumexp_matches_naive() {
        let mut tape = Tape::new();
        let x = tape.constv(vec![0.1, -0.3, 2.0]);
        let l = tape.logsumexp(x);
        let naive = (0.1f64.exp() + (-0.3f64).exp() + 2.0f64.exp()).ln();
        assert!((tape.value(l).item() - naive).abs() < 1e-12);
    }
}
