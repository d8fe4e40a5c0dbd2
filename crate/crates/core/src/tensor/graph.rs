//! Per-forward-pass tape.
//!
//! Every op appends a node holding its output value and whatever it needs
//! for the backward pass. Nodes are only ever appended, so insertion order is
//! a topological order and [`Graph::backward`] walks it in reverse, visiting
//! each node once.

use std::collections::{BTreeMap, HashMap};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Result, Scalar, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<F> {
    Input,
    Param(String),
    /// `x[.., k] · w[k, n]`
    MatMul(NodeId, NodeId),
    /// `a[b, m, k] · b[b, k, n]`, or `· b[b, n, k]ᵀ` when transposed.
    BatchMatMul { a: NodeId, b: NodeId, transpose_b: bool },
    Add(NodeId, NodeId),
    /// `a + b` where `b`'s shape is a suffix of `a`'s.
    AddTrailing(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    Relu(NodeId),
    Gelu(NodeId),
    Softmax(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, normalized: Vec<F>, inv_std: Vec<F> },
    Mean { a: NodeId, axis: usize },
    Sum(NodeId),
    SplitHeads { a: NodeId, heads: usize },
    MergeHeads { a: NodeId, heads: usize },
    Dropout { a: NodeId, keep: Vec<F> },
    L1 { pred: NodeId, target: NodeId, mask: Vec<bool>, count: usize },
    CrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<F> },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients of a scalar loss keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<F> {
    grads: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor<F>> {
        self.grads
    }

    pub fn from_map(grads: BTreeMap<String, Tensor<F>>) -> Self {
        Self { grads }
    }

    /// `self += weight · other`, inserting names that are missing.
    pub fn accumulate(&mut self, other: &Gradients<F>, weight: F) {
        for (name, g) in &other.grads {
            match self.grads.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data.iter_mut().zip(&g.data) {
                        *a = *a + weight * *b;
                    }
                }
                None => {
                    let scaled = g.data.iter().map(|v| weight * *v).collect();
                    self.grads.insert(name.clone(), Tensor { shape: g.shape.clone(), data: scaled });
                }
            }
        }
    }
}

/// A reverse-mode tape for one forward pass.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    params: HashMap<String, NodeId>,
    consumed: bool,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(TensorError::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() })
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), consumed: false }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<F>, op: Op<F>, parents: &[NodeId]) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let needs_grad = matches!(op, Op::Param(_)) || parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<F>) -> Result<NodeId> {
        self.push("input", value, Op::Input, &[])
    }

    /// Records a named trainable leaf. Registering a name twice returns the
    /// existing node.
    pub fn param(&mut self, name: &str, value: &Tensor<F>) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let id = self.push("param", value.clone(), Op::Param(name.to_string()), &[])?;
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers `name` from a parameter store.
    pub fn param_from(&mut self, store: &ParamStore<F>, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let t = store
            .get(name)
            .ok_or_else(|| TensorError::Invalid { op: "param", reason: format!("unknown parameter {name}") })?;
        self.param(name, t)
    }

    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.is_empty() || ws.len() != 2 || *xs.last().unwrap() != ws[0] {
            return shape_err("matmul", xs, ws);
        }
        let k = ws[0];
        let n = ws[1];
        let m = self.value(x).len() / k.max(1);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, &self.value(x).data, (k, 1), &self.value(w).data, (n, 1), F::zero(), &mut out);
        self.push("matmul", Tensor { shape, data: out }, Op::MatMul(x, w), &[x, w])
    }

    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] {
            return shape_err("batch_matmul", as_, bs);
        }
        let (batch, m, k) = (as_[0], as_[1], as_[2]);
        let (kb, n) = if transpose_b { (bs[2], bs[1]) } else { (bs[1], bs[2]) };
        if kb != k {
            return shape_err("batch_matmul", as_, bs);
        }
        let mut out = vec![F::zero(); batch * m * n];
        let (av, bv) = (&self.value(a).data, &self.value(b).data);
        let b_strides = if transpose_b { (1, k) } else { (n, 1) };
        for i in 0..batch {
            F::gemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                (k, 1),
                &bv[i * k * n..(i + 1) * k * n],
                b_strides,
                F::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.push("batch_matmul", Tensor { shape: vec![batch, m, n], data: out }, Op::BatchMatMul { a, b, transpose_b }, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return shape_err("add", self.shape(a), self.shape(b));
        }
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| *x + *y).collect();
        let shape = self.shape(a).to_vec();
        self.push("add", Tensor { shape, data }, Op::Add(a, b), &[a, b])
    }

    /// Adds `b` to every trailing block of `a` (bias and positional terms).
    pub fn add_trailing(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if bs.len() > as_.len() || as_[as_.len() - bs.len()..] != *bs {
            return shape_err("add_trailing", as_, bs);
        }
        let bv = &self.value(b).data;
        let block = bv.len();
        let data = self.value(a).data.chunks(block.max(1)).flat_map(|row| row.iter().zip(bv).map(|(x, y)| *x + *y)).collect();
        let shape = as_.to_vec();
        self.push("add_trailing", Tensor { shape, data }, Op::AddTrailing(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return shape_err("mul", self.shape(a), self.shape(b));
        }
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| *x * *y).collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", Tensor { shape, data }, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, factor: F) -> Result<NodeId> {
        let value = Tensor { shape: self.shape(a).to_vec(), data: self.value(a).data.iter().map(|x| *x * factor).collect() };
        self.push("scale", value, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Tensor { shape: self.shape(a).to_vec(), data: self.value(a).data.iter().map(|x| x.max(F::zero())).collect() };
        self.push("relu", value, Op::Relu(a), &[a])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Tensor { shape: self.shape(a).to_vec(), data: self.value(a).data.iter().map(|&x| gelu(x)).collect() };
        self.push("gelu", value, Op::Gelu(a), &[a])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().ok_or(TensorError::Invalid { op: "softmax", reason: "rank-0 input".into() })?;
        let mut data = self.value(a).data.clone();
        for row in data.chunks_mut(n.max(1)) {
            let max = lane_fold(row, F::neg_infinity(), |m, v| if v > m { v } else { m });
            for v in row.iter_mut() {
                *v = *v - max;
            }
            F::exp_in_place(row);
            let sum = lane_fold(row, F::zero(), |a, v| a + v);
            let inv = F::one() / sum;
            for v in row.iter_mut() {
                *v = *v * inv;
            }
        }
        self.push("softmax", Tensor { shape, data }, Op::Softmax(a), &[a])
    }

    /// Per-row normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: F) -> Result<NodeId> {
        if eps <= F::zero() {
            return Err(TensorError::Invalid { op: "layer_norm", reason: "epsilon must be positive".into() });
        }
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or(TensorError::Invalid { op: "layer_norm", reason: "rank-0 input".into() })?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return shape_err("layer_norm", &shape, self.shape(gain));
        }
        let nf = F::from_f64(n as f64);
        let (g, b) = (&self.value(gain).data, &self.value(bias).data);
        let xv = &self.value(x).data;
        let rows = xv.len() / n.max(1);
        let mut normalized = vec![F::zero(); xv.len()];
        let mut inv_std = vec![F::zero(); rows];
        let mut out = vec![F::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let is = F::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let xh = (row[j] - mean) * is;
                normalized[r * n + j] = xh;
                out[r * n + j] = xh * g[j] + b[j];
            }
        }
        self.push("layer_norm", Tensor { shape, data: out }, Op::LayerNorm { x, gain, bias, normalized, inv_std }, &[x, gain, bias])
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Invalid { op: "mean", reason: format!("axis {axis} out of range for {shape:?}") });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let av = &self.value(a).data;
        let inv = F::one() / F::from_f64(len.max(1) as f64);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &av[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d = *d + *s;
                }
            }
        }
        for v in &mut out {
            *v = *v * inv;
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push("mean", Tensor { shape: out_shape, data: out }, Op::Mean { a, axis }, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.value(a).data.iter().copied().sum::<F>();
        self.push("sum", Tensor::scalar(total), Op::Sum(a), &[a])
    }

    /// `[b, t, heads·d] → [b·heads, t, d]`
    pub fn split_heads(&mut self, a: NodeId, heads: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return shape_err("split_heads", &s, &[heads]);
        }
        let (b, t, d) = (s[0], s[1], s[2] / heads);
        let av = &self.value(a).data;
        let mut out = vec![F::zero(); av.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let src = (bi * t + ti) * s[2] + h * d;
                    let dst = ((bi * heads + h) * t + ti) * d;
                    out[dst..dst + d].copy_from_slice(&av[src..src + d]);
                }
            }
        }
        self.push("split_heads", Tensor { shape: vec![b * heads, t, d], data: out }, Op::SplitHeads { a, heads }, &[a])
    }

    /// `[b·heads, t, d] → [b, t, heads·d]`
    pub fn merge_heads(&mut self, a: NodeId, heads: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 {
            return shape_err("merge_heads", &s, &[heads]);
        }
        let (b, t, d) = (s[0] / heads, s[1], s[2]);
        let av = &self.value(a).data;
        let mut out = vec![F::zero(); av.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let dst = (bi * t + ti) * heads * d + h * d;
                    let src = ((bi * heads + h) * t + ti) * d;
                    out[dst..dst + d].copy_from_slice(&av[src..src + d]);
                }
            }
        }
        self.push("merge_heads", Tensor { shape: vec![b, t, heads * d], data: out }, Op::MergeHeads { a, heads }, &[a])
    }

    /// Inverted dropout driven by its own seeded stream. A rate of zero
    /// returns `a` unchanged without recording a node.
    pub fn dropout(&mut self, a: NodeId, rate: f64, seed: u64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Invalid { op: "dropout", reason: format!("rate {rate} outside [0, 1)") });
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = F::from_f64(1.0 / (1.0 - rate));
        let av = &self.value(a).data;
        // Drop when a uniform 32-bit draw falls below rate · 2^32.
        let threshold = (rate * 4_294_967_296.0) as u64;
        let keep: Vec<F> = (0..av.len()).map(|_| if (rng.next_u32() as u64) < threshold { F::zero() } else { scale }).collect();
        let data = av.iter().zip(&keep).map(|(x, k)| *x * *k).collect();
        let shape = self.shape(a).to_vec();
        self.push("dropout", Tensor { shape, data }, Op::Dropout { a, keep }, &[a])
    }

    /// Mean absolute error over positions where `mask` is true. An empty
    /// mask yields a loss of exactly zero.
    pub fn l1_loss(&mut self, pred: NodeId, target: NodeId, mask: &[bool]) -> Result<NodeId> {
        if self.shape(pred) != self.shape(target) {
            return shape_err("l1_loss", self.shape(pred), self.shape(target));
        }
        if mask.len() != self.value(pred).len() {
            return shape_err("l1_loss", self.shape(pred), &[mask.len()]);
        }
        let count = mask.iter().filter(|m| **m).count();
        let mut total = F::zero();
        for ((p, t), m) in self.value(pred).data.iter().zip(&self.value(target).data).zip(mask) {
            if *m {
                total = total + (*p - *t).abs();
            }
        }
        let loss = if count == 0 { F::zero() } else { total / F::from_f64(count as f64) };
        self.push("l1_loss", Tensor::scalar(loss), Op::L1 { pred, target, mask: mask.to_vec(), count }, &[pred, target])
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return shape_err("cross_entropy", &s, &[labels.len()]);
        }
        let classes = s[1];
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::Invalid { op: "cross_entropy", reason: format!("label {bad} out of range for {classes} classes") });
        }
        let lv = &self.value(logits).data;
        let mut probs = vec![F::zero(); lv.len()];
        let mut total = F::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv[r * classes..(r + 1) * classes];
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
            for j in 0..classes {
                probs[r * classes + j] = (row[j] - lse).exp();
            }
            total = total + lse - row[label];
        }
        let loss = total / F::from_f64(labels.len().max(1) as f64);
        self.push("cross_entropy", Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, &[logits])
    }

    /// Reverse pass from a scalar `loss`. Returns one gradient per parameter
    /// leaf that influences the loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<F>> {
        if self.consumed {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        let mut out = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(name) => {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(TensorError::NonFinite { op: "backward" });
                    }
                    out.insert(name.clone(), Tensor { shape: node.value.shape.clone(), data: g });
                }
                op => {
                    for (parent, pg) in self.local_grads(op, &node.value, g) {
                        if !self.nodes[parent.0].needs_grad {
                            continue;
                        }
                        match &mut grads[parent.0] {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a = *a + *b),
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: out })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Vector-Jacobian products of one op for each parent that needs them.
    /// Elementwise ops reuse the incoming gradient buffer.
    fn local_grads(&self, op: &Op<F>, out: &Tensor<F>, mut g: Vec<F>) -> Vec<(NodeId, Vec<F>)> {
        let mut res = Vec::with_capacity(3);
        match op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (k, n) = (wv.shape[0], wv.shape[1]);
                let m = xv.len() / k.max(1);
                if self.needs(*x) {
                    let mut dx = vec![F::zero(); m * k];
                    F::gemm(m, n, k, &g, (n, 1), &wv.data, (1, n), F::zero(), &mut dx);
                    res.push((*x, dx));
                }
                if self.needs(*w) {
                    let mut dw = vec![F::zero(); k * n];
                    F::gemm(k, m, n, &xv.data, (1, k), &g, (n, 1), F::zero(), &mut dw);
                    res.push((*w, dw));
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (av.shape[0], av.shape[1], av.shape[2]);
                let n = out.shape[2];
                if self.needs(*a) {
                    let mut da = vec![F::zero(); av.len()];
                    // da = g · bᵀ  (b stored [k,n], or [n,k] when transposed)
                    let b_strides = if *transpose_b { (k, 1) } else { (1, n) };
                    for i in 0..batch {
                        F::gemm(m, n, k, &g[i * m * n..(i + 1) * m * n], (n, 1), &bv.data[i * k * n..(i + 1) * k * n], b_strides, F::zero(), &mut da[i * m * k..(i + 1) * m * k]);
                    }
                    res.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![F::zero(); bv.len()];
                    for i in 0..batch {
                        let ga = &g[i * m * n..(i + 1) * m * n];
                        let aa = &av.data[i * m * k..(i + 1) * m * k];
                        let dst = &mut db[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            // db[n,k] = gᵀ · a
                            F::gemm(n, m, k, ga, (1, n), aa, (k, 1), F::zero(), dst);
                        } else {
                            // db[k,n] = aᵀ · g
                            F::gemm(k, m, n, aa, (1, k), ga, (n, 1), F::zero(), dst);
                        }
                    }
                    res.push((*b, db));
                }
            }
            Op::Add(a, b) => match (self.needs(*a), self.needs(*b)) {
                (true, true) => {
                    res.push((*a, g.clone()));
                    res.push((*b, g));
                }
                (true, false) => res.push((*a, g)),
                (false, true) => res.push((*b, g)),
                (false, false) => {}
            },
            Op::AddTrailing(a, b) => {
                if self.needs(*b) {
                    let block = self.value(*b).len();
                    let mut db = vec![F::zero(); block];
                    for row in g.chunks(block.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d = *d + *v);
                    }
                    res.push((*b, db));
                }
                if self.needs(*a) {
                    res.push((*a, g));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                if self.needs(*b) {
                    res.push((*b, g.iter().zip(av).map(|(g, a)| *g * *a).collect()));
                }
                if self.needs(*a) {
                    g.iter_mut().zip(bv).for_each(|(g, b)| *g = *g * *b);
                    res.push((*a, g));
                }
            }
            Op::Scale(a, f) => {
                g.iter_mut().for_each(|v| *v = *v * *f);
                res.push((*a, g));
            }
            Op::Relu(a) => {
                let av = &self.value(*a).data;
                g.iter_mut().zip(av).for_each(|(g, x)| {
                    if *x <= F::zero() {
                        *g = F::zero();
                    }
                });
                res.push((*a, g));
            }
            Op::Gelu(a) => {
                let av = &self.value(*a).data;
                g.iter_mut().zip(av).for_each(|(g, &x)| *g = *g * gelu_grad(x));
                res.push((*a, g));
            }
            Op::Softmax(a) => {
                let n = *out.shape.last().unwrap();
                for (y, gy) in out.data.chunks(n).zip(g.chunks_mut(n)) {
                    let dot = dot_lanes(y, gy);
                    for j in 0..n {
                        gy[j] = y[j] * (gy[j] - dot);
                    }
                }
                res.push((*a, g));
            }
            Op::LayerNorm { x, gain, bias, normalized, inv_std } => {
                let n = *out.shape.last().unwrap();
                let nf = F::from_f64(n as f64);
                let gv = &self.value(*gain).data;
                if self.needs(*gain) {
                    let mut dg = vec![F::zero(); n];
                    for (gy, xh) in g.chunks(n).zip(normalized.chunks(n)) {
                        for j in 0..n {
                            dg[j] = dg[j] + gy[j] * xh[j];
                        }
                    }
                    res.push((*gain, dg));
                }
                if self.needs(*bias) {
                    let mut db = vec![F::zero(); n];
                    for gy in g.chunks(n) {
                        db.iter_mut().zip(gy).for_each(|(d, v)| *d = *d + *v);
                    }
                    res.push((*bias, db));
                }
                if self.needs(*x) {
                    for (r, is) in inv_std.iter().enumerate() {
                        let gy = &mut g[r * n..(r + 1) * n];
                        let xh = &normalized[r * n..(r + 1) * n];
                        let mut sum_d = F::zero();
                        let mut sum_dx = F::zero();
                        for j in 0..n {
                            let d = gy[j] * gv[j];
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * xh[j];
                        }
                        for j in 0..n {
                            let d = gy[j] * gv[j];
                            gy[j] = *is / nf * (nf * d - sum_d - xh[j] * sum_dx);
                        }
                    }
                    res.push((*x, g));
                }
            }
            Op::Mean { a, axis } => {
                let shape = &self.value(*a).shape;
                let outer: usize = shape[..*axis].iter().product();
                let len = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let inv = F::one() / F::from_f64(len.max(1) as f64);
                let mut da = vec![F::zero(); outer * len * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let dst = &mut da[(o * len + l) * inner..(o * len + l + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d = *s * inv);
                    }
                }
                res.push((*a, da));
            }
            Op::Sum(a) => res.push((*a, vec![g[0]; self.value(*a).len()])),
            Op::SplitHeads { a, heads } => {
                let s = &self.value(*a).shape;
                let (b, t, d) = (s[0], s[1], s[2] / heads);
                let mut da = vec![F::zero(); g.len()];
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let dst = (bi * t + ti) * s[2] + h * d;
                            let src = ((bi * heads + h) * t + ti) * d;
                            da[dst..dst + d].copy_from_slice(&g[src..src + d]);
                        }
                    }
                }
                res.push((*a, da));
            }
            Op::MergeHeads { a, heads } => {
                let s = &self.value(*a).shape;
                let (b, t, d) = (s[0] / heads, s[1], s[2]);
                let mut da = vec![F::zero(); g.len()];
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let src = (bi * t + ti) * heads * d + h * d;
                            let dst = ((bi * heads + h) * t + ti) * d;
                            da[dst..dst + d].copy_from_slice(&g[src..src + d]);
                        }
                    }
                }
                res.push((*a, da));
            }
            Op::Dropout { a, keep } => {
                g.iter_mut().zip(keep).for_each(|(g, k)| *g = *g * *k);
                res.push((*a, g));
            }
            Op::L1 { pred, target, mask, count } => {
                let (pv, tv) = (&self.value(*pred).data, &self.value(*target).data);
                let scale = if *count == 0 { F::zero() } else { g[0] / F::from_f64(*count as f64) };
                let sign: Vec<F> = pv
                    .iter()
                    .zip(tv)
                    .zip(mask)
                    .map(|((p, t), m)| {
                        if !*m || p == t {
                            F::zero()
                        } else if p > t {
                            scale
                        } else {
                            -scale
                        }
                    })
                    .collect();
                if self.needs(*target) {
                    res.push((*target, sign.iter().map(|v| -*v).collect()));
                }
                if self.needs(*pred) {
                    res.push((*pred, sign));
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = probs.len() / labels.len().max(1);
                let scale = g[0] / F::from_f64(labels.len().max(1) as f64);
                let mut dl: Vec<F> = probs.iter().map(|p| *p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dl[r * classes + l] = dl[r * classes + l] - scale;
                }
                res.push((*logits, dl));
            }
        }
        res
    }
}

fn dot_lanes<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(F::zero(), |s, (x, y)| s + *x * *y);
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    acc.iter().fold(tail, |s, v| s + *v)
}

/// Folds with eight independent accumulators so the loop can vectorize.
/// `f` must be associative and commutative up to rounding.
fn lane_fold<F: Scalar>(xs: &[F], init: F, f: impl Fn(F, F) -> F) -> F {
    let mut acc = [init; 8];
    let mut chunks = xs.chunks_exact(8);
    for c in &mut chunks {
        for (a, v) in acc.iter_mut().zip(c) {
            *a = f(*a, *v);
        }
    }
    let tail = chunks.remainder().iter().fold(init, |a, v| f(a, *v));
    acc.iter().fold(tail, |a, b| f(a, *b))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let k = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    half * x * (F::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let k = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (F::one() + F::from_f64(3.0) * k * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * dinner
}
