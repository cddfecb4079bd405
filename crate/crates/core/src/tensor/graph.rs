use std::collections::HashMap;

use super::kernels::{self, exact_sum, mm_acc, mm_exact_acc, mm_nt_acc, mm_tn_acc};
use super::{ParamId, ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Bmm { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Permute { x: Var, axes: Vec<usize> },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Sum(Var),
    Mean(Var),
    Mse { x: Var, target: Vec<f64>, weights: Option<Vec<f64>>, denom: f64 },
    Embedding { table: Var, indices: Vec<usize> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run record of tensor operations.
///
/// Parameters enter through [`Graph::param`]; constants through
/// [`Graph::constant`]. Frozen parameters are recorded as constants.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    exact: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose softmax denominators and batched products are summed
    /// with correct rounding, so their forward values do not depend on the
    /// order of the summed terms. Slower; used to check permutation
    /// equivariance bit for bit.
    pub fn deterministic() -> Self {
        Self {
            exact: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records the current value of a stored parameter; repeated calls share one node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let trainable = store.trainable(id);
        let op = if trainable { Op::Param(id) } else { Op::Leaf };
        let v = self.push(store.value(id).clone(), op, trainable);
        self.params.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        Ok(self.param(store, store.id(name)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// `a[..., n] + b[n]`, broadcasting `b` over the leading axes.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = tb.len();
        if tb.shape().len() != 1 || ta.shape().last() != Some(&n) {
            return Err(shape_err("add_row", ta.shape(), tb.shape()));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(tb.data()).for_each(|(x, y)| *x += y);
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::AddRow(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * s).collect()).unwrap();
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// `a[..., k] · b[k, n]`; the leading axes of `a` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.shape().len() != 2 || ta.shape().is_empty() || ta.shape().last() != Some(&tb.shape()[0]) {
            return Err(shape_err("matmul", ta.shape(), tb.shape()));
        }
        let k = tb.shape()[0];
        let n = tb.shape()[1];
        let m = ta.len() / k.max(1);
        let mut out = vec![0.0; m * n];
        mm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(shape, out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul { a, b, m, k, n }, ng))
    }

    /// Batched `a[b, m, k] · b[b, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * m * n];
        let kernel = if self.exact { mm_exact_acc } else { mm_acc };
        for i in 0..batch {
            kernel(
                &ta.data()[i * m * k..(i + 1) * m * k],
                &tb.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::new([batch, m, n], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Bmm { a, b, batch, m, k, n }, ng))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rank = t.shape().len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(shape_err("permute", t.shape(), axes));
        }
        let (data, shape) = kernels::permute(t.data(), t.shape(), axes);
        let out = Tensor::new(shape, data)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Permute { x, axes: axes.to_vec() }, ng))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(shape_err("transpose", self.shape(x), &[2]));
        }
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(shape_err("reshape", t.shape(), shape));
        }
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat of nothing".into()));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::Concat { parts: parts.to_vec(), axis }, ng))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(shape_err("slice", s, &[axis, start, len]));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Slice { x, axis, start }, ng))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = *t.shape().last().ok_or_else(|| shape_err("softmax", t.shape(), &[]))?;
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(n.max(1)) {
            if self.exact {
                softmax_exact_in_place(row);
            } else {
                softmax_in_place(row);
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    /// Normalizes the last axis to zero mean, unit variance (ε = 1e-5), then
    /// applies `gamma ⊙ · + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (t, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let n = *t.shape().last().ok_or_else(|| shape_err("layer_norm", t.shape(), &[]))?;
        if g.shape() != [n] || b.shape() != [n] {
            return Err(shape_err("layer_norm", t.shape(), g.shape()));
        }
        let rows = t.len() / n;
        let mut xhat = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks_exact(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g.data()[j] + b.data()[j]);
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| kernels::gelu(v)).collect()).unwrap();
        let ng = self.needs(x);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        self.mse_weighted(x, target, None)
    }

    /// `Σ w·(x − target)² / Σ w`; zero when every weight is zero.
    pub fn mse_weighted(&mut self, x: Var, target: &Tensor, weights: Option<&Tensor>) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != target.shape() {
            return Err(shape_err("mse", t.shape(), target.shape()));
        }
        if let Some(w) = weights {
            if w.shape() != t.shape() {
                return Err(shape_err("mse", t.shape(), w.shape()));
            }
        }
        let (num, denom) = match weights {
            Some(w) => t
                .data()
                .iter()
                .zip(target.data())
                .zip(w.data())
                .fold((0.0, 0.0), |(n, d), ((a, b), w)| (n + w * (a - b) * (a - b), d + w)),
            None => (
                t.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum(),
                t.len() as f64,
            ),
        };
        let loss = if denom > 0.0 { num / denom } else { 0.0 };
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                x,
                target: target.data().to_vec(),
                weights: weights.map(|w| w.data().to_vec()),
                denom,
            },
            ng,
        ))
    }

    /// Rows `indices` of `table[n, d]`, giving `[indices.len(), d]`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(shape_err("embedding_lookup", t.shape(), &[2]));
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index(format!("embedding row {i} of {rows}")));
            }
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::new([indices.len(), d], data)?;
        let ng = self.needs(table);
        Ok(self.push(out, Op::Embedding { table, indices: indices.to_vec() }, ng))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits[b, k])`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let s = t.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(shape_err("cross_entropy", s, &[labels.len()]));
        }
        let k = s[1];
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (row, &y) in probs.chunks_exact_mut(k).zip(labels) {
            if y >= k {
                return Err(Error::Index(format!("label {y} with {k} classes")));
            }
            softmax_in_place(row);
            loss -= row[y].max(f64::MIN_POSITIVE).ln();
        }
        loss /= labels.len().max(1) as f64;
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            ng,
        ))
    }

    /// Inverted dropout with a caller-supplied keep mask source.
    pub fn dropout(&mut self, x: Var, p: f64, mut uniform: impl FnMut() -> f64) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let keep = 1.0 / (1.0 - p);
        let mask = Tensor::from_fn(shape, |_| if uniform() >= p { keep } else { 0.0 });
        let m = self.constant(mask);
        self.mul(x, m)
    }

    /// Adds `∂loss/∂p` for every trainable parameter reached from `loss` into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        self.backward_scaled(loss, store, 1.0)
    }

    /// Like [`Graph::backward`] with gradients multiplied by `scale`.
    pub fn backward_scaled(&self, loss: Var, store: &mut ParameterStore, scale: f64) -> Result<()> {
        for (id, g) in self.param_gradients(loss, scale)? {
            store.accumulate_grad(id, &g, 1.0);
        }
        Ok(())
    }

    /// `scale · ∂loss/∂p` for every trainable parameter on the tape, without
    /// touching the store.
    pub fn param_gradients(&self, loss: Var, scale: f64) -> Result<Vec<(ParamId, Vec<f64>)>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![scale]);
        let mut out = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                out.push((id, g));
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut send = |v: Var, contribution: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                slot => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::AddRow(a, b) => {
                let n = self.value(*b).len();
                let mut gb = vec![0.0; n];
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
                send(*a, g.to_vec());
                send(*b, gb);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    send(*a, g.iter().zip(tb).map(|(x, y)| x * y).collect());
                }
                if self.needs(*b) {
                    send(*b, g.iter().zip(ta).map(|(x, y)| x * y).collect());
                }
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|x| x * s).collect()),
            &Op::MatMul { a, b, m, k, n } => {
                if self.needs(a) {
                    let mut ga = vec![0.0; m * k];
                    mm_nt_acc(g, self.value(b).data(), &mut ga, m, n, k);
                    send(a, ga);
                }
                if self.needs(b) {
                    let mut gb = vec![0.0; k * n];
                    mm_tn_acc(self.value(a).data(), g, &mut gb, k, m, n);
                    send(b, gb);
                }
            }
            &Op::Bmm { a, b, batch, m, k, n } => {
                let (ta, tb) = (self.value(a).data(), self.value(b).data());
                if self.needs(a) {
                    let mut ga = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        mm_nt_acc(
                            &g[i * m * n..(i + 1) * m * n],
                            &tb[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    send(a, ga);
                }
                if self.needs(b) {
                    let mut gb = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        mm_tn_acc(
                            &ta[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                    send(b, gb);
                }
            }
            Op::Permute { x, axes } => {
                let (back, _) = kernels::permute(g, node.value.shape(), &kernels::inverse_axes(axes));
                send(*x, back);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let d = self.shape(p)[*axis];
                    if self.needs(p) {
                        let mut gp = Vec::with_capacity(outer * d * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + d * inner]);
                        }
                        send(p, gp);
                    }
                    offset += d;
                }
            }
            &Op::Slice { x, axis, start } => {
                let src = self.shape(x);
                let outer: usize = src[..axis].iter().product();
                let inner: usize = src[axis + 1..].iter().product();
                let len = node.value.shape()[axis];
                let mut gx = vec![0.0; self.value(x).len()];
                for o in 0..outer {
                    let dst = (o * src[axis] + start) * inner;
                    let from = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[from..from + len * inner]);
                }
                send(x, gx);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                let mut gx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks_exact(n).zip(g.chunks_exact(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                send(*x, gx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gam = self.value(*gamma).data();
                let n = gam.len();
                let mut gg = vec![0.0; n];
                let mut gb = vec![0.0; n];
                let mut gx = Vec::with_capacity(g.len());
                for ((gr, hr), is) in g.chunks_exact(n).zip(xhat.chunks_exact(n)).zip(inv_std) {
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..n {
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                        let d = gr[j] * gam[j];
                        mean_d += d;
                        mean_dh += d * hr[j];
                    }
                    mean_d /= n as f64;
                    mean_dh /= n as f64;
                    for j in 0..n {
                        let d = gr[j] * gam[j];
                        gx.push(is * (d - mean_d - hr[j] * mean_dh));
                    }
                }
                send(*x, gx);
                send(*gamma, gg);
                send(*beta, gb);
            }
            Op::Gelu(x) => {
                let xs = self.value(*x).data();
                send(*x, g.iter().zip(xs).map(|(gv, &v)| gv * kernels::gelu_grad(v)).collect());
            }
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::Mse { x, target, weights, denom } => {
                if *denom > 0.0 {
                    let xs = self.value(*x).data();
                    let c = 2.0 * g[0] / denom;
                    let gx = match weights {
                        Some(w) => xs
                            .iter()
                            .zip(target)
                            .zip(w)
                            .map(|((a, b), w)| c * w * (a - b))
                            .collect(),
                        None => xs.iter().zip(target).map(|(a, b)| c * (a - b)).collect(),
                    };
                    send(*x, gx);
                }
            }
            Op::Embedding { table, indices } => {
                let t = self.value(*table);
                let d = t.shape()[1];
                let mut gt = vec![0.0; t.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] += g[r * d + j];
                    }
                }
                send(*table, gt);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = probs.len() / labels.len().max(1);
                let scale = g[0] / labels.len().max(1) as f64;
                let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (b, &y) in labels.iter().enumerate() {
                    gx[b * k + y] -= scale;
                }
                send(*logits, gx);
            }
        }
    }
}

fn softmax_exact_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter_mut().for_each(|v| *v = (*v - max).exp());
    let sum = exact_sum(row.iter().copied());
    row.iter_mut().for_each(|v| *v /= sum);
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(t: Tensor) -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.insert("p", t).unwrap();
        (s, id)
    }

    #[test]
    fn uniform_softmax() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([4]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), [0.25; 4]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let a = Tensor::from_fn([3, 2], |i| i as f64 * 0.5 - 1.0);
        let i3 = g.constant(Tensor::eye(3));
        let av = g.constant(a.clone());
        let y = g.matmul(i3, av).unwrap();
        assert_eq!(g.value(y), &a);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let (mut s, id) = store_with(Tensor::from_fn([2, 3], |i| i as f64));
        let mut g = Graph::new();
        let p = g.param(&s, id);
        let l = g.sum(p);
        g.backward(l, &mut s).unwrap();
        assert_eq!(s.grad(id).data(), [1.0; 6]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let (mut s, id) = store_with(Tensor::from_fn([3], |i| i as f64 - 1.0));
        let mut g = Graph::new();
        let p = g.param(&s, id);
        let l = g.mse(p, &Tensor::full([3], 0.5)).unwrap();
        g.backward(l, &mut s).unwrap();
        let once = s.grad(id).clone();
        g.backward(l, &mut s).unwrap();
        for (a, b) in s.grad(id).data().iter().zip(once.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let (mut s, id) = store_with(Tensor::zeros([2]));
        let mut g = Graph::new();
        let p = g.param(&s, id);
        assert_eq!(g.backward(p, &mut s).unwrap_err().kind(), "ContractError");
    }

    #[test]
    fn shape_error_names_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let (mut s, id) = store_with(Tensor::full([2], 1.0));
        s.set_trainable(id, false);
        let mut g = Graph::new();
        let p = g.param(&s, id);
        let l = g.sum(p);
        g.backward(l, &mut s).unwrap();
        assert_eq!(s.grad(id).data(), [0.0, 0.0]);
    }
}
