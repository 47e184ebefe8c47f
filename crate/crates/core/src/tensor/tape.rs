use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{bmm_dims, gelu_grad, gemm, reduce_to_shape, zip_broadcast, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Matmul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    Sum { x: Var, axis: Option<usize> },
    Mean { x: Var, axis: Option<usize> },
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Square(Var),
    Gather { table: Var, indices: Vec<usize> },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed operations.
///
/// Values are computed eagerly as operations are recorded. `backward`
/// replays each node's local rule in reverse execution order and
/// accumulates (`+=`) into per-node gradient buffers.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node. Handles issued before the call become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
        self.id = NEXT_TAPE.fetch_add(1, Ordering::Relaxed);
    }

    /// Resets gradient buffers so `backward` may run again.
    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// Records a constant (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, false, Op::Leaf)
    }

    /// Records a leaf that receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        self.check(v)?;
        Ok(self.nodes[v.index].requires_grad)
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Result<Option<&Tensor>> {
        self.check(v)?;
        Ok(self.grads[v.index].as_ref())
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::NoTape);
        }
        Ok(())
    }

    fn push_raw(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.push_raw(value, requires_grad, op)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.val(a).add(self.val(b))?;
        Ok(self.push(out, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.val(a).sub(self.val(b))?;
        Ok(self.push(out, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.val(a).mul(self.val(b))?;
        Ok(self.push(out, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).scale(s);
        Ok(self.push(out, &[x], Op::Scale(x, s)))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).add_scalar(s);
        Ok(self.push(out, &[x], Op::AddScalar(x)))
    }

    /// `a: [.., m, k]` times `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.val(a).matmul(self.val(b))?;
        Ok(self.push(out, &[a, b], Op::Matmul(a, b)))
    }

    /// Batched `[B, m, k] · [B, k, n]`, or `[B, m, k] · [B, n, k]ᵀ`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.val(a).bmm(self.val(b), trans_b)?;
        Ok(self.push(out, &[a, b], Op::Bmm { a, b, trans_b }))
    }

    pub fn sum(&mut self, x: Var, axis: Option<usize>, keepdim: bool) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).sum_axis(axis, keepdim)?;
        Ok(self.push(out, &[x], Op::Sum { x, axis }))
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>, keepdim: bool) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).mean_axis(axis, keepdim)?;
        Ok(self.push(out, &[x], Op::Mean { x, axis }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).softmax()?;
        Ok(self.push(out, &[x], Op::Softmax(x)))
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        if eps <= 0.0 {
            return Err(Error::Precondition(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let xv = self.val(x);
        let d = *xv.shape().last().ok_or_else(|| Error::Shape("layer_norm on a scalar".into()))?;
        if self.val(gamma).shape() != [d] || self.val(beta).shape() != [d] {
            return Err(Error::dim("layer_norm", xv.shape(), self.val(gamma).shape()));
        }
        let rows = xv.len() / d;
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        for row in xv.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            xhat.extend(row.iter().map(|v| (v - mean) * r));
        }
        let g = self.val(gamma).data();
        let b = self.val(beta).data();
        let out: Vec<f64> = xhat
            .chunks(d)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((h, g), b)| h * g + b))
            .collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.push(
            out,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).relu();
        Ok(self.push(out, &[x], Op::Relu(x)))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).gelu();
        Ok(self.push(out, &[x], Op::Gelu(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).map(f64::tanh);
        Ok(self.push(out, &[x], Op::Tanh(x)))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).map(|v| v * v);
        Ok(self.push(out, &[x], Op::Square(x)))
    }

    /// Rows `indices` of a `[S, d]` table, stacked into `[len, d]`.
    /// `name` labels the table in out-of-range errors.
    pub fn gather(&mut self, table: Var, indices: &[usize], name: &str) -> Result<Var> {
        self.check(table)?;
        let t = self.val(table);
        if t.rank() != 2 {
            return Err(Error::Shape(format!("gather table must be 2-D, got {:?}", t.shape())));
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        if indices.is_empty() {
            return Err(Error::Shape("gather with no indices".into()));
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index {
                    table: name.to_string(),
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![indices.len(), d], out);
        Ok(self.push(
            out,
            &[table],
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).reshape(shape)?;
        Ok(self.push(out, &[x], Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        self.check(x)?;
        let out = self.val(x).permute(perm)?;
        Ok(self.push(
            out,
            &[x],
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        for &x in xs {
            self.check(x)?;
        }
        let base = self.val(first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.val(x).shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.val(x);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::from_parts(shape, data);
        Ok(self.push(
            out,
            xs,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let v = self.val(x);
        let shape = v.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.push(out, &[x], Op::Narrow { x, axis, start }))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. Identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        self.check(x)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Precondition(format!("dropout p must be in [0,1), got {p}")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let shape = self.val(x).shape().to_vec();
        let n = self.val(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Tensor::from_parts(shape, mask));
        self.mul(x, mask)
    }

    /// Runs reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.val(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.val(loss).shape()
            )));
        }
        self.backward_done = true;
        let seed = Tensor::full(self.val(loss).shape(), 1.0);
        accumulate(&self.nodes, &mut self.grads, loss, seed);
        for i in (0..=loss.index).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            backprop_node(&self.nodes, &mut self.grads, &self.nodes[i], &g);
            self.grads[i] = Some(g);
        }
        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if node.requires_grad && grad.is_none() {
                *grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    if !nodes[v.index].requires_grad {
        return;
    }
    match &mut grads[v.index] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.index].requires_grad
}

fn expand_reduced(g: &Tensor, input_shape: &[usize], axis: Option<usize>, scale: f64) -> Tensor {
    match axis {
        None => Tensor::full(input_shape, g.data()[0] * scale),
        Some(axis) => {
            let outer: usize = input_shape[..axis].iter().product();
            let len = input_shape[axis];
            let inner: usize = input_shape[axis + 1..].iter().product();
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let src = &g.data()[o * inner..(o + 1) * inner];
                for _ in 0..len {
                    out.extend(src.iter().map(|v| v * scale));
                }
            }
            Tensor::from_parts(input_shape.to_vec(), out)
        }
    }
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Tensor>], node: &Node, g: &Tensor) {
    let val = |v: Var| &nodes[v.index].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if wants(nodes, *a) {
                accumulate(nodes, grads, *a, reduce_to_shape(g, val(*a).shape()));
            }
            if wants(nodes, *b) {
                accumulate(nodes, grads, *b, reduce_to_shape(g, val(*b).shape()));
            }
        }
        Op::Sub(a, b) => {
            if wants(nodes, *a) {
                accumulate(nodes, grads, *a, reduce_to_shape(g, val(*a).shape()));
            }
            if wants(nodes, *b) {
                accumulate(nodes, grads, *b, reduce_to_shape(&g.scale(-1.0), val(*b).shape()));
            }
        }
        Op::Mul(a, b) => {
            if wants(nodes, *a) {
                let full = zip_broadcast("mul", g, val(*b), |x, y| x * y).expect("shapes checked on forward");
                accumulate(nodes, grads, *a, reduce_to_shape(&full, val(*a).shape()));
            }
            if wants(nodes, *b) {
                let full = zip_broadcast("mul", g, val(*a), |x, y| x * y).expect("shapes checked on forward");
                accumulate(nodes, grads, *b, reduce_to_shape(&full, val(*b).shape()));
            }
        }
        Op::Scale(x, s) => accumulate(nodes, grads, *x, g.scale(*s)),
        Op::AddScalar(x) => accumulate(nodes, grads, *x, g.clone()),
        Op::Matmul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let k = bv.shape()[0];
            let n = bv.shape()[1];
            let m = av.len() / k;
            if wants(nodes, *a) {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, bv.data(), true, &mut ga, false);
                accumulate(nodes, grads, *a, Tensor::from_parts(av.shape().to_vec(), ga));
            }
            if wants(nodes, *b) {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g.data(), false, &mut gb, false);
                accumulate(nodes, grads, *b, Tensor::from_parts(vec![k, n], gb));
            }
        }
        Op::Bmm { a, b, trans_b } => {
            let (av, bv) = (val(*a), val(*b));
            let (batch, m, k, n) = bmm_dims(av.shape(), bv.shape(), *trans_b).expect("checked on forward");
            if wants(nodes, *a) {
                let mut ga = vec![0.0; batch * m * k];
                for i in 0..batch {
                    let gi = &g.data()[i * m * n..(i + 1) * m * n];
                    let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                    // trans_b: out = a·bᵀ with b stored [n,k], so ga = g·b.
                    gemm(m, n, k, gi, false, bi, !*trans_b, &mut ga[i * m * k..(i + 1) * m * k], false);
                }
                accumulate(nodes, grads, *a, Tensor::from_parts(av.shape().to_vec(), ga));
            }
            if wants(nodes, *b) {
                let mut gb = vec![0.0; batch * k * n];
                for i in 0..batch {
                    let gi = &g.data()[i * m * n..(i + 1) * m * n];
                    let ai = &av.data()[i * m * k..(i + 1) * m * k];
                    let dst = &mut gb[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        gemm(n, m, k, gi, true, ai, false, dst, false);
                    } else {
                        gemm(k, m, n, ai, true, gi, false, dst, false);
                    }
                }
                accumulate(nodes, grads, *b, Tensor::from_parts(bv.shape().to_vec(), gb));
            }
        }
        Op::Sum { x, axis } => {
            accumulate(nodes, grads, *x, expand_reduced(g, val(*x).shape(), *axis, 1.0));
        }
        Op::Mean { x, axis } => {
            let shape = val(*x).shape();
            let count = match axis {
                Some(a) => shape[*a],
                None => val(*x).len(),
            };
            accumulate(nodes, grads, *x, expand_reduced(g, shape, *axis, 1.0 / count as f64));
        }
        Op::Softmax(x) => {
            let y = &node.value;
            let w = *y.shape().last().unwrap_or(&1);
            let mut gx = Vec::with_capacity(y.len());
            for (yr, gr) in y.data().chunks(w).zip(g.data().chunks(w)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
            }
            accumulate(nodes, grads, *x, Tensor::from_parts(y.shape().to_vec(), gx));
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let d = val(*gamma).len();
            let gam = val(*gamma).data();
            if wants(nodes, *beta) {
                let gb = reduce_to_shape(g, &[d]);
                accumulate(nodes, grads, *beta, gb);
            }
            if wants(nodes, *gamma) {
                let mut gg = vec![0.0; d];
                for (gr, hr) in g.data().chunks(d).zip(xhat.chunks(d)) {
                    for ((acc, gv), hv) in gg.iter_mut().zip(gr).zip(hr) {
                        *acc += gv * hv;
                    }
                }
                accumulate(nodes, grads, *gamma, Tensor::from_parts(vec![d], gg));
            }
            if wants(nodes, *x) {
                let mut gx = Vec::with_capacity(xhat.len());
                for ((gr, hr), r) in g.data().chunks(d).zip(xhat.chunks(d)).zip(rstd) {
                    let gh: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                    let mean_gh = gh.iter().sum::<f64>() / d as f64;
                    let mean_ghh = gh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    gx.extend(gh.iter().zip(hr).map(|(a, h)| r * (a - mean_gh - h * mean_ghh)));
                }
                accumulate(nodes, grads, *x, Tensor::from_parts(g.shape().to_vec(), gx));
            }
        }
        Op::Relu(x) => {
            let xv = val(*x);
            let gx = zip_broadcast("relu", g, xv, |gv, v| if v > 0.0 { gv } else { 0.0 }).expect("same shape");
            accumulate(nodes, grads, *x, gx);
        }
        Op::Gelu(x) => {
            let gx = zip_broadcast("gelu", g, val(*x), |gv, v| gv * gelu_grad(v)).expect("same shape");
            accumulate(nodes, grads, *x, gx);
        }
        Op::Tanh(x) => {
            let gx = zip_broadcast("tanh", g, &node.value, |gv, y| gv * (1.0 - y * y)).expect("same shape");
            accumulate(nodes, grads, *x, gx);
        }
        Op::Square(x) => {
            let gx = zip_broadcast("square", g, val(*x), |gv, v| 2.0 * gv * v).expect("same shape");
            accumulate(nodes, grads, *x, gx);
        }
        Op::Gather { table, indices } => {
            let tv = val(*table);
            let d = tv.shape()[1];
            let mut gt = vec![0.0; tv.len()];
            for (row, &i) in g.data().chunks(d).zip(indices) {
                for (dst, v) in gt[i * d..(i + 1) * d].iter_mut().zip(row) {
                    *dst += v;
                }
            }
            accumulate(nodes, grads, *table, Tensor::from_parts(tv.shape().to_vec(), gt));
        }
        Op::Reshape(x) => {
            let shape = val(*x).shape().to_vec();
            accumulate(nodes, grads, *x, Tensor::from_parts(shape, g.data().to_vec()));
        }
        Op::Permute { x, perm } => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            accumulate(nodes, grads, *x, g.permute(&inv).expect("valid inverse"));
        }
        Op::Concat { xs, axis } => {
            let shape = g.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis];
            let mut start = 0;
            for &x in xs {
                let xs_shape = val(x).shape();
                let len = xs_shape[*axis];
                if wants(nodes, x) {
                    let mut part = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + start) * inner;
                        part.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    accumulate(nodes, grads, x, Tensor::from_parts(xs_shape.to_vec(), part));
                }
                start += len;
            }
        }
        Op::Narrow { x, axis, start } => {
            let full_shape = val(*x).shape();
            let outer: usize = full_shape[..*axis].iter().product();
            let inner: usize = full_shape[axis + 1..].iter().product();
            let full = full_shape[*axis];
            let len = g.shape()[*axis];
            let mut gx = vec![0.0; val(*x).len()];
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                let src = o * len * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            accumulate(nodes, grads, *x, Tensor::from_parts(full_shape.to_vec(), gx));
        }
    }
}
