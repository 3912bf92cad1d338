use super::kernels::{matmul_nn, matmul_nt, matmul_tn};
use super::ops::Activation;
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// A differentiable operation whose backward rule lives outside the engine.
pub trait CustomOp: Send {
    fn name(&self) -> &'static str;

    /// Accumulate input gradients. `grads[i]` is `None` when input `i` does not
    /// require a gradient.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &[f64],
        grads: &mut [Option<&mut [f64]>],
    );
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Sentinel gather index: the output element is zero.
pub(crate) const GATHER_ZERO: usize = usize::MAX;

enum Op {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
        // Per-output source offsets; empty when shapes are identical.
        a_idx: Vec<u32>,
        b_idx: Vec<u32>,
    },
    Unary(Var, Activation),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather { x: Var, index: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    Sum(Var),
    SumLast(Var),
    Scale(Var, f64),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only tape. Operands always precede results, so append order is a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// Leaf that accumulates a gradient readable through [`Graph::grad`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None }, true)
    }

    /// Copy a parameter into the graph; its gradient is written back by
    /// [`Graph::accumulate_into`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Leaf { param: Some(id) }, true)
    }

    /// Like [`Graph::param`] but frozen: no gradient flows to it.
    pub fn param_frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf after one or more backward calls.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Div)
    }

    pub(crate) fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let (shape, data, a_idx, b_idx) = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            (va.shape().to_vec(), data, Vec::new(), Vec::new())
        } else {
            let (shape, a_idx, b_idx) = broadcast_plan(va.shape(), vb.shape())?;
            let data = a_idx
                .iter()
                .zip(&b_idx)
                .map(|(&i, &j)| f(va.data()[i as usize], vb.data()[j as usize]))
                .collect();
            (shape, data, a_idx, b_idx)
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Binary { a, b, kind, a_idx, b_idx }, rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = {
            let v = self.value(x);
            Tensor { shape: v.shape().to_vec(), data: v.data().iter().map(|&t| kind.eval(t)).collect() }
        };
        let rg = self.rg(x);
        self.push(value, Op::Unary(x, kind), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Silu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// Softmax over the last dimension, with max subtraction.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = *v.shape().last().unwrap();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor { shape: v.shape().to_vec(), data: out };
        let rg = self.rg(x);
        self.push(value, Op::Softmax(x), rg)
    }

    /// Normalize over the last dimension (variance epsilon 1e-5), then apply
    /// per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let v = self.value(x);
        let n = *v.shape().last().unwrap();
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return shape_err(format!(
                "layer_norm over {n} features with gain {:?} bias {:?}",
                self.shape(gain),
                self.shape(bias)
            ));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = v.numel() / n;
        let mut xhat = vec![0.0; v.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; v.numel()];
        for r in 0..rows {
            let row = &v.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor { shape: v.shape().to_vec(), data: out };
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    /// Backward scatters (adds) into the source positions.
    pub(crate) fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return shape_err(format!("gather of {} indices into {shape:?}", index.len()));
        }
        let src = self.value(x).data();
        if index.iter().any(|&i| i != GATHER_ZERO && i >= src.len()) {
            return shape_err("gather index out of range");
        }
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { src[i] })
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::Gather { x, index }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat of zero tensors");
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return shape_err(format!("concat axis {axis} on rank {}", first.len()));
        }
        let mut axis_len = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return shape_err(format!("concat {first:?} with {s:?} on axis {axis}"));
            }
            axis_len += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut shape = first.clone();
        shape[axis] = axis_len;
        let mut data = Vec::with_capacity(outer * axis_len * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor { shape, data }, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over the last dimension, keeping it with size 1.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = *v.shape().last().unwrap();
        let data: Vec<f64> = v.data().chunks(n).map(|r| r.iter().sum()).collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let rg = self.rg(x);
        self.push(Tensor { shape, data }, Op::SumLast(x), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let value = Tensor { shape: v.shape().to_vec(), data: v.data().iter().map(|t| t * c).collect() };
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    /// Record an externally computed operation.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op }, rg)
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", lv.shape()));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf { .. } = self.nodes[i].op {
                let node = &mut self.nodes[i];
                if node.requires_grad {
                    match &mut node.grad {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => node.grad = Some(g),
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let val = |v: Var| &nodes[v.0].value;
        match &node.op {
            Op::Leaf { .. } => unreachable!(),
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(ga) = slot(nodes, grads, *a) {
                    matmul_nt(g, val(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    matmul_tn(val(*a).data(), g, gb, k, m, n);
                }
            }
            Op::Binary { a, b, kind, a_idx, b_idx } => {
                let (da, db) = (val(*a).data(), val(*b).data());
                let same = a_idx.is_empty();
                let ia = |o: usize| if same { o } else { a_idx[o] as usize };
                let ib = |o: usize| if same { o } else { b_idx[o] as usize };
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (o, &go) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => go,
                            BinaryKind::Mul => go * db[ib(o)],
                            BinaryKind::Div => go / db[ib(o)],
                        };
                        ga[ia(o)] += d;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for (o, &go) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add => go,
                            BinaryKind::Sub => -go,
                            BinaryKind::Mul => go * da[ia(o)],
                            BinaryKind::Div => {
                                let y = db[ib(o)];
                                -go * da[ia(o)] / (y * y)
                            }
                        };
                        gb[ib(o)] += d;
                    }
                }
            }
            Op::Unary(x, kind) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((acc, &t), &go) in gx.iter_mut().zip(val(*x).data()).zip(g) {
                        *acc += go * kind.derivative(t);
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let y = node.value.data();
                    let n = *node.value.shape().last().unwrap();
                    for r in 0..y.len() / n {
                        let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let n = *node.value.shape().last().unwrap();
                let rows = inv_std.len();
                let gn = val(*gain).data();
                if let Some(gg) = slot(nodes, grads, *gain) {
                    for (o, &go) in g.iter().enumerate() {
                        gg[o % n] += go * xhat[o];
                    }
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    for (o, &go) in g.iter().enumerate() {
                        gb[o % n] += go;
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    let mut dh = vec![0.0; n];
                    for r in 0..rows {
                        let off = r * n;
                        for j in 0..n {
                            dh[j] = g[off + j] * gn[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dhh =
                            dh.iter().zip(&xhat[off..off + n]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx[off + j] += inv_std[r] * (dh[j] - mean_dh - xhat[off + j] * mean_dhh);
                        }
                    }
                }
            }
            Op::Gather { x, index } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (&src, &go) in index.iter().zip(g) {
                        if src != GATHER_ZERO {
                            gx[src] += go;
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let block = val(p).shape()[*axis] * inner;
                    if let Some(gp) = slot(nodes, grads, p) {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + block];
                            for (acc, v) in gp[o * block..(o + 1) * block].iter_mut().zip(src) {
                                *acc += v;
                            }
                        }
                    }
                    offset += block;
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::SumLast(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let n = *val(*x).shape().last().unwrap();
                    for (o, acc) in gx.iter_mut().enumerate() {
                        *acc += g[o / n];
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
                }
            }
            Op::Custom { inputs, op } => {
                let tensors: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let mut local: Vec<Option<Vec<f64>>> = inputs
                    .iter()
                    .map(|&v| nodes[v.0].requires_grad.then(|| vec![0.0; nodes[v.0].value.numel()]))
                    .collect();
                {
                    let mut views: Vec<Option<&mut [f64]>> =
                        local.iter_mut().map(|o| o.as_deref_mut()).collect();
                    op.backward(&tensors, &node.value, g, &mut views);
                }
                for (&v, lg) in inputs.iter().zip(local) {
                    if let (Some(lg), Some(gv)) = (lg, slot(nodes, grads, v)) {
                        gv.iter_mut().zip(&lg).for_each(|(a, b)| *a += b);
                    }
                }
            }
        }
    }

    /// Add the gradients of every parameter leaf into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Op::Leaf { param: Some(id) }, Some(g)) = (&node.op, &node.grad) {
                store.add_grad(*id, g);
            }
        }
    }
}

/// Gradient buffer of an operand, or None if it does not need one.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Numpy-style broadcast: ranks are left-padded with ones, then each axis must
/// agree or be 1 on one side. Returns the output shape and, per output element,
/// the flat source offset into each operand.
fn broadcast_plan(sa: &[usize], sb: &[usize]) -> Result<(Vec<usize>, Vec<u32>, Vec<u32>)> {
    let rank = sa.len().max(sb.len());
    let pad = |s: &[usize]| {
        let mut p = vec![1; rank - s.len()];
        p.extend_from_slice(s);
        p
    };
    let (pa, pb) = (pad(sa), pad(sb));
    let mut out = Vec::with_capacity(rank);
    for d in 0..rank {
        let (x, y) = (pa[d], pb[d]);
        if x == y || y == 1 {
            out.push(x);
        } else if x == 1 {
            out.push(y);
        } else {
            return shape_err(format!("cannot broadcast {sa:?} with {sb:?}"));
        }
    }
    let strides = |p: &[usize]| {
        let mut st = vec![0usize; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            st[d] = if p[d] == 1 { 0 } else { acc };
            acc *= p[d];
        }
        st
    };
    let (st_a, st_b) = (strides(&pa), strides(&pb));
    let n: usize = out.iter().product();
    let mut a_idx = Vec::with_capacity(n);
    let mut b_idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        a_idx.push(oa as u32);
        b_idx.push(ob as u32);
        for d in (0..rank).rev() {
            counter[d] += 1;
            oa += st_a[d];
            ob += st_b[d];
            if counter[d] < out[d] {
                break;
            }
            oa -= st_a[d] * out[d];
            ob -= st_b[d] * out[d];
            counter[d] = 0;
        }
    }
    Ok((out, a_idx, b_idx))
}
