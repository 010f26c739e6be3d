//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation on a [`Var`] appends one node to its [`Tape`]. Nodes
//! whose inputs are all constants are recorded without a backward rule, so
//! inference on a tape costs little more than plain evaluation. Calling
//! [`Tape::backward`] on a scalar walks the nodes in reverse insertion order,
//! which is a valid reverse topological order because a node's inputs always
//! exist before the node itself.

use std::cell::{Ref, RefCell};

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Transpose(usize),
    Conv1dRows {
        x: usize,
        w: usize,
        stride: usize,
    },
    Upsample2Rows(usize),
    LayerNorm {
        x: usize,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    GatherRows {
        x: usize,
        index: Vec<usize>,
    },
    PadRows(usize),
    L1Loss(usize, usize),
    Sum(usize),
    Mean(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    flops: u64,
}

/// Records operations for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.value().shape())
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    visits: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a trainable leaf. The tensor is copied onto the tape.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.leaf(t.clone(), true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.leaf(t, false)
    }

    /// Records a leaf, honouring the tensor's own `requires_grad` flag.
    pub fn input(&self, t: &Tensor) -> Var<'_> {
        self.leaf(t.clone(), t.requires_grad())
    }

    fn leaf(&self, mut t: Tensor, requires_grad: bool) -> Var<'_> {
        t.zero_grad();
        t.set_requires_grad(false);
        self.push(t, Op::Leaf, requires_grad)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        let op = if requires_grad { op } else { Op::Leaf };
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn add_flops(&self, n: u64) {
        self.inner.borrow_mut().flops += n;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Floating-point operations performed by forward ops recorded so far.
    pub fn flops(&self) -> u64 {
        self.inner.borrow().flops
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut visits = 0;
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                if grads[id].is_some() {
                    visits += 1;
                }
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            visits += 1;
            propagate(nodes, id, &g, &mut grads);
        }
        // Only leaf gradients are meaningful to callers.
        for (id, n) in nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) {
                grads[id] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes,
            visits,
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
            let n = val(*b).shape()[1];
            if wants(*a) {
                let mut da = vec![0.0; m * k];
                gemm_nt(g, val(*b).data(), &mut da, m, n, k);
                accumulate(grads, nodes, *a, da);
            }
            if wants(*b) {
                let mut db = vec![0.0; k * n];
                gemm_tn(val(*a).data(), g, &mut db, m, k, n);
                accumulate(grads, nodes, *b, db);
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.iter().map(|x| -x).collect());
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                let da = g.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                accumulate(grads, nodes, *a, da);
            }
            if wants(*b) {
                let db = g.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                accumulate(grads, nodes, *b, db);
            }
        }
        Op::AddRow(a, row) => {
            accumulate(grads, nodes, *a, g.to_vec());
            if wants(*row) {
                let d = val(*row).len();
                let mut dr = vec![0.0; d];
                for chunk in g.chunks(d) {
                    dr.iter_mut().zip(chunk).for_each(|(s, v)| *s += v);
                }
                accumulate(grads, nodes, *row, dr);
            }
        }
        Op::MulRow(a, row) => {
            let r = val(*row).data();
            let d = r.len();
            if wants(*a) {
                let mut da = g.to_vec();
                for chunk in da.chunks_mut(d) {
                    chunk.iter_mut().zip(r).for_each(|(v, s)| *v *= s);
                }
                accumulate(grads, nodes, *a, da);
            }
            if wants(*row) {
                let mut dr = vec![0.0; d];
                for (gc, xc) in g.chunks(d).zip(val(*a).data().chunks(d)) {
                    for j in 0..d {
                        dr[j] += gc[j] * xc[j];
                    }
                }
                accumulate(grads, nodes, *row, dr);
            }
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g.iter().map(|v| v * c).collect()),
        Op::Relu(a) => {
            let da = g
                .iter()
                .zip(val(*a).data())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, da);
        }
        Op::Transpose(a) => {
            let out = &nodes[id].value;
            let gt = Tensor::from_parts(out.shape().to_vec(), g.to_vec()).transpose();
            accumulate(grads, nodes, *a, gt.into_data());
        }
        Op::Conv1dRows { x, w, stride } => {
            let xv = val(*x);
            let wv = val(*w);
            let shape = ConvShape::new(xv, wv, *stride);
            if wants(*w) {
                let cols = shape.im2col(xv.data());
                let mut dwt = vec![0.0; shape.patch() * shape.c_out];
                gemm_tn(&cols, g, &mut dwt, shape.l_out, shape.patch(), shape.c_out);
                accumulate(grads, nodes, *w, shape.untranspose_weight(&dwt));
            }
            if wants(*x) {
                let wt = shape.transpose_weight(wv.data());
                let mut dcols = vec![0.0; shape.l_out * shape.patch()];
                gemm_nt(g, &wt, &mut dcols, shape.l_out, shape.c_out, shape.patch());
                accumulate(grads, nodes, *x, shape.col2im(&dcols));
            }
        }
        Op::Upsample2Rows(a) => {
            let c = val(*a).cols();
            let l = val(*a).rows();
            let mut da = vec![0.0; l * c];
            for t in 0..l {
                for j in 0..c {
                    da[t * c + j] = g[2 * t * c + j] + g[(2 * t + 1) * c + j];
                }
            }
            accumulate(grads, nodes, *a, da);
        }
        Op::LayerNorm { x, inv_std } => {
            let y = nodes[id].value.data();
            let d = nodes[id].value.cols();
            let mut dx = vec![0.0; y.len()];
            for (r, s) in inv_std.iter().enumerate() {
                let gr = &g[r * d..(r + 1) * d];
                let yr = &y[r * d..(r + 1) * d];
                let mg = gr.iter().sum::<f64>() / d as f64;
                let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for j in 0..d {
                    dx[r * d + j] = s * (gr[j] - mg - yr[j] * mgy);
                }
            }
            accumulate(grads, nodes, *x, dx);
        }
        Op::Embedding { table, ids } => {
            let d = val(*table).cols();
            let mut dt = vec![0.0; val(*table).len()];
            for (i, &row) in ids.iter().enumerate() {
                for j in 0..d {
                    dt[row * d + j] += g[i * d + j];
                }
            }
            accumulate(grads, nodes, *table, dt);
        }
        Op::GatherRows { x, index } => {
            let d = val(*x).cols();
            let mut dx = vec![0.0; val(*x).len()];
            for (i, &src) in index.iter().enumerate() {
                for j in 0..d {
                    dx[src * d + j] += g[i * d + j];
                }
            }
            accumulate(grads, nodes, *x, dx);
        }
        Op::PadRows(a) => {
            let n = val(*a).len();
            accumulate(grads, nodes, *a, g[..n].to_vec());
        }
        Op::L1Loss(p, t) => {
            let pv = val(*p).data();
            let tv = val(*t).data();
            let scale = g[0] / pv.len() as f64;
            let sign: Vec<f64> = pv
                .iter()
                .zip(tv)
                .map(|(a, b)| match a.partial_cmp(b) {
                    Some(std::cmp::Ordering::Greater) => scale,
                    Some(std::cmp::Ordering::Less) => -scale,
                    _ => 0.0,
                })
                .collect();
            if wants(*t) {
                accumulate(grads, nodes, *t, sign.iter().map(|v| -v).collect());
            }
            accumulate(grads, nodes, *p, sign);
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, vec![g[0]; val(*a).len()]),
        Op::Mean(a) => {
            let n = val(*a).len();
            accumulate(grads, nodes, *a, vec![g[0] / n as f64; n]);
        }
    }
}

/// Index arithmetic for a zero-padded "same" 1-D convolution on
/// time-major input `[L × C_in]` with weight `[C_out × C_in × K]`.
struct ConvShape {
    l_in: usize,
    l_out: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
}

impl ConvShape {
    fn new(x: &Tensor, w: &Tensor, stride: usize) -> Self {
        let l_in = x.shape()[0];
        Self {
            l_in,
            l_out: l_in.div_ceil(stride),
            c_in: x.shape()[1],
            c_out: w.shape()[0],
            k: w.shape()[2],
            stride,
        }
    }

    fn patch(&self) -> usize {
        self.k * self.c_in
    }

    fn source_row(&self, t: usize, kk: usize) -> Option<usize> {
        let pad = (self.k - 1) / 2;
        let pos = (t * self.stride + kk).checked_sub(pad)?;
        (pos < self.l_in).then_some(pos)
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let p = self.patch();
        let mut cols = vec![0.0; self.l_out * p];
        for t in 0..self.l_out {
            for kk in 0..self.k {
                if let Some(src) = self.source_row(t, kk) {
                    let dst = t * p + kk * self.c_in;
                    cols[dst..dst + self.c_in]
                        .copy_from_slice(&x[src * self.c_in..(src + 1) * self.c_in]);
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let p = self.patch();
        let mut x = vec![0.0; self.l_in * self.c_in];
        for t in 0..self.l_out {
            for kk in 0..self.k {
                if let Some(src) = self.source_row(t, kk) {
                    let from = &cols[t * p + kk * self.c_in..t * p + (kk + 1) * self.c_in];
                    x[src * self.c_in..(src + 1) * self.c_in]
                        .iter_mut()
                        .zip(from)
                        .for_each(|(a, b)| *a += b);
                }
            }
        }
        x
    }

    /// `[C_out × C_in × K]` → `[(K·C_in) × C_out]`
    fn transpose_weight(&self, w: &[f64]) -> Vec<f64> {
        let mut wt = vec![0.0; self.patch() * self.c_out];
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                for kk in 0..self.k {
                    wt[(kk * self.c_in + ci) * self.c_out + co] =
                        w[(co * self.c_in + ci) * self.k + kk];
                }
            }
        }
        wt
    }

    fn untranspose_weight(&self, wt: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.patch() * self.c_out];
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                for kk in 0..self.k {
                    w[(co * self.c_in + ci) * self.k + kk] =
                        wt[(kk * self.c_in + ci) * self.c_out + co];
                }
            }
        }
        w
    }
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf, if it received one.
    pub fn get(&self, v: Var<'_>) -> Option<Tensor> {
        self.grads[v.id]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.id].clone(), g.clone()))
    }

    /// Adds the gradient of `v` into `target.grad`. Leaves that received no
    /// gradient contribute zeros.
    pub fn attach(&self, v: Var<'_>, target: &mut Tensor) -> Result<()> {
        match &self.grads[v.id] {
            Some(g) => target.accumulate_grad(g),
            None => target.accumulate_grad(&vec![0.0; target.len()]),
        }
    }

    /// Number of nodes processed by the reverse pass.
    pub fn visits(&self) -> usize {
        self.visits
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the recorded value. Do not hold it across new operations.
    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.inner.borrow(), |i| &i.nodes[self.id].value)
    }

    pub fn value(&self) -> Tensor {
        self.value_ref().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    fn binary_requires(&self, other: &Var<'t>) -> bool {
        let inner = self.tape.inner.borrow();
        inner.nodes[self.id].requires_grad || inner.nodes[other.id].requires_grad
    }

    fn emit(&self, value: Tensor, op: Op, requires_grad: bool, flops: u64) -> Var<'t> {
        self.tape.add_flops(flops);
        self.tape.push(value, op, requires_grad)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (value, flops) = {
            let a = self.value_ref();
            let b = other.value_ref();
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err("matmul", &a, &b));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm_nn(a.data(), b.data(), &mut c, m, k, n);
            (Tensor::from_parts(vec![m, n], c), 2 * (m * k * n) as u64)
        };
        let rg = self.binary_requires(other);
        Ok(self.emit(value, Op::MatMul(self.id, other.id), rg, flops))
    }

    fn zip_same(
        &self,
        other: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let a = self.value_ref();
        let b = other.value_ref();
        if a.shape() != b.shape() {
            return Err(shape_err(name, &a, &b));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_same(other, "add", |a, b| a + b)?;
        let n = v.len() as u64;
        let rg = self.binary_requires(other);
        Ok(self.emit(v, Op::Add(self.id, other.id), rg, n))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_same(other, "sub", |a, b| a - b)?;
        let n = v.len() as u64;
        let rg = self.binary_requires(other);
        Ok(self.emit(v, Op::Sub(self.id, other.id), rg, n))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_same(other, "mul", |a, b| a * b)?;
        let n = v.len() as u64;
        let rg = self.binary_requires(other);
        Ok(self.emit(v, Op::Mul(self.id, other.id), rg, n))
    }

    fn row_broadcast(
        &self,
        row: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let a = self.value_ref();
        let r = row.value_ref();
        if r.shape().len() != 1 || a.cols() != r.len() {
            return Err(shape_err(name, &a, &r));
        }
        let d = r.len();
        let mut data = a.data().to_vec();
        for chunk in data.chunks_mut(d) {
            chunk.iter_mut().zip(r.data()).for_each(|(x, y)| *x = f(*x, *y));
        }
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    }

    /// Adds a `[d]` vector to every row of a `[… × d]` tensor.
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let v = self.row_broadcast(row, "add_row", |a, b| a + b)?;
        let n = v.len() as u64;
        let rg = self.binary_requires(row);
        Ok(self.emit(v, Op::AddRow(self.id, row.id), rg, n))
    }

    /// Multiplies every row of a `[… × d]` tensor by a `[d]` vector.
    pub fn mul_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let v = self.row_broadcast(row, "mul_row", |a, b| a * b)?;
        let n = v.len() as u64;
        let rg = self.binary_requires(row);
        Ok(self.emit(v, Op::MulRow(self.id, row.id), rg, n))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = {
            let a = self.value_ref();
            Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| x * c).collect())
        };
        let n = v.len() as u64;
        self.emit(v, Op::Scale(self.id, c), self.requires_grad(), n)
    }

    pub fn relu(&self) -> Var<'t> {
        let v = {
            let a = self.value_ref();
            Tensor::from_parts(
                a.shape().to_vec(),
                a.data().iter().map(|x| x.max(0.0)).collect(),
            )
        };
        let n = v.len() as u64;
        self.emit(v, Op::Relu(self.id), self.requires_grad(), n)
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let v = {
            let a = self.value_ref();
            if a.shape().len() != 2 {
                return Err(Error::contract("transpose needs a matrix"));
            }
            a.transpose()
        };
        Ok(self.emit(v, Op::Transpose(self.id), self.requires_grad(), 0))
    }

    /// Zero-padded "same" cross-correlation on time-major input
    /// `[L × C_in]` with weight `[C_out × C_in × K]`, giving
    /// `[⌈L/stride⌉ × C_out]`.
    pub fn conv1d_rows(&self, w: &Var<'t>, stride: usize) -> Result<Var<'t>> {
        let (value, flops) = {
            let x = self.value_ref();
            let wv = w.value_ref();
            if x.shape().len() != 2 || wv.shape().len() != 3 || wv.shape()[1] != x.shape()[1] {
                return Err(shape_err("conv1d", &x, &wv));
            }
            if wv.shape()[2] % 2 == 0 {
                return Err(Error::contract(format!(
                    "conv1d kernel size must be odd, got {}",
                    wv.shape()[2]
                )));
            }
            if stride == 0 {
                return Err(Error::contract("conv1d stride must be positive"));
            }
            let s = ConvShape::new(&x, &wv, stride);
            let cols = s.im2col(x.data());
            let wt = s.transpose_weight(wv.data());
            let mut out = vec![0.0; s.l_out * s.c_out];
            gemm_nn(&cols, &wt, &mut out, s.l_out, s.patch(), s.c_out);
            (
                Tensor::from_parts(vec![s.l_out, s.c_out], out),
                2 * (s.l_out * s.patch() * s.c_out) as u64,
            )
        };
        let rg = self.binary_requires(w);
        Ok(self.emit(
            value,
            Op::Conv1dRows {
                x: self.id,
                w: w.id,
                stride,
            },
            rg,
            flops,
        ))
    }

    /// Channel-major convolution: `x` is `[C_in × L]`, output
    /// `[C_out × ⌈L/stride⌉]`.
    pub fn conv1d(&self, w: &Var<'t>, stride: usize) -> Result<Var<'t>> {
        {
            let x = self.value_ref();
            let wv = w.value_ref();
            if x.shape().len() != 2 || wv.shape().len() != 3 || wv.shape()[1] != x.shape()[0] {
                return Err(shape_err("conv1d", &x, &wv));
            }
        }
        self.transpose()?.conv1d_rows(w, stride)?.transpose()
    }

    /// Nearest-neighbour ×2 upsampling along the time axis of `[L × C]`.
    pub fn upsample2_rows(&self) -> Result<Var<'t>> {
        let v = {
            let a = self.value_ref();
            if a.shape().len() != 2 {
                return Err(Error::contract("upsample2 needs a matrix"));
            }
            let (l, c) = (a.rows(), a.cols());
            let mut out = Vec::with_capacity(2 * l * c);
            for t in 0..l {
                out.extend_from_slice(a.row(t));
                out.extend_from_slice(a.row(t));
            }
            Tensor::from_parts(vec![2 * l, c], out)
        };
        Ok(self.emit(v, Op::Upsample2Rows(self.id), self.requires_grad(), 0))
    }

    /// Channel-major upsampling: `[C × L]` → `[C × 2L]`.
    pub fn nn_upsample2(&self) -> Result<Var<'t>> {
        self.transpose()?.upsample2_rows()?.transpose()
    }

    /// Normalizes each vector along the last axis to zero mean and unit
    /// population variance: `(x − μ) / sqrt(σ² + eps)`.
    pub fn layer_norm(&self, eps: f64) -> Result<Var<'t>> {
        if eps < 0.0 {
            return Err(Error::contract("layer_norm eps must be non-negative"));
        }
        let (v, inv_std) = {
            let a = self.value_ref();
            let d = a.cols();
            let rows = a.len() / d.max(1);
            let mut out = vec![0.0; a.len()];
            let mut inv = Vec::with_capacity(rows);
            for r in 0..rows {
                let x = &a.data()[r * d..(r + 1) * d];
                let mean = x.iter().sum::<f64>() / d as f64;
                let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                let s = 1.0 / (var + eps).sqrt();
                for j in 0..d {
                    out[r * d + j] = (x[j] - mean) * s;
                }
                inv.push(s);
            }
            (Tensor::from_parts(a.shape().to_vec(), out), inv)
        };
        let n = 5 * v.len() as u64;
        Ok(self.emit(
            v,
            Op::LayerNorm {
                x: self.id,
                inv_std,
            },
            self.requires_grad(),
            n,
        ))
    }

    /// Row lookup into a `[V × d]` table.
    pub fn embedding(&self, ids: &[u32]) -> Result<Var<'t>> {
        let v = {
            let t = self.value_ref();
            if t.shape().len() != 2 {
                return Err(Error::contract("embedding table must be a matrix"));
            }
            let vocab = t.rows();
            let mut out = Vec::with_capacity(ids.len() * t.cols());
            for &id in ids {
                if id as usize >= vocab {
                    return Err(Error::Vocabulary { id, size: vocab });
                }
                out.extend_from_slice(t.row(id as usize));
            }
            Tensor::from_parts(vec![ids.len(), t.cols()], out)
        };
        let ids = ids.iter().map(|&i| i as usize).collect();
        Ok(self.emit(
            v,
            Op::Embedding {
                table: self.id,
                ids,
            },
            self.requires_grad(),
            0,
        ))
    }

    /// Output row `i` is input row `index[i]`; rows may repeat or be skipped.
    pub fn gather_rows(&self, index: Vec<usize>) -> Result<Var<'t>> {
        let v = {
            let a = self.value_ref();
            let c = a.cols();
            let mut out = Vec::with_capacity(index.len() * c);
            for &i in &index {
                if i >= a.rows() {
                    return Err(Error::contract(format!(
                        "row {i} out of range for {} rows",
                        a.rows()
                    )));
                }
                out.extend_from_slice(a.row(i));
            }
            Tensor::from_parts(vec![index.len(), c], out)
        };
        Ok(self.emit(
            v,
            Op::GatherRows { x: self.id, index },
            self.requires_grad(),
            0,
        ))
    }

    /// Appends zero rows until the tensor has `total` rows.
    pub fn pad_rows(&self, total: usize) -> Result<Var<'t>> {
        let v = {
            let a = self.value_ref();
            if total < a.rows() {
                return Err(Error::contract("pad_rows cannot shrink"));
            }
            let mut data = a.data().to_vec();
            data.resize(total * a.cols(), 0.0);
            Tensor::from_parts(vec![total, a.cols()], data)
        };
        Ok(self.emit(v, Op::PadRows(self.id), self.requires_grad(), 0))
    }

    /// First `n` rows.
    pub fn crop_rows(&self, n: usize) -> Result<Var<'t>> {
        self.gather_rows((0..n).collect())
    }

    /// Mean absolute difference.
    pub fn l1_loss(&self, target: &Var<'t>) -> Result<Var<'t>> {
        let v = {
            let a = self.value_ref();
            let b = target.value_ref();
            if a.shape() != b.shape() {
                return Err(shape_err("l1_loss", &a, &b));
            }
            if a.is_empty() {
                return Err(Error::Degenerate("l1_loss over zero elements".into()));
            }
            let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
            Tensor::scalar(s / a.len() as f64)
        };
        let n = 2 * self.value_ref().len() as u64;
        let rg = self.binary_requires(target);
        Ok(self.emit(v, Op::L1Loss(self.id, target.id), rg, n))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value_ref().sum());
        let n = self.value_ref().len() as u64;
        self.emit(v, Op::Sum(self.id), self.requires_grad(), n)
    }

    pub fn mean(&self) -> Var<'t> {
        let (v, n) = {
            let a = self.value_ref();
            (Tensor::scalar(a.sum() / a.len() as f64), a.len() as u64)
        };
        self.emit(v, Op::Mean(self.id), self.requires_grad(), n)
    }
}
