//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node holding its output value and the ids of
//! its inputs, so node order is a topological order by construction.
//! `backward` walks the nodes once in reverse and accumulates adjoints.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise primitives accepted by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Min,
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    LnFloor(Var, f64),
    Softmax(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    StackRows(Vec<Var>),
    IndexRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    ScatterFlat(Var, Vec<usize>),
    Pick(Var, usize),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations and their values.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise binary shape rule: identical shapes, or one side has a single element.
fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.numel() == 1 {
        Ok(a.shape().to_vec())
    } else if a.numel() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::dim(op, a.shape(), b.shape()))
    }
}

#[inline]
fn at(data: &[f64], i: usize) -> f64 {
    if data.len() == 1 {
        data[0]
    } else {
        data[i]
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, data).expect("primitive produced a consistent shape");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Its gradient is tracked iff the tensor's `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::dim("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose_raw(self.data(a), r, c);
        Ok(self.push(out, vec![c, r], Op::Transpose(a), &[a]))
    }

    // ---- pointwise ----

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul | Elementwise::Min => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Contract(format!(
                "{op:?} takes {arity} argument(s), got {}",
                args.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Sub => self.sub(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Min => self.min(args[0], args[1]),
            Elementwise::Sigmoid => Ok(self.sigmoid(args[0])),
            Elementwise::Tanh => Ok(self.tanh(args[0])),
            Elementwise::Relu => Ok(self.relu(args[0])),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast(name, ta, tb)?;
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let out = (0..n).map(|i| f(at(da, i), at(db, i))).collect();
        Ok(self.push(out, shape, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Pointwise minimum. At ties the gradient goes to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("min", a, b, f64::min, Op::Min(a, b))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let (m, n) = self.value(x).dims2();
        if sx.len() != 2 || self.value(bias).numel() != n {
            return Err(Error::dim("add_bias", sx, sb));
        }
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for i in 0..m {
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(out, vec![m, n], Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.data(x).iter().map(|v| v * k).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Scale(x, k), &[x])
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// ReLU with subgradient 0 at 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_floor(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, |v| v.max(floor).ln(), Op::LnFloor(x, floor))
    }

    // ---- reductions and normalization ----

    /// Softmax over all elements. Masked (`false`) positions are exactly zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(x);
        let n = t.numel();
        if n == 0 {
            return Err(Error::Degenerate { len: 0 });
        }
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::dim("softmax mask", t.shape(), &[m.len()]));
            }
        }
        let keep = |i: usize| mask.map_or(true, |m| m[i]);
        let data = t.data();
        let mut max = f64::NEG_INFINITY;
        for (i, &v) in data.iter().enumerate() {
            if keep(i) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::Degenerate { len: n });
        }
        let mut out = vec![0.0; n];
        let mut sum = 0.0;
        for i in 0..n {
            if keep(i) {
                out[i] = (data[i] - max).exp();
                sum += out[i];
            }
        }
        for o in &mut out {
            *o /= sum;
        }
        let shape = t.shape().to_vec();
        Ok(self.push(out, shape, Op::Softmax(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(vec![s], vec![1, 1], Op::Sum(x), &[x])
    }

    // ---- structural ----

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if r != rows {
                return Err(Error::dim("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let d = self.data(p);
            for i in 0..rows {
                out[i * total + offset..i * total + offset + w].copy_from_slice(&d[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(out, vec![rows, total], Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        if start + len > c {
            return Err(Error::dim("slice_cols", self.shape(x), &[start, len]));
        }
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + start + len]);
        }
        Ok(self.push(out, vec![r, len], Op::SliceCols(x, start), &[x]))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let c = self.value(rows[0]).dims2().1;
        let mut out = Vec::new();
        let mut r = 0;
        for &v in rows {
            let (vr, vc) = self.value(v).dims2();
            if vc != c {
                return Err(Error::dim("stack_rows", self.shape(rows[0]), self.shape(v)));
            }
            out.extend_from_slice(self.data(v));
            r += vr;
        }
        Ok(self.push(out, vec![r, c], Op::StackRows(rows.to_vec()), rows))
    }

    /// Gathers rows `idx` of an `m × n` matrix into a `|idx| × n` matrix.
    pub fn index_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        let d = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::Index {
                    what: "rows",
                    index: i,
                    size: m,
                });
            }
            out.extend_from_slice(&d[i * n..(i + 1) * n]);
        }
        Ok(self.push(out, vec![idx.len(), n], Op::IndexRows(x, idx.to_vec()), &[x]))
    }

    /// Scatter-adds row `k` of `x` into row `idx[k]` of an `rows × n` zero matrix.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if idx.len() != m {
            return Err(Error::dim("scatter_rows", self.shape(x), &[idx.len()]));
        }
        let d = self.data(x);
        let mut out = vec![0.0; rows * n];
        for (k, &i) in idx.iter().enumerate() {
            if i >= rows {
                return Err(Error::Index {
                    what: "rows",
                    index: i,
                    size: rows,
                });
            }
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(&d[k * n..(k + 1) * n]) {
                *o += v;
            }
        }
        Ok(self.push(out, vec![rows, n], Op::ScatterRows(x, idx.to_vec()), &[x]))
    }

    /// Scatter-adds element `k` of `x` (read flat) into slot `idx[k]` of a `1 × size` row.
    pub fn scatter_flat(&mut self, x: Var, idx: &[usize], size: usize) -> Result<Var> {
        let d = self.data(x);
        if idx.len() != d.len() {
            return Err(Error::dim("scatter_flat", self.shape(x), &[idx.len()]));
        }
        let mut out = vec![0.0; size];
        for (&i, &v) in idx.iter().zip(d) {
            if i >= size {
                return Err(Error::Index {
                    what: "scatter target",
                    index: i,
                    size,
                });
            }
            out[i] += v;
        }
        Ok(self.push(out, vec![1, size], Op::ScatterFlat(x, idx.to_vec()), &[x]))
    }

    /// Element `index` of `x` read flat, as a `1 × 1` node.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let n = self.value(x).numel();
        if index >= n {
            return Err(Error::Index {
                what: "pick",
                index,
                size: n,
            });
        }
        let v = self.data(x)[index];
        Ok(self.push(vec![v], vec![1, 1], Op::Pick(x, index), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() {
            return Err(Error::dim("reshape", self.shape(x), shape));
        }
        let out = self.data(x).to_vec();
        Ok(self.push(out, shape.to_vec(), Op::Reshape(x), &[x]))
    }

    // ---- reverse pass ----

    /// Accumulates `d loss / d node` for every node that depends on a
    /// gradient-tracking leaf. Earlier results are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        delta(slot);
    }

    /// Reduces a broadcast gradient back onto an operand's shape.
    fn accumulate_broadcast(&mut self, v: Var, g: &[f64], f: impl Fn(usize) -> f64) {
        let single = self.nodes[v.0].value.numel() == 1 && g.len() != 1;
        self.accumulate(v, |slot| {
            if single {
                slot[0] += (0..g.len()).map(|i| g[i] * f(i)).sum::<f64>();
            } else {
                for (i, s) in slot.iter_mut().enumerate() {
                    *s += g[i] * f(i);
                }
            }
        });
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2();
                let n = self.value(b).dims2().1;
                if self.requires_grad(a) {
                    let bt = transpose_raw(self.data(b), k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    self.accumulate(a, |s| s.iter_mut().zip(&da).for_each(|(x, y)| *x += y));
                }
                if self.requires_grad(b) {
                    let at_ = transpose_raw(self.data(a), m, k);
                    let db = matmul_raw(&at_, g, k, m, n);
                    self.accumulate(b, |s| s.iter_mut().zip(&db).for_each(|(x, y)| *x += y));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(a).dims2();
                let da = transpose_raw(g, c, r);
                self.accumulate(a, |s| s.iter_mut().zip(&da).for_each(|(x, y)| *x += y));
            }
            Op::Add(a, b) => {
                self.accumulate_broadcast(a, g, |_| 1.0);
                self.accumulate_broadcast(b, g, |_| 1.0);
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(a, g, |_| 1.0);
                self.accumulate_broadcast(b, g, |_| -1.0);
            }
            Op::Mul(a, b) => {
                let da = self.data(a).to_vec();
                let db = self.data(b).to_vec();
                self.accumulate_broadcast(a, g, |i| at(&db, i));
                self.accumulate_broadcast(b, g, |i| at(&da, i));
            }
            Op::Min(a, b) => {
                let da = self.data(a).to_vec();
                let db = self.data(b).to_vec();
                let a_wins = |i: usize| at(&da, i) <= at(&db, i);
                self.accumulate_broadcast(a, g, |i| if a_wins(i) { 1.0 } else { 0.0 });
                self.accumulate_broadcast(b, g, |i| if a_wins(i) { 0.0 } else { 1.0 });
            }
            Op::AddBias(x, bias) => {
                let n = self.value(bias).numel();
                self.accumulate(x, |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                self.accumulate(bias, |s| {
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Scale(x, k) => {
                self.accumulate(x, |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += k * b));
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[id].value.data().to_vec();
                self.accumulate(x, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = self.nodes[id].value.data().to_vec();
                self.accumulate(x, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.data(x).to_vec();
                self.accumulate(x, |s| {
                    for i in 0..s.len() {
                        if xv[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.data(x).to_vec();
                self.accumulate(x, |s| {
                    for i in 0..s.len() {
                        if xv[i] > lo && xv[i] < hi {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::LnFloor(x, floor) => {
                let xv = self.data(x).to_vec();
                self.accumulate(x, |s| {
                    for i in 0..s.len() {
                        if xv[i] > floor {
                            s[i] += g[i] / xv[i];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = self.nodes[id].value.data().to_vec();
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                self.accumulate(x, |s| {
                    for i in 0..s.len() {
                        s[i] += y[i] * (g[i] - dot);
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.accumulate(x, |s| s.iter_mut().for_each(|a| *a += g0));
            }
            Op::ConcatCols(parts) => {
                let rows = self.nodes[id].value.dims2().0;
                let total = self.nodes[id].value.dims2().1;
                let mut offset = 0;
                for p in parts {
                    let w = self.value(p).dims2().1;
                    self.accumulate(p, |s| {
                        for i in 0..rows {
                            for j in 0..w {
                                s[i * w + j] += g[i * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.value(x).dims2();
                let len = self.nodes[id].value.dims2().1;
                self.accumulate(x, |s| {
                    for i in 0..r {
                        for j in 0..len {
                            s[i * c + start + j] += g[i * len + j];
                        }
                    }
                });
            }
            Op::StackRows(rows) => {
                let mut offset = 0;
                for v in rows {
                    let n = self.value(v).numel();
                    self.accumulate(v, |s| {
                        s.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(a, b)| *a += b)
                    });
                    offset += n;
                }
            }
            Op::IndexRows(x, idx) => {
                let n = self.value(x).dims2().1;
                self.accumulate(x, |s| {
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..n {
                            s[i * n + j] += g[k * n + j];
                        }
                    }
                });
            }
            Op::ScatterRows(x, idx) => {
                let n = self.value(x).dims2().1;
                self.accumulate(x, |s| {
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..n {
                            s[k * n + j] += g[i * n + j];
                        }
                    }
                });
            }
            Op::ScatterFlat(x, idx) => {
                self.accumulate(x, |s| {
                    for (k, &i) in idx.iter().enumerate() {
                        s[k] += g[i];
                    }
                });
            }
            Op::Pick(x, index) => {
                let g0 = g[0];
                self.accumulate(x, |s| s[index] += g0);
            }
            Op::Reshape(x) => {
                self.accumulate(x, |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b));
            }
        }
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    ///
    /// `None` means `v` does not track gradients; a tracked node the loss
    /// never reached reports zeros.
    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(
            self.grads
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.numel()]),
        )
    }

    /// Copy of the node's value with its gradient attached.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor {
        let mut t = self.nodes[v.0].value.clone();
        if let Some(g) = self.grad(v) {
            t = t.with_requires_grad(true);
            t.set_grad(g).expect("gradient length matches value");
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = a.dims2();
        let n = b.dims2().1;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(i, p) * b.get(p, j);
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_selection() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::identity(2));
        let m = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let out = t.matmul(i2, m).unwrap();
        assert_eq!(t.data(out), &[1.0, 2.0, 3.0, 4.0]);

        let a = t.constant(Tensor::from_rows(&[vec![1.0, 0.0]]));
        let b = t.constant(Tensor::from_rows(&[vec![0.0], vec![5.0]]));
        let out = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(out), &[1, 1]);
        assert_eq!(t.data(out), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let b = Tensor::uniform(&[4, 2], 1.0, &mut rng);
        let expected = naive_matmul(&a, &b);
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a), t.constant(b));
        let out = t.matmul(va, vb).unwrap();
        assert_eq!(t.data(out), expected.as_slice());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn pointwise_values() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.elementwise(Elementwise::Sigmoid, &[z]).unwrap();
        let th = t.elementwise(Elementwise::Tanh, &[z]).unwrap();
        assert_eq!(t.item(s), 0.5);
        assert_eq!(t.item(th), 0.0);
        let a = t.constant(Tensor::row_vector(&[0.3, 0.7]));
        let b = t.constant(Tensor::row_vector(&[0.5, 0.2]));
        let m = t.elementwise(Elementwise::Min, &[a, b]).unwrap();
        assert_eq!(t.data(m), &[0.3, 0.2]);
    }

    #[test]
    fn broadcast_rejects_mismatched_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 2]));
        let b = t.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(t.add(a, b), Err(Error::Dimension { .. })));
        let s = t.constant(Tensor::scalar(2.0));
        let ok = t.mul(a, s).unwrap();
        assert_eq!(t.shape(ok), &[2, 2]);
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        for c in [-3.0, 0.0, 17.5] {
            let x = t.constant(Tensor::row_vector(&[c, c, c]));
            let y = t.softmax(x, None).unwrap();
            for &v in t.data(y) {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let x = t.constant(Tensor::row_vector(&[4.2]));
        let y = t.softmax(x, None).unwrap();
        assert_eq!(t.data(y), &[1.0]);

        let x = t.constant(Tensor::row_vector(&[0.0, 3f64.ln()]));
        let y = t.softmax(x, None).unwrap();
        assert!((t.data(y)[0] - 0.25).abs() < 1e-15);
        assert!((t.data(y)[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_mask() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(&[1.0, 2.0, 3.0]));
        let y = t.softmax(x, Some(&[true, false, true])).unwrap();
        assert_eq!(t.data(y)[1], 0.0);
        assert!((t.data(y).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            t.softmax(x, Some(&[false, false, false])),
            Err(Error::Degenerate { len: 3 })
        ));
        let full = t.softmax(x, Some(&[true, true, true])).unwrap();
        let plain = t.softmax(x, None).unwrap();
        assert_eq!(t.data(full), t.data(plain));
    }

    #[test]
    fn sum_and_product_gradients() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row_vector(&[1.5, -2.0, 0.25]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), vec![1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.param(Tensor::scalar(-4.0));
        let p = t.mul(x, y).unwrap();
        t.backward(p).unwrap();
        assert_eq!(t.grad(x).unwrap(), vec![-4.0]);
        assert_eq!(t.grad(y).unwrap(), vec![3.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row_vector(&[1.0, 2.0]));
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn reused_tensor_accumulates_both_paths() {
        // f = x*x + 3x  ->  f' = 2x + 3; the two uses of x must add up.
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(1.25));
        let sq = t.mul(x, x).unwrap();
        let three = t.constant(Tensor::scalar(3.0));
        let lin = t.mul(x, three).unwrap();
        let f = t.add(sq, lin).unwrap();
        t.backward(f).unwrap();
        let combined = t.grad(x).unwrap()[0];

        let mut path1 = Tape::new();
        let x1 = path1.param(Tensor::scalar(1.25));
        let c1 = path1.constant(Tensor::scalar(1.25));
        let sq1 = path1.mul(x1, c1).unwrap();
        path1.backward(sq1).unwrap();
        let mut path2 = Tape::new();
        let x2 = path2.param(Tensor::scalar(1.25));
        let three2 = path2.constant(Tensor::scalar(3.0));
        let l2 = path2.mul(x2, three2).unwrap();
        path2.backward(l2).unwrap();
        let split = 2.0 * path1.grad(x1).unwrap()[0] + path2.grad(x2).unwrap()[0];
        assert_eq!(combined, split);
        assert_eq!(combined, 2.0 * 1.25 + 3.0);
    }

    #[test]
    fn untouched_param_reports_zero_grad() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(1.0));
        let unused = t.param(Tensor::row_vector(&[1.0, 2.0]));
        let y = t.tanh(x);
        t.backward(y).unwrap();
        assert_eq!(t.grad(unused).unwrap(), vec![0.0, 0.0]);
        let c = t.constant(Tensor::scalar(1.0));
        assert!(t.grad(c).is_none());
    }

    /// Builds a composite graph touching every primitive and returns the loss.
    fn composite(t: &mut Tape, w: Var, x: Var, b: Var) -> Var {
        let h = t.matmul(x, w).unwrap(); // 3x4
        let h = t.add_bias(h, b).unwrap();
        let a = t.tanh(h);
        let s = t.sigmoid(h);
        let r = t.relu(h);
        let m = t.mul(a, s).unwrap();
        let m = t.add(m, r).unwrap();
        let ht = t.transpose(m).unwrap(); // 4x3
        let left = t.slice_cols(ht, 0, 2).unwrap();
        let right = t.slice_cols(ht, 2, 1).unwrap();
        let cat = t.concat_cols(&[right, left]).unwrap();
        let rows = t.index_rows(cat, &[3, 0, 0, 2]).unwrap();
        let sc = t.scatter_rows(rows, &[1, 1, 0, 2], 3).unwrap();
        let st = t.stack_rows(&[sc, rows]).unwrap();
        let flat = t.reshape(st, &[1, 21]).unwrap();
        let p = t.softmax(flat, None).unwrap();
        let spread = t.scatter_flat(p, &[0, 1, 2, 0, 1, 2, 3, 4, 5, 6, 0, 1, 2, 3, 4, 5, 6, 0, 1, 2, 3], 7).unwrap();
        let lg = t.ln_floor(spread, 1e-12);
        let picked = t.pick(lg, 4).unwrap();
        let half = t.constant(Tensor::filled(&[1, 7], 0.15));
        let mn = t.min(spread, half).unwrap();
        let cl = t.clamp(mn, 0.0, 0.14);
        let s1 = t.sum(cl);
        let s1 = t.scale(s1, 3.0);
        t.sub(picked, s1).unwrap()
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w0 = Tensor::uniform(&[2, 4], 1.0, &mut rng);
        let x0 = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        let b0 = Tensor::uniform(&[1, 4], 0.5, &mut rng);
        let eval = |w: &Tensor, x: &Tensor, b: &Tensor| {
            let mut t = Tape::new();
            let (w, x, b) = (t.param(w.clone()), t.param(x.clone()), t.param(b.clone()));
            let l = composite(&mut t, w, x, b);
            (t, l, [w, x, b])
        };
        let (mut t, loss, vars) = eval(&w0, &x0, &b0);
        t.backward(loss).unwrap();
        let eps = 1e-5;
        let mut inputs = [w0, x0, b0];
        for (k, var) in vars.iter().enumerate() {
            let analytic = t.grad(*var).unwrap();
            for i in 0..inputs[k].numel() {
                let orig = inputs[k].data()[i];
                inputs[k].data_mut()[i] = orig + eps;
                let (tp, lp, _) = eval(&inputs[0], &inputs[1], &inputs[2]);
                inputs[k].data_mut()[i] = orig - eps;
                let (tm, lm, _) = eval(&inputs[0], &inputs[1], &inputs[2]);
                inputs[k].data_mut()[i] = orig;
                let numeric = (tp.item(lp) - tm.item(lm)) / (2.0 * eps);
                let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
                let rel = (analytic[i] - numeric).abs() / denom;
                assert!(rel < 1e-6, "input {k}[{i}]: {} vs {numeric} ({rel})", analytic[i]);
            }
        }
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Tensor::uniform(&[2, 4], 1.0, &mut rng);
        let x = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        let b = Tensor::uniform(&[1, 4], 0.5, &mut rng);
        let run = || {
            let mut t = Tape::new();
            let vars = [t.param(w.clone()), t.param(x.clone()), t.param(b.clone())];
            let l = composite(&mut t, vars[0], vars[1], vars[2]);
            t.backward(l).unwrap();
            vars.iter().map(|v| t.grad(*v).unwrap()).collect::<Vec<_>>()
        };
        let (g1, g2) = (run(), run());
        for (a, b) in g1.iter().zip(&g2) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
