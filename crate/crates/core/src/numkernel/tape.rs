//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! Every op appends one node holding its forward value. [`Tape::backward`]
//! walks the record in reverse and accumulates parameter gradients into the
//! [`ParamStore`] the parameters were read from.

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::{dot, softmax_slice, Tensor, L2_GUARD};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Kind tags used to inspect which operations a forward pass recorded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    Param,
    MatVec,
    MatTVec,
    Add,
    Sub,
    Mul,
    ScaleBy,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    Concat,
    Slice,
    Dot,
    Sum,
    L2Normalize,
    Softmax,
    CrossEntropy,
    Row,
    StackRows,
    Stack,
    Norm,
    Transfer,
    ElemMax,
    ElemMin,
    Log,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Dot(Var, Var),
    Sum(Var),
    /// Stores the input norm; zero marks the guarded pass-through case.
    L2Normalize(Var, f64),
    Softmax(Var),
    CrossEntropy(Var, usize),
    Row(Var, usize),
    StackRows(Vec<Var>),
    Stack(Vec<Var>),
    /// Divisor and index of the max-|x| entry when rescaling happened.
    Norm(Var, Option<(f64, usize)>),
    Transfer {
        gamma: Var,
        lambda: Var,
        edges: Rc<[(usize, usize)]>,
    },
    /// Winning input per element.
    ElemExtreme(Vec<Var>, Vec<usize>, bool),
    Log(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param => OpKind::Param,
            Op::MatVec(..) => OpKind::MatVec,
            Op::MatTVec(..) => OpKind::MatTVec,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::ScaleBy(..) => OpKind::ScaleBy,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice(..) => OpKind::Slice,
            Op::Dot(..) => OpKind::Dot,
            Op::Sum(_) => OpKind::Sum,
            Op::L2Normalize(..) => OpKind::L2Normalize,
            Op::Softmax(_) => OpKind::Softmax,
            Op::CrossEntropy(..) => OpKind::CrossEntropy,
            Op::Row(..) => OpKind::Row,
            Op::StackRows(_) => OpKind::StackRows,
            Op::Stack(_) => OpKind::Stack,
            Op::Norm(..) => OpKind::Norm,
            Op::Transfer { .. } => OpKind::Transfer,
            Op::ElemExtreme(_, _, true) => OpKind::ElemMax,
            Op::ElemExtreme(_, _, false) => OpKind::ElemMin,
            Op::Log(_) => OpKind::Log,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operations of the given kind.
    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Reads a parameter onto the tape. Repeated reads share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn require_vector(&self, v: Var, ctx: &str) -> Result<usize> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(Error::dim(ctx, format!("expected vector, got shape {s:?}"))),
        }
    }

    fn require_same(&self, a: Var, b: Var, ctx: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                ctx,
                format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// `w · x` for `w: [r, c]`, `x: [c]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (r, c) = self.nodes[w.0]
            .value
            .dims2()
            .ok_or_else(|| Error::dim("matvec", "weight is not a matrix"))?;
        let n = self.require_vector(x, "matvec")?;
        if n != c {
            return Err(Error::dim(
                "matvec",
                format!("weight [{r}, {c}] against input of width {n}"),
            ));
        }
        let wd = self.data(w);
        let xd = self.data(x);
        let out: Vec<f64> = (0..r).map(|i| dot(&wd[i * c..(i + 1) * c], xd)).collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x)))
    }

    /// `wᵀ · x` for `w: [r, c]`, `x: [r]`.
    pub fn mat_t_vec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (r, c) = self.nodes[w.0]
            .value
            .dims2()
            .ok_or_else(|| Error::dim("mat_t_vec", "weight is not a matrix"))?;
        let n = self.require_vector(x, "mat_t_vec")?;
        if n != r {
            return Err(Error::dim(
                "mat_t_vec",
                format!("weight [{r}, {c}] against input of width {n}"),
            ));
        }
        let wd = self.data(w);
        let xd = self.data(x);
        let mut out = vec![0.0; c];
        for i in 0..r {
            let xi = xd[i];
            for (o, wv) in out.iter_mut().zip(&wd[i * c..(i + 1) * c]) {
                *o += xi * wv;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::MatTVec(w, x)))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        ctx: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.require_same(a, b, ctx)?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplies tensor `x` by the one-element tensor `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.data(s).len() != 1 {
            return Err(Error::dim("scale_by", "scale factor must hold one entry"));
        }
        let k = self.data(s)[0];
        let out: Vec<f64> = self.data(x).iter().map(|v| v * k).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::ScaleBy(s, x)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|v| v * k).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Scale(x, k))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|v| f(*v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, out), op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v < 0.0 { 0.0 } else { v }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, super::tensor::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// Natural log; inputs are clamped at 1e-300 to stay finite.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(1e-300).ln(), Op::Log(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of nothing".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            self.require_vector(p, "concat")?;
            out.extend_from_slice(self.data(p));
        }
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec())))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.require_vector(x, "slice")?;
        if len == 0 || start + len > n {
            return Err(Error::dim(
                "slice",
                format!("range {start}..{} of width {n}", start + len),
            ));
        }
        let out = self.data(x)[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(out), Op::Slice(x, start)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.require_same(a, b, "dot")?;
        let v = dot(self.data(a), self.data(b));
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.data(x).iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(x))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        self.require_vector(x, "l2_normalize")?;
        let norm = dot(self.data(x), self.data(x)).sqrt();
        if norm < L2_GUARD {
            let t = self.value(x).clone();
            return Ok(self.push(t, Op::L2Normalize(x, 0.0)));
        }
        let out: Vec<f64> = self.data(x).iter().map(|v| v / norm).collect();
        Ok(self.push(Tensor::vector(out), Op::L2Normalize(x, norm)))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.require_vector(x, "softmax")?;
        let out = softmax_slice(self.data(x));
        Ok(self.push(Tensor::vector(out), Op::Softmax(x)))
    }

    /// `-log softmax(x)[target]`, evaluated stably.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = self.require_vector(logits, "cross_entropy")?;
        if target >= n {
            return Err(Error::Usage(format!(
                "target index {target} out of range for {n} classes"
            )));
        }
        let x = self.data(logits);
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - x[target];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, target)))
    }

    /// Row `index` of a matrix, as a vector (embedding lookup).
    pub fn row(&mut self, table: Var, index: usize) -> Result<Var> {
        let (r, c) = self.nodes[table.0]
            .value
            .dims2()
            .ok_or_else(|| Error::dim("row", "table is not a matrix"))?;
        if index >= r {
            return Err(Error::dim("row", format!("row {index} of a {r}-row table")));
        }
        let out = self.data(table)[index * c..(index + 1) * c].to_vec();
        Ok(self.push(Tensor::vector(out), Op::Row(table, index)))
    }

    /// Stacks equal-width vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::Usage("stack of nothing".into()))?;
        let c = self.require_vector(first, "stack_rows")?;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if self.require_vector(r, "stack_rows")? != c {
                return Err(Error::dim("stack_rows", "rows differ in width"));
            }
            out.extend_from_slice(self.data(r));
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), c], out),
            Op::StackRows(rows.to_vec()),
        ))
    }

    /// Packs one-element tensors into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() {
            return Err(Error::Usage("stack of nothing".into()));
        }
        let mut out = Vec::with_capacity(scalars.len());
        for &s in scalars {
            if self.data(s).len() != 1 {
                return Err(Error::dim("stack", "entries must hold one value"));
            }
            out.push(self.data(s)[0]);
        }
        Ok(self.push(Tensor::vector(out), Op::Stack(scalars.to_vec())))
    }

    /// Rescales `x` by its max absolute entry when that exceeds 1.
    pub fn norm(&mut self, x: Var) -> Result<Var> {
        self.require_vector(x, "norm")?;
        let d = self.data(x);
        let (idx, m) = d.iter().enumerate().fold((0, 0.0f64), |(bi, bm), (i, v)| {
            if v.abs() > bm {
                (i, v.abs())
            } else {
                (bi, bm)
            }
        });
        if m > 1.0 {
            let out: Vec<f64> = d.iter().map(|v| v / m).collect();
            Ok(self.push(Tensor::vector(out), Op::Norm(x, Some((m, idx)))))
        } else {
            let t = self.value(x).clone();
            Ok(self.push(t, Op::Norm(x, None)))
        }
    }

    /// `out[i] = Σ gamma[e] · lambda[j]` over edges `e = (i, j)`.
    pub fn transfer(
        &mut self,
        gamma: Var,
        lambda: Var,
        edges: Rc<[(usize, usize)]>,
    ) -> Result<Var> {
        let ne = self.require_vector(gamma, "transfer")?;
        let n = self.require_vector(lambda, "transfer")?;
        if ne != edges.len() {
            return Err(Error::dim(
                "transfer",
                format!("{ne} edge weights for {} edges", edges.len()),
            ));
        }
        let mut out = vec![0.0; n];
        let g = self.data(gamma);
        let l = self.data(lambda);
        for (e, &(i, j)) in edges.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::dim(
                    "transfer",
                    format!("edge ({i}, {j}) outside {n} nodes"),
                ));
            }
            out[i] += g[e] * l[j];
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::Transfer {
                gamma,
                lambda,
                edges,
            },
        ))
    }

    fn elem_extreme(&mut self, xs: &[Var], take_max: bool) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Usage("merge of an empty set".into()))?;
        let n = self.require_vector(first, "merge")?;
        for &x in xs {
            if self.require_vector(x, "merge")? != n {
                return Err(Error::dim("merge", "attention maps differ in length"));
            }
        }
        let mut out = self.data(first).to_vec();
        let mut winner = vec![0usize; n];
        for (k, &x) in xs.iter().enumerate().skip(1) {
            for (i, v) in self.data(x).iter().enumerate() {
                let better = if take_max { *v > out[i] } else { *v < out[i] };
                if better {
                    out[i] = *v;
                    winner[i] = k;
                }
            }
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::ElemExtreme(xs.to_vec(), winner, take_max),
        ))
    }

    pub fn elem_max(&mut self, xs: &[Var]) -> Result<Var> {
        self.elem_extreme(xs, true)
    }

    pub fn elem_min(&mut self, xs: &[Var]) -> Result<Var> {
        self.elem_extreme(xs, false)
    }

    /// Sum of equal-shape tensors.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let mut acc = *xs
            .first()
            .ok_or_else(|| Error::Usage("sum of an empty set".into()))?;
        for &x in &xs[1..] {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    /// Gradients of the scalar `root` with respect to every node, flattened.
    fn node_grads(&self, root: Var) -> Result<Vec<Vec<f64>>> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); root.0 + 1];
        grads[root.0] = vec![1.0];

        fn acc(grads: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
            let g = &mut grads[v.0];
            if g.is_empty() {
                *g = vec![0.0; len];
            }
            g
        }

        for idx in (0..=root.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatVec(w, x) => {
                    let wt = &self.nodes[w.0].value;
                    let (r, c) = wt.dims2().expect("matvec weight");
                    let xd = self.data(*x);
                    {
                        let gw = acc(&mut grads, *w, r * c);
                        for i in 0..r {
                            let gi = g[i];
                            if gi != 0.0 {
                                for (a, xv) in gw[i * c..(i + 1) * c].iter_mut().zip(xd) {
                                    *a += gi * xv;
                                }
                            }
                        }
                    }
                    let wd = wt.data();
                    let gx = acc(&mut grads, *x, c);
                    for i in 0..r {
                        let gi = g[i];
                        if gi != 0.0 {
                            for (a, wv) in gx.iter_mut().zip(&wd[i * c..(i + 1) * c]) {
                                *a += gi * wv;
                            }
                        }
                    }
                }
                Op::MatTVec(w, x) => {
                    let wt = &self.nodes[w.0].value;
                    let (r, c) = wt.dims2().expect("mat_t_vec weight");
                    let xd = self.data(*x);
                    {
                        let gw = acc(&mut grads, *w, r * c);
                        for i in 0..r {
                            let xi = xd[i];
                            for (a, gv) in gw[i * c..(i + 1) * c].iter_mut().zip(&g) {
                                *a += xi * gv;
                            }
                        }
                    }
                    let wd = wt.data();
                    let gx = acc(&mut grads, *x, r);
                    for i in 0..r {
                        gx[i] += dot(&wd[i * c..(i + 1) * c], &g);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let ga = acc(&mut grads, v, g.len());
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Sub(a, b) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    let gb = acc(&mut grads, *b, g.len());
                    gb.iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                }
                Op::ScaleBy(s, x) => {
                    let k = self.data(*s)[0];
                    let xd = self.data(*x);
                    let gs = acc(&mut grads, *s, 1);
                    gs[0] += dot(&g, xd);
                    let gx = acc(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(a, b)| *a += k * b);
                }
                Op::Scale(x, k) => {
                    let gx = acc(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(a, b)| *a += k * b);
                }
                Op::Relu(x) => {
                    let xd = self.data(*x);
                    let gx = acc(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        if xd[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gx = acc(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let gx = acc(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Log(x) => {
                    let xd = self.data(*x);
                    let gx = acc(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] / xd[i].max(1e-300);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.data(*p).len();
                        let gp = acc(&mut grads, *p, n);
                        gp.iter_mut()
                            .zip(&g[off..off + n])
                            .for_each(|(a, b)| *a += b);
                        off += n;
                    }
                }
                Op::Slice(x, start) => {
                    let n = self.data(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    gx[*start..*start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::Dot(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    let s = g[0];
                    let ga = acc(&mut grads, *a, ad.len());
                    ga.iter_mut().zip(bd).for_each(|(x, y)| *x += s * y);
                    let gb = acc(&mut grads, *b, bd.len());
                    gb.iter_mut().zip(ad).for_each(|(x, y)| *x += s * y);
                }
                Op::Sum(x) => {
                    let n = self.data(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
                Op::L2Normalize(x, norm) => {
                    let n = g.len();
                    let gx = acc(&mut grads, *x, n);
                    if *norm == 0.0 {
                        gx.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    } else {
                        // d(x/|x|) = (g - y (y·g)) / |x|
                        let y = node.value.data();
                        let yg = dot(y, &g);
                        for i in 0..n {
                            gx[i] += (g[i] - y[i] * yg) / norm;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let yg = dot(y, &g);
                    let gx = acc(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] += y[i] * (g[i] - yg);
                    }
                }
                Op::CrossEntropy(x, target) => {
                    let p = softmax_slice(self.data(*x));
                    let gx = acc(&mut grads, *x, p.len());
                    for i in 0..p.len() {
                        let t = if i == *target { 1.0 } else { 0.0 };
                        gx[i] += g[0] * (p[i] - t);
                    }
                }
                Op::Row(table, index) => {
                    let t = &self.nodes[table.0].value;
                    let (_, c) = t.dims2().expect("row table");
                    let gt = acc(&mut grads, *table, t.len());
                    gt[index * c..(index + 1) * c]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::StackRows(rows) => {
                    let c = g.len() / rows.len();
                    for (k, r) in rows.iter().enumerate() {
                        let gr = acc(&mut grads, *r, c);
                        gr.iter_mut()
                            .zip(&g[k * c..(k + 1) * c])
                            .for_each(|(a, b)| *a += b);
                    }
                }
                Op::Stack(items) => {
                    for (k, s) in items.iter().enumerate() {
                        acc(&mut grads, *s, 1)[0] += g[k];
                    }
                }
                Op::Norm(x, scaled) => {
                    let gx = acc(&mut grads, *x, g.len());
                    match scaled {
                        None => gx.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        Some((m, k)) => {
                            let y = node.value.data();
                            for i in 0..g.len() {
                                gx[i] += g[i] / m;
                            }
                            // y = x / |x_k|  ⇒  ∂y_i/∂x_k gains -y_i sign(x_k) / m
                            let sign = if y[*k] >= 0.0 { 1.0 } else { -1.0 };
                            gx[*k] -= sign * dot(&g, y) / m;
                        }
                    }
                }
                Op::Transfer {
                    gamma,
                    lambda,
                    edges,
                } => {
                    let (gd, ld) = (self.data(*gamma), self.data(*lambda));
                    {
                        let gg = acc(&mut grads, *gamma, gd.len());
                        for (e, &(i, j)) in edges.iter().enumerate() {
                            gg[e] += g[i] * ld[j];
                        }
                    }
                    let gl = acc(&mut grads, *lambda, ld.len());
                    for (e, &(i, j)) in edges.iter().enumerate() {
                        gl[j] += g[i] * gd[e];
                    }
                }
                Op::ElemExtreme(xs, winner, _) => {
                    for (i, &w) in winner.iter().enumerate() {
                        acc(&mut grads, xs[w], g.len())[i] += g[i];
                    }
                }
            }
            grads[idx] = g;
        }
        Ok(grads)
    }

    /// Back-propagates from scalar `root`, adding dRoot/dParam into each
    /// parameter's gradient slot. Parameters absent from the tape are untouched.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.node_grads(root)?;
        for (&id, &v) in &self.params {
            if v.0 < grads.len() && !grads[v.0].is_empty() {
                store.accumulate_grad(id, &grads[v.0]);
            }
        }
        Ok(())
    }

    /// Gradient of scalar `root` with respect to an arbitrary recorded value.
    pub fn grad_of(&self, root: Var, wrt: Var) -> Result<Vec<f64>> {
        let grads = self.node_grads(root)?;
        let n = self.nodes[wrt.0].value.len();
        Ok(grads
            .get(wrt.0)
            .filter(|g| !g.is_empty())
            .cloned()
            .unwrap_or_else(|| vec![0.0; n]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut ps = ParamStore::new();
        let id = ps
            .insert("p", Tensor::vector(vec![0.3, -1.0, 2.0]))
            .unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&ps, id);
        let s = tape.sum(p);
        tape.backward(s, &mut ps).unwrap();
        assert_eq!(ps.grad(id), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut ps = ParamStore::new();
        let id = ps.insert("p", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&ps, id);
        let d = tape.dot(p, p).unwrap();
        tape.backward(d, &mut ps).unwrap();
        assert_eq!(ps.grad(id), &[2.0, 4.0]);
    }

    #[test]
    fn untouched_parameter_gets_zero() {
        let mut ps = ParamStore::new();
        let a = ps.insert("a", Tensor::vector(vec![1.0])).unwrap();
        let b = ps.insert("b", Tensor::vector(vec![1.0])).unwrap();
        let mut tape = Tape::new();
        let pa = tape.param(&ps, a);
        let s = tape.sum(pa);
        tape.backward(s, &mut ps).unwrap();
        assert_eq!(ps.grad(b), &[0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut ps = ParamStore::new();
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(v, &mut ps), Err(Error::Usage(_))));
    }

    #[test]
    fn matvec_shape_error_names_op() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::zeros(&[2, 3]));
        let x = tape.constant(Tensor::zeros(&[2]));
        let err = tape.matvec(w, x).unwrap_err();
        assert!(err.to_string().contains("matvec"));
    }

    #[test]
    fn op_counting() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![3.0, -4.0]));
        tape.norm(x).unwrap();
        tape.norm(x).unwrap();
        assert_eq!(tape.count(OpKind::Norm), 2);
        assert_eq!(tape.count(OpKind::Transfer), 0);
    }
}
