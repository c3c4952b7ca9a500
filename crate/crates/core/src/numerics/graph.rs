//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Graph`]; nodes only reference
//! earlier nodes, so the tape is topologically ordered by construction and
//! `backward` is a single reverse sweep. Adjoints add across fan-out.

use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn, transpose};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a tensor recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    AddRow(Var, Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MeanRows(Var),
    Concat {
        a: Var,
        b: Var,
        outer: usize,
        a_inner: usize,
        b_inner: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    Cosine {
        a: Var,
        b: Var,
        norm_a: f64,
        norm_b: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Shift(_) => "shift",
            Op::AddRow(..) => "add_row",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MeanRows(_) => "global_average_pool",
            Op::Concat { .. } => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::Reshape(_) => "reshape",
            Op::Embedding { .. } => "embedding",
            Op::Sum(_) => "sum",
            Op::Cosine { .. } => "cosine",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation record: an append-only tape of primitive applications.
#[derive(Debug)]
pub struct Graph {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.graph != self.id {
            return Err(Error::Dimension(format!(
                "tensor {} belongs to another computation record",
                v.index
            )));
        }
        Ok(&self.nodes[v.index()])
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if value.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let index = u32::try_from(self.nodes.len()).expect("tape overflow");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index,
        })
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index()].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let mut value = value;
        value.clear_grad();
        self.push(value, Op::Leaf, requires_grad)
            .expect("tensors are finite by construction")
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).expect("foreign var").value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.value(v).grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).expect("foreign var").requires_grad
    }

    fn mat_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let s = self.node(v)?.value.shape();
        match s {
            [r, c] => Ok((*r, *c)),
            _ => dim_err(format!("{what} expects a matrix, got shape {s:?}")),
        }
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul")?;
        let (k2, n) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return dim_err(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                [m, k],
                [k2, n]
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    /// `a[m×k] · b[n×k]ᵀ`, the row-vector form of a linear layer with weight `b`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul_nt")?;
        let (n, k2) = self.mat_dims(b, "matmul_nt")?;
        if k != k2 {
            return dim_err(format!(
                "matmul_nt inner dimensions differ: {:?} x {:?}ᵀ",
                [m, k],
                [n, k2]
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNt(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.mat_dims(a, "transpose")?;
        let out = transpose(self.value(a).data(), r, c);
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return dim_err(format!("{what}: shapes {sa:?} and {sb:?} differ"));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_parts(shape, out), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.node(a)?.value.clone_without_grad();
        let shape = ta.shape().to_vec();
        let out = ta.into_data().into_iter().map(f).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(shape, out), op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Shift(a), |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    /// Broadcast add of a vector over the rows of a matrix.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (m, n) = self.mat_dims(x, "add_row")?;
        let vs = self.node(v)?.value.shape();
        if vs != [n] {
            return dim_err(format!("add_row: vector {vs:?} does not match rows of {:?}", [m, n]));
        }
        let vd = self.value(v).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(&vd) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, v]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::AddRow(x, v), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Row softmax where `allowed[i*n + j] == false` forces probability zero,
    /// equivalent to a −∞ logit.
    pub fn softmax_rows_masked(&mut self, x: Var, allowed: Vec<bool>) -> Result<Var> {
        if allowed.len() != self.node(x)?.value.len() {
            return dim_err("softmax mask length differs from input");
        }
        self.softmax_impl(x, Some(allowed))
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let (m, n) = self.mat_dims(x, "softmax_rows")?;
        let xs = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let keep = |j: usize| mask.as_ref().is_none_or(|mk| mk[i * n + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::Degenerate(format!("softmax row {i} is fully masked")));
            }
            let o = &mut out[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for j in 0..n {
                if keep(j) {
                    o[j] = (row[j] - max).exp();
                    sum += o[j];
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::Softmax(x), rg)
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let shape = self.node(x)?.value.shape().to_vec();
        let d = *shape.last().expect("rank >= 1");
        for (p, what) in [(gain, "gain"), (bias, "bias")] {
            let ps = self.node(p)?.value.shape();
            if ps != [d] {
                return dim_err(format!("layer_norm {what} {ps:?} does not match last axis {d}"));
            }
        }
        let xs = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xs.len() / d;
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Mean over the row (patch) axis: `[p×d] → [d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (p, d) = self.mat_dims(x, "global_average_pool")?;
        let xs = self.value(x).data();
        let mut out = vec![0.0; d];
        for row in xs.chunks(d) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / p as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(vec![d], out), Op::MeanRows(x), rg)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let sa = self.node(a)?.value.shape().to_vec();
        let sb = self.node(b)?.value.shape().to_vec();
        if sa.len() != sb.len() || axis >= sa.len() {
            return dim_err(format!("concat of {sa:?} and {sb:?} along axis {axis}"));
        }
        if sa.iter().zip(&sb).enumerate().any(|(i, (x, y))| i != axis && x != y) {
            return dim_err(format!("concat of {sa:?} and {sb:?} along axis {axis}"));
        }
        let outer: usize = sa[..axis].iter().product();
        let a_inner: usize = sa[axis..].iter().product();
        let b_inner: usize = sb[axis..].iter().product();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for o in 0..outer {
            out.extend_from_slice(&da[o * a_inner..(o + 1) * a_inner]);
            out.extend_from_slice(&db[o * b_inner..(o + 1) * b_inner]);
        }
        let mut shape = sa;
        shape[axis] += sb[axis];
        let rg = self.rg(&[a, b]);
        self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                a,
                b,
                outer,
                a_inner,
                b_inner,
            },
            rg,
        )
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat_dims(x, "slice_cols")?;
        if len == 0 || start + len > n {
            return dim_err(format!("slice_cols {start}..{} of {n} columns", start + len));
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for row in xs.chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(vec![m, len], out), Op::SliceCols { x, start }, rg)
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat_dims(x, "slice_rows")?;
        if len == 0 || start + len > m {
            return dim_err(format!("slice_rows {start}..{} of {m} rows", start + len));
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(vec![len, n], out), Op::SliceRows { x, start }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = &self.node(x)?.value;
        if shape.iter().product::<usize>() != t.len() || shape.contains(&0) {
            return dim_err(format!("cannot reshape {:?} to {shape:?}", t.shape()));
        }
        let out = t.data().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(shape.to_vec(), out), Op::Reshape(x), rg)
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let r = self.slice_rows(x, i, 1)?;
        let d = self.shape(r)[1];
        self.reshape(r, &[d])
    }

    /// Gathers `table` rows by id: `[V×d], ids → [n×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.mat_dims(table, "embedding")?;
        if ids.is_empty() {
            return dim_err("embedding lookup with no ids");
        }
        if let Some(bad) = ids.iter().find(|&&id| id >= v) {
            return dim_err(format!("token id {bad} out of range for vocabulary of {v}"));
        }
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&td[id * d..(id + 1) * d]);
        }
        let rg = self.rg(&[table]);
        self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Cosine similarity of two equal-length tensors, as a scalar.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "cosine")?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let norm_a = dot(da, da).sqrt();
        let norm_b = dot(db, db).sqrt();
        if norm_a < 1e-12 || norm_b < 1e-12 {
            return Err(Error::Degenerate(format!(
                "cosine of near-zero vector (norms {norm_a:e}, {norm_b:e})"
            )));
        }
        let c = dot(da, db) / (norm_a * norm_b);
        let rg = self.rg(&[a, b]);
        self.push(
            Tensor::scalar(c),
            Op::Cosine {
                a,
                b,
                norm_a,
                norm_b,
            },
            rg,
        )
    }

    /// Seeds `d loss = 1` and sweeps the tape in reverse. Gradient slots are
    /// reset first, so calling this twice gives the same result.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self.node(loss)?;
        if node.value.len() != 1 {
            return dim_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            ));
        }
        for n in &mut self.nodes {
            n.value.clear_grad();
        }
        if !self.nodes[loss.index()].requires_grad {
            return Ok(());
        }
        self.nodes[loss.index()].value.accumulate_grad(&[1.0]);
        for i in (0..=loss.index()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].value.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let contributions = self.adjoints(i, &g);
            for (v, c) in contributions {
                if self.nodes[v.index()].requires_grad {
                    self.nodes[v.index()].value.accumulate_grad(&c);
                }
            }
        }
        Ok(())
    }

    fn adjoints(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.index()].value;
        let needs = |v: Var| self.nodes[v.index()].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, tb.data(), &mut da, m, n, k);
                    out.push((*a, da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(ta.data(), g, &mut db, m, k, n);
                    out.push((*b, db));
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nn(g, tb.data(), &mut da, m, n, k);
                    out.push((*a, da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm_tn(g, ta.data(), &mut db, m, n, k);
                    out.push((*b, db));
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                out.push((*a, transpose(g, s[0], s[1])));
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if needs(*a) {
                    out.push((*a, g.iter().zip(tb.data()).map(|(x, y)| x * y).collect()));
                }
                if needs(*b) {
                    out.push((*b, g.iter().zip(ta.data()).map(|(x, y)| x * y).collect()));
                }
            }
            Op::Scale(a, s) => out.push((*a, g.iter().map(|v| v * s).collect())),
            Op::Shift(a) => out.push((*a, g.to_vec())),
            Op::AddRow(x, v) => {
                let n = node.value.cols();
                if needs(*v) {
                    let mut dv = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (o, r) in dv.iter_mut().zip(row) {
                            *o += r;
                        }
                    }
                    out.push((*v, dv));
                }
                out.push((*x, g.to_vec()));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                out.push((*a, g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect()));
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let s = dot(yr, gr);
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - s);
                    }
                }
                out.push((*x, dx));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = node.value.cols();
                let gv = val(*gain).data();
                if needs(*gain) || needs(*bias) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                            db[j] += gr[j];
                        }
                    }
                    out.push((*gain, dg));
                    out.push((*bias, db));
                }
                if needs(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let inv_d = 1.0 / d as f64;
                    for (r, ((dr, gr), hr)) in
                        dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate()
                    {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            dr[j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::MeanRows(x) => {
                let p = val(*x).rows();
                let inv = 1.0 / p as f64;
                let row: Vec<f64> = g.iter().map(|v| v * inv).collect();
                out.push((*x, row.repeat(p)));
            }
            Op::Concat {
                a,
                b,
                outer,
                a_inner,
                b_inner,
            } => {
                let (mut da, mut db) = (
                    Vec::with_capacity(outer * a_inner),
                    Vec::with_capacity(outer * b_inner),
                );
                for chunk in g.chunks(a_inner + b_inner) {
                    da.extend_from_slice(&chunk[..*a_inner]);
                    db.extend_from_slice(&chunk[*a_inner..]);
                }
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::SliceCols { x, start } => {
                let n = val(*x).cols();
                let len = node.value.cols();
                let mut dx = vec![0.0; val(*x).len()];
                for (dr, gr) in dx.chunks_mut(n).zip(g.chunks(len)) {
                    dr[*start..start + len].copy_from_slice(gr);
                }
                out.push((*x, dx));
            }
            Op::SliceRows { x, start } => {
                let n = val(*x).cols();
                let mut dx = vec![0.0; val(*x).len()];
                dx[start * n..start * n + g.len()].copy_from_slice(g);
                out.push((*x, dx));
            }
            Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::Embedding { table, ids } => {
                let d = node.value.cols();
                let mut dt = vec![0.0; val(*table).len()];
                for (k, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[k * d + j];
                    }
                }
                out.push((*table, dt));
            }
            Op::Sum(x) => out.push((*x, vec![g[0]; val(*x).len()])),
            Op::Cosine {
                a,
                b,
                norm_a,
                norm_b,
            } => {
                let c = node.value.data()[0];
                let (da, db) = (val(*a).data(), val(*b).data());
                let inv_ab = 1.0 / (norm_a * norm_b);
                if needs(*a) {
                    let k = c / (norm_a * norm_a);
                    out.push((
                        *a,
                        da.iter()
                            .zip(db)
                            .map(|(x, y)| g[0] * (y * inv_ab - k * x))
                            .collect(),
                    ));
                }
                if needs(*b) {
                    let k = c / (norm_b * norm_b);
                    out.push((
                        *b,
                        da.iter()
                            .zip(db)
                            .map(|(x, y)| g[0] * (x * inv_ab - k * y))
                            .collect(),
                    ));
                }
            }
        }
        out
    }
}

impl Tensor {
    fn clone_without_grad(&self) -> Tensor {
        Tensor::from_parts(self.shape().to_vec(), self.data().to_vec())
    }
}
