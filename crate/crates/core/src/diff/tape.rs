use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{Array, Real};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Values<T> {
    Owned(Vec<T>),
    Shared(Arc<Array<T>>),
}

impl<T: Real> Values<T> {
    fn as_slice(&self) -> &[T] {
        match self {
            Values::Owned(v) => v,
            Values::Shared(a) => a.data(),
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, T, T),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Embed(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
    Sum(Var),
    RowSum(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Clamp(..) => "clamp",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Embed(..) => "embed",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(..) => "sum",
            Op::RowSum(..) => "row_sum",
        }
    }
}

struct Node<T> {
    rows: usize,
    cols: usize,
    values: Values<T>,
    op: Op<T>,
    tracked: bool,
}

/// Record of primitive applications. Node order is a topological order, so
/// the backward pass is a reverse scan.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    first_non_finite: Option<&'static str>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch {
        op,
        detail: format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        if self.first_non_finite.is_none() && !data.iter().all(|v| v.is_finite()) {
            self.first_non_finite = Some(op.name());
        }
        self.nodes.push(Node {
            rows,
            cols,
            values: Values::Owned(data),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Untracked input (no gradient is accumulated for it).
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch {
                op: "constant",
                detail: format!("{}x{} with {} values", rows, cols, data.len()),
            });
        }
        Ok(self.push(rows, cols, data, Op::Leaf, false))
    }

    /// Tracked input that receives a gradient.
    pub fn variable(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        let v = self.constant(rows, cols, data)?;
        self.nodes[v.0].tracked = true;
        Ok(v)
    }

    /// Tracked input sharing storage with a parameter array.
    pub fn parameter(&mut self, array: Arc<Array<T>>, tracked: bool) -> Var {
        let (rows, cols) = array.matrix_dims();
        if self.first_non_finite.is_none() && !array.is_finite() {
            self.first_non_finite = Some("parameter");
        }
        self.nodes.push(Node {
            rows,
            cols,
            values: Values::Shared(array),
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        self.nodes[v.0].values.as_slice()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        let (rows, cols) = self.dims(v);
        if rows * cols != 1 {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        Ok(self.value(v)[0])
    }

    /// Fails with the first primitive that produced NaN or infinity.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some(op) => Err(Error::NonFinite { op }),
            None => Ok(()),
        }
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", (r, k), (k2, n)));
        }
        let mut out = vec![T::zero(); r * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..r {
                let crow = &mut out[i * n..(i + 1) * n];
                for (p, &x) in av[i * k..(i + 1) * k].iter().enumerate() {
                    let brow = &bv[p * n..(p + 1) * n];
                    for (c, &y) in crow.iter_mut().zip(brow) {
                        *c += x * y;
                    }
                }
            }
        }
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(r, n, out, Op::MatMul(a, b), tracked))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(shape_err(name, da, db));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(da.0, da.1, out, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[i, j] + row[j]` for a `1 x cols` row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            return Err(shape_err("add_row", (r, c), self.dims(row)));
        }
        let mut out = self.value(a).to_vec();
        let rv = self.value(row);
        for chunk in out.chunks_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(rv) {
                *o += b;
            }
        }
        let tracked = self.tracked(&[a, row]);
        Ok(self.push(r, c, out, Op::AddRow(a, row), tracked))
    }

    /// `a[i, j] * col[i]` for a `rows x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(col) != (r, 1) {
            return Err(shape_err("mul_col", (r, c), self.dims(col)));
        }
        let mut out = self.value(a).to_vec();
        let cv = self.value(col);
        for (chunk, &m) in out.chunks_mut(c).zip(cv) {
            for o in chunk.iter_mut() {
                *o *= m;
            }
        }
        let tracked = self.tracked(&[a, col]);
        Ok(self.push(r, c, out, Op::MulCol(a, col), tracked))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let tracked = self.tracked(&[a]);
        self.push(r, c, out, op, tracked)
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn offset(&mut self, a: Var, k: T) -> Var {
        self.map(a, |x| x + k, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, |x| x.ln(), Op::Log(a))
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.map(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    /// Column-wise concatenation of arrays with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat"))?;
        let r = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            let d = self.dims(p);
            if d.0 != r {
                return Err(shape_err("concat", (r, total), d));
            }
            total += d.1;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        let tracked = self.tracked(parts);
        Ok(self.push(r, total, out, Op::Concat(parts.to_vec()), tracked))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start >= end || end > c {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("columns {}..{} of {}x{}", start, end, r, c),
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        let v = self.value(a);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + end]);
        }
        let tracked = self.tracked(&[a]);
        Ok(self.push(r, w, out, Op::Slice(a, start), tracked))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, e) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::EmptyInput("embed"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::InvalidToken { id: bad, vocab: v });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            out.extend_from_slice(&tv[id * e..(id + 1) * e]);
        }
        let tracked = self.tracked(&[table]);
        Ok(self.push(ids.len(), e, out, Op::Embed(table, ids.to_vec()), tracked))
    }

    /// Fused softmax and cross-entropy. Row `i` of the `rows x 1` result is
    /// `weights[i] * -log softmax(logits[i])[targets[i]]`, computed with the
    /// max-subtracted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r || weights.len() != r {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                detail: format!(
                    "{} rows, {} targets, {} weights",
                    r,
                    targets.len(),
                    weights.len()
                ),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidToken { id: bad, vocab: c });
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); r * c];
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            let row = &lv[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            for (p, &x) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
            let nll = lse - row[targets[i]];
            out.push(if weights[i] == T::zero() {
                T::zero()
            } else {
                weights[i] * nll
            });
        }
        let tracked = self.tracked(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
        };
        Ok(self.push(r, 1, out, op, tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let tracked = self.tracked(&[a]);
        self.push(1, 1, vec![s], Op::Sum(a), tracked)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).chunks(c).map(|ch| ch.iter().copied().sum()).collect();
        let tracked = self.tracked(&[a]);
        self.push(r, 1, out, Op::RowSum(a), tracked)
    }

    /// Reverse pass from a scalar. Visits nodes in reverse recording order
    /// and accumulates contributions additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let (rows, cols) = self.dims(loss);
        if rows * cols != 1 {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = node.values.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, k) = self.dims(*a);
                let n = node.cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                if let Some(da) = self.slot(*a, grads) {
                    for i in 0..r {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let mut s = T::zero();
                            for (&x, &y) in grow.iter().zip(brow) {
                                s += x * y;
                            }
                            da[i * k + p] += s;
                        }
                    }
                }
                if let Some(db) = self.slot(*b, grads) {
                    for i in 0..r {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            for (d, &y) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += x * y;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, grads, |d| add_into(d, g));
                self.accumulate(*b, grads, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, grads, |d| add_into(d, g));
                self.accumulate(*b, grads, |d| {
                    for (d, &x) in d.iter_mut().zip(g) {
                        *d -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                self.accumulate(*a, grads, |d| {
                    for ((d, &x), &y) in d.iter_mut().zip(g).zip(bv) {
                        *d += x * y;
                    }
                });
                self.accumulate(*b, grads, |d| {
                    for ((d, &x), &y) in d.iter_mut().zip(g).zip(av) {
                        *d += x * y;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let c = node.cols;
                self.accumulate(*a, grads, |d| add_into(d, g));
                self.accumulate(*row, grads, |d| {
                    for chunk in g.chunks(c) {
                        add_into(d, chunk);
                    }
                });
            }
            Op::MulCol(a, col) => {
                let c = node.cols;
                let av = self.value(*a);
                let cv = self.value(*col);
                self.accumulate(*a, grads, |d| {
                    for ((dch, gch), &m) in d.chunks_mut(c).zip(g.chunks(c)).zip(cv) {
                        for (d, &x) in dch.iter_mut().zip(gch) {
                            *d += x * m;
                        }
                    }
                });
                self.accumulate(*col, grads, |d| {
                    for ((dv, gch), ach) in d.iter_mut().zip(g.chunks(c)).zip(av.chunks(c)) {
                        let mut s = T::zero();
                        for (&x, &y) in gch.iter().zip(ach) {
                            s += x * y;
                        }
                        *dv += s;
                    }
                });
            }
            Op::Scale(a, k) => {
                self.accumulate(*a, grads, |d| {
                    for (d, &x) in d.iter_mut().zip(g) {
                        *d += x * *k;
                    }
                });
            }
            Op::Offset(a) => self.accumulate(*a, grads, |d| add_into(d, g)),
            Op::Tanh(a) => self.accumulate(*a, grads, |d| {
                for ((d, &x), &y) in d.iter_mut().zip(g).zip(out) {
                    *d += x * (T::one() - y * y);
                }
            }),
            Op::Sigmoid(a) => self.accumulate(*a, grads, |d| {
                for ((d, &x), &y) in d.iter_mut().zip(g).zip(out) {
                    *d += x * y * (T::one() - y);
                }
            }),
            Op::Exp(a) => self.accumulate(*a, grads, |d| {
                for ((d, &x), &y) in d.iter_mut().zip(g).zip(out) {
                    *d += x * y;
                }
            }),
            Op::Log(a) => {
                let av = self.value(*a);
                self.accumulate(*a, grads, |d| {
                    for ((d, &x), &y) in d.iter_mut().zip(g).zip(av) {
                        *d += x / y;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a);
                self.accumulate(*a, grads, |d| {
                    for ((d, &x), &y) in d.iter_mut().zip(g).zip(av) {
                        if y >= *lo && y <= *hi {
                            *d += x;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let total = node.cols;
                let mut off = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    self.accumulate(p, grads, |d| {
                        for (dch, gch) in d.chunks_mut(c).zip(g.chunks(total)) {
                            add_into(dch, &gch[off..off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::Slice(a, start) => {
                let c = self.dims(*a).1;
                let w = node.cols;
                self.accumulate(*a, grads, |d| {
                    for (dch, gch) in d.chunks_mut(c).zip(g.chunks(w)) {
                        add_into(&mut dch[*start..*start + w], gch);
                    }
                });
            }
            Op::Embed(table, ids) => {
                let e = node.cols;
                self.accumulate(*table, grads, |d| {
                    for (&id, gch) in ids.iter().zip(g.chunks(e)) {
                        add_into(&mut d[id * e..(id + 1) * e], gch);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let c = self.dims(*logits).1;
                self.accumulate(*logits, grads, |d| {
                    for i in 0..targets.len() {
                        let scale = g[i] * weights[i];
                        if scale == T::zero() {
                            continue;
                        }
                        let drow = &mut d[i * c..(i + 1) * c];
                        for (dv, &p) in drow.iter_mut().zip(&probs[i * c..(i + 1) * c]) {
                            *dv += scale * p;
                        }
                        drow[targets[i]] -= scale;
                    }
                });
            }
            Op::Sum(a) => {
                let s = g[0];
                self.accumulate(*a, grads, |d| {
                    for d in d.iter_mut() {
                        *d += s;
                    }
                });
            }
            Op::RowSum(a) => {
                let c = self.dims(*a).1;
                self.accumulate(*a, grads, |d| {
                    for (dch, &x) in d.chunks_mut(c).zip(g) {
                        for d in dch.iter_mut() {
                            *d += x;
                        }
                    }
                });
            }
        }
    }

    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<T>>]) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.tracked {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.rows * node.cols]))
    }

    fn accumulate(&self, v: Var, grads: &mut [Option<Vec<T>>], f: impl FnOnce(&mut [T])) {
        if let Some(d) = self.slot(v, grads) {
            f(d);
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-subtracted log-sum-exp of a row.
pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Log-softmax of one row, evaluated in `f64`.
pub fn log_softmax<T: Real>(row: &[T]) -> Vec<f64> {
    let wide: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
    let lse = log_sum_exp(&wide);
    wide.iter().map(|&x| x - lse).collect()
}

/// Accumulated gradients of one backward pass. Only leaves keep their
/// gradient; intermediate buffers are released during the scan.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
