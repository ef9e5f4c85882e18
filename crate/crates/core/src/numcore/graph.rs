//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every primitive in execution order. `backward` walks
//! the records in exact reverse order and accumulates (`+=`) into the
//! gradient buffers of the inputs. Discrete choices (gather/scatter ids,
//! dropout masks) are captured as constants; gradients flow through values
//! only.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: F },
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<F> },
    GatherRows { table: Var, ids: Vec<Option<usize>> },
    Scatter { dest: Var, ids: Vec<usize>, src: Var },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    ReduceMean(Var),
    ReduceSum(Var),
    CausalSoftmax(Var),
    LayerNorm { a: Var, inv_std: Vec<F> },
    Max { parts: Vec<Var>, argmax: Vec<usize> },
    Dropout { a: Var, mask: Vec<F> },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    grad: Vec<F>,
    op: Op<F>,
}

/// One forward pass worth of recorded computation.
#[derive(Debug, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Shape(format!("{op}: {detail}"))
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact (erf-based) GELU.
pub fn gelu_scalar<F: Real>(x: F) -> F {
    let xf = x.to_f64().unwrap();
    F::of(xf * std_normal_cdf(xf))
}

fn gelu_grad_scalar<F: Real>(x: F) -> F {
    let xf = x.to_f64().unwrap();
    F::of(std_normal_cdf(xf) + xf * std_normal_pdf(xf))
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, grad: Vec::new(), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of `v`, if anything was accumulated into it.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        let g = &self.nodes[v.0].grad;
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// Parameters touched by this graph and their accumulated gradients.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[F])> {
        self.nodes.iter().filter_map(|n| match n.op {
            Op::Param(id) if !n.grad.is_empty() => Some((id, n.grad.as_slice())),
            _ => None,
        })
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    // ---------------------------------------------------------------------
    // primitives
    // ---------------------------------------------------------------------

    /// `a · b` or `a · bᵀ` with both operands viewed as matrices.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?} (trans_b={trans_b})", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![F::zero(); m * n];
        if trans_b {
            for i in 0..m {
                let ar = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    let br = &bv[j * k..(j + 1) * k];
                    let mut s = F::zero();
                    for p in 0..k {
                        s = s + ar[p] * br[p];
                    }
                    out[i * n + j] = s;
                }
            }
        } else {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == F::zero() {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    for j in 0..n {
                        orow[j] = orow[j] + aip * brow[j];
                    }
                }
            }
        }
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::MatMul { a, b, trans_b }))
    }

    fn check_broadcast(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ac != bc || !(br == ar || br == 1) {
            return Err(shape_err(
                op,
                format!("cannot broadcast {:?} onto {:?}", self.value(b).shape(), self.value(a).shape()),
            ));
        }
        Ok(())
    }

    fn binary(&mut self, op: &str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        self.check_broadcast(op, a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[i % bv.len()]))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    /// Elementwise `a + b`; `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| x * c).collect()).unwrap();
        self.push(t, Op::Scale { a, c })
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect()).unwrap();
        self.push(t, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| F::one() / (F::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu_scalar, Op::Gelu(a))
    }

    /// Mean over rows of `-log softmax(logits_r)[targets_r]`, computed with
    /// the max-shift trick.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if targets.len() != m {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("{m} rows but {} targets", targets.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(shape_err("softmax_cross_entropy", format!("target {t} out of {n} classes")));
        }
        let lv = self.value(logits).data();
        if lv.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("softmax_cross_entropy: logits".into()));
        }
        let mut probs = vec![F::zero(); m * n];
        let mut total = F::zero();
        for r in 0..m {
            let row = &lv[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = (x - mx).exp();
                probs[r * n + j] = e;
                z = z + e;
            }
            for p in &mut probs[r * n..(r + 1) * n] {
                *p = *p / z;
            }
            let lse = mx + z.ln();
            total = total + (lse - row[targets[r]]);
        }
        let loss = total / F::of(m as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
        ))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ids: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
        self.gather_rows(table, ids)
    }

    /// Like [`Graph::embedding_gather`], but `None` produces a zero row.
    pub fn gather_rows(&mut self, table: Var, ids: Vec<Option<usize>>) -> Result<Var> {
        let (rows, cols) = self.dims(table);
        if ids.is_empty() {
            return Err(shape_err("gather_rows", "empty id list".into()));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for id in &ids {
            match *id {
                Some(i) if i < rows => out.extend_from_slice(&tv[i * cols..(i + 1) * cols]),
                Some(i) => {
                    return Err(shape_err("gather_rows", format!("row {i} out of {rows}")));
                }
                None => out.extend(std::iter::repeat_n(F::zero(), cols)),
            }
        }
        let t = Tensor::matrix(ids.len(), cols, out)?;
        Ok(self.push(t, Op::GatherRows { table, ids }))
    }

    /// Copy of `dest` with flat positions `ids` overwritten by `src`.
    /// Ids must be distinct.
    pub fn index_scatter_assign(&mut self, dest: Var, ids: &[usize], src: Var) -> Result<Var> {
        let dv = self.value(dest);
        let sv = self.value(src);
        if sv.len() != ids.len() {
            return Err(shape_err(
                "index_scatter_assign",
                format!("{} ids but source has {} values", ids.len(), sv.len()),
            ));
        }
        let mut seen = vec![false; dv.len()];
        for &i in ids {
            if i >= dv.len() {
                return Err(shape_err("index_scatter_assign", format!("id {i} out of {}", dv.len())));
            }
            if seen[i] {
                return Err(shape_err("index_scatter_assign", format!("duplicate id {i}")));
            }
            seen[i] = true;
        }
        let mut data = dv.data().to_vec();
        for (k, &i) in ids.iter().enumerate() {
            data[i] = sv.data()[k];
        }
        let t = Tensor::new(dv.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Scatter { dest, ids: ids.to_vec(), src }))
    }

    /// Concatenate along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let m = self.dims(parts[0]).0;
        if parts.iter().any(|&p| self.dims(p).0 != m) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.value(p).shape().to_vec()).collect();
            return Err(shape_err("concat", format!("row mismatch {shapes:?}")));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let t = Tensor::matrix(m, total, out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    /// Stack along the row dimension.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no inputs".into()));
        }
        let n = self.dims(parts[0]).1;
        if parts.iter().any(|&p| self.dims(p).1 != n) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.value(p).shape().to_vec()).collect();
            return Err(shape_err("concat_rows", format!("column mismatch {shapes:?}")));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let m = out.len() / n;
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > n {
            return Err(shape_err("slice_cols", format!("[{start}, {}) of {n} columns", start + len)));
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&av.row_slice(r)[start..start + len]);
        }
        let t = Tensor::matrix(m, len, out)?;
        Ok(self.push(t, Op::SliceCols { a, start }))
    }

    pub fn reduce_mean(&mut self, a: Var) -> Var {
        let av = self.value(a).data();
        let s: F = av.iter().copied().sum();
        let t = Tensor::scalar(s / F::of(av.len() as f64));
        self.push(t, Op::ReduceMean(a))
    }

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let s: F = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::ReduceSum(a))
    }

    /// Row softmax where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if m > n {
            return Err(shape_err("causal_softmax", format!("{m} rows but only {n} columns")));
        }
        let av = self.value(a).data();
        let mut out = vec![F::zero(); m * n];
        for r in 0..m {
            let row = &av[r * n..r * n + r + 1];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = (x - mx).exp();
                out[r * n + j] = e;
                z = z + e;
            }
            for o in &mut out[r * n..r * n + r + 1] {
                *o = *o / z;
            }
        }
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::CausalSoftmax(a)))
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: F) -> Var {
        let (m, n) = self.dims(a);
        let av = self.value(a);
        let nf = F::of(n as f64);
        let mut out = vec![F::zero(); m * n];
        let mut inv_std = Vec::with_capacity(m);
        for r in 0..m {
            let row = av.row_slice(r);
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / nf;
            let is = F::one() / (var + eps).sqrt();
            for (j, &x) in row.iter().enumerate() {
                out[r * n + j] = (x - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::new(av.shape().to_vec(), out).unwrap();
        self.push(t, Op::LayerNorm { a, inv_std })
    }

    /// Elementwise maximum over same-shaped inputs; ties go to the earliest input.
    pub fn max(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("max", "no inputs".into()));
        }
        let shape = self.value(parts[0]).shape().to_vec();
        if parts.iter().any(|&p| self.value(p).shape() != shape.as_slice()) {
            return Err(shape_err("max", "shape mismatch".into()));
        }
        let n = self.value(parts[0]).len();
        let mut out = self.value(parts[0]).data().to_vec();
        let mut argmax = vec![0usize; n];
        for (k, &p) in parts.iter().enumerate().skip(1) {
            for (i, &x) in self.value(p).data().iter().enumerate() {
                if x > out[i] {
                    out[i] = x;
                    argmax[i] = k;
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Max { parts: parts.to_vec(), argmax }))
    }

    /// Multiply by a constant mask (entries are 0 or the inverted keep rate).
    pub fn dropout(&mut self, a: Var, mask: Vec<F>) -> Result<Var> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return Err(shape_err("dropout", format!("mask {} vs {}", mask.len(), av.len())));
        }
        let data = av.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { a, mask }))
    }

    // ---------------------------------------------------------------------
    // backward
    // ---------------------------------------------------------------------

    fn acc(&mut self, v: Var, contrib: &[F]) {
        let g = &mut self.nodes[v.0].grad;
        if g.is_empty() {
            *g = contrib.to_vec();
        } else {
            for (a, &b) in g.iter_mut().zip(contrib) {
                *a = *a + b;
            }
        }
    }

    fn acc_broadcast(&mut self, b: Var, contrib: Vec<F>) {
        let blen = self.value(b).len();
        if blen == contrib.len() {
            self.acc(b, &contrib);
        } else {
            let mut red = vec![F::zero(); blen];
            for (i, &c) in contrib.iter().enumerate() {
                red[i % blen] = red[i % blen] + c;
            }
            self.acc(b, &red);
        }
    }

    /// Backpropagate from scalar `out` with seed gradient 1.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        self.backward_with_seed(out, F::one())
    }

    pub fn backward_with_seed(&mut self, out: Var, seed: F) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(shape_err("backward", format!("output shape {:?} is not scalar", self.value(out).shape())));
        }
        self.acc(out, &[seed]);
        for i in (0..=out.0).rev() {
            if self.nodes[i].grad.is_empty() {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let gout = std::mem::take(&mut self.nodes[i].grad);
            self.backward_node(i, &op, &gout);
            self.nodes[i].grad = gout;
            self.nodes[i].op = op;
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, op: &Op<F>, gout: &[F]) {
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.dims(*a);
                let n = self.dims(Var(i)).1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let mut ga = vec![F::zero(); m * k];
                let mut gb = vec![F::zero(); bv.len()];
                if *trans_b {
                    // C = A Bᵀ, B is n×k
                    for r in 0..m {
                        for j in 0..n {
                            let g = gout[r * n + j];
                            if g == F::zero() {
                                continue;
                            }
                            for p in 0..k {
                                ga[r * k + p] = ga[r * k + p] + g * bv[j * k + p];
                                gb[j * k + p] = gb[j * k + p] + g * av[r * k + p];
                            }
                        }
                    }
                } else {
                    // C = A B, B is k×n
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = F::zero();
                            let aip = av[r * k + p];
                            for j in 0..n {
                                let g = gout[r * n + j];
                                s = s + g * bv[p * n + j];
                                gb[p * n + j] = gb[p * n + j] + aip * g;
                            }
                            ga[r * k + p] = s;
                        }
                    }
                }
                self.acc(*a, &ga);
                self.acc(*b, &gb);
            }
            Op::Add { a, b } => {
                self.acc(*a, gout);
                self.acc_broadcast(*b, gout.to_vec());
            }
            Op::Sub { a, b } => {
                self.acc(*a, gout);
                self.acc_broadcast(*b, gout.iter().map(|&g| -g).collect());
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let bl = bv.len();
                let ga: Vec<F> = gout.iter().enumerate().map(|(j, &g)| g * bv[j % bl]).collect();
                let gb: Vec<F> = gout.iter().zip(av).map(|(&g, &x)| g * x).collect();
                self.acc(*a, &ga);
                self.acc_broadcast(*b, gb);
            }
            Op::Scale { a, c } => {
                let ga: Vec<F> = gout.iter().map(|&g| g * *c).collect();
                self.acc(*a, &ga);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data();
                let ga: Vec<F> = gout.iter().zip(y).map(|(&g, &y)| g * y * (F::one() - y)).collect();
                self.acc(*a, &ga);
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data();
                let ga: Vec<F> = gout.iter().zip(y).map(|(&g, &y)| g * (F::one() - y * y)).collect();
                self.acc(*a, &ga);
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let ga: Vec<F> = gout.iter().zip(x).map(|(&g, &x)| g * gelu_grad_scalar(x)).collect();
                self.acc(*a, &ga);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let m = targets.len();
                let n = probs.len() / m;
                let s = gout[0] / F::of(m as f64);
                let mut ga: Vec<F> = probs.iter().map(|&p| p * s).collect();
                for (r, &t) in targets.iter().enumerate() {
                    ga[r * n + t] = ga[r * n + t] - s;
                }
                self.acc(*logits, &ga);
            }
            Op::GatherRows { table, ids } => {
                let cols = self.dims(*table).1;
                let len = self.value(*table).len();
                let g = &mut self.nodes[table.0].grad;
                if g.is_empty() {
                    *g = vec![F::zero(); len];
                }
                for (r, id) in ids.iter().enumerate() {
                    if let Some(row) = *id {
                        for c in 0..cols {
                            g[row * cols + c] = g[row * cols + c] + gout[r * cols + c];
                        }
                    }
                }
            }
            Op::Scatter { dest, ids, src } => {
                let mut gd = gout.to_vec();
                let mut gs = Vec::with_capacity(ids.len());
                for &j in ids {
                    gs.push(gout[j]);
                    gd[j] = F::zero();
                }
                self.acc(*dest, &gd);
                self.acc(*src, &gs);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = self.dims(Var(i));
                let mut off = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    let mut gp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        gp.extend_from_slice(&gout[r * total + off..r * total + off + w]);
                    }
                    self.acc(p, &gp);
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(p, &gout[off..off + len]);
                    off += len;
                }
            }
            Op::SliceCols { a, start } => {
                let (m, n) = self.dims(*a);
                let w = self.dims(Var(i)).1;
                let mut ga = vec![F::zero(); m * n];
                for r in 0..m {
                    ga[r * n + start..r * n + start + w].copy_from_slice(&gout[r * w..(r + 1) * w]);
                }
                self.acc(*a, &ga);
            }
            Op::ReduceMean(a) => {
                let len = self.value(*a).len();
                let ga = vec![gout[0] / F::of(len as f64); len];
                self.acc(*a, &ga);
            }
            Op::ReduceSum(a) => {
                let len = self.value(*a).len();
                let ga = vec![gout[0]; len];
                self.acc(*a, &ga);
            }
            Op::CausalSoftmax(a) => {
                let (m, n) = self.dims(Var(i));
                let y = self.nodes[i].value.data();
                let mut ga = vec![F::zero(); m * n];
                for r in 0..m {
                    let row = r * n..r * n + r + 1;
                    let dot: F = y[row.clone()].iter().zip(&gout[row.clone()]).map(|(&a, &b)| a * b).sum();
                    for j in row {
                        ga[j] = y[j] * (gout[j] - dot);
                    }
                }
                self.acc(*a, &ga);
            }
            Op::LayerNorm { a, inv_std } => {
                let (m, n) = self.dims(Var(i));
                let xh = self.nodes[i].value.data();
                let nf = F::of(n as f64);
                let mut ga = vec![F::zero(); m * n];
                for r in 0..m {
                    let g = &gout[r * n..(r + 1) * n];
                    let x = &xh[r * n..(r + 1) * n];
                    let sg: F = g.iter().copied().sum();
                    let sgx: F = g.iter().zip(x).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        ga[r * n + j] = inv_std[r] * (nf * g[j] - sg - x[j] * sgx) / nf;
                    }
                }
                self.acc(*a, &ga);
            }
            Op::Max { parts, argmax } => {
                for (k, &p) in parts.iter().enumerate() {
                    let gp: Vec<F> = gout
                        .iter()
                        .zip(argmax)
                        .map(|(&g, &am)| if am == k { g } else { F::zero() })
                        .collect();
                    self.acc(p, &gp);
                }
            }
            Op::Dropout { a, mask } => {
                let ga: Vec<F> = gout.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                self.acc(*a, &ga);
            }
        }
    }
}
