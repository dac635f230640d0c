//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends one node holding its output value and enough
//! saved state to run its vector-Jacobian product. `backward` walks the tape
//! from the loss towards the leaves, so the node order is already a valid
//! topological order.

use std::sync::Arc;

use super::kernels::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
use super::scalar::c;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward corruption, used as a negative control when
/// certifying gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradFault {
    GraphAttention,
}

/// Row-compressed sparse matrix. `vals` is empty for pattern-only use
/// (graph attention computes its own edge weights).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows<T> {
    pub offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<T>,
}

impl<T: Scalar> SparseRows<T> {
    pub fn rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn to_dense(&self, cols: usize) -> Vec<T> {
        let n = self.rows();
        let mut dense = vec![T::zero(); n * cols];
        for i in 0..n {
            for e in self.row(i) {
                let v = if self.vals.is_empty() { T::one() } else { self.vals[e] };
                dense[i * cols + self.cols[e]] += v;
            }
        }
        dense
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, g: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    AddConst { x: Var },
    MulConst { x: Var, factor: Arc<Vec<T>> },
    AddBias { x: Var, bias: Var, d: usize },
    Relu { x: Var },
    Gelu { x: Var },
    Elu { x: Var },
    LeakyRelu { x: Var, slope: T },
    Softmax { x: Var, n: usize },
    LogSoftmax { x: Var, n: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, d: usize, xhat: Vec<T>, inv_std: Vec<T> },
    GatherRows { src: Var, rows: Arc<Vec<usize>>, d: usize },
    ScatterRows { base: Var, src: Var, rows: Arc<Vec<usize>>, d: usize },
    Reshape { x: Var },
    SplitHeads { x: Var, b: usize, s: usize, h: usize, dh: usize },
    MergeHeads { x: Var, b: usize, s: usize, h: usize, dh: usize },
    SpMM { adj: Arc<SparseRows<T>>, x: Var, d: usize },
    GraphAttention {
        wh: Var,
        src: Var,
        dst: Var,
        adj: Arc<SparseRows<T>>,
        alpha: Vec<T>,
        pre: Vec<T>,
        slope: T,
        d: usize,
    },
    Sum { x: Var },
    Mean { x: Var },
    NllPick { logp: Var, labels: Vec<usize>, weights: Vec<T>, c: usize },
    SoftNll { logp: Var, targets: Vec<T>, weights: Vec<T>, c: usize },
    Mix { a: Var, b: Var, alpha: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of executed operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<GradFault>,
}

fn same_shape(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{what}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), fault: None }
    }

    pub fn with_fault(fault: GradFault) -> Self {
        Self { nodes: Vec::new(), fault: Some(fault) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node { value: tensor, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- linear algebra -------------------------------------------------

    /// Strict 2-D product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!("matmul: cannot multiply {sa:?} by {sb:?}")));
        }
        self.linear(a, b)
    }

    /// `x[..., k] · w[k×n]`, treating all leading axes of `x` as rows.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.is_empty() || sw.len() != 2 || *sx.last().unwrap() != sw[0] {
            return Err(Error::Dimension(format!("linear: cannot multiply {sx:?} by {sw:?}")));
        }
        let (k, n) = (sw[0], sw[1]);
        let m = self.value(x).numel() / k;
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.data(x), self.data(w), &mut out, m, k, n);
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a: x, b: w, m, k, n }, &[x, w]))
    }

    /// Batched product over the leading axis: `a[g,m,k] · b[g,k,n]`, or
    /// `a[g,m,k] · b[g,n,k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::Dimension(format!("bmm(trans_b={trans_b}): {sa:?} vs {sb:?}"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b {
            if sb[2] != k {
                return Err(bad());
            }
            sb[1]
        } else {
            if sb[1] != k {
                return Err(bad());
            }
            sb[2]
        };
        let mut out = vec![T::zero(); g * m * n];
        {
            let (ad, bd) = (self.data(a), self.data(b));
            for gi in 0..g {
                let ab = &ad[gi * m * k..(gi + 1) * m * k];
                let bb = &bd[gi * k * n..(gi + 1) * k * n];
                let ob = &mut out[gi * m * n..(gi + 1) * m * n];
                if trans_b {
                    gemm_nt(ab, bb, ob, m, k, n);
                } else {
                    gemm_nn(ab, bb, ob, m, k, n);
                }
            }
        }
        let value = Tensor::new(vec![g, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul { a, b, g, m, k, n, trans_b }, &[a, b]))
    }

    // ---- elementwise ----------------------------------------------------

    fn zip_op(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul { a, b }, &[a, b]))
    }

    /// `alpha·a + (1 − alpha)·b`.
    pub fn mix(&mut self, a: Var, b: Var, alpha: T) -> Result<Var> {
        let beta = T::one() - alpha;
        let v = self.zip_op(a, b, "mix", |x, y| alpha * x + beta * y)?;
        Ok(self.push(v, Op::Mix { a, b, alpha }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&e| e * factor).collect())
            .expect("shape preserved");
        self.push(v, Op::Scale { x, factor }, &[x])
    }

    /// Adds a constant array (for example an additive attention mask).
    pub fn add_const(&mut self, x: Var, offset: &[T]) -> Result<Var> {
        if offset.len() != self.value(x).numel() {
            return Err(Error::Dimension(format!(
                "add_const: {} offsets for shape {:?}",
                offset.len(),
                self.shape(x)
            )));
        }
        let data = self.data(x).iter().zip(offset).map(|(&a, &b)| a + b).collect();
        let v = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(v, Op::AddConst { x }, &[x]))
    }

    /// Multiplies by a constant array (dropout masks, loss masks).
    pub fn mul_const(&mut self, x: Var, factor: Arc<Vec<T>>) -> Result<Var> {
        if factor.len() != self.value(x).numel() {
            return Err(Error::Dimension(format!(
                "mul_const: {} factors for shape {:?}",
                factor.len(),
                self.shape(x)
            )));
        }
        let data = self.data(x).iter().zip(factor.iter()).map(|(&a, &b)| a * b).collect();
        let v = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(v, Op::MulConst { x, factor }, &[x]))
    }

    /// Broadcast add of `bias[d]` along the trailing axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return Err(Error::Dimension(format!(
                "add_bias: bias {:?} does not match trailing axis of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.data(bias).to_vec();
        let data = self
            .data(x)
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(&b).map(|(&a, &c)| a + c))
            .collect();
        let v = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(v, Op::AddBias { x, bias, d }, &[x, bias]))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&e| f(e)).collect())
            .expect("shape preserved");
        self.push(v, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu { x }, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu { x }, gelu_value)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Elu { x }, |v| if v > T::zero() { v } else { v.exp_m1() })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(x, Op::LeakyRelu { x, slope }, move |v| if v > T::zero() { v } else { v * slope })
    }

    // ---- normalisation --------------------------------------------------

    /// Softmax over the trailing axis, stabilised by max-subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if n == 0 {
            return Err(Error::Contract("softmax over an empty axis".into()));
        }
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("softmax produced a non-finite value".into()));
        }
        let v = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(v, Op::Softmax { x, n }, &[x]))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if n == 0 {
            return Err(Error::Contract("log_softmax over an empty axis".into()));
        }
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        if out.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("log_softmax produced NaN".into()));
        }
        let v = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(v, Op::LogSoftmax { x, n }, &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let d = self.value(x).last_dim();
        if d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Dimension(format!(
                "layer_norm: input {:?}, gain {:?}, bias {:?}",
                self.shape(x),
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let rows = self.value(x).numel() / d;
        let dn = c::<T>(d as f64);
        let mut xhat = vec![T::zero(); rows * d];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        {
            let (xd, gd, bd) = (self.data(x), self.data(gain), self.data(bias));
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                let is = T::one() / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let h = (row[j] - mean) * is;
                    xhat[r * d + j] = h;
                    out[r * d + j] = gd[j] * h + bd[j];
                }
            }
        }
        let v = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(v, Op::LayerNorm { x, gain, bias, d, xhat, inv_std }, &[x, gain, bias]))
    }

    // ---- indexing and layout --------------------------------------------

    /// Selects rows of `src` viewed as `[N, d]` (d = trailing axis).
    pub fn gather_rows(&mut self, src: Var, rows: Arc<Vec<usize>>) -> Result<Var> {
        let d = self.value(src).last_dim();
        let n = self.value(src).numel() / d.max(1);
        let sd = self.data(src);
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows.iter() {
            if r >= n {
                return Err(Error::Index { what: "gathered rows", index: r, size: n });
            }
            out.extend_from_slice(&sd[r * d..(r + 1) * d]);
        }
        let v = Tensor::new(vec![rows.len(), d], out)?;
        Ok(self.push(v, Op::GatherRows { src, rows, d }, &[src]))
    }

    /// Copy of `base` (viewed as `[N, d]`) with the listed rows replaced by
    /// the rows of `src`. Rows must be distinct.
    pub fn scatter_rows(&mut self, base: Var, src: Var, rows: Arc<Vec<usize>>) -> Result<Var> {
        let d = self.value(base).last_dim();
        let n = self.value(base).numel() / d.max(1);
        if self.shape(src) != [rows.len(), d] {
            return Err(Error::Dimension(format!(
                "scatter_rows: source {:?} for {} rows of width {d}",
                self.shape(src),
                rows.len()
            )));
        }
        let mut out = self.data(base).to_vec();
        let sd = self.data(src);
        let mut seen = vec![false; n];
        for (i, &r) in rows.iter().enumerate() {
            if r >= n {
                return Err(Error::Index { what: "scattered rows", index: r, size: n });
            }
            if std::mem::replace(&mut seen[r], true) {
                return Err(Error::Contract(format!("scatter_rows: row {r} listed twice")));
            }
            out[r * d..(r + 1) * d].copy_from_slice(&sd[i * d..(i + 1) * d]);
        }
        let v = Tensor::new(self.shape(base).to_vec(), out)?;
        Ok(self.push(v, Op::ScatterRows { base, src, rows, d }, &[base, src]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).reshaped(shape)?;
        Ok(self.push(v, Op::Reshape { x }, &[x]))
    }

    /// `[b, s, h·dh] → [b·h, s, dh]`
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || !s[2].is_multiple_of(heads) {
            return Err(Error::Dimension(format!("split_heads: {s:?} into {heads} heads")));
        }
        let (b, sl, dh) = (s[0], s[1], s[2] / heads);
        let xd = self.data(x);
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for t in 0..sl {
                for h in 0..heads {
                    let src = (bi * sl + t) * s[2] + h * dh;
                    let dst = ((bi * heads + h) * sl + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        let v = Tensor::new(vec![b * heads, sl, dh], out)?;
        Ok(self.push(v, Op::SplitHeads { x, b, s: sl, h: heads, dh }, &[x]))
    }

    /// `[b·h, s, dh] → [b, s, h·dh]`
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || !s[0].is_multiple_of(heads) {
            return Err(Error::Dimension(format!("merge_heads: {s:?} from {heads} heads")));
        }
        let (b, sl, dh) = (s[0] / heads, s[1], s[2]);
        let xd = self.data(x);
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for t in 0..sl {
                for h in 0..heads {
                    let dst = (bi * sl + t) * heads * dh + h * dh;
                    let src = ((bi * heads + h) * sl + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        let v = Tensor::new(vec![b, sl, heads * dh], out)?;
        Ok(self.push(v, Op::MergeHeads { x, b, s: sl, h: heads, dh }, &[x]))
    }

    // ---- graph message passing ------------------------------------------

    /// `out_i = Σ_j adj_ij · x_j` for `x` viewed as `[N, d]`.
    pub fn spmm(&mut self, adj: Arc<SparseRows<T>>, x: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        let n = self.value(x).numel() / d.max(1);
        if adj.rows() != n || adj.vals.len() != adj.nnz() {
            return Err(Error::Dimension(format!(
                "spmm: operator with {} rows ({} weights) applied to {n} nodes",
                adj.rows(),
                adj.vals.len()
            )));
        }
        let xd = self.data(x);
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            let row = &mut out[i * d..(i + 1) * d];
            for e in adj.row(i) {
                let j = adj.cols[e];
                axpy(adj.vals[e], &xd[j * d..(j + 1) * d], row);
            }
        }
        let v = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(v, Op::SpMM { adj, x, d }, &[x]))
    }

    /// Attention-weighted neighbourhood sum.
    ///
    /// For every node `i` and neighbour `j` of the pattern `adj`:
    /// `e_ij = LeakyReLU(src_i + dst_j)`, `α_i· = softmax(e_i·)`,
    /// `out_i = Σ_j α_ij · wh_j`. `src`/`dst` are per-node scores `[N]` or `[N,1]`.
    pub fn graph_attention(
        &mut self,
        wh: Var,
        src: Var,
        dst: Var,
        adj: Arc<SparseRows<T>>,
        slope: T,
    ) -> Result<Var> {
        let d = self.value(wh).last_dim();
        let n = self.value(wh).numel() / d.max(1);
        if adj.rows() != n || self.value(src).numel() != n || self.value(dst).numel() != n {
            return Err(Error::Dimension(format!(
                "graph_attention: {} pattern rows, features {:?}, scores {:?}/{:?}",
                adj.rows(),
                self.shape(wh),
                self.shape(src),
                self.shape(dst)
            )));
        }
        for i in 0..n {
            if adj.row(i).is_empty() {
                return Err(Error::Contract(format!("graph_attention: node {i} has no neighbours")));
            }
        }
        let (whd, sd, dd) = (self.data(wh), self.data(src), self.data(dst));
        let mut pre = vec![T::zero(); adj.nnz()];
        let mut alpha = vec![T::zero(); adj.nnz()];
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            let r = adj.row(i);
            for e in r.clone() {
                let p = sd[i] + dd[adj.cols[e]];
                pre[e] = p;
                alpha[e] = if p > T::zero() { p } else { p * slope };
            }
            softmax_in_place(&mut alpha[r.clone()]);
            let row = &mut out[i * d..(i + 1) * d];
            for e in r {
                let j = adj.cols[e];
                axpy(alpha[e], &whd[j * d..(j + 1) * d], row);
            }
        }
        let v = Tensor::new(self.shape(wh).to_vec(), out)?;
        Ok(self.push(
            v,
            Op::GraphAttention { wh, src, dst, adj, alpha, pre, slope, d },
            &[wh, src, dst],
        ))
    }

    /// Attention coefficients saved by a [`Tape::graph_attention`] node.
    pub fn attention_coefficients(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::GraphAttention { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    // ---- reductions and losses ------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / c::<T>(t.numel().max(1) as f64);
        self.push(Tensor::scalar(s), Op::Mean { x }, &[x])
    }

    /// `Σ_r w_r · (−logp[r, label_r])` over rows of `logp[N×C]`.
    pub fn nll_pick(&mut self, logp: Var, labels: Vec<usize>, weights: Vec<T>) -> Result<Var> {
        let cdim = self.value(logp).last_dim();
        let rows = self.value(logp).numel() / cdim.max(1);
        if labels.len() != rows || weights.len() != rows {
            return Err(Error::Dimension(format!(
                "nll_pick: {} labels / {} weights for {rows} rows",
                labels.len(),
                weights.len()
            )));
        }
        let ld = self.data(logp);
        let mut total = T::zero();
        for r in 0..rows {
            if weights[r] == T::zero() {
                continue;
            }
            if labels[r] >= cdim {
                return Err(Error::Index { what: "class labels", index: labels[r], size: cdim });
            }
            total -= weights[r] * ld[r * cdim + labels[r]];
        }
        Ok(self.push(Tensor::scalar(total), Op::NllPick { logp, labels, weights, c: cdim }, &[logp]))
    }

    /// `Σ_r w_r · Σ_c −targets[r,c] · logp[r,c]`.
    pub fn soft_nll(&mut self, logp: Var, targets: Vec<T>, weights: Vec<T>) -> Result<Var> {
        let cdim = self.value(logp).last_dim();
        let rows = self.value(logp).numel() / cdim.max(1);
        if targets.len() != rows * cdim || weights.len() != rows {
            return Err(Error::Dimension(format!(
                "soft_nll: {} targets / {} weights for {rows}×{cdim}",
                targets.len(),
                weights.len()
            )));
        }
        let ld = self.data(logp);
        let mut total = T::zero();
        for r in 0..rows {
            if weights[r] == T::zero() {
                continue;
            }
            let mut row = T::zero();
            for k in 0..cdim {
                let t = targets[r * cdim + k];
                if t != T::zero() {
                    row -= t * ld[r * cdim + k];
                }
            }
            total += weights[r] * row;
        }
        Ok(self.push(Tensor::scalar(total), Op::SoftNll { logp, targets, weights, c: cdim }, &[logp]))
    }

    // ---- backward -------------------------------------------------------

    /// Populates the gradient of every differentiable node with respect to
    /// the scalar `loss`. Earlier gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.value.set_grad(None);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                let n = node.value.numel();
                node.value.set_grad(Some(g.unwrap_or_else(|| vec![T::zero(); n])));
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.data();
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                acc(*a, &mut |ga| gemm_nt(g, val(*b), ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn(val(*a), g, gb, k, m, n));
            }
            Op::BatchMatMul { a, b, g: groups, m, k, n, trans_b } => {
                let (m, k, n) = (*m, *k, *n);
                for gi in 0..*groups {
                    let gg = &g[gi * m * n..(gi + 1) * m * n];
                    let ab = &val(*a)[gi * m * k..(gi + 1) * m * k];
                    let bb = &val(*b)[gi * k * n..(gi + 1) * k * n];
                    if *trans_b {
                        // out = a · bᵀ with b[n×k]
                        acc(*a, &mut |ga| gemm_nn(gg, bb, &mut ga[gi * m * k..(gi + 1) * m * k], m, n, k));
                        acc(*b, &mut |gb| gemm_tn(gg, ab, &mut gb[gi * k * n..(gi + 1) * k * n], n, m, k));
                    } else {
                        acc(*a, &mut |ga| gemm_nt(gg, bb, &mut ga[gi * m * k..(gi + 1) * m * k], m, n, k));
                        acc(*b, &mut |gb| gemm_tn(ab, gg, &mut gb[gi * k * n..(gi + 1) * k * n], k, m, n));
                    }
                }
            }
            Op::Add { a, b } => {
                acc(*a, &mut |ga| axpy(T::one(), g, ga));
                acc(*b, &mut |gb| axpy(T::one(), g, gb));
            }
            Op::Sub { a, b } => {
                acc(*a, &mut |ga| axpy(T::one(), g, ga));
                acc(*b, &mut |gb| axpy(-T::one(), g, gb));
            }
            Op::Mul { a, b } => {
                acc(*a, &mut |ga| {
                    for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *o += gv * bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *o += gv * av;
                    }
                });
            }
            Op::Mix { a, b, alpha } => {
                acc(*a, &mut |ga| axpy(*alpha, g, ga));
                acc(*b, &mut |gb| axpy(T::one() - *alpha, g, gb));
            }
            Op::Scale { x, factor } => acc(*x, &mut |gx| axpy(*factor, g, gx)),
            Op::AddConst { x } | Op::Reshape { x } => acc(*x, &mut |gx| axpy(T::one(), g, gx)),
            Op::MulConst { x, factor } => acc(*x, &mut |gx| {
                for ((o, &gv), &f) in gx.iter_mut().zip(g).zip(factor.iter()) {
                    *o += gv * f;
                }
            }),
            Op::AddBias { x, bias, d } => {
                acc(*x, &mut |gx| axpy(T::one(), g, gx));
                acc(*bias, &mut |gb| {
                    for row in g.chunks_exact(*d) {
                        axpy(T::one(), row, gb);
                    }
                });
            }
            Op::Relu { x } => acc(*x, &mut |gx| {
                for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                    if xv > T::zero() {
                        *o += gv;
                    }
                }
            }),
            Op::Gelu { x } => acc(*x, &mut |gx| {
                for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                    *o += gv * gelu_grad(xv);
                }
            }),
            Op::Elu { x } => acc(*x, &mut |gx| {
                for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                    *o += if xv > T::zero() { gv } else { gv * xv.exp() };
                }
            }),
            Op::LeakyRelu { x, slope } => acc(*x, &mut |gx| {
                for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                    *o += if xv > T::zero() { gv } else { gv * *slope };
                }
            }),
            Op::Softmax { x, n } => acc(*x, &mut |gx| {
                for ((gr, yr), orow) in g.chunks_exact(*n).zip(out.chunks_exact(*n)).zip(gx.chunks_exact_mut(*n)) {
                    let s = dot(gr, yr);
                    for j in 0..*n {
                        orow[j] += yr[j] * (gr[j] - s);
                    }
                }
            }),
            Op::LogSoftmax { x, n } => acc(*x, &mut |gx| {
                for ((gr, yr), orow) in g.chunks_exact(*n).zip(out.chunks_exact(*n)).zip(gx.chunks_exact_mut(*n)) {
                    let s = gr.iter().copied().sum::<T>();
                    for j in 0..*n {
                        orow[j] += gr[j] - yr[j].exp() * s;
                    }
                }
            }),
            Op::LayerNorm { x, gain, bias, d, xhat, inv_std } => {
                let d = *d;
                let dn = c::<T>(d as f64);
                let gd = val(*gain);
                acc(*gain, &mut |gg| {
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for gr in g.chunks_exact(d) {
                        axpy(T::one(), gr, gb);
                    }
                });
                acc(*x, &mut |gx| {
                    let mut dh = vec![T::zero(); d];
                    for (r, (gr, hr)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = gr[j] * gd[j];
                        }
                        let mean_dh = dh.iter().copied().sum::<T>() / dn;
                        let mean_dhh = dot(&dh, hr) / dn;
                        let orow = &mut gx[r * d..(r + 1) * d];
                        for j in 0..d {
                            orow[j] += inv_std[r] * (dh[j] - mean_dh - hr[j] * mean_dhh);
                        }
                    }
                });
            }
            Op::GatherRows { src, rows, d } => acc(*src, &mut |gs| {
                for (k, &r) in rows.iter().enumerate() {
                    axpy(T::one(), &g[k * d..(k + 1) * d], &mut gs[r * d..(r + 1) * d]);
                }
            }),
            Op::ScatterRows { base, src, rows, d } => {
                let d = *d;
                acc(*base, &mut |gb| {
                    axpy(T::one(), g, gb);
                    for &r in rows.iter() {
                        for j in 0..d {
                            gb[r * d + j] -= g[r * d + j];
                        }
                    }
                });
                acc(*src, &mut |gs| {
                    for (k, &r) in rows.iter().enumerate() {
                        axpy(T::one(), &g[r * d..(r + 1) * d], &mut gs[k * d..(k + 1) * d]);
                    }
                });
            }
            Op::SplitHeads { x, b, s, h, dh } => acc(*x, &mut |gx| {
                let (b, s, h, dh) = (*b, *s, *h, *dh);
                for bi in 0..b {
                    for t in 0..s {
                        for hi in 0..h {
                            let xo = (bi * s + t) * h * dh + hi * dh;
                            let go = ((bi * h + hi) * s + t) * dh;
                            axpy(T::one(), &g[go..go + dh], &mut gx[xo..xo + dh]);
                        }
                    }
                }
            }),
            Op::MergeHeads { x, b, s, h, dh } => acc(*x, &mut |gx| {
                let (b, s, h, dh) = (*b, *s, *h, *dh);
                for bi in 0..b {
                    for t in 0..s {
                        for hi in 0..h {
                            let go = (bi * s + t) * h * dh + hi * dh;
                            let xo = ((bi * h + hi) * s + t) * dh;
                            axpy(T::one(), &g[go..go + dh], &mut gx[xo..xo + dh]);
                        }
                    }
                }
            }),
            Op::SpMM { adj, x, d } => acc(*x, &mut |gx| {
                let d = *d;
                for r in 0..adj.rows() {
                    let gr = &g[r * d..(r + 1) * d];
                    for e in adj.row(r) {
                        let j = adj.cols[e];
                        axpy(adj.vals[e], gr, &mut gx[j * d..(j + 1) * d]);
                    }
                }
            }),
            Op::GraphAttention { wh, src, dst, adj, alpha, pre, slope, d } => {
                let d = *d;
                let whd = val(*wh);
                let n = adj.rows();
                // d alpha_ij = <g_i, wh_j>; d pre_ij via softmax and LeakyReLU.
                let mut dpre = vec![T::zero(); adj.nnz()];
                for i in 0..n {
                    let gi = &g[i * d..(i + 1) * d];
                    let r = adj.row(i);
                    let mut s = T::zero();
                    for e in r.clone() {
                        let j = adj.cols[e];
                        dpre[e] = dot(gi, &whd[j * d..(j + 1) * d]);
                        s += alpha[e] * dpre[e];
                    }
                    for e in r {
                        let de = alpha[e] * (dpre[e] - s);
                        dpre[e] = if pre[e] > T::zero() { de } else { de * *slope };
                    }
                }
                let corrupt = self.fault == Some(GradFault::GraphAttention);
                acc(*wh, &mut |gw| {
                    for i in 0..n {
                        let gi = &g[i * d..(i + 1) * d];
                        for e in adj.row(i) {
                            let j = adj.cols[e];
                            let w = if corrupt { alpha[e] * c::<T>(1.1) } else { alpha[e] };
                            axpy(w, gi, &mut gw[j * d..(j + 1) * d]);
                        }
                    }
                });
                acc(*src, &mut |gs| {
                    for i in 0..n {
                        for e in adj.row(i) {
                            gs[i] += dpre[e];
                        }
                    }
                });
                acc(*dst, &mut |gd| {
                    for e in 0..adj.nnz() {
                        gd[adj.cols[e]] += dpre[e];
                    }
                });
            }
            Op::Sum { x } => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Mean { x } => acc(*x, &mut |gx| {
                let share = g[0] / c::<T>(gx.len().max(1) as f64);
                for o in gx.iter_mut() {
                    *o += share;
                }
            }),
            Op::NllPick { logp, labels, weights, c: cdim } => acc(*logp, &mut |gl| {
                for (r, (&y, &w)) in labels.iter().zip(weights).enumerate() {
                    if w != T::zero() {
                        gl[r * cdim + y] -= w * g[0];
                    }
                }
            }),
            Op::SoftNll { logp, targets, weights, c: cdim } => acc(*logp, &mut |gl| {
                for (r, &w) in weights.iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    for k in 0..*cdim {
                        gl[r * cdim + k] -= w * targets[r * cdim + k] * g[0];
                    }
                }
            }),
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn gelu_value<T: Scalar>(x: T) -> T {
    let half = c::<T>(0.5);
    let inner = c::<T>(GELU_K) * (x + c::<T>(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = c::<T>(0.5);
    let inner = c::<T>(GELU_K) * (x + c::<T>(GELU_C) * x * x * x);
    let t = inner.tanh();
    let dinner = c::<T>(GELU_K) * (T::one() + c::<T>(3.0 * GELU_C) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, max_gradient_error, FD_STEP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i, m).unwrap();
        assert_eq!(tape.data(p), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(p), &[1, 1]);
        assert_eq!(tape.data(p), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = [random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)];
        let err = max_gradient_error(
            &inputs,
            |tape, v| {
                let p = tape.matmul(v[0], v[1])?;
                Ok(tape.sum(p))
            },
            FD_STEP,
            None,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        close(tape.data(y), &[1.0 / 3.0; 3], 1e-15);
        let x = tape.constant(t(&[2], &[1000.0, 1000.0]));
        let y = tape.softmax(x).unwrap();
        close(tape.data(y), &[0.5, 0.5], 0.0);
        let x = tape.constant(t(&[2], &[0.0, 3f64.ln()]));
        let y = tape.softmax(x).unwrap();
        close(tape.data(y), &[0.25, 0.75], 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite_input() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(tape.softmax(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_masked_entries_get_zero_weight() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.3, 0.1, 0.0]));
        let m = tape.add_const(x, &[0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        let y = tape.softmax(m).unwrap();
        assert_eq!(tape.data(y)[1], 0.0);
        assert!((tape.data(y).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let g = tape.constant(t(&[3], &[1.0; 3]));
        let b = tape.constant(t(&[3], &[0.0; 3]));
        let x = tape.constant(t(&[3], &[5.0; 3]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.data(y), &[0.0; 3]);

        let g2 = tape.constant(t(&[2], &[1.0; 2]));
        let b2 = tape.constant(t(&[2], &[0.0; 2]));
        let x = tape.constant(t(&[2], &[1.0, -1.0]));
        let y = tape.layer_norm(x, g2, b2, 1e-12).unwrap();
        close(tape.data(y), &[1.0, -1.0], 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = tape.constant(random(&[7], &mut rng));
        let g7 = tape.constant(t(&[7], &[1.0; 7]));
        let b7 = tape.constant(t(&[7], &[0.0; 7]));
        let y = tape.layer_norm(x, g7, b7, 1e-5).unwrap();
        let mean = tape.data(y).iter().sum::<f64>() / 7.0;
        assert!(mean.abs() <= 1e-9);
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[1.0, -2.0, 0.5]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        tape.backward(half).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn backward_twice_does_not_accumulate() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let k = tape.constant(t(&[2], &[3.0, 4.0]));
        let p = tape.mul(x, k).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(k).is_none());
    }

    #[test]
    fn sum_has_exact_numeric_gradient() {
        let zeros = t(&[3], &[0.0, 0.0, 0.0]);
        let err = finite_diff_check(|tape, v| Ok(tape.sum(v)), &zeros, FD_STEP).unwrap();
        assert_eq!(err, 0.0);
        // Elsewhere the only discrepancy is the rounding of the perturbed sums.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[16], &mut rng);
        let err = finite_diff_check(|tape, v| Ok(tape.sum(v)), &x, FD_STEP).unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn softmax_pick_first_gradient() {
        let x = t(&[3], &[0.2, -0.7, 1.1]);
        let err = finite_diff_check(
            |tape, v| {
                let s = tape.softmax(v)?;
                let m = tape.mul_const(s, Arc::new(vec![1.0, 0.0, 0.0]))?;
                Ok(tape.sum(m))
            },
            &x,
            FD_STEP,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    fn star() -> Arc<SparseRows<f64>> {
        // node 0 is the hub; every node has a self loop
        Arc::new(SparseRows {
            offsets: vec![0, 3, 5, 7],
            cols: vec![0, 1, 2, 1, 0, 2, 0],
            vals: vec![],
        })
    }

    #[test]
    fn graph_attention_gradient_on_three_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = [random(&[3, 4], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng)];
        let adj = star();
        let f = |tape: &mut Tape<f64>, v: &[Var]| {
            let o = tape.graph_attention(v[0], v[1], v[2], adj.clone(), 0.2)?;
            let o = tape.elu(o);
            let sq = tape.mul(o, o)?;
            Ok(tape.sum(sq))
        };
        let err = max_gradient_error(&inputs, f, FD_STEP, None).unwrap();
        assert!(err <= 1e-4, "{err}");
        let corrupted = max_gradient_error(&inputs, f, FD_STEP, Some(GradFault::GraphAttention)).unwrap();
        assert!(corrupted > 1e-3, "{corrupted}");
    }

    #[test]
    fn graph_attention_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let wh = random(&[3, 2], &mut rng);
        let src = random(&[3], &mut rng);
        let dst = random(&[3], &mut rng);
        let adj = star();
        let mut tape = Tape::new();
        let (a, b, c2) = (tape.constant(wh.clone()), tape.constant(src.clone()), tape.constant(dst.clone()));
        let o = tape.graph_attention(a, b, c2, adj.clone(), 0.2).unwrap();
        for i in 0..3 {
            let nbrs: Vec<usize> = adj.row(i).map(|e| adj.cols[e]).collect();
            let logits: Vec<f64> = nbrs
                .iter()
                .map(|&j| {
                    let p = src.data()[i] + dst.data()[j];
                    if p > 0.0 { p } else { 0.2 * p }
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for k in 0..2 {
                let expect: f64 = nbrs.iter().zip(&logits).map(|(&j, l)| l.exp() / z * wh.data()[j * 2 + k]).sum();
                assert!((tape.data(o)[i * 2 + k] - expect).abs() < 1e-12);
            }
        }
        let coeffs = tape.attention_coefficients(o).unwrap();
        for i in 0..3 {
            let s: f64 = adj.row(i).map(|e| coeffs[e]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn every_op_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        type F = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;
        let cases: Vec<(&str, Vec<Vec<usize>>, F)> = vec![
            ("bmm", vec![vec![2, 3, 4], vec![2, 4, 2]], Box::new(|tp, v| {
                let o = tp.bmm(v[0], v[1], false)?;
                let o = tp.mul(o, o)?;
                Ok(tp.sum(o))
            })),
            ("bmm_t", vec![vec![2, 3, 4], vec![2, 5, 4]], Box::new(|tp, v| {
                let o = tp.bmm(v[0], v[1], true)?;
                let o = tp.mul(o, o)?;
                Ok(tp.sum(o))
            })),
            ("linear_bias_gelu", vec![vec![2, 3, 4], vec![4, 3], vec![3]], Box::new(|tp, v| {
                let o = tp.linear(v[0], v[1])?;
                let o = tp.add_bias(o, v[2])?;
                let o = tp.gelu(o);
                let o = tp.mul(o, o)?;
                Ok(tp.mean(o))
            })),
            ("layer_norm", vec![vec![3, 5], vec![5], vec![5], vec![3, 5]], Box::new(|tp, v| {
                let o = tp.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let o = tp.mul(o, v[3])?;
                Ok(tp.sum(o))
            })),
            ("log_softmax_nll", vec![vec![4, 3]], Box::new(|tp, v| {
                let o = tp.log_softmax(v[0])?;
                tp.nll_pick(o, vec![0, 2, 1, 1], vec![1.0, 0.5, 0.0, 2.0])
            })),
            ("soft_nll", vec![vec![2, 3]], Box::new(|tp, v| {
                let o = tp.log_softmax(v[0])?;
                tp.soft_nll(o, vec![0.2, 0.8, 0.0, 0.3, 0.3, 0.4], vec![1.0, 0.5])
            })),
            ("softmax", vec![vec![2, 4], vec![2, 4]], Box::new(|tp, v| {
                let o = tp.softmax(v[0])?;
                let o = tp.mul(o, v[1])?;
                Ok(tp.sum(o))
            })),
            ("heads", vec![vec![2, 3, 4], vec![2, 3, 4]], Box::new(|tp, v| {
                let s = tp.split_heads(v[0], 2)?;
                let o = tp.bmm(s, s, true)?;
                let o = tp.sum(o);
                let m = tp.merge_heads(s, 2)?;
                let m = tp.mul(m, v[1])?;
                let m = tp.sum(m);
                let both = tp.add(o, m)?;
                Ok(both)
            })),
            ("rows", vec![vec![4, 3], vec![2, 3]], Box::new(|tp, v| {
                let rows = Arc::new(vec![3, 1, 3]);
                let g = tp.gather_rows(v[0], rows)?;
                let gsq = tp.mul(g, g)?;
                let a = tp.sum(gsq);
                let s = tp.scatter_rows(v[0], v[1], Arc::new(vec![2, 0]))?;
                let s = tp.elu(s);
                let ssq = tp.mul(s, s)?;
                let b = tp.sum(ssq);
                tp.add(a, b)
            })),
            ("mix_sub_relu", vec![vec![6], vec![6]], Box::new(|tp, v| {
                let m = tp.mix(v[0], v[1], 0.3)?;
                let d = tp.sub(m, v[1])?;
                let r = tp.leaky_relu(d, 0.2);
                let r2 = tp.relu(m);
                let p = tp.mul(r, r2)?;
                Ok(tp.sum(p))
            })),
            ("spmm", vec![vec![3, 2]], Box::new(|tp, v| {
                let adj = Arc::new(SparseRows {
                    offsets: vec![0, 2, 4, 5],
                    cols: vec![0, 1, 0, 1, 2],
                    vals: vec![0.5, 0.5, 0.5, 0.5, 1.0],
                });
                let o = tp.spmm(adj, v[0])?;
                let o = tp.mul(o, o)?;
                Ok(tp.sum(o))
            })),
        ];
        for (name, shapes, f) in cases {
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut rng)).collect();
            let err = max_gradient_error(&inputs, &f, FD_STEP, None).unwrap();
            assert!(err <= 1e-6, "{name}: {err}");
        }
    }

    #[test]
    fn to_dense_places_weights() {
        let s = SparseRows { offsets: vec![0, 1, 2], cols: vec![1, 0], vals: vec![2.0, 3.0] };
        assert_eq!(s.to_dense(2), vec![0.0, 2.0, 3.0, 0.0]);
    }
}
