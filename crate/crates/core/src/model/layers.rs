//! Tape-level building blocks of the encoder.

use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::Result;
use crate::numerics::{c, Scalar, SparseRows, Tape, Var};

/// Parameters of one post-norm encoder layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

/// Parameters of one graph layer; attention vectors only for GAT.
#[derive(Clone, Copy, Debug)]
pub struct GnnVars {
    pub w: Var,
    pub a_src: Option<Var>,
    pub a_dst: Option<Var>,
    pub bias: Option<Var>,
}

/// Per-call settings shared by the layers of one forward pass.
pub struct LayerCtx<'r, T> {
    pub heads: usize,
    pub eps: T,
    pub dropout: T,
    pub rng: Option<&'r mut dyn RngCore>,
}

impl<T: Scalar> LayerCtx<'_, T> {
    /// Inverted dropout; identity when no rng is attached.
    pub fn dropout(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else { return Ok(x) };
        if self.dropout == T::zero() {
            return Ok(x);
        }
        let keep = T::one() - self.dropout;
        let scale = T::one() / keep;
        let p_keep = keep.to_f64_lossy();
        let mask: Vec<T> = (0..tape.value(x).numel())
            .map(|_| if rng.gen_bool(p_keep) { scale } else { T::zero() })
            .collect();
        tape.mul_const(x, Arc::new(mask))
    }
}

/// Additive key mask `[batch·heads, s, s]`: `-inf` on padded keys.
pub fn attention_mask<T: Scalar>(lengths: &[usize], seq_len: usize, heads: usize) -> Vec<T> {
    let mut mask = Vec::with_capacity(lengths.len() * heads * seq_len * seq_len);
    for &len in lengths {
        for _ in 0..heads * seq_len {
            mask.extend((0..seq_len).map(|k| if k < len { T::zero() } else { T::neg_infinity() }));
        }
    }
    mask
}

/// Token plus learned position embedding: `ids` is `[batch·seq_len]`.
pub fn embed<T: Scalar>(tape: &mut Tape<T>, token: Var, position: Var, ids: &[usize], seq_len: usize) -> Result<Var> {
    let d = tape.value(token).last_dim();
    let tok = tape.gather_rows(token, Arc::new(ids.to_vec()))?;
    let pos_ids: Vec<usize> = (0..ids.len()).map(|i| i % seq_len).collect();
    let pos = tape.gather_rows(position, Arc::new(pos_ids))?;
    let sum = tape.add(tok, pos)?;
    tape.reshape(sum, vec![ids.len() / seq_len, seq_len, d])
}

fn project<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.linear(x, w)?;
    tape.add_bias(y, b)
}

/// Multi-head attention with queries/keys from `qk_src` and values (and the
/// residual) from `v_src`, followed by residual + layer norm.
pub fn attention_block<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &mut LayerCtx<'_, T>,
    qk_src: Var,
    v_src: Var,
    p: &LayerVars,
    mask: &[T],
) -> Result<Var> {
    let shape = tape.shape(v_src).to_vec();
    let dh = shape[2] / ctx.heads;
    let q = project(tape, qk_src, p.wq, p.bq)?;
    let k = project(tape, qk_src, p.wk, p.bk)?;
    let v = project(tape, v_src, p.wv, p.bv)?;
    let q = tape.split_heads(q, ctx.heads)?;
    let k = tape.split_heads(k, ctx.heads)?;
    let v = tape.split_heads(v, ctx.heads)?;
    let scores = tape.bmm(q, k, true)?;
    let scores = tape.scale(scores, T::one() / c::<T>(dh as f64).sqrt());
    let scores = tape.add_const(scores, mask)?;
    let probs = tape.softmax(scores)?;
    let mixed = tape.bmm(probs, v, false)?;
    let merged = tape.merge_heads(mixed, ctx.heads)?;
    let out = project(tape, merged, p.wo, p.bo)?;
    let out = ctx.dropout(tape, out)?;
    let res = tape.add(v_src, out)?;
    tape.layer_norm(res, p.ln1_gain, p.ln1_bias, ctx.eps)
}

/// GELU feed-forward, residual + layer norm.
pub fn ffn_block<T: Scalar>(tape: &mut Tape<T>, ctx: &mut LayerCtx<'_, T>, h: Var, p: &LayerVars) -> Result<Var> {
    let f = project(tape, h, p.w1, p.b1)?;
    let f = tape.gelu(f);
    let f = project(tape, f, p.w2, p.b2)?;
    let f = ctx.dropout(tape, f)?;
    let res = tape.add(h, f)?;
    tape.layer_norm(res, p.ln2_gain, p.ln2_bias, ctx.eps)
}

/// Standard encoder layer on `h: [b, s, d]`.
pub fn transformer_layer<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &mut LayerCtx<'_, T>,
    h: Var,
    p: &LayerVars,
    mask: &[T],
) -> Result<Var> {
    let a = attention_block(tape, ctx, h, h, p, mask)?;
    ffn_block(tape, ctx, a, p)
}

/// `ReLU(Â · H · W (+ b))` on `h: [n, d]`.
pub fn gcn_layer<T: Scalar>(tape: &mut Tape<T>, h: Var, g: &GnnVars, adj: &Arc<SparseRows<T>>) -> Result<Var> {
    let hw = tape.linear(h, g.w)?;
    let mut out = tape.spmm(adj.clone(), hw)?;
    if let Some(b) = g.bias {
        out = tape.add_bias(out, b)?;
    }
    Ok(tape.relu(out))
}

/// LeakyReLU(0.2) attention over `N(i) ∪ {i}`, ELU output, on `h: [n, d]`.
pub fn gat_layer<T: Scalar>(tape: &mut Tape<T>, h: Var, g: &GnnVars, pattern: &Arc<SparseRows<T>>) -> Result<Var> {
    let (a_src, a_dst) = match (g.a_src, g.a_dst) {
        (Some(s), Some(d)) => (s, d),
        _ => return Err(crate::Error::Contract("GAT layer without attention vectors".into())),
    };
    let d = tape.value(g.w).shape()[1];
    let wh = tape.linear(h, g.w)?;
    let a_src = tape.reshape(a_src, vec![d, 1])?;
    let a_dst = tape.reshape(a_dst, vec![d, 1])?;
    let src = tape.linear(wh, a_src)?;
    let dst = tape.linear(wh, a_dst)?;
    let mut out = tape.graph_attention(wh, src, dst, pattern.clone(), c(0.2))?;
    if let Some(b) = g.bias {
        out = tape.add_bias(out, b)?;
    }
    Ok(tape.elu(out))
}
