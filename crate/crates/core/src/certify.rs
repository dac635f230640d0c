//! Finite-difference certification of every differentiable layer kind at
//! 64-bit precision.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, Language, TokenizerModel, SPECIALS};
use crate::error::Result;
use crate::exec::Exec;
use crate::graph::build_token_graph;
use crate::lexicon::{LexSource, Lexicon};
use crate::model::layers::{attention_block, attention_mask, embed, ffn_block, gat_layer, gcn_layer, transformer_layer, GnnVars, LayerCtx, LayerVars};
use crate::numerics::{max_gradient_error, GradFault, SparseRows, Tape, Tensor, Var, FD_STEP};
use crate::training::{cross_entropy_loss, kl_divergence_loss};

/// Largest accepted `|analytic − numeric| / max(1, |analytic|)`.
pub const TOLERANCE: f64 = 1e-4;

/// Seeded configurations checked per layer kind by default.
pub const DEFAULT_CONFIGS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Embedding,
    Transformer,
    Gcn,
    Gat,
    Getr,
    HalMix,
    CrossEntropy,
    KlDivergence,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Embedding,
        LayerKind::Transformer,
        LayerKind::Gcn,
        LayerKind::Gat,
        LayerKind::Getr,
        LayerKind::HalMix,
        LayerKind::CrossEntropy,
        LayerKind::KlDivergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Embedding => "embedding",
            LayerKind::Transformer => "transformer",
            LayerKind::Gcn => "gcn",
            LayerKind::Gat => "gat",
            LayerKind::Getr => "getr",
            LayerKind::HalMix => "hal_mix",
            LayerKind::CrossEntropy => "cross_entropy",
            LayerKind::KlDivergence => "kl_divergence",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub kind: LayerKind,
    pub configs: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub kinds: Vec<KindReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.kinds.iter().all(|k| k.passed)
    }

    /// One line per layer kind.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for k in &self.kinds {
            let verdict = if k.passed { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{:<14} configs {:>3}  max rel error {:.3e}  {verdict}", k.kind.name(), k.configs, k.max_rel_error);
        }
        out
    }
}

/// Checks `configs` seeded configurations of every layer kind. `fault`
/// corrupts the analytic backward pass, for negative controls.
pub fn certify(configs: usize, fault: Option<GradFault>, exec: Exec) -> Result<GradcheckReport> {
    let jobs: Vec<(LayerKind, u64)> = LayerKind::ALL.iter().flat_map(|&k| (0..configs as u64).map(move |s| (k, s))).collect();
    let errors = exec.try_map(&jobs, |_, &(kind, seed)| check_kind(kind, seed, fault))?;
    let kinds = LayerKind::ALL
        .iter()
        .map(|&kind| {
            let worst = jobs.iter().zip(&errors).filter(|((k, _), _)| *k == kind).map(|(_, &e)| e).fold(0.0, f64::max);
            KindReport { kind, configs, max_rel_error: worst, passed: worst <= TOLERANCE }
        })
        .collect();
    Ok(GradcheckReport { tolerance: TOLERANCE, kinds })
}

/// Max relative gradient error of one seeded configuration of `kind`.
pub fn check_kind(kind: LayerKind, seed: u64, fault: Option<GradFault>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64) << 32);
    let case = match kind {
        LayerKind::Embedding => embedding_case(&mut rng),
        LayerKind::Transformer => transformer_case(&mut rng),
        LayerKind::Gcn => gnn_case(&mut rng, false),
        LayerKind::Gat => gnn_case(&mut rng, true),
        LayerKind::Getr => getr_case(&mut rng),
        LayerKind::HalMix => hal_case(&mut rng),
        LayerKind::CrossEntropy => ce_case(&mut rng),
        LayerKind::KlDivergence => kl_case(&mut rng),
    }?;
    max_gradient_error(&case.inputs, |tape, vars| (case.f)(tape, vars), FD_STEP, fault)
}

type CaseFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync>;

struct Case {
    inputs: Vec<Tensor<f64>>,
    f: CaseFn,
}

fn normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// `Σ out ⊙ r` for a fixed random `r`, so that no coordinate cancels.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, r: &Arc<Vec<f64>>) -> Result<Var> {
    let y = tape.mul_const(out, r.clone())?;
    Ok(tape.sum(y))
}

fn weights_for(rng: &mut ChaCha8Rng, n: usize) -> Arc<Vec<f64>> {
    Arc::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn embedding_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (v, d, b, s) = (rng.gen_range(3..7), rng.gen_range(2..6), rng.gen_range(1..3), rng.gen_range(1..5));
    let ids: Vec<usize> = (0..b * s).map(|_| rng.gen_range(0..v)).collect();
    let r = weights_for(rng, b * s * d);
    Ok(Case {
        inputs: vec![normal(rng, vec![v, d], 1.0), normal(rng, vec![s, d], 1.0)],
        f: Box::new(move |tape, x| {
            let h = embed(tape, x[0], x[1], &ids, s)?;
            weighted_sum(tape, h, &r)
        }),
    })
}

/// The sixteen tensors of one encoder layer, in [`LayerVars`] order.
fn layer_tensors(rng: &mut ChaCha8Rng, d: usize, ff: usize) -> Vec<Tensor<f64>> {
    let w = 1.0 / (d as f64).sqrt();
    let gain = |rng: &mut ChaCha8Rng| Tensor::from_fn(vec![d], |_| 1.0 + 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal));
    vec![
        normal(rng, vec![d, d], w),
        normal(rng, vec![d], 0.1),
        normal(rng, vec![d, d], w),
        normal(rng, vec![d], 0.1),
        normal(rng, vec![d, d], w),
        normal(rng, vec![d], 0.1),
        normal(rng, vec![d, d], w),
        normal(rng, vec![d], 0.1),
        gain(rng),
        normal(rng, vec![d], 0.1),
        normal(rng, vec![d, ff], w),
        normal(rng, vec![ff], 0.1),
        normal(rng, vec![ff, d], 1.0 / (ff as f64).sqrt()),
        normal(rng, vec![d], 0.1),
        gain(rng),
        normal(rng, vec![d], 0.1),
    ]
}

fn layer_vars(x: &[Var]) -> LayerVars {
    LayerVars {
        wq: x[0],
        bq: x[1],
        wk: x[2],
        bk: x[3],
        wv: x[4],
        bv: x[5],
        wo: x[6],
        bo: x[7],
        ln1_gain: x[8],
        ln1_bias: x[9],
        w1: x[10],
        b1: x[11],
        w2: x[12],
        b2: x[13],
        ln2_gain: x[14],
        ln2_bias: x[15],
    }
}

struct Shape {
    b: usize,
    s: usize,
    d: usize,
    heads: usize,
    lengths: Vec<usize>,
}

fn encoder_shape(rng: &mut ChaCha8Rng) -> Shape {
    let heads = rng.gen_range(1..3);
    let d = heads * rng.gen_range(2..4);
    let b = rng.gen_range(1..3);
    let s = rng.gen_range(2..5);
    let lengths = (0..b).map(|_| rng.gen_range(1..=s)).collect();
    Shape { b, s, d, heads, lengths }
}

fn ctx(heads: usize) -> LayerCtx<'static, f64> {
    LayerCtx { heads, eps: 1e-5, dropout: 0.0, rng: None }
}

fn transformer_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let sh = encoder_shape(rng);
    let ff = rng.gen_range(2..6);
    let mask = attention_mask::<f64>(&sh.lengths, sh.s, sh.heads);
    let r = weights_for(rng, sh.b * sh.s * sh.d);
    let mut inputs = vec![normal(rng, vec![sh.b, sh.s, sh.d], 1.0)];
    inputs.extend(layer_tensors(rng, sh.d, ff));
    Ok(Case {
        inputs,
        f: Box::new(move |tape, x| {
            let h = transformer_layer(tape, &mut ctx(sh.heads), x[0], &layer_vars(&x[1..]), &mask)?;
            weighted_sum(tape, h, &r)
        }),
    })
}

/// A random two-language batch over a word-level vocabulary, with a
/// lexicon pairing `l{k}` with `h{k}`.
fn random_batch(rng: &mut ChaCha8Rng, b: usize) -> Result<(Vec<Instance>, Lexicon, usize)> {
    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    for k in 0..4 {
        pieces.push(format!("h{k}"));
        pieces.push(format!("l{k}"));
    }
    pieces.push("s".into());
    let tok = TokenizerModel::from_pieces(pieces)?;
    let mut lex = Lexicon::new();
    for k in 0..4 {
        lex.insert(&format!("l{k}"), &format!("h{k}"), LexSource::Synthetic, k + 1)?;
    }
    let insts: Vec<Instance> = (0..b)
        .map(|i| {
            let lang = if i % 2 == 0 { Language::Lrl } else { Language::Hrl };
            let prefix = if lang == Language::Lrl { "l" } else { "h" };
            let len = rng.gen_range(1..4);
            let words = (0..len)
                .map(|_| if rng.gen_bool(0.2) { "s".to_string() } else { format!("{prefix}{}", rng.gen_range(0..4)) })
                .collect();
            let mut inst = Instance::sentence(format!("c{i}"), lang, words, 0);
            inst.encode(&tok, 16);
            inst
        })
        .collect();
    let s = insts.iter().map(|i| i.token_ids.len()).max().unwrap_or(1);
    Ok((insts, lex, s))
}

struct GraphCase {
    b: usize,
    s: usize,
    lengths: Vec<usize>,
    adjacency: Arc<SparseRows<f64>>,
    pattern: Arc<SparseRows<f64>>,
}

fn graph_case(rng: &mut ChaCha8Rng) -> Result<GraphCase> {
    let b = rng.gen_range(2..4);
    let (insts, lex, s) = random_batch(rng, b)?;
    let refs: Vec<&Instance> = insts.iter().collect();
    let g = build_token_graph(&refs, s, &lex)?;
    Ok(GraphCase {
        b,
        s,
        lengths: insts.iter().map(|i| i.token_ids.len()).collect(),
        adjacency: Arc::new(g.normalized_adjacency()),
        pattern: Arc::new(g.attention_pattern()),
    })
}

fn gnn_tensors(rng: &mut ChaCha8Rng, d: usize, gat: bool) -> Vec<Tensor<f64>> {
    let mut t = vec![normal(rng, vec![d, d], 1.0 / (d as f64).sqrt())];
    if gat {
        t.push(normal(rng, vec![d], 0.5));
        t.push(normal(rng, vec![d], 0.5));
    }
    t.push(normal(rng, vec![d], 0.1));
    t
}

fn gnn_vars(x: &[Var], gat: bool) -> GnnVars {
    if gat {
        GnnVars { w: x[0], a_src: Some(x[1]), a_dst: Some(x[2]), bias: Some(x[3]) }
    } else {
        GnnVars { w: x[0], a_src: None, a_dst: None, bias: Some(x[1]) }
    }
}

fn gnn_case(rng: &mut ChaCha8Rng, gat: bool) -> Result<Case> {
    let gc = graph_case(rng)?;
    let d = rng.gen_range(2..5);
    let n = gc.b * gc.s;
    let r = weights_for(rng, n * d);
    let mut inputs = vec![normal(rng, vec![n, d], 1.0)];
    inputs.extend(gnn_tensors(rng, d, gat));
    Ok(Case {
        inputs,
        f: Box::new(move |tape, x| {
            let g = gnn_vars(&x[1..], gat);
            let out = if gat { gat_layer(tape, x[0], &g, &gc.pattern)? } else { gcn_layer(tape, x[0], &g, &gc.adjacency)? };
            weighted_sum(tape, out, &r)
        }),
    })
}

/// Two GAT layers feeding queries and keys while values and the residual
/// read the unmodified states.
fn getr_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let gc = graph_case(rng)?;
    let heads = rng.gen_range(1..3);
    let d = heads * 2;
    let ff = rng.gen_range(2..5);
    let (b, s) = (gc.b, gc.s);
    let mask = attention_mask::<f64>(&gc.lengths, s, heads);
    let r = weights_for(rng, b * s * d);
    let mut inputs = vec![normal(rng, vec![b, s, d], 1.0)];
    inputs.extend(layer_tensors(rng, d, ff));
    inputs.extend(gnn_tensors(rng, d, true));
    inputs.extend(gnn_tensors(rng, d, true));
    Ok(Case {
        inputs,
        f: Box::new(move |tape, x| {
            let h = x[0];
            let mut g = tape.reshape(h, vec![b * s, d])?;
            for layer in 0..2 {
                g = gat_layer(tape, g, &gnn_vars(&x[17 + 4 * layer..], true), &gc.pattern)?;
            }
            let hg = tape.reshape(g, vec![b, s, d])?;
            let p = layer_vars(&x[1..]);
            let mut c = ctx(heads);
            let a = attention_block(tape, &mut c, hg, h, &p, &mask)?;
            let out = ffn_block(tape, &mut c, a, &p)?;
            weighted_sum(tape, out, &r)
        }),
    })
}

/// Mixing of paired rows, one extra layer over the mixed stream, and the
/// re-mix at its output.
fn hal_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let sh = encoder_shape(rng);
    let b = sh.b + 1;
    let (s, d, heads) = (sh.s, sh.d, sh.heads);
    let alpha: f64 = rng.gen_range(0.0..1.0);
    let pairs: Vec<(usize, usize)> = (0..rng.gen_range(1..3)).map(|_| (rng.gen_range(0..b), rng.gen_range(0..b))).collect();
    let lengths: Vec<usize> = pairs.iter().map(|_| rng.gen_range(1..=s)).collect();
    let mask = attention_mask::<f64>(&lengths, s, heads);
    let positions: Vec<usize> = (0..s).filter(|&p| p == 0 || rng.gen_bool(0.5)).collect();
    let (mut from, mut into) = (Vec::new(), Vec::new());
    for (k, &(_, hr)) in pairs.iter().enumerate() {
        for &p in &positions {
            from.push(hr * s + p);
            into.push(k * s + p);
        }
    }
    let (from, into) = (Arc::new(from), Arc::new(into));
    let gather_lrl: Arc<Vec<usize>> = Arc::new(pairs.iter().flat_map(|&(l, _)| (l * s)..(l * s + s)).collect());
    let m = pairs.len();
    let r = weights_for(rng, m * s * d);
    let remix = move |tape: &mut Tape<f64>, real: Var, mixed: Var| -> Result<Var> {
        let a = tape.gather_rows(real, from.clone())?;
        let x = tape.gather_rows(mixed, into.clone())?;
        let blended = tape.mix(a, x, alpha)?;
        tape.scatter_rows(mixed, blended, into.clone())
    };
    let mut inputs = vec![normal(rng, vec![b * s, d], 1.0)];
    inputs.extend(layer_tensors(rng, d, d));
    Ok(Case {
        inputs,
        f: Box::new(move |tape, x| {
            let real = x[0];
            let lrl = tape.gather_rows(real, gather_lrl.clone())?;
            let mixed = remix(tape, real, lrl)?;
            let mixed = tape.reshape(mixed, vec![m, s, d])?;
            let next = transformer_layer(tape, &mut ctx(heads), mixed, &layer_vars(&x[1..]), &mask)?;
            let next = tape.reshape(next, vec![m * s, d])?;
            let out = remix(tape, real, next)?;
            weighted_sum(tape, out, &r)
        }),
    })
}

fn ce_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (n, c) = (rng.gen_range(1..6), rng.gen_range(2..5));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
    mask[0] = true;
    Ok(Case {
        inputs: vec![normal(rng, vec![n, c], 2.0)],
        f: Box::new(move |tape, x| cross_entropy_loss(tape, x[0], &labels, &mask)),
    })
}

fn kl_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (n, c) = (rng.gen_range(1..6), rng.gen_range(2..5));
    let mut soft = Vec::with_capacity(n * c);
    for _ in 0..n {
        let row: Vec<f64> = (0..c).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.05..1.0) }).collect();
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            soft.extend((0..c).map(|k| if k == 0 { 1.0 } else { 0.0 }));
        } else {
            soft.extend(row.iter().map(|v| v / total));
        }
    }
    let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
    mask[0] = true;
    Ok(Case {
        inputs: vec![normal(rng, vec![n, c], 2.0)],
        f: Box::new(move |tape, x| kl_divergence_loss(tape, x[0], &soft, &mask)),
    })
}
