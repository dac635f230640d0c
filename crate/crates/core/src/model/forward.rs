use std::sync::Arc;

use rand::RngCore;

use super::layers::{attention_block, attention_mask, embed, ffn_block, gat_layer, gcn_layer, transformer_layer, GnnVars, LayerCtx, LayerVars};
use super::{EncoderConfig, GnnKind, ParamStore};
use crate::corpus::{Instance, Language, Task, PAD};
use crate::error::{Error, Result};
use crate::graph::TokenGraph;
use crate::numerics::{c, Scalar, SparseRows, Tape, Var};

/// Padded token ids of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub languages: Vec<Language>,
    pub seq_len: usize,
}

impl Batch {
    pub fn new(instances: &[&Instance]) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let seq_len = instances.iter().map(|i| i.token_ids.len()).max().unwrap_or(0);
        if let Some(bad) = instances.iter().find(|i| i.token_ids.is_empty()) {
            return Err(Error::Contract(format!("instance {} is not encoded", bad.id)));
        }
        let mut ids = Vec::with_capacity(instances.len() * seq_len);
        for inst in instances {
            ids.extend_from_slice(&inst.token_ids);
            ids.extend(std::iter::repeat_n(PAD, seq_len - inst.token_ids.len()));
        }
        Ok(Self {
            ids,
            lengths: instances.iter().map(|i| i.token_ids.len()).collect(),
            languages: instances.iter().map(|i| i.language).collect(),
            seq_len,
        })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }
}

/// Graph operator consumed by the GNN stack of the graph-enhanced layer.
#[derive(Clone, Debug)]
pub struct GraphOperator<T> {
    kind: GnnKind,
    rows: Arc<SparseRows<T>>,
}

impl<T: Scalar> GraphOperator<T> {
    pub fn new(graph: &TokenGraph, kind: GnnKind) -> Self {
        let rows = match kind {
            GnnKind::Gcn => graph.normalized_adjacency(),
            GnnKind::Gat => graph.attention_pattern(),
        };
        Self { kind, rows: Arc::new(rows) }
    }

    pub fn num_nodes(&self) -> usize {
        self.rows.rows()
    }

    pub fn kind(&self) -> GnnKind {
        self.kind
    }
}

/// In-batch mixing pairs `(lrl index, hrl index)` and their coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct HalPlan<T> {
    pub pairs: Vec<(usize, usize)>,
    pub alpha: T,
}

/// Optional inputs of a forward pass.
pub struct ForwardInputs<'a, T> {
    pub graph: Option<&'a GraphOperator<T>>,
    pub hal: Option<&'a HalPlan<T>>,
    /// Enables dropout when present.
    pub rng: Option<&'a mut dyn RngCore>,
    /// Bind parameters as differentiable leaves.
    pub trainable: bool,
}

impl<T> Default for ForwardInputs<'_, T> {
    fn default() -> Self {
        Self { graph: None, hal: None, rng: None, trainable: false }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[batch, labels]` (sentence task) or `[batch·seq_len, labels]`.
    pub logits: Var,
    /// Final hidden states of the real samples, `[batch, seq_len, d]`.
    pub hidden: Var,
    /// Logits of the mixed samples, one per HAL pair, laid out like `logits`.
    pub aug_logits: Option<Var>,
    /// Graph-enhanced query/key source `[batch, seq_len, d]`, when GETR ran.
    pub graph_features: Option<Var>,
    /// Parameter leaves in canonical order.
    pub params: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: EncoderConfig,
    pub params: ParamStore<T>,
}

pub(crate) struct Bound<'m, T: Scalar> {
    store: &'m ParamStore<T>,
    pub vars: Vec<Var>,
}

impl<T: Scalar> Bound<'_, T> {
    pub fn var(&self, name: &str) -> Var {
        self.vars[self.store.position(name).unwrap_or_else(|| panic!("parameter {name} is not bound"))]
    }

    fn opt(&self, name: &str) -> Option<Var> {
        self.store.position(name).map(|i| self.vars[i])
    }

    pub fn layer(&self, prefix: &str) -> LayerVars {
        let v = |s: &str| self.var(&format!("{prefix}.{s}"));
        LayerVars {
            wq: v("attn.wq"),
            bq: v("attn.bq"),
            wk: v("attn.wk"),
            bk: v("attn.bk"),
            wv: v("attn.wv"),
            bv: v("attn.bv"),
            wo: v("attn.wo"),
            bo: v("attn.bo"),
            ln1_gain: v("ln1.gain"),
            ln1_bias: v("ln1.bias"),
            w1: v("ffn.w1"),
            b1: v("ffn.b1"),
            w2: v("ffn.w2"),
            b2: v("ffn.b2"),
            ln2_gain: v("ln2.gain"),
            ln2_bias: v("ln2.bias"),
        }
    }

    pub fn gnn(&self, g: usize) -> GnnVars {
        GnnVars {
            w: self.var(&format!("getr.gnn{g}.w")),
            a_src: self.opt(&format!("getr.gnn{g}.a_src")),
            a_dst: self.opt(&format!("getr.gnn{g}.a_dst")),
            bias: self.opt(&format!("getr.gnn{g}.b")),
        }
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: EncoderConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        params.validate(&config)?;
        Ok(Self { config, params })
    }

    pub(crate) fn bind<'m>(&'m self, tape: &mut Tape<T>, trainable: bool) -> Bound<'m, T> {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Bound { store: &self.params, vars }
    }

    pub fn forward(&self, tape: &mut Tape<T>, batch: &Batch, inputs: ForwardInputs<'_, T>) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let (b, s, d) = (batch.size(), batch.seq_len, cfg.d_model);
        if s > cfg.max_len {
            return Err(Error::Index { what: "positions", index: s - 1, size: cfg.max_len });
        }
        if let Some(&bad) = batch.ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Index { what: "vocabulary", index: bad, size: cfg.vocab_size });
        }
        let getr_at = cfg.getr_index();
        let graph = match (getr_at, inputs.graph) {
            (Some(_), None) => return Err(Error::Contract("graph-enhanced layer needs a token graph".into())),
            (Some(_), Some(g)) if g.num_nodes() != b * s => {
                return Err(Error::Contract(format!("graph has {} nodes for a {b}×{s} batch", g.num_nodes())))
            }
            (_, g) => g,
        };

        let bound = self.bind(tape, inputs.trainable);
        let mut ctx = LayerCtx { heads: cfg.num_heads, eps: c(cfg.layer_norm_eps), dropout: c(cfg.dropout), rng: inputs.rng };
        let mask = attention_mask::<T>(&batch.lengths, s, cfg.num_heads);

        let h = embed(tape, bound.var("embed.token"), bound.var("embed.position"), &batch.ids, s)?;
        let mut h = ctx.dropout(tape, h)?;
        let mut graph_features = None;
        for l in 0..cfg.num_layers {
            let p = bound.layer(&format!("layer{l}"));
            if Some(l) == getr_at {
                let op = graph.expect("checked above");
                let hg = self.gnn_stack(tape, &bound, h, op, b * s, d)?;
                graph_features = Some(hg);
                let a = attention_block(tape, &mut ctx, hg, h, &p, &mask)?;
                h = ffn_block(tape, &mut ctx, a, &p)?;
            } else {
                h = transformer_layer(tape, &mut ctx, h, &p, &mask)?;
            }
        }

        let mut aug = None;
        if let Some(plan) = inputs.hal.filter(|p| !p.pairs.is_empty()) {
            aug = Some(self.init_mixed(tape, batch, plan, h)?);
        }
        for l in 0..cfg.hal_layers() {
            let p = bound.layer(&format!("hal{l}"));
            h = transformer_layer(tape, &mut ctx, h, &p, &mask)?;
            if let (Some((m, m_mask)), Some(plan)) = (aug.as_mut(), inputs.hal) {
                let next = transformer_layer(tape, &mut ctx, *m, &p, m_mask)?;
                *m = self.remix(tape, batch, plan, h, next)?;
            }
        }

        let (head_w, head_b) = (bound.var("head.w"), bound.var("head.b"));
        let logits = self.head(tape, h, b, s, head_w, head_b)?;
        let aug_logits = match aug {
            Some((m, _)) => Some(self.head(tape, m, inputs.hal.map_or(0, |p| p.pairs.len()), s, head_w, head_b)?),
            None => None,
        };
        Ok(ForwardOutput { logits, hidden: h, aug_logits, graph_features, params: bound.vars })
    }

    fn gnn_stack(&self, tape: &mut Tape<T>, bound: &Bound<'_, T>, h: Var, op: &GraphOperator<T>, n: usize, d: usize) -> Result<Var> {
        let shape = tape.shape(h).to_vec();
        let mut x = tape.reshape(h, vec![n, d])?;
        for g in 0..self.config.getr.gnn_depth {
            let vars = bound.gnn(g);
            x = match op.kind {
                GnnKind::Gcn => gcn_layer(tape, x, &vars, &op.rows)?,
                GnnKind::Gat => gat_layer(tape, x, &vars, &op.rows)?,
            };
        }
        tape.reshape(x, shape)
    }

    /// Mixed stream before the extra layers: LRL states with the paired HRL
    /// states blended in, plus the LRL attention mask.
    fn init_mixed(&self, tape: &mut Tape<T>, batch: &Batch, plan: &HalPlan<T>, h: Var) -> Result<(Var, Vec<T>)> {
        let (s, d) = (batch.seq_len, self.config.d_model);
        for &(l, hr) in &plan.pairs {
            if l >= batch.size() || hr >= batch.size() {
                return Err(Error::Index { what: "batch members", index: l.max(hr), size: batch.size() });
            }
        }
        let flat = tape.reshape(h, vec![batch.size() * s, d])?;
        let rows: Vec<usize> = plan.pairs.iter().flat_map(|&(l, _)| (l * s)..(l * s + s)).collect();
        let lrl = tape.gather_rows(flat, Arc::new(rows))?;
        let lrl = tape.reshape(lrl, vec![plan.pairs.len(), s, d])?;
        let lengths: Vec<usize> = plan.pairs.iter().map(|&(l, _)| batch.lengths[l]).collect();
        let mask = attention_mask::<T>(&lengths, s, self.config.num_heads);
        let mixed = self.remix(tape, batch, plan, h, lrl)?;
        Ok((mixed, mask))
    }

    /// Replaces the mixed positions of `mixed` by `α·real_hrl + (1−α)·mixed`:
    /// the CLS row for sentence tasks, every jointly valid row for labeling.
    fn remix(&self, tape: &mut Tape<T>, batch: &Batch, plan: &HalPlan<T>, real: Var, mixed: Var) -> Result<Var> {
        let (s, d) = (batch.seq_len, self.config.d_model);
        let mut from_real = Vec::new();
        let mut into_mixed = Vec::new();
        for (k, &(l, hr)) in plan.pairs.iter().enumerate() {
            let span = match self.config.task {
                Task::SentenceClassification => 1,
                Task::SequenceLabeling => batch.lengths[l].min(batch.lengths[hr]),
            };
            for p in 0..span {
                from_real.push(hr * s + p);
                into_mixed.push(k * s + p);
            }
        }
        let real_flat = tape.reshape(real, vec![batch.size() * s, d])?;
        let mixed_flat = tape.reshape(mixed, vec![plan.pairs.len() * s, d])?;
        let into = Arc::new(into_mixed);
        let a = tape.gather_rows(real_flat, Arc::new(from_real))?;
        let m = tape.gather_rows(mixed_flat, into.clone())?;
        let blended = tape.mix(a, m, plan.alpha)?;
        let out = tape.scatter_rows(mixed_flat, blended, into)?;
        tape.reshape(out, vec![plan.pairs.len(), s, d])
    }

    fn head(&self, tape: &mut Tape<T>, h: Var, rows: usize, s: usize, w: Var, bias: Var) -> Result<Var> {
        let d = self.config.d_model;
        let flat = tape.reshape(h, vec![rows * s, d])?;
        let x = match self.config.task {
            Task::SentenceClassification => tape.gather_rows(flat, Arc::new((0..rows).map(|r| r * s).collect()))?,
            Task::SequenceLabeling => flat,
        };
        let y = tape.linear(x, w)?;
        tape.add_bias(y, bias)
    }
}
