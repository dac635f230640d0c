use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, GnnKind};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Standard deviation of token/position embeddings at initialization.
pub const EMBED_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: String, shape: Vec<usize>, init: Init) -> ParamSpec {
    ParamSpec { name, shape, init }
}

fn layer_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, ff: usize) {
    let proj = Init::Normal(1.0 / (d as f64).sqrt());
    for m in ["q", "k", "v", "o"] {
        out.push(spec(format!("{prefix}.attn.w{m}"), vec![d, d], proj));
        out.push(spec(format!("{prefix}.attn.b{m}"), vec![d], Init::Zeros));
    }
    out.push(spec(format!("{prefix}.ln1.gain"), vec![d], Init::Ones));
    out.push(spec(format!("{prefix}.ln1.bias"), vec![d], Init::Zeros));
    out.push(spec(format!("{prefix}.ffn.w1"), vec![d, ff], proj));
    out.push(spec(format!("{prefix}.ffn.b1"), vec![ff], Init::Zeros));
    out.push(spec(format!("{prefix}.ffn.w2"), vec![ff, d], Init::Normal(1.0 / (ff as f64).sqrt())));
    out.push(spec(format!("{prefix}.ffn.b2"), vec![d], Init::Zeros));
    out.push(spec(format!("{prefix}.ln2.gain"), vec![d], Init::Ones));
    out.push(spec(format!("{prefix}.ln2.bias"), vec![d], Init::Zeros));
}

/// Canonical parameter list; shapes derive from the config alone.
pub fn param_specs(config: &EncoderConfig) -> Vec<ParamSpec> {
    let d = config.d_model;
    let mut out = vec![
        spec("embed.token".into(), vec![config.vocab_size, d], Init::Normal(EMBED_STD)),
        spec("embed.position".into(), vec![config.max_len, d], Init::Normal(EMBED_STD)),
    ];
    for l in 0..config.num_layers {
        layer_specs(&mut out, &format!("layer{l}"), d, config.d_ff);
    }
    if config.getr.enabled {
        let proj = Init::Normal(1.0 / (d as f64).sqrt());
        for g in 0..config.getr.gnn_depth {
            out.push(spec(format!("getr.gnn{g}.w"), vec![d, d], proj));
            if config.getr.gnn_kind == GnnKind::Gat {
                out.push(spec(format!("getr.gnn{g}.a_src"), vec![d], proj));
                out.push(spec(format!("getr.gnn{g}.a_dst"), vec![d], proj));
            }
            if config.getr.gnn_bias {
                out.push(spec(format!("getr.gnn{g}.b"), vec![d], Init::Zeros));
            }
        }
    }
    for h in 0..config.hal_layers() {
        layer_specs(&mut out, &format!("hal{h}"), d, config.hal_d_ff());
    }
    out.push(spec("head.w".into(), vec![d, config.num_labels], Init::Normal(1.0 / (d as f64).sqrt())));
    out.push(spec("head.b".into(), vec![config.num_labels], Init::Zeros));
    out
}

/// Named parameter tensors in canonical order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<(String, Tensor<T>)>", into = "Vec<(String, Tensor<T>)>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ParamStore<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> From<Vec<(String, Tensor<T>)>> for ParamStore<T> {
    fn from(entries: Vec<(String, Tensor<T>)>) -> Self {
        let index = entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Self { entries, index }
    }
}

impl<T: Scalar> From<ParamStore<T>> for Vec<(String, Tensor<T>)> {
    fn from(store: ParamStore<T>) -> Self {
        store.entries
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Seeded initialization from the config.
    pub fn init(config: &EncoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let entries = param_specs(config)
            .into_iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::Zeros => vec![T::zero(); n],
                    Init::Ones => vec![T::one(); n],
                    Init::Normal(std) => {
                        let dist = Normal::new(0.0, std).expect("finite std");
                        (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect()
                    }
                };
                (s.name, Tensor::new(s.shape, data).expect("spec shape"))
            })
            .collect::<Vec<_>>();
        entries.into()
    }

    /// Checks that names and shapes agree with the canonical list.
    pub fn validate(&self, config: &EncoderConfig) -> Result<()> {
        let specs = param_specs(config);
        if specs.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "config expects {} parameter tensors, found {}",
                specs.len(),
                self.entries.len()
            )));
        }
        for (s, (name, t)) in specs.iter().zip(&self.entries) {
            if &s.name != name || s.shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    s.name,
                    s.shape
                )));
            }
            if !t.all_finite() {
                return Err(Error::Numeric(format!("parameter {name} holds non-finite values")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].1
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect::<Vec<_>>().into()
    }
}
