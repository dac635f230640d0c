//! Per-batch token graphs over flattened `batch × seq_len` positions.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::corpus::{io_write_file, Instance, Language, SPECIALS};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::numerics::{Scalar, SparseRows};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeOrigin {
    Sequential,
    SharedToken,
    Translation,
}

impl EdgeOrigin {
    pub fn name(self) -> &'static str {
        match self {
            EdgeOrigin::Sequential => "sequential",
            EdgeOrigin::SharedToken => "shared_token",
            EdgeOrigin::Translation => "translation",
        }
    }

    pub fn is_cross_lingual(self) -> bool {
        self != EdgeOrigin::Sequential
    }
}

/// Undirected graph; node `b·seq_len + p` is position `p` of sentence `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGraph {
    seq_len: usize,
    node_valid: Vec<bool>,
    /// `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    origins: Vec<EdgeOrigin>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GraphStats {
    pub sequential: usize,
    pub shared_token: usize,
    pub translation: usize,
}

impl GraphStats {
    /// Translation edges as a share of all edges.
    pub fn translation_fraction(&self) -> f64 {
        let total = self.sequential + self.shared_token + self.translation;
        if total == 0 {
            0.0
        } else {
            self.translation as f64 / total as f64
        }
    }
}

impl TokenGraph {
    /// Graph without any edges over sentences of the given lengths.
    pub fn edgeless(lengths: &[usize], seq_len: usize) -> Self {
        let node_valid = lengths.iter().flat_map(|&len| (0..seq_len).map(move |p| p < len)).collect();
        Self { seq_len, node_valid, edges: Vec::new(), origins: Vec::new() }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_valid.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn node_valid(&self) -> &[bool] {
        &self.node_valid
    }

    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), EdgeOrigin)> + '_ {
        self.edges.iter().copied().zip(self.origins.iter().copied())
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn stats(&self) -> GraphStats {
        let mut s = GraphStats::default();
        for o in &self.origins {
            match o {
                EdgeOrigin::Sequential => s.sequential += 1,
                EdgeOrigin::SharedToken => s.shared_token += 1,
                EdgeOrigin::Translation => s.translation += 1,
            }
        }
        s
    }

    pub fn cross_lingual_count(&self) -> usize {
        self.origins.iter().filter(|o| o.is_cross_lingual()).count()
    }

    /// Sorted neighbour lists (no self entries).
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// `D̃^{-1/2}(A + I)D̃^{-1/2}`; invalid nodes keep a bare self loop.
    pub fn normalized_adjacency<T: Scalar>(&self) -> SparseRows<T> {
        let adj = self.neighbours();
        let deg: Vec<f64> = adj.iter().map(|l| (l.len() + 1) as f64).collect();
        let mut rows = SparseRows { offsets: vec![0], cols: Vec::new(), vals: Vec::new() };
        for (i, list) in adj.iter().enumerate() {
            let mut entries: Vec<(usize, f64)> = list.iter().map(|&j| (j, 1.0 / (deg[i] * deg[j]).sqrt())).collect();
            entries.push((i, 1.0 / deg[i]));
            entries.sort_unstable_by_key(|e| e.0);
            for (j, v) in entries {
                rows.cols.push(j);
                rows.vals.push(T::from_f64_lossy(v));
            }
            rows.offsets.push(rows.cols.len());
        }
        rows
    }

    /// Neighbourhoods with self loops, for attention over `N(i) ∪ {i}`.
    pub fn attention_pattern<T: Scalar>(&self) -> SparseRows<T> {
        let adj = self.neighbours();
        let mut rows = SparseRows { offsets: vec![0], cols: Vec::new(), vals: Vec::new() };
        for (i, list) in adj.into_iter().enumerate() {
            let pos = list.partition_point(|&j| j < i);
            rows.cols.extend_from_slice(&list[..pos]);
            rows.cols.push(i);
            rows.cols.extend_from_slice(&list[pos..]);
            rows.offsets.push(rows.cols.len());
        }
        rows
    }

    /// Debug dump: one `i j origin` line per edge.
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for ((i, j), o) in self.edges() {
            let _ = writeln!(out, "{i} {j} {}", o.name());
        }
        io_write_file(path, out.as_bytes())
    }

    fn from_map(seq_len: usize, node_valid: Vec<bool>, map: BTreeMap<(usize, usize), EdgeOrigin>) -> Self {
        let (edges, origins) = map.into_iter().unzip();
        Self { seq_len, node_valid, edges, origins }
    }
}

/// Builds sequential, shared-token and translation edges for one batch.
/// `seq_len` is the padded length; every instance must be encoded.
pub fn build_token_graph(batch: &[&Instance], seq_len: usize, lex: &Lexicon) -> Result<TokenGraph> {
    let mut node_valid = vec![false; batch.len() * seq_len];
    for (b, inst) in batch.iter().enumerate() {
        let len = inst.token_ids.len();
        if len == 0 || len > seq_len {
            return Err(Error::Graph(format!("instance {} has {len} positions for padded length {seq_len}", inst.id)));
        }
        let mut next = 1;
        for span in &inst.word_spans {
            if span.start != next || span.end <= span.start {
                return Err(Error::Graph(format!("word spans of {} do not tile its positions", inst.id)));
            }
            next = span.end;
        }
        if next != len || inst.word_spans.len() > inst.words.len() {
            return Err(Error::Graph(format!("word spans of {} do not match its {len} positions", inst.id)));
        }
        node_valid[b * seq_len..b * seq_len + len].iter_mut().for_each(|v| *v = true);
    }

    let mut map: BTreeMap<(usize, usize), EdgeOrigin> = BTreeMap::new();
    let mut add = |a: usize, b: usize, o: EdgeOrigin| {
        let key = if a < b { (a, b) } else { (b, a) };
        map.entry(key).and_modify(|e| *e = (*e).min(o)).or_insert(o);
    };

    for (b, inst) in batch.iter().enumerate() {
        for p in 1..inst.token_ids.len() {
            add(b * seq_len + p - 1, b * seq_len + p, EdgeOrigin::Sequential);
        }
    }

    let mut by_token: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (b, inst) in batch.iter().enumerate() {
        for (p, &id) in inst.token_ids.iter().enumerate() {
            if id >= SPECIALS.len() {
                by_token.entry(id).or_default().push((b, b * seq_len + p));
            }
        }
    }
    for positions in by_token.values() {
        for (x, &(sa, na)) in positions.iter().enumerate() {
            for &(sb, nb) in &positions[x + 1..] {
                if sa != sb {
                    add(na, nb, EdgeOrigin::SharedToken);
                }
            }
        }
    }

    // HRL surface form -> (sentence, word index) occurrences
    let mut hrl_words: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
    for (b, inst) in batch.iter().enumerate() {
        if inst.language == Language::Hrl {
            for k in 0..inst.word_spans.len() {
                hrl_words.entry(inst.words[k].as_str()).or_default().push((b, k));
            }
        }
    }
    for (a, inst) in batch.iter().enumerate() {
        if inst.language != Language::Lrl {
            continue;
        }
        for (k, span) in inst.word_spans.iter().enumerate() {
            let Some(v) = lex.translate(&inst.words[k]) else { continue };
            let Some(occurrences) = hrl_words.get(v) else { continue };
            for &(b, kk) in occurrences {
                let other = &batch[b].word_spans[kk];
                for p in span.clone() {
                    for q in other.clone() {
                        add(a * seq_len + p, b * seq_len + q, EdgeOrigin::Translation);
                    }
                }
            }
        }
    }

    Ok(TokenGraph::from_map(seq_len, node_valid, map))
}

/// Keeps exactly `round(rho · m)` of the `m` cross-lingual edges, chosen
/// uniformly; sequential edges always stay.
pub fn apply_edge_retention<R: Rng>(g: &TokenGraph, rho: f64, rng: &mut R) -> Result<TokenGraph> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("edge retention {rho} outside [0, 1]")));
    }
    let cross: Vec<usize> = (0..g.edges.len()).filter(|&e| g.origins[e].is_cross_lingual()).collect();
    let keep_count = (rho * cross.len() as f64).round() as usize;
    if keep_count == cross.len() {
        return Ok(g.clone());
    }
    let mut keep = vec![true; g.edges.len()];
    for &e in &cross {
        keep[e] = false;
    }
    for k in sample(rng, cross.len(), keep_count) {
        keep[cross[k]] = true;
    }
    let (edges, origins) = g
        .edges()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e)
        .unzip();
    Ok(TokenGraph { seq_len: g.seq_len, node_valid: g.node_valid.clone(), edges, origins })
}
