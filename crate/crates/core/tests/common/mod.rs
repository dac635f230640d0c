//! Seeded checks shared by the property suite and the acceptance harness.
//! Each returns `Err` with a description of the first violation.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use bhasha::batching::{BatchingConfig, OverlapMode, Planner};
use bhasha::corpus::{Instance, Language, TokenizerModel, SPECIALS};
use bhasha::graph::{apply_edge_retention, build_token_graph, TokenGraph};
use bhasha::lexicon::{tet_initialize, LexSource, Lexicon, TetOptions};
use bhasha::model::{hal_mix, hal_mix_positions, Batch, EncoderConfig, ForwardInputs, HalConfig, HalPlan, Model};
use bhasha::numerics::{Tape, Tensor};
use bhasha::training::kl_divergence_loss;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Word-level vocabulary: HRL words `a0..`, LRL words `b0..` and two-piece
/// LRL words `b0x..`, shared words `c0..`.
pub struct Toy {
    pub tok: TokenizerModel,
    pub lex: Lexicon,
    words: usize,
}

impl Toy {
    pub fn new(words: usize) -> Self {
        let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for k in 0..words {
            pieces.extend([format!("a{k}"), format!("b{k}"), format!("c{k}")]);
        }
        pieces.push("x".into());
        let tok = TokenizerModel::from_pieces(pieces).unwrap();
        let mut lex = Lexicon::new();
        for k in 0..words {
            lex.insert(&format!("b{k}"), &format!("a{k}"), LexSource::Synthetic, k + 1).unwrap();
            lex.insert(&format!("b{k}x"), &format!("a{k}"), LexSource::Synthetic, k + 1).unwrap();
        }
        Self { tok, lex, words }
    }

    pub fn sentence(&self, rng: &mut ChaCha8Rng, id: &str, language: Language, len: usize) -> Instance {
        let words = (0..len)
            .map(|_| {
                let k = rng.gen_range(0..self.words);
                match (language, rng.gen_range(0..4)) {
                    (_, 0) => format!("c{k}"),
                    (Language::Hrl, _) => format!("a{k}"),
                    (Language::Lrl, 1) => format!("b{k}x"),
                    (Language::Lrl, _) => format!("b{k}"),
                }
            })
            .collect();
        let mut inst = Instance::sentence(id, language, words, rng.gen_range(0..3));
        inst.encode(&self.tok, 64);
        inst
    }
}

pub struct GraphCase {
    pub toy: Toy,
    pub batch: Vec<Instance>,
    pub seq_len: usize,
}

pub fn graph_case(seed: u64) -> GraphCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let toy = Toy::new(rng.gen_range(2..6));
    let n = rng.gen_range(1..6);
    let batch: Vec<Instance> = (0..n)
        .map(|i| {
            let lang = if rng.gen_bool(0.5) { Language::Hrl } else { Language::Lrl };
            let len = rng.gen_range(1..6);
            toy.sentence(&mut rng, &format!("s{i}"), lang, len)
        })
        .collect();
    let longest = batch.iter().map(|i| i.token_ids.len()).max().unwrap();
    let seq_len = longest + rng.gen_range(0..3);
    GraphCase { toy, batch, seq_len }
}

/// Edge set derived position by position from the definitions.
fn oracle_edges(c: &GraphCase) -> BTreeSet<(usize, usize)> {
    let s = c.seq_len;
    let mut out = BTreeSet::new();
    let mut put = |a: usize, b: usize| {
        if a != b {
            out.insert((a.min(b), a.max(b)));
        }
    };
    let word_at = |inst: &Instance, p: usize| inst.word_spans.iter().position(|r| r.contains(&p));
    for (x, ix) in c.batch.iter().enumerate() {
        for p in 0..ix.token_ids.len() {
            if p > 0 {
                put(x * s + p - 1, x * s + p);
            }
            for (y, iy) in c.batch.iter().enumerate() {
                if x == y {
                    continue;
                }
                for q in 0..iy.token_ids.len() {
                    let t = ix.token_ids[p];
                    if t >= SPECIALS.len() && t == iy.token_ids[q] {
                        put(x * s + p, y * s + q);
                    }
                    if ix.language == Language::Lrl && iy.language == Language::Hrl {
                        if let (Some(w), Some(v)) = (word_at(ix, p), word_at(iy, q)) {
                            if c.toy.lex.translate(&ix.words[w]) == Some(iy.words[v].as_str()) {
                                put(x * s + p, y * s + q);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn build(c: &GraphCase) -> Result<TokenGraph, String> {
    let refs: Vec<&Instance> = c.batch.iter().collect();
    build_token_graph(&refs, c.seq_len, &c.toy.lex).map_err(|e| e.to_string())
}

/// Edge set matches the oracle; the normalized adjacency is symmetric and
/// its off-diagonal support equals the neighbour lists.
pub fn check_graph_symmetry(seed: u64) -> Check {
    let c = graph_case(seed);
    let g = build(&c)?;
    let got: BTreeSet<(usize, usize)> = g.edges().map(|(e, _)| e).collect();
    ensure(got == oracle_edges(&c), || format!("seed {seed}: edge set differs from oracle"))?;
    let n = g.num_nodes();
    let a = g.normalized_adjacency::<f64>().to_dense(n);
    let nbrs = g.neighbours();
    for i in 0..n {
        for j in 0..n {
            ensure((a[i * n + j] - a[j * n + i]).abs() <= 1e-12, || format!("seed {seed}: A[{i},{j}] ≠ A[{j},{i}]"))?;
            if i != j {
                let linked = nbrs[i].binary_search(&j).is_ok();
                ensure(linked == (a[i * n + j] != 0.0), || format!("seed {seed}: adjacency and neighbours disagree at ({i},{j})"))?;
                ensure(linked == nbrs[j].binary_search(&i).is_ok(), || format!("seed {seed}: neighbour lists asymmetric at ({i},{j})"))?;
            }
        }
    }
    Ok(())
}

/// Padding nodes have no edges, a bare unit self loop, and attend only to
/// themselves.
pub fn check_pad_isolation(seed: u64) -> Check {
    let c = graph_case(seed);
    let g = build(&c)?;
    let n = g.num_nodes();
    let a = g.normalized_adjacency::<f64>().to_dense(n);
    let pattern = g.attention_pattern::<f64>();
    let nbrs = g.neighbours();
    for i in (0..n).filter(|&i| !g.node_valid()[i]) {
        ensure(nbrs[i].is_empty(), || format!("seed {seed}: pad node {i} has neighbours"))?;
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            ensure(a[i * n + j] == want && a[j * n + i] == want, || format!("seed {seed}: pad node {i} couples to {j}"))?;
        }
        let cols: Vec<usize> = pattern.row(i).map(|e| pattern.cols[e]).collect();
        ensure(cols == vec![i], || format!("seed {seed}: pad node {i} attends to {cols:?}"))?;
    }
    Ok(())
}

/// Exactly `round(ρ·m)` cross-lingual edges survive, sequential edges all
/// stay, survivors are a subset, and the draw is reproducible.
pub fn check_retention(seed: u64, rho: f64) -> Check {
    let c = graph_case(seed);
    let g = build(&c)?;
    let m = g.cross_lingual_count();
    let r = apply_edge_retention(&g, rho, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let want = (rho * m as f64).round() as usize;
    ensure(r.cross_lingual_count() == want, || format!("seed {seed} ρ {rho}: kept {} of {m}, want {want}", r.cross_lingual_count()))?;
    ensure(r.stats().sequential == g.stats().sequential, || format!("seed {seed}: sequential edges dropped"))?;
    let all: BTreeSet<_> = g.edges().collect();
    ensure(r.edges().all(|e| all.contains(&e)), || format!("seed {seed}: retention invented an edge"))?;
    let again = apply_edge_retention(&g, rho, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    ensure(again.edges().eq(r.edges()), || format!("seed {seed}: retention not reproducible"))
}

pub struct PoolCase {
    pub data: Vec<Instance>,
    pub config: BatchingConfig,
}

pub fn pool_case(seed: u64, hrl: usize, lrl: usize, half_batch: usize, half_group: usize, fraction: f64) -> PoolCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let toy = Toy::new(8);
    let mut data = Vec::new();
    for k in 0..hrl {
        let len = rng.gen_range(1..6);
        data.push(toy.sentence(&mut rng, &format!("h{k:03}"), Language::Hrl, len));
    }
    for k in 0..lrl {
        let len = rng.gen_range(1..6);
        data.push(toy.sentence(&mut rng, &format!("l{k:03}"), Language::Lrl, len));
    }
    let config = BatchingConfig {
        batch_size: 2 * half_batch,
        group_size: 2 * half_group.min(half_batch),
        strategic_fraction: fraction,
        overlap: OverlapMode::Set,
    };
    PoolCase { data, config }
}

fn distinct_overlap(a: &Instance, b: &Instance) -> usize {
    let sa: BTreeSet<usize> = a.token_ids.iter().copied().filter(|&t| t >= SPECIALS.len()).collect();
    let sb: BTreeSet<usize> = b.token_ids.iter().copied().filter(|&t| t >= SPECIALS.len()).collect();
    sa.intersection(&sb).count()
}

/// Every batch of an epoch holds B/2 instances of each language without
/// duplicates, HRL instances are not reused while unused ones remain, and
/// the plan is a function of the seed.
pub fn check_epoch(case: &PoolCase, batches: usize, seed: u64) -> Check {
    let p = Planner::new(case.data.iter().collect(), case.config).map_err(|e| e.to_string())?;
    let plan = p.plan_epoch(batches, seed, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let b = case.config.batch_size;
    for (k, batch) in plan.batches.iter().enumerate() {
        ensure(batch.members.len() == b, || format!("batch {k} has {} members", batch.members.len()))?;
        let hrl = batch.members.iter().filter(|&&m| case.data[m].language == Language::Hrl).count();
        ensure(hrl == b / 2, || format!("batch {k}: {hrl} HRL of {b}"))?;
        ensure(batch.members.iter().collect::<BTreeSet<_>>().len() == b, || format!("batch {k} repeats a member"))?;
    }
    let hrl_pool = case.data.iter().filter(|i| i.language == Language::Hrl).count();
    let used: Vec<usize> =
        plan.batches.iter().flat_map(|b| b.members.iter().copied()).filter(|&m| case.data[m].language == Language::Hrl).collect();
    if used.len() <= hrl_pool {
        ensure(used.iter().collect::<BTreeSet<_>>().len() == used.len(), || "HRL instance reused before exhaustion".into())?;
    }
    let again = p.plan_epoch(batches, seed, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    ensure(again == plan, || "epoch plan not reproducible".into())
}

/// Each chosen neighbour overlaps its anchor at least as much as every
/// same-language instance left out of the batch so far.
pub fn check_greedy(case: &PoolCase, seed: u64) -> Check {
    let p = Planner::new(case.data.iter().collect(), case.config).map_err(|e| e.to_string())?;
    let plan = p.form_strategic_batch(&mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let d = &case.data;
    let mut chosen = BTreeSet::new();
    for g in &plan.groups {
        chosen.insert(g.anchor);
        chosen.extend(g.neighbors.iter().copied());
        for &nb in &g.neighbors {
            let ov = distinct_overlap(&d[g.anchor], &d[nb]);
            for c in (0..d.len()).filter(|c| d[*c].language == d[nb].language && !chosen.contains(c)) {
                let other = distinct_overlap(&d[g.anchor], &d[c]);
                ensure(ov >= other, || format!("anchor {}: neighbour {nb} overlap {ov} < {other} of {c}", g.anchor))?;
            }
        }
    }
    Ok(())
}

/// Mixed label vectors stay on the probability simplex.
pub fn check_hal_simplex(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.gen_range(2..8);
    let positions = rng.gen_range(1..5);
    let label = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut out = Vec::new();
        for _ in 0..positions {
            if rng.gen_bool(0.5) {
                let mut row = vec![0.0; classes];
                row[rng.gen_range(0..classes)] = 1.0;
                out.extend(row);
            } else {
                let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
                let z: f64 = raw.iter().sum::<f64>().max(1e-300);
                out.extend(raw.iter().map(|v| v / z));
            }
        }
        out
    };
    let (yh, yl) = (label(&mut rng), label(&mut rng));
    let d = 3;
    let hh: Vec<f64> = (0..positions * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let hl: Vec<f64> = (0..positions * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let alpha = if rng.gen_bool(0.1) { [0.0, 1.0][rng.gen_range(0..2)] } else { rng.gen_range(0.0..=1.0) };
    let (_, y) = hal_mix(&hh, &hl, &yh, &yl, alpha).map_err(|e| e.to_string())?;
    let valid = |rng: &mut ChaCha8Rng| -> Vec<bool> { (0..positions).map(|_| rng.gen_bool(0.8)).collect() };
    let (vh, vl) = (valid(&mut rng), valid(&mut rng));
    let (_, yp, _) = hal_mix_positions(&hh, &hl, &yh, &yl, &vh, &vl, alpha).map_err(|e| e.to_string())?;
    for mixed in [&y, &yp] {
        for row in mixed.chunks(classes) {
            let sum: f64 = row.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-6 && row.iter().all(|&v| v >= -1e-6), || format!("seed {seed} α {alpha}: row {row:?} off the simplex"))?;
        }
    }
    Ok(())
}

/// KL to a soft target is non-negative and vanishes at the target itself;
/// softmax rows sum to one.
pub fn check_kl_and_softmax(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c) = (rng.gen_range(1..6), rng.gen_range(2..6));
    let logits: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-8.0..8.0)).collect();
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![n, c], logits).unwrap());
    let p = tape.softmax(x).map_err(|e| e.to_string())?;
    let probs = tape.data(p).to_vec();
    for row in probs.chunks(c) {
        ensure((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12, || format!("seed {seed}: softmax row sums to {}", row.iter().sum::<f64>()))?;
    }
    let mut soft = Vec::new();
    for _ in 0..n {
        let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
        let z: f64 = raw.iter().sum();
        soft.extend(raw.iter().map(|v| v / z));
    }
    let mask = vec![true; n];
    let kl = kl_divergence_loss(&mut tape, x, &soft, &mask).map_err(|e| e.to_string())?;
    ensure(tape.data(kl)[0] >= -1e-12, || format!("seed {seed}: KL {} < 0", tape.data(kl)[0]))?;
    let self_kl = kl_divergence_loss(&mut tape, x, &probs, &mask).map_err(|e| e.to_string())?;
    ensure(tape.data(self_kl)[0].abs() <= 1e-9, || format!("seed {seed}: KL(p‖p) = {}", tape.data(self_kl)[0]))
}

/// Brute-force initialization: for every piece, scan the whole vocabulary
/// for translatable words containing it and average their translation means.
pub fn tet_oracle(
    lrl_words: &[String],
    lrl_tok: &TokenizerModel,
    hrl_tok: &TokenizerModel,
    emb: &Tensor<f64>,
    lex: &Lexicon,
    keep: &BTreeSet<usize>,
) -> BTreeMap<usize, Vec<f64>> {
    let d = emb.shape()[1];
    let vocab: BTreeSet<&String> = lrl_words.iter().collect();
    let mut out = BTreeMap::new();
    for piece in SPECIALS.len()..lrl_tok.vocab_size() {
        if keep.contains(&piece) {
            continue;
        }
        let mut total = vec![0.0; d];
        let mut count = 0usize;
        for w in &vocab {
            if !lrl_tok.encode_word(w).contains(&piece) {
                continue;
            }
            let Some(t) = lex.translate(w) else { continue };
            let hp = hrl_tok.encode_word(t);
            for k in 0..d {
                let mean = hp.iter().map(|&p| emb.data()[p * d + k]).sum::<f64>() / hp.len() as f64;
                total[k] += mean;
            }
            count += 1;
        }
        if count > 0 {
            out.insert(piece, total.into_iter().map(|v| v / count as f64).collect());
        }
    }
    out
}

fn random_pieces(rng: &mut ChaCha8Rng, alphabet: &[char], n: usize) -> Vec<String> {
    let mut set: BTreeSet<String> = alphabet.iter().map(|c| c.to_string()).collect();
    while set.len() < alphabet.len() + n {
        let len = rng.gen_range(2..4);
        set.insert((0..len).map(|_| *alphabet.choose(rng).unwrap()).collect());
    }
    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    pieces.extend(set);
    pieces
}

/// Maximum absolute deviation between the initializer and the oracle on one
/// random vocabulary and lexicon; `Err` if their covered pieces differ.
pub fn check_tet(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nl, nh) = (rng.gen_range(2..10), rng.gen_range(2..10));
    let lrl_tok = TokenizerModel::from_pieces(random_pieces(&mut rng, &['p', 'q', 'r', 's'], nl)).unwrap();
    let hrl_tok = TokenizerModel::from_pieces(random_pieces(&mut rng, &['x', 'y', 'z'], nh)).unwrap();
    let word = |rng: &mut ChaCha8Rng, alphabet: &[char]| -> String { (0..rng.gen_range(1..7)).map(|_| *alphabet.choose(rng).unwrap()).collect() };
    let lrl_words: Vec<String> = (0..rng.gen_range(1..12)).map(|_| word(&mut rng, &['p', 'q', 'r', 's'])).collect();
    let mut lex = Lexicon::new();
    for (k, w) in lrl_words.iter().enumerate() {
        if rng.gen_bool(0.7) && lex.translate(w).is_none() {
            let t = word(&mut rng, &['x', 'y', 'z']);
            lex.insert(w, &t, LexSource::Synthetic, k + 1).map_err(|e| e.to_string())?;
        }
    }
    let d = rng.gen_range(1..5);
    let emb = Tensor::from_fn(vec![hrl_tok.vocab_size(), d], |_| rng.gen_range(-3.0..3.0));
    let keep: BTreeSet<usize> = (SPECIALS.len()..lrl_tok.vocab_size()).filter(|_| rng.gen_bool(0.15)).collect();
    let options = TetOptions { keep: keep.clone(), ..TetOptions::default() };
    let got = tet_initialize(&lrl_words, &lrl_tok, &hrl_tok, &emb, &lex, &options).map_err(|e| e.to_string())?;
    let want = tet_oracle(&lrl_words, &lrl_tok, &hrl_tok, &emb, &lex, &keep);
    let (a, b): (Vec<_>, Vec<_>) = (got.vectors.keys().collect(), want.keys().collect());
    ensure(a == b, || format!("seed {seed}: covered pieces {a:?} vs oracle {b:?}"))?;
    Ok(got.vectors.iter().flat_map(|(p, v)| v.iter().zip(&want[p]).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max))
}

/// At α = 0 every augmented row equals its LRL member's output; at α = 1
/// jointly valid rows equal the HRL partner's output. Bitwise.
pub fn check_hal_endpoints(seed: u64, task: bhasha::corpus::Task) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let toy = Toy::new(4);
    let n = rng.gen_range(2..6);
    let mut insts: Vec<Instance> = (0..n)
        .map(|i| {
            let lang = if i % 2 == 0 { Language::Hrl } else { Language::Lrl };
            let len = rng.gen_range(1..5);
            toy.sentence(&mut rng, &format!("s{i}"), lang, len)
        })
        .collect();
    insts.shuffle(&mut rng);
    if task == bhasha::corpus::Task::SequenceLabeling {
        for i in &mut insts {
            let tags = vec![0; i.words.len()];
            *i = Instance::tagged(i.id.clone(), i.language, i.words.clone(), tags);
            i.encode(&toy.tok, 64);
        }
    }
    let refs: Vec<&Instance> = insts.iter().collect();
    let batch = Batch::new(&refs).map_err(|e| e.to_string())?;
    let heads = rng.gen_range(1..3);
    let config = EncoderConfig {
        vocab_size: toy.tok.vocab_size(),
        d_model: 4 * heads,
        num_heads: heads,
        d_ff: 8,
        num_layers: rng.gen_range(1..3),
        max_len: 16,
        task,
        num_labels: 3,
        dropout: 0.0,
        seed,
        hal: HalConfig { enabled: true, depth: rng.gen_range(1..3), ..HalConfig::default() },
        ..EncoderConfig::default()
    };
    let model = Model::<f64>::new(config).map_err(|e| e.to_string())?;
    let pairs = bhasha::model::pair_for_mixing(&batch.languages, &mut rng);
    let classes = 3;
    let per = if task == bhasha::corpus::Task::SentenceClassification { classes } else { batch.seq_len * classes };
    for alpha in [0.0, 1.0] {
        let plan = HalPlan { pairs: pairs.clone(), alpha };
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch, ForwardInputs { hal: Some(&plan), ..Default::default() }).map_err(|e| e.to_string())?;
        let real = tape.data(out.logits).to_vec();
        let Some(aug) = out.aug_logits else {
            ensure(pairs.is_empty(), || "no augmented logits despite pairs".into())?;
            continue;
        };
        let aug = tape.data(aug).to_vec();
        for (k, &(l, h)) in pairs.iter().enumerate() {
            let (src, rows) = if alpha == 0.0 {
                (l, per)
            } else if task == bhasha::corpus::Task::SentenceClassification {
                (h, per)
            } else {
                (h, batch.lengths[l].min(batch.lengths[h]) * classes)
            };
            let got = &aug[k * per..k * per + rows];
            let want = &real[src * per..src * per + rows];
            ensure(got.iter().zip(want).all(|(a, b)| a.to_bits() == b.to_bits()), || {
                format!("seed {seed} α {alpha} pair {k}: augmented output differs from member {src}")
            })?;
        }
    }
    Ok(())
}
