use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{cross_entropy_loss, kl_divergence_loss, macro_f1, AdamW, F1Report, Mechanisms, Method, MetricsReport, PreparedData, Timings, TrainConfig, EpochRecord};
use crate::batching::Planner;
use crate::corpus::{Instance, Task};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::{apply_edge_retention, build_token_graph};
use crate::model::{count_parameters, dynamic_alpha, pair_for_mixing, AlphaMode, Batch, EncoderConfig, ForwardInputs, GraphOperator, HalPlan, Model, ParamStore};
use crate::numerics::Tape;

/// Independent random stream `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_WARMUP: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 1 << 32;

/// The encoder config with vocabulary, labels and task taken from the data.
pub fn fit_encoder(base: &EncoderConfig, data: &PreparedData) -> EncoderConfig {
    let mut c = base.clone();
    c.vocab_size = data.tokenizer.vocab_size();
    c.num_labels = data.label_set.len();
    c.task = data.task;
    c
}

struct Targets {
    labels: Vec<usize>,
    mask: Vec<bool>,
}

fn label_rows(task: Task, inst: &Instance) -> Vec<usize> {
    match task {
        Task::SentenceClassification => vec![inst.sentence_label.expect("sentence instances carry a label")],
        Task::SequenceLabeling => inst.piece_tags().expect("tagged instances carry tags"),
    }
}

fn targets(task: Task, insts: &[&Instance], seq_len: usize) -> Targets {
    match task {
        Task::SentenceClassification => {
            Targets { labels: insts.iter().map(|i| label_rows(task, i)[0]).collect(), mask: vec![true; insts.len()] }
        }
        Task::SequenceLabeling => {
            let mut labels = vec![0; insts.len() * seq_len];
            let mut mask = vec![false; insts.len() * seq_len];
            for (b, inst) in insts.iter().enumerate() {
                for (p, tag) in label_rows(task, inst).into_iter().enumerate() {
                    labels[b * seq_len + p + 1] = tag;
                    mask[b * seq_len + p + 1] = true;
                }
            }
            Targets { labels, mask }
        }
    }
}

/// Mixed labels `α·y_H + (1−α)·y_L` for each pair, laid out like the
/// augmented logits.
fn soft_targets(task: Task, insts: &[&Instance], plan: &HalPlan<f32>, seq_len: usize, classes: usize) -> (Vec<f32>, Vec<bool>) {
    let a = plan.alpha;
    let rows_per = if task == Task::SentenceClassification { 1 } else { seq_len };
    let mut soft = vec![0f32; plan.pairs.len() * rows_per * classes];
    let mut mask = vec![false; plan.pairs.len() * rows_per];
    for (k, &(l, h)) in plan.pairs.iter().enumerate() {
        let (yl, yh) = (label_rows(task, insts[l]), label_rows(task, insts[h]));
        let offset = if task == Task::SentenceClassification { 0 } else { 1 };
        for p in 0..yl.len().min(yh.len()) {
            let row = k * rows_per + p + offset;
            mask[row] = true;
            soft[row * classes + yh[p]] += a;
            soft[row * classes + yl[p]] += 1.0 - a;
        }
    }
    (soft, mask)
}

fn graph_for(model: &Model<f32>, insts: &[&Instance], seq_len: usize, data: &PreparedData, retention: f64, rng: &mut ChaCha8Rng) -> Result<Option<GraphOperator<f32>>> {
    if !model.config.getr.enabled {
        return Ok(None);
    }
    let g = build_token_graph(insts, seq_len, &data.lexicon)?;
    let g = apply_edge_retention(&g, retention, rng)?;
    Ok(Some(GraphOperator::new(&g, model.config.getr.gnn_kind)))
}

struct StepCtx<'a> {
    cfg: &'a TrainConfig,
    data: &'a PreparedData,
    epoch: usize,
    batch: usize,
    alpha: f32,
}

fn train_step(model: &mut Model<f32>, opt: &mut AdamW<f32>, insts: &[&Instance], ctx: &StepCtx<'_>, rng: &mut ChaCha8Rng) -> Result<f64> {
    step_inner(model, opt, insts, ctx, rng).map_err(|e| match e {
        Error::Numeric(_) => Error::NonFiniteLoss { epoch: ctx.epoch, batch: ctx.batch },
        other => other,
    })
}

fn step_inner(model: &mut Model<f32>, opt: &mut AdamW<f32>, insts: &[&Instance], ctx: &StepCtx<'_>, rng: &mut ChaCha8Rng) -> Result<f64> {
    let batch = Batch::new(insts)?;
    let graph = graph_for(model, insts, batch.seq_len, ctx.data, ctx.cfg.retention, rng)?;
    let plan = model.config.hal.enabled.then(|| HalPlan { pairs: pair_for_mixing(&batch.languages, rng), alpha: ctx.alpha });
    let mut tape = Tape::new();
    let out = model.forward(
        &mut tape,
        &batch,
        ForwardInputs { graph: graph.as_ref(), hal: plan.as_ref(), rng: Some(rng as &mut dyn rand::RngCore), trainable: true },
    )?;
    let task = model.config.task;
    let t = targets(task, insts, batch.seq_len);
    let mut loss = cross_entropy_loss(&mut tape, out.logits, &t.labels, &t.mask)?;
    if let (Some(aug), Some(plan)) = (out.aug_logits, plan.as_ref()) {
        let (soft, mask) = soft_targets(task, insts, plan, batch.seq_len, model.config.num_labels);
        if mask.iter().any(|&m| m) {
            let kl = kl_divergence_loss(&mut tape, aug, &soft, &mask)?;
            let kl = tape.scale(kl, ctx.cfg.aug_weight as f32);
            loss = tape.add(loss, kl)?;
        }
    }
    let value = tape.data(loss)[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: ctx.epoch, batch: ctx.batch });
    }
    tape.backward(loss)?;
    let grads: Vec<Option<&[f32]>> = out.params.iter().map(|&v| tape.grad(v)).collect();
    opt.step(&mut model.params, &grads)?;
    Ok(value)
}

/// Shuffled passes over `pool`, cut into batches of at most `size`.
fn shuffled_batches<'a>(pool: &[&'a Instance], size: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<&'a Instance>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut order = pool.to_vec();
        order.shuffle(rng);
        for chunk in order.chunks(size) {
            if out.len() == count {
                break;
            }
            out.push(chunk.to_vec());
        }
    }
    out
}

/// Warm start shared by all non-scratch methods: the plain encoder trained
/// on HRL data alone.
pub fn pretrain_hrl(base: &EncoderConfig, cfg: &TrainConfig, data: &PreparedData) -> Result<ParamStore<f32>> {
    cfg.validate()?;
    let mut config = Method::JOINT.apply(&fit_encoder(base, data));
    config.seed = cfg.seed;
    let mut model = Model::<f32>::new(config)?;
    if cfg.warmup_epochs == 0 {
        return Ok(model.params);
    }
    let mut opt = AdamW::new(cfg.optimizer, &model.params);
    let mut rng = stream_rng(cfg.seed, STREAM_WARMUP);
    let pool: Vec<&Instance> = data.hrl.train.iter().collect();
    if pool.is_empty() {
        return Err(Error::MissingPrerequisite("HRL training data is empty".into()));
    }
    let size = cfg.batching.batch_size;
    let per_epoch = pool.len().div_ceil(size);
    for epoch in 0..cfg.warmup_epochs {
        for (b, insts) in shuffled_batches(&pool, size, per_epoch, &mut rng).iter().enumerate() {
            let ctx = StepCtx { cfg, data, epoch, batch: b, alpha: 0.0 };
            train_step(&mut model, &mut opt, insts, &ctx, &mut rng)?;
        }
    }
    Ok(model.params)
}

/// Copies every tensor of `from` whose name and shape exist in `to`.
pub fn transfer_matching(from: &ParamStore<f32>, to: &mut ParamStore<f32>) -> usize {
    let mut copied = 0;
    for (name, t) in from.iter() {
        if let Some(dst) = to.get_mut(name) {
            if dst.shape() == t.shape() {
                *dst = t.clone();
                copied += 1;
            }
        }
    }
    copied
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub f1: F1Report,
}

/// Logit rows of each instance: one row (sentence task) or one per
/// position including `[CLS]` (labeling task). Graph-enhanced models see
/// each instance inside its own neighborhood of training instances.
pub fn predict(model: &Model<f32>, instances: &[Instance], cfg: &TrainConfig, data: &PreparedData, exec: Exec) -> Result<Vec<Vec<f32>>> {
    let classes = model.config.num_labels;
    let rows_of = |inst: &Instance| match model.config.task {
        Task::SentenceClassification => 1,
        Task::SequenceLabeling => inst.token_ids.len(),
    };
    if model.config.getr.enabled {
        let planner = Planner::new(data.training_instances(), cfg.batching)?;
        return exec.try_map(instances, |i, inst| {
            let mut rng = stream_rng(cfg.seed, STREAM_EVAL + i as u64);
            let neighbors = planner.inference_neighborhood(inst, &mut rng)?;
            let members: Vec<&Instance> = std::iter::once(inst).chain(neighbors.iter().map(|&m| planner.instance(m))).collect();
            let batch = Batch::new(&members)?;
            let graph = graph_for(model, &members, batch.seq_len, data, cfg.retention, &mut rng)?;
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &batch, ForwardInputs { graph: graph.as_ref(), ..Default::default() })?;
            Ok(tape.data(out.logits)[..rows_of(inst) * classes].to_vec())
        });
    }
    let chunks: Vec<&[Instance]> = instances.chunks(cfg.batching.batch_size).collect();
    let per_chunk = exec.try_map(&chunks, |_, chunk| {
        let members: Vec<&Instance> = chunk.iter().collect();
        let batch = Batch::new(&members)?;
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch, ForwardInputs::default())?;
        let logits = tape.data(out.logits);
        let stride = match model.config.task {
            Task::SentenceClassification => classes,
            Task::SequenceLabeling => batch.seq_len * classes,
        };
        Ok(members.iter().enumerate().map(|(b, inst)| logits[b * stride..b * stride + rows_of(inst) * classes].to_vec()).collect::<Vec<_>>())
    })?;
    Ok(per_chunk.into_iter().flatten().collect())
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn neg_log_softmax(row: &[f32], label: usize) -> f64 {
    let max = row.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
    lse - row[label] as f64
}

/// Mean cross-entropy and macro-F1 over `instances`.
pub fn evaluate(model: &Model<f32>, instances: &[Instance], cfg: &TrainConfig, data: &PreparedData, exec: Exec) -> Result<EvalResult> {
    if instances.is_empty() {
        return Err(Error::Contract("evaluation over an empty split".into()));
    }
    let logits = predict(model, instances, cfg, data, exec)?;
    let classes = model.config.num_labels;
    let task = model.config.task;
    let (mut preds, mut golds, mut loss) = (Vec::new(), Vec::new(), 0.0);
    for (inst, rows) in instances.iter().zip(&logits) {
        let offset = if task == Task::SentenceClassification { 0 } else { 1 };
        for (p, gold) in label_rows(task, inst).into_iter().enumerate() {
            let row = &rows[(p + offset) * classes..(p + offset + 1) * classes];
            loss += neg_log_softmax(row, gold);
            preds.push(argmax(row));
            golds.push(gold);
        }
    }
    let f1 = macro_f1(&preds, &golds, classes, None)?;
    Ok(EvalResult { loss: loss / golds.len() as f64, f1 })
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub report: MetricsReport,
    pub timings: Timings,
}

fn apply_tet(model: &mut Model<f32>, cfg: &TrainConfig, data: &PreparedData) -> Result<f64> {
    if data.lexicon.is_empty() {
        return Err(Error::MissingPrerequisite("token embedding transfer needs a bilingual lexicon".into()));
    }
    let table = model.params.get("embed.token").expect("token embeddings exist").cast::<f64>();
    let options = crate::lexicon::TetOptions { mode: cfg.tet_mode, keep: data.hrl_pieces.clone() };
    let words = data.lexicon_lrl_words();
    let result = crate::lexicon::tet_initialize(&words, &data.tokenizer, &data.tokenizer, &table, &data.lexicon, &options)?;
    let d = model.config.d_model;
    let emb = model.params.get_mut("embed.token").expect("token embeddings exist").data_mut();
    for (&piece, vec) in &result.vectors {
        for (k, &v) in vec.iter().enumerate() {
            emb[piece * d + k] = v as f32;
        }
    }
    Ok(crate::lexicon::coverage_report(&result).coverage)
}

/// Trains one method end to end and returns the model with the lowest
/// validation loss. `pretrained` supplies the HRL warm start; it is
/// computed when absent and ignored for scratch runs.
pub fn train_run(base: &EncoderConfig, cfg: &TrainConfig, data: &PreparedData, pretrained: Option<&ParamStore<f32>>, exec: Exec) -> Result<TrainOutcome> {
    cfg.validate()?;
    let method = cfg.method;
    if method.tet && data.lexicon.is_empty() {
        return Err(Error::MissingPrerequisite("token embedding transfer needs a bilingual lexicon".into()));
    }
    if data.lrl.train.is_empty() || data.lrl.validation.is_empty() || data.lrl.test.is_empty() {
        return Err(Error::MissingPrerequisite("LRL train, validation and test splits must be non-empty".into()));
    }
    let mut timings = Timings::default();
    let mut encoder = method.apply(&fit_encoder(base, data));
    encoder.seed = cfg.seed;
    let mut model = Model::<f32>::new(encoder.clone())?;

    if !method.scratch {
        let start = Instant::now();
        let warm = match pretrained {
            Some(p) => p.clone(),
            None => pretrain_hrl(base, cfg, data)?,
        };
        transfer_matching(&warm, &mut model.params);
        timings.warmup_seconds = start.elapsed().as_secs_f64();
    }
    let tet_coverage = if method.tet { Some(apply_tet(&mut model, cfg, data)?) } else { None };

    let mut opt = AdamW::new(cfg.optimizer_for_method(), &model.params);
    let mut rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let size = cfg.batching.batch_size;
    let lrl_pool: Vec<&Instance> = data.lrl.train.iter().collect();
    let planner = if method.scratch { None } else { Some(Planner::new(data.training_instances(), cfg.batching)?) };
    let per_epoch = cfg.batches_per_epoch.unwrap_or_else(|| {
        if method.scratch {
            lrl_pool.len().div_ceil(size)
        } else {
            data.hrl.train.len().div_ceil(size / 2)
        }
    });
    let total_steps = cfg.epochs * per_epoch;

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batches: Vec<Vec<&Instance>> = match &planner {
            None => shuffled_batches(&lrl_pool, size, per_epoch, &mut rng),
            Some(p) => p
                .plan_epoch(per_epoch, cfg.seed, &mut rng)?
                .batches
                .iter()
                .map(|b| b.members.iter().map(|&m| p.instance(m)).collect())
                .collect(),
        };
        let mut train_loss = 0.0;
        for (b, insts) in batches.iter().enumerate() {
            let alpha = match encoder.hal.alpha_mode {
                AlphaMode::Fixed => encoder.hal.alpha,
                AlphaMode::Dynamic => dynamic_alpha(step, total_steps)?,
            } as f32;
            let ctx = StepCtx { cfg, data, epoch, batch: b, alpha };
            train_loss += train_step(&mut model, &mut opt, insts, &ctx, &mut rng)?;
            step += 1;
        }
        let val = evaluate(&model, &data.lrl.validation, cfg, data, exec)?;
        records.push(EpochRecord {
            epoch,
            train_loss: train_loss / batches.len() as f64,
            val_loss: val.loss,
            val_macro_f1: val.f1.macro_f1,
        });
        if best.as_ref().is_none_or(|(_, l, _)| val.loss < *l) {
            best = Some((epoch, val.loss, model.params.clone()));
        }
        timings.epoch_seconds.push(start.elapsed().as_secs_f64());
    }

    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch");
    model.params = params;
    let start = Instant::now();
    let validation = evaluate(&model, &data.lrl.validation, cfg, data, exec)?;
    let test = evaluate(&model, &data.lrl.test, cfg, data, exec)?;
    timings.eval_seconds = start.elapsed().as_secs_f64();

    let report = MetricsReport {
        method: method.name(),
        mechanisms: Mechanisms {
            getr: method.getr.map(|k| format!("{k:?}").to_lowercase()),
            hal: method.hal,
            tet: method.tet,
        },
        seed: cfg.seed,
        parameter_count: count_parameters(&encoder),
        epochs: records,
        best_epoch,
        best_val_loss,
        validation: validation.f1,
        test: test.f1,
        tet_coverage,
        encoder,
        train: cfg.clone(),
    };
    Ok(TrainOutcome { model, report, timings })
}
