//! Experiment files, method × seed matrices, and ablation sweeps with
//! mean±std tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lexicon::Lexicon;
use crate::model::EncoderConfig;
use crate::training::{pretrain_hrl, train_run, Method, MetricsReport, PreparedData, TokenizerConfig, TrainConfig};

/// File names of a generated or supplied corpus directory.
pub const HRL_FILE: &str = "hrl.jsonl";
pub const LRL_FILE: &str = "lrl.jsonl";
pub const LEXICON_FILE: &str = "lexicon.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticSpec,
    /// Corpus directory holding the three corpus files; the synthetic
    /// corpus is generated in memory when unset.
    pub data_dir: Option<PathBuf>,
    pub tokenizer: TokenizerConfig,
    pub max_len: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            data_dir: None,
            tokenizer: TokenizerConfig::default(),
            max_len: 32,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            methods: vec![Method::JOINT, Method::getr_gat()],
            seeds: vec![0, 1, 2],
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML file, then applies `key=value` overrides addressed by
    /// dotted paths such as `train.epochs=5`.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        if let Some(bad) = self.methods.iter().find(|m| !m.in_catalog()) {
            return Err(Error::Config(format!("method {} is not one of {:?}", bad.name(), Method::CATALOG)));
        }
        if self.max_len < 2 || self.max_len > self.encoder.max_len {
            return Err(Error::Config(format!("max_len {} must lie in 2..={}", self.max_len, self.encoder.max_len)));
        }
        if let Some(dir) = &self.data_dir {
            for f in [HRL_FILE, LRL_FILE, LEXICON_FILE] {
                if !dir.join(f).exists() {
                    return Err(Error::MissingPrerequisite(format!("{} is missing; run generate first", dir.join(f).display())));
                }
            }
        }
        Ok(())
    }

    /// Encoded corpus: read from `data_dir` or generated from the synthetic settings.
    pub fn prepare(&self) -> Result<PreparedData> {
        let (hrl, lrl, lexicon) = match &self.data_dir {
            Some(dir) => (
                load_dataset(&dir.join(HRL_FILE), self.synthetic.task)?,
                load_dataset(&dir.join(LRL_FILE), self.synthetic.task)?,
                Lexicon::load(&dir.join(LEXICON_FILE))?,
            ),
            None => {
                let c = generate_synthetic(&self.synthetic)?;
                (c.hrl, c.lrl, c.lexicon)
            }
        };
        PreparedData::new(hrl, lrl, lexicon, &self.tokenizer, self.max_len)
    }

    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        TrainConfig { method, seed, ..self.train.clone() }
    }
}

/// Writes the synthetic corpus of `spec` into `dir`.
pub fn write_corpus(spec: &SyntheticSpec, dir: &Path) -> Result<()> {
    let c = generate_synthetic(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_dataset(&c.hrl, &dir.join(HRL_FILE))?;
    save_dataset(&c.lrl, &dir.join(LRL_FILE))?;
    c.lexicon.save(&dir.join(LEXICON_FILE))
}

/// Sets `a.b.c = value` inside a TOML tree. The value is read as TOML when
/// it parses (numbers, booleans, arrays) and as a string otherwise.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("{key}: {part:?} is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(Error::Config(format!("empty override key in {assignment:?}")))
}

/// Outcome of one (method, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub test_macro_f1: f64,
    pub validation_macro_f1: f64,
    pub best_epoch: usize,
}

impl From<&MetricsReport> for RunSummary {
    fn from(r: &MetricsReport) -> Self {
        Self {
            method: r.method.clone(),
            seed: r.seed,
            test_macro_f1: r.test.macro_f1,
            validation_macro_f1: r.validation.macro_f1,
            best_epoch: r.best_epoch,
        }
    }
}

/// Runs every method for every seed; the HRL warm start is computed once
/// per seed and shared by the non-scratch methods. Seeds run on `exec`.
pub fn run_matrix(
    encoder: &EncoderConfig,
    train: &TrainConfig,
    data: &PreparedData,
    methods: &[Method],
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<MetricsReport>> {
    let per_seed = exec.try_map(seeds, |_, &seed| {
        let base = TrainConfig { seed, ..train.clone() };
        let warm = if methods.iter().any(|m| !m.scratch) { Some(pretrain_hrl(encoder, &base, data)?) } else { None };
        methods
            .iter()
            .map(|&method| {
                let cfg = TrainConfig { method, ..base.clone() };
                Ok(train_run(encoder, &cfg, data, warm.as_ref(), Exec::Sequential)?.report)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_seed.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Alpha,
    HalDepth,
    GnnDepth,
    EdgeRetention,
    SizeRatio,
    BatchSize,
}

impl Sweep {
    pub const ALL: [Sweep; 6] = [Sweep::Alpha, Sweep::HalDepth, Sweep::GnnDepth, Sweep::EdgeRetention, Sweep::SizeRatio, Sweep::BatchSize];

    pub fn name(self) -> &'static str {
        match self {
            Sweep::Alpha => "alpha",
            Sweep::HalDepth => "hal_depth",
            Sweep::GnnDepth => "gnn_depth",
            Sweep::EdgeRetention => "edge_retention",
            Sweep::SizeRatio => "size_ratio",
            Sweep::BatchSize => "batch_size",
        }
    }

    /// Grid points of the sweep.
    pub fn grid(self) -> Vec<f64> {
        match self {
            Sweep::Alpha => (1..=8).map(|k| k as f64 / 10.0).collect(),
            Sweep::HalDepth | Sweep::GnnDepth => vec![1.0, 2.0, 3.0],
            Sweep::EdgeRetention => vec![1.0, 0.7, 0.5, 0.3, 0.0],
            Sweep::SizeRatio => vec![10.0, 50.0, 100.0, 500.0],
            Sweep::BatchSize => vec![8.0, 16.0, 32.0],
        }
    }

    /// Methods swept when the experiment file does not narrow them.
    pub fn default_methods(self) -> Vec<Method> {
        match self {
            Sweep::Alpha | Sweep::HalDepth => vec![Method::hal()],
            Sweep::GnnDepth | Sweep::SizeRatio | Sweep::BatchSize => vec![Method::getr_gat()],
            Sweep::EdgeRetention => vec![Method::JOINT, Method::getr_gat()],
        }
    }

    /// Column header of the grid variable.
    pub fn variable(self) -> &'static str {
        match self {
            Sweep::Alpha => "alpha",
            Sweep::HalDepth => "hal layers",
            Sweep::GnnDepth => "gnn layers",
            Sweep::EdgeRetention => "edges retained",
            Sweep::SizeRatio => "lrl train size",
            Sweep::BatchSize => "batch size",
        }
    }

    /// Encoder and training configs at grid point `x`.
    pub fn configure(self, x: f64, encoder: &mut EncoderConfig, train: &mut TrainConfig) {
        match self {
            Sweep::Alpha => encoder.hal.alpha = x,
            Sweep::HalDepth => encoder.hal.depth = x as usize,
            Sweep::GnnDepth => encoder.getr.gnn_depth = x as usize,
            Sweep::EdgeRetention => train.retention = x,
            Sweep::SizeRatio => {}
            Sweep::BatchSize => {
                let b = x as usize;
                train.batching.batch_size = b;
                train.batching.group_size = train.batching.group_size.min(b);
            }
        }
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sweep::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep {s:?}; expected one of {:?}", Sweep::ALL.map(Sweep::name))))
    }
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: f64,
    pub cells: Vec<Cell>,
}

/// Test macro-F1 of each method at each grid point, aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub sweep: Sweep,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

fn point_label(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl SweepTable {
    pub fn from_reports(sweep: Sweep, seeds: &[u64], points: &[(f64, Vec<MetricsReport>)]) -> Self {
        let rows = points
            .iter()
            .map(|(x, reports)| {
                let mut methods: Vec<String> = Vec::new();
                for r in reports {
                    if !methods.contains(&r.method) {
                        methods.push(r.method.clone());
                    }
                }
                let cells = methods
                    .into_iter()
                    .map(|m| {
                        let runs: Vec<f64> = reports.iter().filter(|r| r.method == m).map(|r| r.test.macro_f1).collect();
                        let (mean, std) = mean_std(&runs);
                        Cell { method: m, mean, std, runs }
                    })
                    .collect();
                SweepRow { point: *x, cells }
            })
            .collect();
        Self { sweep, seeds: seeds.to_vec(), rows }
    }

    /// Mean of `method` at each grid point, in grid order.
    pub fn means(&self, method: &str) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.cells.iter().find(|c| c.method == method).map(|c| c.mean)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},method,mean_macro_f1,std_macro_f1,runs\n", self.sweep.name());
        for row in &self.rows {
            for c in &row.cells {
                let _ = writeln!(out, "{},{},{:.6},{:.6},{}", point_label(row.point), c.method, c.mean, c.std, c.runs.len());
            }
        }
        out
    }

    /// Grid points as rows, methods as columns, cells `mean ± std`.
    pub fn to_markdown(&self) -> String {
        let methods: Vec<&str> = self.rows.first().map(|r| r.cells.iter().map(|c| c.method.as_str()).collect()).unwrap_or_default();
        let mut out = format!("| {} | {} |\n", self.sweep.variable(), methods.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(methods.len()));
        for row in &self.rows {
            let cells: Vec<String> = row.cells.iter().map(|c| format!("{:.3} ± {:.3}", c.mean, c.std)).collect();
            let _ = writeln!(out, "| {} | {} |", point_label(row.point), cells.join(" | "));
        }
        out
    }
}

/// Runs `methods` × `seeds` at every grid point of `sweep`.
pub fn run_sweep(cfg: &ExperimentConfig, sweep: Sweep, methods: &[Method], exec: Exec) -> Result<SweepTable> {
    let mut data = cfg.prepare()?;
    if sweep == Sweep::SizeRatio {
        let largest = sweep.grid().into_iter().fold(0.0, f64::max) as usize;
        if data.lrl.train.len() < largest && cfg.data_dir.is_none() {
            let mut c = cfg.clone();
            c.synthetic.lrl.train = largest;
            data = c.prepare()?;
        }
    }
    let mut points = Vec::new();
    for x in sweep.grid() {
        let (mut encoder, mut train) = (cfg.encoder.clone(), cfg.train.clone());
        sweep.configure(x, &mut encoder, &mut train);
        let reports = if sweep == Sweep::SizeRatio {
            run_matrix(&encoder, &train, &data.with_lrl_train_size(x as usize)?, methods, &cfg.seeds, exec)?
        } else {
            run_matrix(&encoder, &train, &data, methods, &cfg.seeds, exec)?
        };
        points.push((x, reports));
    }
    Ok(SweepTable::from_reports(sweep, &cfg.seeds, &points))
}

/// Methods × seeds table of a plain run matrix, shaped like the sweep
/// tables with a single row.
pub fn method_table(reports: &[MetricsReport]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = String::from("| method | test macro-F1 | validation macro-F1 | seeds |\n|---|---|---|---|\n");
    for m in methods {
        let mine: Vec<&MetricsReport> = reports.iter().filter(|r| r.method == m).collect();
        let (t, ts) = mean_std(&mine.iter().map(|r| r.test.macro_f1).collect::<Vec<_>>());
        let (v, vs) = mean_std(&mine.iter().map(|r| r.validation.macro_f1).collect::<Vec<_>>());
        let _ = writeln!(out, "| {m} | {t:.3} ± {ts:.3} | {v:.3} ± {vs:.3} | {} |", mine.len());
    }
    out
}
