use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bhasha::certify::{certify, DEFAULT_CONFIGS};
use bhasha::exec::Exec;
use bhasha::experiment::{method_table, run_sweep, write_corpus, ExperimentConfig, Sweep, HRL_FILE};
use bhasha::model::{load_checkpoint, save_checkpoint};
use bhasha::training::{evaluate, train_run, Method, MetricsReport};
use bhasha::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "bhasha", version, about = "Cross-lingual transfer experiments on a small transformer encoder")]
struct Cli {
    /// Worker threads for independent runs; all cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `out` from the experiment file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Override any experiment setting by dotted name, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus and lexicon.
    Generate(Common),
    /// Train one method for one seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
        /// Falls back to BHASHA_SEED, then to the first seed of the experiment file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a trained checkpoint on the LRL validation and test splits.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a sweep over one hyperparameter and write mean±std tables.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// One of alpha, hal_depth, gnn_depth, edge_retention, size_ratio, batch_size.
        #[arg(long)]
        sweep: Sweep,
        /// Comma-separated seeds, overriding the experiment file.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated methods; the sweep's own default when omitted.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Finite-difference certification of every layer kind.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_CONFIGS)]
        configs: usize,
    },
    /// Collect finished runs into a methods table.
    Report(Common),
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::MissingPrerequisite(_) => 2,
            Error::MissingArtifact(_) => 3,
            Error::NonFiniteLoss { .. } | Error::Numeric(_) => 4,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = set_threads(n) {
            eprintln!("error: {}", e.message);
            return ExitCode::from(e.code);
        }
    }
    let result = match cli.command {
        Command::Generate(c) => generate(&c),
        Command::Train { common, method, seed } => train(&common, method, seed),
        Command::Eval { common, method, seed } => eval(&common, method, seed),
        Command::Ablate { common, sweep, seeds, methods } => ablate(&common, sweep, seeds, methods),
        Command::Gradcheck { configs } => gradcheck(configs),
        Command::Report(c) => report(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> Outcome {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| fail(1, e.to_string()))
}

#[cfg(not(feature = "parallel"))]
fn set_threads(_: usize) -> Outcome {
    Ok(())
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path, &common.overrides)?,
        None => ExperimentConfig::parse("", &common.overrides)?,
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn corpus_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join("data")
}

/// The experiment with its corpus directory resolved: the configured one,
/// or the one `generate` wrote under the output directory.
fn with_corpus(mut cfg: ExperimentConfig) -> Result<ExperimentConfig, Failure> {
    if cfg.data_dir.is_none() {
        let dir = corpus_dir(&cfg);
        if !dir.join(HRL_FILE).exists() {
            return Err(fail(2, format!("no corpus at {}; run `bhasha generate` first", dir.display())));
        }
        cfg.data_dir = Some(dir);
        cfg.validate()?;
    }
    Ok(cfg)
}

fn resolve_seed(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = seed {
        return Ok(s);
    }
    if let Ok(v) = std::env::var("BHASHA_SEED") {
        return v.trim().parse().map_err(|_| fail(1, format!("BHASHA_SEED={v:?} is not an unsigned integer")));
    }
    cfg.seeds.first().copied().ok_or_else(|| fail(1, "no seed given and the experiment lists none"))
}

fn run_dir(cfg: &ExperimentConfig, method: Method, seed: u64) -> PathBuf {
    cfg.out.join("runs").join(method.name()).join(format!("seed-{seed}"))
}

fn refuse_overwrite(path: &Path, force: bool) -> Outcome {
    if path.exists() && !force {
        return Err(fail(1, format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| fail(1, format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(1, e.to_string()))? + "\n";
    std::fs::write(path, text).map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))
}

fn generate(common: &Common) -> Outcome {
    let cfg = load(common)?;
    let dir = cfg.data_dir.clone().unwrap_or_else(|| corpus_dir(&cfg));
    refuse_overwrite(&dir.join(HRL_FILE), common.force)?;
    write_corpus(&cfg.synthetic, &dir)?;
    println!("wrote corpus to {}", dir.display());
    Ok(())
}

fn train(common: &Common, method: Method, seed: Option<u64>) -> Outcome {
    let cfg = with_corpus(load(common)?)?;
    let seed = resolve_seed(&cfg, seed)?;
    let dir = run_dir(&cfg, method, seed);
    refuse_overwrite(&dir.join("metrics.json"), common.force)?;
    let data = cfg.prepare()?;
    let train = cfg.train_config(method, seed);
    let mechanisms = method.apply(&cfg.encoder);
    println!(
        "method {}  seed {seed}  getr {}  hal {}  tet {}",
        method.name(),
        if mechanisms.getr.enabled { format!("{:?}", mechanisms.getr.gnn_kind).to_lowercase() } else { "off".into() },
        if method.hal { "on" } else { "off" },
        if method.tet { "on" } else { "off" },
    );
    let outcome = train_run(&cfg.encoder, &train, &data, None, Exec::default())?;
    create_dir(&dir)?;
    outcome.report.write(&dir)?;
    outcome.timings.write(&dir.join("timings.json"))?;
    save_checkpoint(&outcome.model, &dir.join("checkpoint.json"))?;
    let r = &outcome.report;
    println!("best epoch {}  validation macro-F1 {:.4}  test macro-F1 {:.4}", r.best_epoch, r.validation.macro_f1, r.test.macro_f1);
    println!("wrote {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    method: String,
    seed: u64,
    validation_loss: f64,
    validation: bhasha::training::F1Report,
    test_loss: f64,
    test: bhasha::training::F1Report,
}

fn eval(common: &Common, method: Method, seed: Option<u64>) -> Outcome {
    let cfg = with_corpus(load(common)?)?;
    let seed = resolve_seed(&cfg, seed)?;
    let dir = run_dir(&cfg, method, seed);
    let model = load_checkpoint(&dir.join("checkpoint.json"))?;
    let data = cfg.prepare()?;
    let train = cfg.train_config(method, seed);
    let val = evaluate(&model, &data.lrl.validation, &train, &data, Exec::default())?;
    let test = evaluate(&model, &data.lrl.test, &train, &data, Exec::default())?;
    println!("validation macro-F1 {:.4}  test macro-F1 {:.4}", val.f1.macro_f1, test.f1.macro_f1);
    let report =
        EvalReport { method: method.name(), seed, validation_loss: val.loss, validation: val.f1, test_loss: test.loss, test: test.f1 };
    write_json(&dir.join("eval.json"), &report)
}

fn ablate(common: &Common, sweep: Sweep, seeds: Option<Vec<u64>>, methods: Option<Vec<Method>>) -> Outcome {
    let mut cfg = load(common)?;
    if cfg.data_dir.is_none() && corpus_dir(&cfg).join(HRL_FILE).exists() && sweep != Sweep::SizeRatio {
        cfg = with_corpus(cfg)?;
    }
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    let methods = methods.unwrap_or_else(|| sweep.default_methods());
    let dir = cfg.out.join("ablate");
    refuse_overwrite(&dir.join(format!("{}.csv", sweep.name())), common.force)?;
    let table = run_sweep(&cfg, sweep, &methods, Exec::default())?;
    create_dir(&dir)?;
    write_text(&dir.join(format!("{}.csv", sweep.name())), &table.to_csv())?;
    let md = table.to_markdown();
    write_text(&dir.join(format!("{}.md", sweep.name())), &md)?;
    print!("{md}");
    Ok(())
}

fn gradcheck(configs: usize) -> Outcome {
    let report = certify(configs, None, Exec::default())?;
    print!("{}", report.render());
    if report.passed() {
        println!("all layer kinds within {:e}", report.tolerance);
        Ok(())
    } else {
        Err(fail(4, format!("gradient check exceeded {:e}", report.tolerance)))
    }
}

fn report(common: &Common) -> Outcome {
    let cfg = load(common)?;
    let root = cfg.out.join("runs");
    let mut reports: Vec<MetricsReport> = Vec::new();
    let mut methods: Vec<Method> = cfg.methods.clone();
    if let Ok(entries) = std::fs::read_dir(&root) {
        let mut names: Vec<String> = entries.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect();
        names.sort();
        for n in names {
            if let Ok(m) = n.parse::<Method>() {
                if !methods.contains(&m) {
                    methods.push(m);
                }
            }
        }
    }
    for m in &methods {
        let dir = root.join(m.name());
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        let mut seeds: Vec<PathBuf> = entries.filter_map(|e| e.ok()).map(|e| e.path().join("metrics.json")).filter(|p| p.exists()).collect();
        seeds.sort();
        for p in seeds {
            let text = std::fs::read_to_string(&p).map_err(|e| fail(1, format!("cannot read {}: {e}", p.display())))?;
            let r: MetricsReport = serde_json::from_str(&text).map_err(|e| fail(1, format!("{}: {e}", p.display())))?;
            reports.push(r);
        }
    }
    if reports.is_empty() {
        return Err(fail(3, format!("no finished runs under {}", root.display())));
    }
    let md = method_table(&reports);
    let mut csv = String::from("method,seed,test_macro_f1,validation_macro_f1,best_epoch\n");
    for r in &reports {
        csv.push_str(&format!("{},{},{},{},{}\n", r.method, r.seed, r.test.macro_f1, r.validation.macro_f1, r.best_epoch));
    }
    write_text(&cfg.out.join("report.md"), &md)?;
    write_text(&cfg.out.join("report.csv"), &csv)?;
    print!("{md}");
    Ok(())
}
