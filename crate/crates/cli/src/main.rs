use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use taskent::checkpoint::{self, CheckpointMeta};
use taskent::config::{env_layer, read_layer, Layer, RunConfig};
use taskent::corpus::{load_tsv, ranked_symbols, HigherOrderSource, MarkovSource, TsvSchema, Vocabulary};
use taskent::engine::TaskFamily;
use taskent::entropy::ReportMeta;
use taskent::pipeline::{self, calibration_suite, SuiteScale};
use taskent::report::{self, ReportRow};
use taskent::synth::{self, PairShape, SyntheticTask};
use taskent::{Error, Model64};

/// Exit codes besides success.
mod exit {
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const DIVERGENCE: u8 = 4;
}

#[derive(Parser)]
#[command(name = "taskent", version, about = "Measure task difficulty as model cross-entropy in bits per output symbol")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a symbol list from a corpus file.
    Vocab(VocabArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a corpus file with a checkpoint.
    Eval(EvalArgs),
    /// Smoothed n-gram cross-entropies F_1..F_n of the output side.
    Baseline(BaselineArgs),
    /// Compare two report files row by row.
    Compare(CompareArgs),
    /// Write a synthetic task with known entropy.
    Synth(SynthArgs),
    /// Generate, train, score and baseline the whole calibration suite.
    RunAll(RunAllArgs),
}

/// Settings shared by commands that train or smooth. Precedence is
/// flag, then `TASKENT_*` environment variable, then `--config` file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// `key = value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Global gradient-norm threshold.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Feed inputs back to front; defaults per task family.
    #[arg(long)]
    reverse_input: Option<bool>,
    /// n-gram smoothing constant.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    init_range: Option<f64>,
    /// Hidden rows of the aligned head.
    #[arg(long)]
    head_rows: Option<usize>,
    /// Aligned head activation: tanh or identity.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    max_vocab: Option<usize>,
}

impl ConfigArgs {
    fn flags(&self) -> Layer {
        let mut l = Layer::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                l.insert(k.to_owned(), v);
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("clip", self.clip.map(|v| v.to_string()));
        put("hidden_dim", self.hidden_dim.map(|v| v.to_string()));
        put("embed_dim", self.embed_dim.map(|v| v.to_string()));
        put("reverse_input", self.reverse_input.map(|v| v.to_string()));
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("init_range", self.init_range.map(|v| v.to_string()));
        put("head_rows", self.head_rows.map(|v| v.to_string()));
        put("activation", self.activation.clone());
        put("max_vocab", self.max_vocab.map(|v| v.to_string()));
        l
    }

    fn resolve(&self) -> taskent::Result<RunConfig> {
        let file = match &self.config {
            // a malformed settings file is a settings problem, not a data one
            Some(p) => read_layer(p).map_err(|e| match e {
                Error::Parse { .. } => Error::Config(e.to_string()),
                e => e,
            })?,
            None => Layer::new(),
        };
        let env = env_layer(|k| std::env::var(k).ok());
        RunConfig::resolve(&[file, env, self.flags()])
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Input,
    Output,
    Both,
}

#[derive(Args)]
struct VocabArgs {
    #[arg(long)]
    input: PathBuf,
    /// The file has `input<TAB>output` lines (otherwise one field per line).
    #[arg(long)]
    pairs: bool,
    #[arg(long, value_enum, default_value = "output")]
    side: Side,
    #[arg(long, default_value_t = 50_000)]
    max_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// prediction, aligned, single-label or sequence-label.
    #[arg(long)]
    family: TaskFamily,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Checkpoint path; the vocabulary goes to `<out>.vocab`.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch training log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Add wall-clock seconds to the log. Makes logs differ between runs.
    #[arg(long)]
    log_timing: bool,
    /// Pretrained vectors, one `symbol v1 .. vK` line each.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Task name in the report; defaults to the data file name.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, default_value = "heldout")]
    dataset: String,
    /// Report CSV to append to.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    heldout: PathBuf,
    /// The files have `input<TAB>output` lines; only outputs are modeled.
    #[arg(long)]
    pairs: bool,
    #[arg(long, default_value_t = 3)]
    max_order: usize,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CompareArgs {
    before: PathBuf,
    after: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Markov,
    SecondOrder,
    Copy,
    Tag,
    NoisyShift,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    task: SynthKind,
    /// Output prefix: writes `<out>.train.tsv`, `<out>.heldout.tsv`, `<out>.entropy`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Symbols in a Markov stream.
    #[arg(long, default_value_t = 100_000)]
    length: usize,
    /// Symbols per prediction record.
    #[arg(long, default_value_t = 50)]
    chunk: usize,
    /// Probability of staying in the same state (two-state chain).
    #[arg(long, default_value_t = 0.9)]
    stay: f64,
    /// Alphabet size.
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    tags: usize,
    #[arg(long, default_value_t = 5000)]
    instances: usize,
    #[arg(long, default_value_t = 1000)]
    heldout: usize,
    /// Length of each transduction input.
    #[arg(long, default_value_t = 8)]
    instance_length: usize,
    /// Drop the inputs and write a prediction task over the outputs.
    #[arg(long)]
    unconditional: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Full,
    Smoke,
}

#[derive(Args)]
struct RunAllArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    scale: Scale,
    #[arg(long, default_value_t = 3)]
    max_order: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Vocab(a) => vocab(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::Compare(a) => compare(a),
        Command::Synth(a) => synth_cmd(a),
        Command::RunAll(a) => run_all(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => exit::CONFIG,
        Error::Io { .. } => exit::IO,
        Error::Divergence { .. } => exit::DIVERGENCE,
        _ => exit::FAILURE,
    }
}

fn schema(family: TaskFamily) -> TsvSchema {
    if family.has_input() {
        TsvSchema::Pair
    } else {
        TsvSchema::Single
    }
}

fn pairs_schema(pairs: bool) -> TsvSchema {
    if pairs {
        TsvSchema::Pair
    } else {
        TsvSchema::Single
    }
}

fn file_stem(p: &Path) -> String {
    let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or("").to_owned()
}

fn vocab(a: VocabArgs) -> taskent::Result<()> {
    let records = load_tsv(&a.input, pairs_schema(a.pairs))?;
    let tokens: Vec<&String> = records
        .iter()
        .flat_map(|r| {
            let input = matches!(a.side, Side::Input | Side::Both).then_some(&r.input);
            let output = matches!(a.side, Side::Output | Side::Both).then_some(&r.output);
            input.into_iter().chain(output).flatten()
        })
        .collect();
    let v = Vocabulary::from_content(ranked_symbols(tokens, a.max_size))?;
    v.write(&a.out)?;
    println!("{} symbols written to {}", v.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> taskent::Result<()> {
    let cfg = a.config.resolve()?;
    let records = load_tsv(&a.train, schema(a.family))?;
    let heldout = a.heldout.as_ref().map(|p| load_tsv(p, schema(a.family))).transpose()?;
    let fitted = pipeline::fit::<f64>(a.family, &records, heldout.as_deref(), &cfg, a.embeddings.as_deref())?;
    save(&a.out, &fitted.model, &fitted.space, &cfg)?;
    if let Some(log) = &a.log {
        taskent::corpus::write_atomic(log, fitted.log.to_csv(a.log_timing).as_bytes())?;
    }
    for r in &fitted.log.epochs {
        let heldout = r.heldout_bits_per_symbol.map(|h| format!(", held-out {h:.4}")).unwrap_or_default();
        println!("epoch {}: lr {:.4}, train {:.4}{heldout} bits/symbol", r.epoch, r.learning_rate, r.train_bits_per_symbol);
    }
    Ok(())
}

fn save(path: &Path, model: &Model64, space: &taskent::dataset::TaskSpace, cfg: &RunConfig) -> taskent::Result<()> {
    let meta = CheckpointMeta {
        reverse_input: space.reverse_input,
        seed: cfg.train.seed,
        clip: cfg.train.clip,
        config_hash: cfg.hash(),
    };
    checkpoint::save(path, model, space, &meta)
}

fn append_rows(path: &Path, rows: &[ReportRow]) -> taskent::Result<()> {
    let mut all = if path.exists() { report::read_csv(path)? } else { Vec::new() };
    all.extend_from_slice(rows);
    report::write_csv(path, &all)
}

fn eval(a: EvalArgs) -> taskent::Result<()> {
    let (model, space, meta) = checkpoint::load::<f64>(&a.checkpoint)?;
    let records = load_tsv(&a.data, schema(space.family))?;
    let report = pipeline::evaluate(
        &model,
        &space,
        &records,
        ReportMeta {
            task: a.task.unwrap_or_else(|| file_stem(&a.data)),
            dataset: a.dataset,
            config_hash: meta.config_hash,
            seed: meta.seed,
            clip_threshold: meta.clip,
        },
    )?;
    println!(
        "{} {}: {:.6} bits/symbol over {} symbols",
        report.meta.task, report.meta.dataset, report.bits_per_symbol, report.symbols
    );
    if let Some(path) = &a.report {
        append_rows(path, &[ReportRow::from(&report)])?;
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> taskent::Result<()> {
    let cfg = a.config.resolve()?;
    let train = load_tsv(&a.train, pairs_schema(a.pairs))?;
    let heldout = load_tsv(&a.heldout, pairs_schema(a.pairs))?;
    let task = SyntheticTask {
        name: a.task.unwrap_or_else(|| file_stem(&a.heldout)),
        family: TaskFamily::Prediction,
        train,
        heldout,
        conditional_bits: f64::NAN,
        marginal_bits: f64::NAN,
    };
    let rows = pipeline::baseline_rows(&task, a.max_order, &cfg)?;
    for r in &rows {
        println!("{} {}: {:.6} bits/symbol", r.task, r.family, r.bits_per_symbol);
    }
    if let Some(path) = &a.report {
        append_rows(path, &rows)?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> taskent::Result<()> {
    let before = report::read_csv(&a.before)?;
    let after = report::read_csv(&a.after)?;
    let rows = report::compare(&before, &after);
    println!("task,family,dataset,before,after,delta");
    for c in &rows {
        println!(
            "{},{},{},{:.6},{:.6},{:+.6}",
            c.task, c.family, c.dataset, c.before, c.after, c.delta()
        );
    }
    if rows.is_empty() {
        eprintln!("no rows in common");
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> taskent::Result<()> {
    let shape = PairShape {
        k: a.k,
        length: a.instance_length,
        instances: a.instances,
        heldout: a.heldout,
        seed: a.seed,
    };
    let task = match a.task {
        SynthKind::Markov => {
            if !(0.0..=1.0).contains(&a.stay) {
                return Err(Error::Config(format!("--stay must be a probability, got {}", a.stay)));
            }
            let p = vec![vec![a.stay, 1.0 - a.stay], vec![1.0 - a.stay, a.stay]];
            synth::markov_task(&MarkovSource::new(p, a.seed)?, a.length, a.chunk)?
        }
        SynthKind::SecondOrder => synth::higher_order_task(&HigherOrderSource::random(2, a.k, 4.0, a.seed)?, a.length, a.chunk)?,
        SynthKind::Copy => synth::copy_task(&shape)?,
        SynthKind::Tag => synth::tagging_task(&shape, a.tags)?,
        SynthKind::NoisyShift => synth::noisy_shift_task(&shape)?,
    };
    let task = if a.unconditional { task.unconditional() } else { task };
    task.write(&a.out)?;
    println!(
        "{} ({}): {} train / {} held-out records, H(Y|X) = {:.6}, H(Y) = {:.6} bits/symbol",
        task.name,
        task.family,
        task.train.len(),
        task.heldout.len(),
        task.conditional_bits,
        task.marginal_bits
    );
    Ok(())
}

fn run_all(a: RunAllArgs) -> taskent::Result<()> {
    let cfg = a.config.resolve()?;
    let scale = match a.scale {
        Scale::Full => SuiteScale::FULL,
        Scale::Smoke => SuiteScale::SMOKE,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for task in calibration_suite(scale, cfg.train.seed)? {
        let prefix = a.out.join(&task.name);
        task.write(&prefix)?;
        let fitted = pipeline::fit::<f64>(task.family, &task.train, None, &cfg, None)?;
        let ckpt = a.out.join(format!("{}.ckpt", task.name));
        save(&ckpt, &fitted.model, &fitted.space, &cfg)?;
        taskent::corpus::write_atomic(&a.out.join(format!("{}.log.csv", task.name)), fitted.log.to_csv(false).as_bytes())?;
        let meta = |dataset: &str| ReportMeta {
            task: task.name.clone(),
            dataset: dataset.into(),
            config_hash: cfg.hash(),
            seed: cfg.train.seed,
            clip_threshold: cfg.train.clip,
        };
        let heldout = pipeline::evaluate(&fitted.model, &fitted.space, &task.heldout, meta("heldout"))?;
        println!(
            "{:<28} model {:.4}  true {:.4} bits/symbol",
            task.name, heldout.bits_per_symbol, task.conditional_bits
        );
        rows.push(ReportRow::from(&pipeline::evaluate(&fitted.model, &fitted.space, &task.train, meta("train"))?));
        rows.push(ReportRow::from(&heldout));
        rows.extend(pipeline::baseline_rows(&task, a.max_order, &cfg)?);
    }
    report::write_csv(&a.out.join("report.csv"), &rows)?;
    println!("report written to {}", a.out.join("report.csv").display());
    Ok(())
}
