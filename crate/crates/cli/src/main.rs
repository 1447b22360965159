//! `ieqa`: data generation, training, definition search, evaluation and
//! loss inspection for the digit scorer.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 degenerate
//! result, 4 optimizer endpoint failure, 1 anything else.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::json;

use ieqa_core::defvalue::{v_d_single, LabeledSample};
use ieqa_core::fdmpo::{choose_subset, run_fdmpo, write_trajectory_csv, HistoryWriter, ScorerEvaluator};
use ieqa_core::metrics::{final_score, Correlation};
use ieqa_core::optimizer::{default_definition, default_pool, HttpEndpoint, OptimizerEndpoint};
use ieqa_core::scorer::{embed_prompt, Checkpoint, DecodeMode, ScorerParams};
use ieqa_core::synth::{generate, labeled, Dataset, GeneratorSpec, Split};
use ieqa_core::tdrl::{checked_distributions, l_score_grad_from_dists, l_tdrl};
use ieqa_core::trainer::{ensemble_average, predict, train_with_progress, LossKind, TrainConfig, TrainData};
use ieqa_core::{codec, Dimension, Error, Result, ScoreRange};

#[derive(Debug, Parser)]
#[command(name = "ieqa", version, about = "Digit-level image-editing quality scorer")]
struct Cli {
    /// Flat `key = value` file of flag defaults; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic train / val-in / val-out splits.
    GenData(GenDataArgs),
    /// Train a scorer for one dimension.
    Train(TrainArgs),
    /// Search for a better metric definition.
    Fdmpo(FdmpoArgs),
    /// Correlation report for three dimension checkpoints.
    Eval(EvalArgs),
    /// Loss breakdown, gradient and definition value for given distributions.
    InspectLoss(InspectArgs),
}

#[derive(Debug, Args)]
struct RangeArgs {
    #[arg(long, default_value_t = 1.0)]
    score_min: f64,
    #[arg(long, default_value_t = 5.0)]
    score_max: f64,
}

impl RangeArgs {
    fn range(&self) -> Result<ScoreRange> {
        ScoreRange::new(self.score_min, self.score_max)
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Existing directory that receives the three JSON Lines files.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    val_in: usize,
    #[arg(long, default_value_t = 500)]
    val_out: usize,
    /// Label noise standard deviation.
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    /// Out-of-distribution feature shift.
    #[arg(long, default_value_t = 0.5)]
    shift: f64,
    #[arg(long, default_value_t = 16)]
    features: usize,
    #[command(flatten)]
    range: RangeArgs,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = ieqa_core::trainer::DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = ieqa_core::trainer::DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = ieqa_core::trainer::DEFAULT_WARMUP_RATIO)]
    warmup_ratio: f64,
    #[arg(long, default_value_t = ieqa_core::scorer::DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    dimension: Dimension,
    #[arg(long, default_value = "tdrl")]
    loss: LossKind,
    /// Also apply cross-entropy to the digit tokens under the tdrl loss.
    #[arg(long)]
    ce_includes_digits: bool,
    #[arg(long, default_value_t = ieqa_core::trainer::DEFAULT_EPOCHS)]
    epochs: usize,
    #[command(flatten)]
    model: ModelArgs,
    /// Metric definition text used as the prompt.
    #[arg(long, conflicts_with = "definition_file")]
    definition: Option<String>,
    #[arg(long)]
    definition_file: Option<PathBuf>,
    /// Start from these weights instead of a fresh initialization.
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training report (JSON) output path.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "greedy")]
    decode: DecodeMode,
    #[command(flatten)]
    range: RangeArgs,
}

#[derive(Debug, Args)]
struct FdmpoArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    dimension: Dimension,
    /// Feedback scorer; a warmup scorer is trained when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    warmup_epochs: usize,
    /// Where to save the warmup scorer.
    #[arg(long)]
    warmup_out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, conflicts_with = "initial_definition_file")]
    initial_definition: Option<String>,
    #[arg(long)]
    initial_definition_file: Option<PathBuf>,
    /// `mock` walks a candidate pool; `http` calls a chat-completion endpoint.
    #[arg(long, default_value = "mock", value_parser = ["mock", "http"])]
    optimizer: String,
    /// Candidate pool for the mock optimizer, one definition per line.
    #[arg(long)]
    pool_file: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    budget: usize,
    /// Samples per definition-value evaluation.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long)]
    history: PathBuf,
    /// Writes the best definition text here.
    #[arg(long)]
    best: Option<PathBuf>,
    /// Writes the `iter,v_d` trajectory CSV here.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long, default_value = "")]
    base_url: String,
    /// Model identifier sent to the http endpoint.
    #[arg(long = "model", default_value = "gpt-4o")]
    model_name: String,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 60.0)]
    timeout_secs: f64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, default_value_t = 500)]
    retry_backoff_ms: u64,
    #[arg(long, default_value_t = 8000)]
    retry_backoff_max_ms: u64,
    #[command(flatten)]
    range: RangeArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    visual: PathBuf,
    #[arg(long)]
    editing: PathBuf,
    #[arg(long)]
    preservation: PathBuf,
    /// Second visual checkpoint; predictions of the two are averaged.
    #[arg(long)]
    ensemble_visual: Option<PathBuf>,
    #[arg(long)]
    ensemble_editing: Option<PathBuf>,
    #[arg(long)]
    ensemble_preservation: Option<PathBuf>,
    #[arg(long, default_value = "greedy")]
    decode: DecodeMode,
    /// Report (JSON) output path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Three rows of ten digit probabilities as JSON.
    #[arg(long, conflicts_with = "dists_file", required_unless_present = "dists_file")]
    dists: Option<String>,
    #[arg(long)]
    dists_file: Option<PathBuf>,
    /// Ground-truth score, e.g. 4.20.
    #[arg(long)]
    score: String,
    /// Log-probabilities of the four pattern tokens as JSON (default all 0).
    #[arg(long)]
    pattern_logprobs: Option<String>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| config_err(format!("cannot load checkpoint {}: {e}", path.display())))
}

fn read_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(config_err(format!("data directory {} does not exist", dir.display())));
    }
    Dataset::read_dir(dir).map_err(|e| config_err(format!("cannot read dataset in {}: {e}", dir.display())))
}

fn train_data(ds: &Dataset, dim: Dimension, range: ScoreRange) -> Result<TrainData> {
    Ok(TrainData {
        train: labeled(&ds.train, dim, range)?,
        val_in: labeled(&ds.val_in, dim, range)?,
        val_out: labeled(&ds.val_out, dim, range)?,
    })
}

fn definition_from(text: &Option<String>, file: &Option<PathBuf>, dim: Dimension) -> Result<String> {
    let def = match (text, file) {
        (Some(t), _) => t.clone(),
        (None, Some(f)) => read_text(f)?,
        (None, None) => default_definition(dim).to_string(),
    };
    let def = def.trim().to_string();
    if def.is_empty() {
        return Err(config_err("metric definition is empty"));
    }
    Ok(def)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| config_err(format!("cannot write {}: {e}", path.display())))
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    if !a.out_dir.is_dir() {
        return Err(config_err(format!(
            "output directory {} does not exist",
            a.out_dir.display()
        )));
    }
    let spec = GeneratorSpec {
        seed: a.seed,
        n_train: a.train,
        n_val_in: a.val_in,
        n_val_out: a.val_out,
        noise_std: a.noise,
        shift: a.shift,
        feature_dim: a.features,
        range: a.range.range()?,
    };
    let ds = generate(&spec)?;
    ds.write_dir(&a.out_dir)?;
    println!(
        "{}",
        json!({
            "out_dir": a.out_dir,
            "train": ds.train.len(),
            "val_in": ds.val_in.len(),
            "val_out": ds.val_out.len(),
        })
    );
    Ok(())
}

fn train_config(m: &ModelArgs, loss: LossKind, epochs: usize, dim: Dimension, range: ScoreRange) -> TrainConfig {
    TrainConfig {
        loss,
        epochs,
        batch_size: m.batch_size,
        learning_rate: m.lr,
        warmup_ratio: m.warmup_ratio,
        seed: m.seed,
        dimension: dim,
        hidden: m.hidden,
        range,
        ..TrainConfig::default()
    }
}

fn log_epoch(e: &ieqa_core::trainer::EpochStats) {
    eprintln!(
        "epoch {:>3}  l_tdrl {:.6}  l_ce {:.6}  l_score {:.6}  lr {:.3e}",
        e.epoch, e.l_tdrl, e.l_ce, e.l_score, e.learning_rate
    );
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let range = a.range.range()?;
    let data = train_data(&read_dataset(&a.data_dir)?, a.dimension, range)?;
    let definition = definition_from(&a.definition, &a.definition_file, a.dimension)?;
    let mut cfg = train_config(&a.model, a.loss, a.epochs, a.dimension, range);
    cfg.ce_includes_digits = a.ce_includes_digits;
    cfg.decode = a.decode;
    let init = match &a.init_checkpoint {
        Some(p) => Some(load_checkpoint(p)?.params()?),
        None => None,
    };
    let (params, report) = train_with_progress(&data, &cfg, &definition, init, log_epoch)?;
    Checkpoint::new(&params, Some(a.dimension), Some(definition), range).save(&a.out)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_fdmpo(a: &FdmpoArgs) -> Result<()> {
    let range = a.range.range()?;
    let endpoint = match a.optimizer.as_str() {
        "http" => OptimizerEndpoint::Http(HttpEndpoint {
            base_url: a.base_url.clone(),
            model: a.model_name.clone(),
            temperature: a.temperature,
            timeout: Duration::try_from_secs_f64(a.timeout_secs)
                .map_err(|_| config_err(format!("invalid timeout {}", a.timeout_secs)))?,
            max_retries: a.max_retries,
            backoff_base: Duration::from_millis(a.retry_backoff_ms),
            backoff_max: Duration::from_millis(a.retry_backoff_max_ms),
        }),
        _ => {
            let pool = match &a.pool_file {
                Some(p) => read_text(p)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
                None => default_pool(a.dimension),
            };
            OptimizerEndpoint::Mock { pool }
        }
    };
    // credentials and URL are checked before any training or network traffic
    endpoint.preflight()?;
    let initial = definition_from(&a.initial_definition, &a.initial_definition_file, a.dimension)?;
    let data = train_data(&read_dataset(&a.data_dir)?, a.dimension, range)?;

    let params: ScorerParams = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?.params()?,
        None => {
            eprintln!("training warmup scorer for {} epochs", a.warmup_epochs);
            let cfg = train_config(&a.model, LossKind::Tdrl, a.warmup_epochs, a.dimension, range);
            let (p, _) = train_with_progress(&data, &cfg, &initial, None, log_epoch)?;
            if let Some(out) = &a.warmup_out {
                Checkpoint::new(&p, Some(a.dimension), Some(initial.clone()), range).save(out)?;
            }
            p
        }
    };
    let samples: Vec<LabeledSample> = choose_subset(&data.train, a.samples, a.model.seed);
    if samples.is_empty() {
        return Err(config_err("no samples to evaluate definitions on"));
    }
    let mut evaluator = ScorerEvaluator {
        params: &params,
        samples,
    };
    let mut proposer = endpoint.build(a.dimension, a.model.seed)?;
    let mut writer = HistoryWriter::create(&a.history)
        .map_err(|e| config_err(format!("cannot create history {}: {e}", a.history.display())))?;
    let mut clock = chrono::Utc::now;
    let outcome = run_fdmpo(
        &initial,
        &mut evaluator,
        proposer.as_mut(),
        a.budget,
        Some(&mut writer),
        &mut clock,
    )?;
    for r in &outcome.history {
        eprintln!("trial {:>3}  v_d {:.6}  {}", r.iter, r.v_d, r.definition);
    }
    if let Some(p) = &a.best {
        fs::write(p, format!("{}\n", outcome.best.definition))?;
    }
    if let Some(p) = &a.trajectory {
        write_trajectory_csv(p, &outcome.history)?;
    }
    println!("{}", serde_json::to_string(&outcome.best)?);
    Ok(())
}

struct DimModel {
    params: ScorerParams,
    prompt: ieqa_core::scorer::PromptEmbedding,
    range: ScoreRange,
}

fn dim_model(path: &Path, dim: Dimension) -> Result<DimModel> {
    let ck = load_checkpoint(path)?;
    if let Some(d) = ck.dimension {
        if d != dim {
            eprintln!("warning: {} was trained for {d}, used for {dim}", path.display());
        }
    }
    let params = ck.params()?;
    let def = ck
        .definition
        .clone()
        .unwrap_or_else(|| default_definition(dim).to_string());
    Ok(DimModel {
        prompt: embed_prompt(&def, params.dims.embed_dim),
        range: ck.range()?,
        params,
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ds = read_dataset(&a.data_dir)?;
    let mut cells = BTreeMap::new();
    for (dim, main, second) in [
        (Dimension::Visual, &a.visual, &a.ensemble_visual),
        (Dimension::Editing, &a.editing, &a.ensemble_editing),
        (Dimension::Preservation, &a.preservation, &a.ensemble_preservation),
    ] {
        let first = dim_model(main, dim)?;
        let other = second.as_deref().map(|p| dim_model(p, dim)).transpose()?;
        for (split, records) in [(Split::In, &ds.val_in), (Split::Out, &ds.val_out)] {
            let samples = labeled(records, dim, first.range)?;
            let run = |m: &DimModel| predict(&m.params, &m.prompt, &samples, a.decode, m.range, dim);
            let mut pred = run(&first)?;
            if let Some(m) = &other {
                pred = ensemble_average(&pred, &run(m)?)?;
            }
            let truth: Vec<f64> = samples.iter().map(|s| s.target.value()).collect();
            cells.insert((dim, split), Correlation::compute(&pred, &truth)?);
        }
    }
    let report = final_score(&cells)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    print!("{}", report.to_table());
    if report.has_undefined() {
        return Err(Error::Degenerate(
            "constant predictions or labels left a correlation undefined".into(),
        ));
    }
    Ok(())
}

fn cmd_inspect_loss(a: &InspectArgs) -> Result<()> {
    let text = match (&a.dists, &a.dists_file) {
        (Some(t), _) => t.clone(),
        (None, Some(f)) => read_text(f)?,
        (None, None) => return Err(config_err("either --dists or --dists-file is required")),
    };
    let probs: [[f64; 10]; 3] = serde_json::from_str(&text)
        .map_err(|e| config_err(format!("distributions must be 3 rows of 10 numbers: {e}")))?;
    let g = codec::parse_score(&a.score)?;
    let pattern: Vec<f64> = match &a.pattern_logprobs {
        Some(t) => serde_json::from_str(t).map_err(|e| config_err(format!("pattern log-probabilities: {e}")))?,
        None => vec![0.0; 4],
    };
    if pattern.len() != 4 {
        return Err(config_err(format!(
            "expected 4 pattern log-probabilities, got {}",
            pattern.len()
        )));
    }
    let dists = checked_distributions(&probs)?;
    let breakdown = l_tdrl(&pattern, &dists, g)?;
    let grad = l_score_grad_from_dists(&dists, g);
    let v_d = v_d_single([0, 1, 2].map(|t| dists[t].prob(g.digit(t))))?;
    let out = json!({
        "score": g.to_string(),
        "breakdown": breakdown,
        "l_score_grad": grad,
        "v_d": v_d,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Degenerate(_) => 3,
        Error::Endpoint { .. } | Error::Protocol(_) => 4,
        Error::NonFinite { .. } => 1,
        Error::Parse { .. } | Error::Shape(_) | Error::Domain(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) => {
            2
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(config_err("--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_err(format!("cannot size the thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    eprintln!("note: built without the parallel feature; --threads {n} has no effect");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Fdmpo(a) => cmd_fdmpo(a),
        Command::Eval(a) => cmd_eval(a),
        Command::InspectLoss(a) => cmd_inspect_loss(a),
    }
}

fn main() -> ExitCode {
    let cmd = Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true));
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::splice(&cmd, args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let matches = match cmd.clone().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    eprint!("{}", config::echo(&cmd, &matches));
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
