//! Subcommands. Every command is deterministic given its flags.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nrt_core::corpus::{generate, TaskSpec, Vocabulary};
use nrt_core::metrics::{token_prob_analysis, TraceMode};
use nrt_core::oracle::{self, EnumerationSpec};
use nrt_core::{Architecture, Dataset, PolicyParameters, QAPair, Scheme};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset_io;
use crate::error::{exit, CliError, CliResult};
use crate::experiments::Protocol;
use crate::metrics_io;
use crate::run::{self, Start};
use crate::sweep;
use crate::verify;

#[derive(Debug, Parser)]
#[command(name = "nrt", version, about = "Latent-trace RL with intrinsic answer-likelihood rewards")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train one run and write its artifacts.
    Train(TrainArgs),
    /// Run the property suite.
    Verify,
    /// Compare the Monte Carlo estimator against the enumerated gradient.
    OracleCompare(OracleArgs),
    /// Train every (scheme, seed) pair and summarize.
    Sweep(SweepArgs),
    /// Entropy-bucketed answer-token probability ratios for a checkpoint.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Skewed,
    Lookup,
    Modadd,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub alphabet: Option<usize>,
    #[arg(long)]
    pub question_len: Option<usize>,
    /// Easy answer tokens (skewed).
    #[arg(long)]
    pub easy: Option<usize>,
    #[arg(long)]
    pub modulus: Option<usize>,
    /// Chain hops (lookup).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Config overrides shared by `train` and `sweep`; flags beat the file.
#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a trainer checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 200_000)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub alphabet: usize,
    #[arg(long, default_value_t = 2)]
    pub max_len: usize,
    /// Context order of the tabular policy.
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value = "gm")]
    pub scheme: Scheme,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Skewed,
    Lookup,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated scheme names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub schemes: Vec<Scheme>,
    /// Seeds 0..N.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Built-in protocol supplying the base config and data when
    /// `--config` / `--data` are absent.
    #[arg(long, value_enum, default_value = "skewed")]
    pub protocol: ProtocolArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trained policy (any checkpoint file).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference policy evaluated with empty traces.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Sampled traces per held-out pair; 0 scores the trained policy with
    /// empty traces.
    #[arg(long, default_value_t = 8)]
    pub traces: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Verify => verify_cmd(),
        Command::OracleCompare(a) => oracle_compare(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::Analyze(a) => analyze(&a),
    };
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn task_spec(a: &GenDataArgs) -> TaskSpec {
    match a.task {
        TaskArg::Skewed => TaskSpec::skewed(
            a.alphabet.unwrap_or(5),
            a.question_len.unwrap_or(2),
            a.easy.unwrap_or(2),
            a.modulus.unwrap_or(5),
            a.seed,
        ),
        TaskArg::Lookup => TaskSpec::lookup(a.alphabet.unwrap_or(4), a.depth.unwrap_or(2), a.seed),
        TaskArg::Modadd => TaskSpec::modular_addition(
            a.alphabet.unwrap_or(5),
            a.question_len.unwrap_or(2),
            a.modulus.unwrap_or(5),
            a.seed,
        ),
    }
}

fn usage(e: nrt_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let (vocab, data) = generate(&task_spec(a), a.n).map_err(usage)?;
    match &a.out {
        Some(path) => {
            dataset_io::write_dataset(path, &vocab, &data)?;
            println!("{} pairs", data.len());
        }
        None => {
            print!("{}", dataset_io::render(&vocab, &data));
            eprintln!("{} pairs", data.len());
        }
    }
    Ok(())
}

fn apply_overrides(cfg: &mut RunConfig, o: &Overrides) -> CliResult<()> {
    for kv in &o.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(steps) = o.steps {
        cfg.training.steps = steps;
    }
    if let Some(lr) = o.lr {
        cfg.training.lr = lr;
    }
    Ok(())
}

fn load_config(path: Option<&Path>, default: RunConfig) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(default),
    }
}

fn train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref(), RunConfig::default())?;
    apply_overrides(&mut cfg, &a.overrides)?;
    if let Some(s) = a.scheme {
        cfg.training.scheme = s;
    }
    if let Some(s) = a.seed {
        cfg.training.seed = s;
    }
    cfg.validate()?;
    let (vocab, data) = dataset_io::read_dataset(&a.data)?;
    let start = match &a.resume {
        Some(p) => Start::Resume(checkpoint::load_record(p)?),
        None => Start::Fresh,
    };
    let outcome = run::execute(&cfg, &vocab, &data, start, Some(&a.out), &a.data.display().to_string())?;
    println!(
        "steps {} final_trace_entropy {:.6} final_trace_len {:.4} top_bucket_ratio {:.4} eval_trace_logprob {:.6}",
        cfg.training.steps,
        outcome.final_entropy(),
        outcome.final_len(),
        outcome.top_bucket_ratio(),
        outcome.lift.trained_traces
    );
    Ok(())
}

fn verify_cmd() -> CliResult<()> {
    let results = verify::run_all();
    let mut failed = 0;
    for r in &results {
        println!("{} {} ({})", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(CliError::Property(format!("{failed} of {} properties failed", results.len())));
    }
    Ok(())
}

/// The enumeration fixture for `oracle-compare`: question `0 (a-1)`,
/// answer `1 0`, tabular policy drawn from `seed`.
pub fn oracle_fixture(a: &OracleArgs) -> CliResult<(EnumerationSpec, PolicyParameters)> {
    let vocab = Vocabulary::new(a.alphabet).map_err(usage)?;
    let events = oracle::event_count(a.alphabet, a.max_len);
    if events > oracle::ENUMERATION_LIMIT {
        return Err(CliError::Usage(format!(
            "{events} trace events exceed the enumeration limit {}",
            oracle::ENUMERATION_LIMIT
        )));
    }
    let sym = |i: usize| vocab.symbol(i % a.alphabet);
    let pair = QAPair::new(&vocab, vec![sym(0), sym(a.alphabet - 1)], vec![sym(1), sym(0)]).map_err(usage)?;
    let spec = EnumerationSpec::new(&vocab, pair, a.scheme, a.max_len).map_err(usage)?;
    let arch = Architecture::Tabular { vocab: vocab.size(), order: a.order };
    arch.validate().map_err(usage)?;
    Ok((spec, PolicyParameters::init_uniform(arch, 1.0, a.seed)))
}

fn oracle_compare(a: &OracleArgs) -> CliResult<()> {
    let (spec, policy) = oracle_fixture(a)?;
    let c = oracle::compare_estimator(&spec, &policy, a.n, a.seed)?;
    print!("{}", c.report_text());
    println!("max |z| {:.4}", c.max_abs_z);
    if !c.passes() {
        return Err(CliError::Property(format!("estimator comparison failed: max |z| {:.4}", c.max_abs_z)));
    }
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> CliResult<()> {
    let protocol = match a.protocol {
        ProtocolArg::Skewed => Protocol::skewed_collapse(),
        ProtocolArg::Lookup => Protocol::lookup_lift(),
    };
    let mut cfg = load_config(a.config.as_deref(), protocol.run.clone())?;
    apply_overrides(&mut cfg, &a.overrides)?;
    cfg.validate()?;
    let (vocab, data, label): (Vocabulary, Dataset, String) = match &a.data {
        Some(p) => {
            let (v, d) = dataset_io::read_dataset(p)?;
            (v, d, p.display().to_string())
        }
        None => {
            let (v, d) = protocol.dataset()?;
            let path = a.out.join("data.txt");
            std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
            dataset_io::write_dataset(&path, &v, &d)?;
            (v, d, path.display().to_string())
        }
    };
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let rows = sweep::sweep(&cfg, &vocab, &data, &a.schemes, &seeds, Some(&a.out), &label, sweep::worker_threads())?;
    for (name, values) in sweep::comparison_rows(&a.schemes, &rows) {
        let cols: Vec<String> = a.schemes.iter().zip(&values).map(|(s, v)| format!("{s}={v:.6}")).collect();
        println!("{name}: {}", cols.join(" "));
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} runs, {failed} failed", rows.len());
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let trained = checkpoint::load_policy(&a.checkpoint)?;
    let reference = checkpoint::load_policy(&a.reference)?;
    let (vocab, data) = dataset_io::read_dataset(&a.data)?;
    for p in [&trained, &reference] {
        if p.vocab_size() != vocab.size() {
            return Err(CliError::Usage("checkpoint vocabulary does not match the dataset".into()));
        }
    }
    let mode = if a.traces == 0 {
        TraceMode::Empty
    } else {
        TraceMode::Sampled { k: a.traces, max_len: a.max_len, seed: a.seed }
    };
    let analysis = token_prob_analysis(&trained, &reference, data.eval(), mode).map_err(usage)?;
    metrics_io::write_analysis(&a.out, &analysis)?;
    let edges: Vec<String> = analysis.edges.iter().map(|e| format!("{e:.4}")).collect();
    println!("tokens {} median_baseline_entropy {:.4}", analysis.records.len(), analysis.median_baseline_entropy);
    println!("bucket_edges {}", edges.join(" "));
    for (b, (n, r)) in analysis.bucket_counts.iter().zip(&analysis.bucket_mean_ratio).enumerate() {
        println!("bucket {b} count {n} mean_ratio {r:.4}");
    }
    Ok(())
}
