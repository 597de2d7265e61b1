use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use prefcurate::dataset::{
    gen_synthetic, gen_synthetic_with_test, read_corpus, read_labels, read_oracle, write_corpus, write_labels,
    write_oracle,
};
use prefcurate::engine::{denoise_flip, run_baseline, run_simulated, NoopObserver, RunInputs, RunKind, RunReport};
use prefcurate::report::{compare_roi, content_hash, cost_estimate, export_report, metrics_csv, CostParams, Solution};
use prefcurate::{Error, RunConfig, SynthParams};
use prefcurate_service::{CreateRun, Registry};

const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "prefcurate", version, about = "Targeted curation of pairwise preference labels")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with oracle labels.
    Gen(GenArgs),
    /// Run the curation loop with simulated annotators.
    Run(RunArgs),
    /// Run a baseline on the same inputs.
    Baseline(BaselineArgs),
    /// Serve the HTTP API for interactive annotation.
    Serve(ServeArgs),
    /// Flip labels that a model trained on them scores negatively.
    Denoise(DenoiseArgs),
    /// Print the annotation cost comparison.
    Cost(CostArgs),
    /// Re-export a finished run.
    Report(ReportArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    nuance: usize,
    #[arg(long, default_value_t = 0.25)]
    hard_frac: f64,
    #[arg(long, default_value_t = 1.0)]
    nuance_weight: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a disjoint test corpus of this size.
    #[arg(long, default_value_t = 0)]
    test_n: usize,
    #[arg(long, env = "PREFCURATE_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct InputArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    oracle: PathBuf,
    /// Held-out test corpus; otherwise a hashed split of the corpus is used.
    #[arg(long)]
    test: Option<PathBuf>,
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_fraction: Option<f64>,
    #[arg(long)]
    shard_fraction: Option<f64>,
    #[arg(long, env = "PREFCURATE_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct RunArgs {
    #[command(flatten)]
    inputs: InputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Ai,
    Random,
    Human,
}

#[derive(clap::Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    kind: BaselineKind,
    /// Report of a targeted run whose per-iteration spend the random baseline matches.
    #[arg(long)]
    matched: Option<PathBuf>,
    #[command(flatten)]
    inputs: InputArgs,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Where run logs and artifacts live.
    #[arg(long, default_value = "runs")]
    data_dir: PathBuf,
    /// Start a run on this corpus at launch.
    #[arg(long, requires = "oracle")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    oracle: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct DenoiseArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSONL of `{"id", "label"}`.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output labels file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(clap::Args)]
struct CostArgs {
    /// Cost parameter files, one targeted row each; defaults to the GPT-4o and GPT-4o mini presets.
    #[arg(long)]
    params: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Directory written by `run` or `baseline`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Targeted report compared against a random baseline report in `--run`.
    #[arg(long)]
    against: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Core(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => EXIT_VALIDATION,
            CliError::Core(_) | CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

impl InputArgs {
    fn config(&self) -> CliResult<RunConfig> {
        let mut config = match &self.config {
            Some(path) => read_json::<RunConfig>(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.curation.seed = seed;
            config.llm.seed = seed;
            config.human.seed = seed;
        }
        let c = &mut config.curation;
        if let Some(it) = self.iterations {
            c.iterations = it;
        }
        if let Some(b) = self.batch_fraction {
            c.batch_fraction = b;
        }
        if let Some(s) = self.shard_fraction {
            c.shard_fraction = s;
        }
        config.validate()?;
        Ok(config)
    }

    fn load(&self, config: &RunConfig) -> CliResult<RunInputs> {
        let corpus = read_corpus(&self.corpus)?;
        let oracle = Arc::new(read_oracle(&self.oracle)?);
        let test = self.test.as_ref().map(read_corpus).transpose()?;
        Ok(RunInputs::new(corpus, test, oracle, config.curation.test_fraction)?)
    }
}

fn print_summary(report: &RunReport, out: &Path) {
    let s = &report.summary;
    println!("kind: {:?}  status: {:?}", report.kind, report.status);
    for r in &report.records {
        println!(
            "  iteration {}: test accuracy {:.4}  shard labels {:.4}  spend {}",
            r.iteration, r.test_accuracy, r.shard_label_accuracy, r.annotation_spend
        );
    }
    println!(
        "test accuracy {:.4}  annotation {} ({:.2}% of corpus)",
        s.test_accuracy(),
        s.annotation_spend,
        s.annotation_percent
    );
    println!("report: {}", out.join("report.json").display());
    println!("content hash: {}", report.content_hash);
}

fn cmd_gen(args: GenArgs) -> CliResult {
    let params = SynthParams {
        nuance_weight: args.nuance_weight,
        ..SynthParams::new(args.n, args.d, args.nuance, args.hard_frac, args.seed)
    };
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let corpus_path = args.out.join("corpus.jsonl");
    let oracle_path = args.out.join("oracle.jsonl");
    if args.test_n > 0 {
        let (train, test, oracle) = gen_synthetic_with_test(&params, args.test_n)?;
        write_corpus(&train, &corpus_path)?;
        write_corpus(&test, args.out.join("test.jsonl"))?;
        write_oracle(&oracle, &oracle_path)?;
    } else {
        let (corpus, oracle) = gen_synthetic(&params)?;
        write_corpus(&corpus, &corpus_path)?;
        write_oracle(&oracle, &oracle_path)?;
    }
    println!("wrote {} pairs to {}", args.n, args.out.display());
    Ok(())
}

fn cmd_run(args: RunArgs) -> CliResult {
    let config = args.inputs.config()?;
    let inputs = args.inputs.load(&config)?;
    let outcome = run_simulated(&inputs, &config, &NoopObserver)?;
    export_report(&outcome, &args.inputs.out)?;
    print_summary(&outcome.report, &args.inputs.out);
    Ok(())
}

fn cmd_baseline(args: BaselineArgs) -> CliResult {
    let config = args.inputs.config()?;
    let inputs = args.inputs.load(&config)?;
    let kind = match args.kind {
        BaselineKind::Ai => RunKind::AiOnly,
        BaselineKind::Random => RunKind::Random,
        BaselineKind::Human => RunKind::FullHuman,
    };
    let matched = match &args.matched {
        Some(path) => {
            let report: RunReport = read_json(&path.join("report.json")).or_else(|_| read_json(path))?;
            Some(report.records.iter().map(|r| r.annotation_spend).collect::<Vec<_>>())
        }
        None => None,
    };
    if matched.is_some() && !matches!(args.kind, BaselineKind::Random) {
        return Err(CliError::Usage("--matched only applies to --kind random".into()));
    }
    let outcome = run_baseline(kind, &inputs, &config, matched.as_deref())?;
    export_report(&outcome, &args.inputs.out)?;
    print_summary(&outcome.report, &args.inputs.out);
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> CliResult {
    let registry = Registry::open(&args.data_dir)?;
    if let (Some(corpus), Some(oracle)) = (&args.corpus, &args.oracle) {
        let config = match &args.config {
            Some(path) => read_json::<serde_json::Value>(path)?,
            None => serde_json::Value::Null,
        };
        let request = CreateRun {
            corpus: corpus.clone(),
            oracle: oracle.clone(),
            test: args.test.clone(),
            config,
            queue_timeout_secs: None,
        };
        let entry = registry.create(request).map_err(|e| {
            if e.status.is_client_error() {
                CliError::Validation(e.body.message)
            } else {
                CliError::Runtime(e.body.message)
            }
        })?;
        println!("started {}", entry.id);
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("listening on http://{}", args.addr);
    runtime
        .block_on(prefcurate_service::serve(args.addr, registry, async {
            let _ = tokio::signal::ctrl_c().await;
        }))
        .map_err(|e| CliError::Runtime(format!("server: {e}")))
}

fn cmd_denoise(args: DenoiseArgs) -> CliResult {
    let corpus = read_corpus(&args.corpus)?;
    let labels = read_labels(&args.labels)?;
    let config = match &args.config {
        Some(path) => read_json::<RunConfig>(path)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    let result = denoise_flip(&corpus, &labels, &config.curation.train)?;
    write_labels(&result.labels, &args.out)?;
    println!("flipped {} of {} labels -> {}", result.flip_count(), labels.len(), args.out.display());
    Ok(())
}

fn mini_preset() -> CostParams {
    CostParams {
        llm_input_rate: 0.15,
        llm_output_rate: 0.60,
        ..CostParams::default()
    }
}

fn cmd_cost(args: CostArgs) -> CliResult {
    let rows: Vec<(String, CostParams)> = if args.params.is_empty() {
        vec![("gpt-4o".into(), CostParams::default()), ("gpt-4o-mini".into(), mini_preset())]
    } else {
        args.params
            .iter()
            .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), read_json(p)?)))
            .collect::<CliResult<_>>()?
    };
    let mut tables = vec![("full-human".to_string(), cost_estimate(&rows[0].1, Solution::FullHuman)?.rounded())];
    for (name, params) in &rows {
        tables.push((format!("targeted ({name})"), cost_estimate(params, Solution::Targeted)?.rounded()));
    }
    match args.format {
        Format::Json => {
            let v: Vec<_> = tables
                .iter()
                .map(|(name, t)| serde_json::json!({"name": name, "table": t}))
                .collect();
            println!("{}", serde_json::to_string_pretty(&v).map_err(Error::from)?);
        }
        Format::Csv => {
            println!("solution,human,llm,compute,total");
            for (name, t) in &tables {
                println!("{name},{:.1},{:.1},{:.1},{:.1}", t.human, t.llm, t.compute, t.total);
            }
        }
        Format::Text => {
            println!("{:<24}{:>12}{:>12}{:>12}{:>12}", "solution", "human", "llm", "compute", "total");
            for (name, t) in &tables {
                println!(
                    "{:<24}{:>12.1}{:>12.1}{:>12.1}{:>12.1}",
                    name, t.human, t.llm, t.compute, t.total
                );
            }
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CliResult {
    let report: RunReport = read_json(&args.run.join("report.json"))?;
    let recomputed = content_hash(&report);
    if recomputed != report.content_hash {
        return Err(CliError::Runtime(format!(
            "content hash mismatch: stored {} computed {recomputed}",
            report.content_hash
        )));
    }
    match args.format {
        Format::Csv => print!("{}", metrics_csv(&report)),
        Format::Json | Format::Text => {
            let mut value = serde_json::to_value(&report).map_err(Error::from)?;
            if let Some(targeted) = &args.against {
                let targeted: RunReport = read_json(&targeted.join("report.json"))?;
                value["roi"] = serde_json::to_value(compare_roi(&targeted, &report)?).map_err(Error::from)?;
            }
            println!("{}", serde_json::to_string_pretty(&value).map_err(Error::from)?);
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Cost(a) => cmd_cost(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    info!("prefcurate {}", env!("CARGO_PKG_VERSION"));
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
