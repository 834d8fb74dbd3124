use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use streamforge::experiment::{self, ExperimentConfig, Report, Task};
use streamforge::gen::{Deletions, GenSpec, Shape};
use streamforge::{Error, Result, Stream, StreamParams};

#[derive(Parser)]
#[command(name = "streamforge", version, about = "Generate streams, run sketches against exact answers, and report")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stream file and a sidecar with its exact answers.
    Gen(GenArgs),
    /// Print the exact answers for a stream file.
    Oracle(OracleArgs),
    /// Run repeated trials of one estimator and write a report.
    Run(RunArgs),
    /// Re-render a saved report.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct GenArgs {
    /// `uniform`, `zipf:<s>` or `planted:<frac>`.
    #[arg(long, default_value = "uniform")]
    shape: Shape,
    #[arg(long, default_value_t = 16)]
    n: u64,
    /// Number of inserts.
    #[arg(long, default_value_t = 1024)]
    m: u64,
    /// `none`, `forget[:rate]`, `psd:<prefix>:<suffix>` or `contract:<rate>`.
    #[arg(long, default_value = "none")]
    deletions: Deletions,
    /// Certified alpha to reach by placing forgets.
    #[arg(long)]
    target_alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, required_unless_present = "replay")]
    stream: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay")]
    task: Option<Task>,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 0.25)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Promised deletion fraction; defaults to the stream's exact value.
    #[arg(long)]
    alpha: Option<f64>,
    /// Bound on the stream length; defaults to the next power of two above
    /// the insert count.
    #[arg(long)]
    m_bound: Option<u64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    dup: u64,
    /// Re-run the configuration embedded in a saved report.
    #[arg(long, conflicts_with_all = ["stream", "task"])]
    replay: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

/// `STREAMFORGE_SEED` takes precedence over `--seed`.
fn seed(flag: u64) -> Result<u64> {
    match std::env::var("STREAMFORGE_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("STREAMFORGE_SEED = `{v}` is not a seed"))),
        Err(_) => Ok(flag),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

fn read_stream(path: &Path) -> Result<(Stream, String)> {
    let text = read(path)?;
    let stream = Stream::parse(&text)?;
    Ok((stream, experiment::digest(text.as_bytes())))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".oracle.json");
    PathBuf::from(name)
}

fn gen(args: GenArgs) -> Result<ExitCode> {
    let mut spec = GenSpec::new(args.shape, args.n, args.m).deletions(args.deletions).seed(seed(args.seed)?);
    spec.p = args.p;
    if let Some(a) = args.target_alpha {
        spec = spec.target(a, args.p);
    }
    let (stream, answers) = experiment::gen_stream(&spec)?;
    fs::write(&args.out, stream.to_text())?;
    fs::write(sidecar(&args.out), serde_json::to_string_pretty(&answers)? + "\n")?;
    Ok(ExitCode::SUCCESS)
}

fn oracle(args: OracleArgs) -> Result<ExitCode> {
    let (stream, _) = read_stream(&args.stream)?;
    let answers = experiment::oracle_answers(&stream, args.p)?;
    emit(&(serde_json::to_string_pretty(&answers)? + "\n"), args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let (cfg, stream) = match &args.replay {
        Some(path) => {
            let saved: Report = serde_json::from_str(&read(path)?)?;
            let (stream, digest) = read_stream(Path::new(&saved.config.stream))?;
            if digest != saved.config.stream_digest {
                return Err(Error::Config(format!("stream {} changed since the report was written", saved.config.stream)));
            }
            (saved.config, stream)
        }
        None => {
            let path = args.stream.as_ref().expect("clap requires --stream");
            let task = args.task.expect("clap requires --task");
            let (stream, digest) = read_stream(path)?;
            let params = StreamParams {
                n: stream.universe(),
                m_bound: args.m_bound.unwrap_or_else(|| stream.insert_count().max(2).next_power_of_two()),
                p: args.p,
                eps: args.eps,
                delta: args.delta,
                alpha: match args.alpha {
                    Some(a) => a,
                    None => experiment::exact_alpha(task, args.p, &stream)?,
                },
                seed: seed(args.seed)?,
            };
            let cfg = ExperimentConfig {
                task,
                stream: path.display().to_string(),
                stream_digest: digest,
                params,
                trials: args.trials,
                dup: args.dup,
            };
            (cfg, stream)
        }
    };
    let started = std::time::Instant::now();
    let report = experiment::run_experiment(&cfg, &stream)?;
    eprintln!("{} trials of {} in {:.1}s", cfg.trials, cfg.task, started.elapsed().as_secs_f64());
    let text = match args.format {
        Format::Json => report.to_json()?,
        Format::Csv => report.to_csv(),
    };
    emit(&text, args.out.as_deref())?;
    Ok(verdict(report.pass))
}

fn report(args: ReportArgs) -> Result<ExitCode> {
    let report: Report = serde_json::from_str(&read(&args.input)?)?;
    let text = match args.format {
        Format::Json => report.to_json()?,
        Format::Csv => report.to_csv(),
    };
    print!("{text}");
    Ok(verdict(report.pass))
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Oracle(a) => oracle(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
