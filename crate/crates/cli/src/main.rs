use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use react_tod::engine::{EngineConfig, ExemplarMode};
use react_tod::eval::IssueKind;
use react_tod::runner::{self, BackendChoice, RunConfig, RunError};

const EXIT_USAGE: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(name = "react-tod", version, about = "Simulate and evaluate ReAct task-oriented dialogue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Http,
    Scripted,
}

#[derive(Clone, Copy, ValueEnum)]
enum Exemplar {
    Generic,
    Domain,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of simulated dialogues.
    Simulate {
        /// Database JSON; the bundled database when omitted.
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        dialogues: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Backend::Scripted)]
        backend: Backend,
        /// Model name for the http backend.
        #[arg(long, default_value = "gpt-3.5-turbo-0301")]
        model: String,
        /// Replay a scenario fixture (bundled name or TOML path) instead of
        /// the rule policy. Scripted backend only.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, value_enum, default_value_t = Exemplar::Generic)]
        exemplar: Exemplar,
        #[arg(long, default_value_t = EngineConfig::default().max_steps)]
        max_steps: usize,
        #[arg(long, default_value_t = react_tod::dialogue::DEFAULT_MAX_TURNS)]
        max_turns: usize,
        /// Price table TOML.
        #[arg(long)]
        prices: Option<PathBuf>,
        /// Worker threads; >1 makes the log line order nondeterministic.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Run dialogues last to first.
        #[arg(long)]
        reverse: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the metrics table of a dialogue log.
    Report {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        prices: Option<PathBuf>,
    },
    /// Dump traces, optionally only dialogues with one issue kind.
    Traces {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        issue: Option<IssueKind>,
    },
    /// Draw a seeded sample of dialogue records.
    Sample {
        #[arg(long)]
        logs: PathBuf,
        #[arg(short)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; defaults to <logs>.sample.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn require(path: &Path) -> Result<(), RunError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(RunError::Usage(format!("{} is not a file", path.display())))
    }
}

fn run(command: Command) -> Result<(), RunError> {
    if let Command::Report { logs, .. } | Command::Traces { logs, .. } | Command::Sample { logs, .. } = &command {
        require(logs)?;
    }
    match command {
        Command::Simulate {
            db,
            dialogues,
            seed,
            backend,
            model,
            scenario,
            exemplar,
            max_steps,
            max_turns,
            prices,
            jobs,
            reverse,
            out,
        } => {
            let backend = match (backend, scenario) {
                (Backend::Http, Some(_)) => {
                    return Err(RunError::Usage("--scenario needs the scripted backend".into()));
                }
                (Backend::Http, None) => BackendChoice::Http { model },
                (Backend::Scripted, Some(scenario)) => BackendChoice::Fixture { scenario },
                (Backend::Scripted, None) => BackendChoice::Scripted,
            };
            let config = RunConfig {
                dialogues,
                seed,
                backend,
                exemplar: match exemplar {
                    Exemplar::Generic => ExemplarMode::Generic,
                    Exemplar::Domain => ExemplarMode::DomainSpecific,
                },
                max_steps,
                max_turns,
                out_dir: out.clone(),
                prices,
                db,
                jobs,
                reverse,
            };
            let manifest = runner::run_batch(&config)?;
            print!("{}", std::fs::read_to_string(out.join(runner::METRICS_TXT)).unwrap_or_default());
            eprintln!("{} dialogues written to {}", manifest.seeds.len(), out.display());
        }
        Command::Report { logs, prices } => {
            let prices = runner::load_prices(prices.as_deref())?;
            print!("{}", runner::report(&logs, &prices)?);
        }
        Command::Traces { logs, issue } => print!("{}", runner::export_traces(&logs, issue)?),
        Command::Sample { logs, k, seed, out } => {
            let out = out.unwrap_or_else(|| logs.with_extension("sample.jsonl"));
            let n = runner::sample_dialogues(&logs, k, seed, &out)?;
            eprintln!("{n} records written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                RunError::Usage(_) | RunError::Cost(_) => EXIT_USAGE,
                RunError::Backend { .. } => EXIT_BACKEND,
                RunError::Io { .. } | RunError::Record { .. } => 1,
            })
        }
    }
}
