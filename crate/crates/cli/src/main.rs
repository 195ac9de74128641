use std::path::PathBuf;
use std::process::ExitCode;

use blockspin_cli::config::{ExperimentConfig, OutputFormat};
use blockspin_cli::{emit_report, load_config, run_experiment, CliError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blockspin", version, about = "Run block-spin lattice experiments from a JSON config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tasks of a config and write the report.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run independent tasks concurrently.
        #[arg(long)]
        parallel: bool,
        /// Comma-separated list of `json` and `csv`; overrides the config.
        #[arg(long, value_delimiter = ',')]
        format: Option<Vec<String>>,
    },
    /// Print an example config.
    Template,
}

fn parse_formats(list: &[String]) -> Result<Vec<OutputFormat>, CliError> {
    list.iter()
        .map(|f| match f.trim() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(CliError::Schema { path: "--format".into(), message: format!("unknown format `{other}`") }),
        })
        .collect()
}

fn run(config: PathBuf, out: Option<PathBuf>, parallel: bool, format: Option<Vec<String>>) -> Result<bool, CliError> {
    let cfg = load_config(&config)?;
    let formats = match format {
        Some(f) => parse_formats(&f)?,
        None => cfg.output.formats.clone(),
    };
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    let report = run_experiment(&cfg, parallel)?;
    for path in emit_report(&report, &dir, &formats)? {
        log::info!("wrote {}", path.display());
    }
    for t in &report.tasks {
        println!("{:>3} {:<18} {:?}", t.index, t.task, t.verdict);
    }
    Ok(report.all_passed)
}

fn init_workers() {
    if let Ok(v) = std::env::var("BLOCKSPIN_WORKERS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the worker pool: {e}");
                }
            }
            _ => log::warn!("ignoring BLOCKSPIN_WORKERS={v}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_workers();
    match Cli::parse().command {
        Command::Template => {
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::template()).expect("template serializes"));
            ExitCode::SUCCESS
        }
        Command::Run { config, out, parallel, format } => match run(config, out, parallel, format) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
