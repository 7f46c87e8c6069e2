use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use aif_core::harness::compute_metrics;
use aif_core::runtime::{
    audit_text, render_svg, run_experiment, serve, series_from_trace, ConfigError, RunConfig, RuntimeError, ServeOptions,
};
use aif_core::trace::parse_jsonl;
use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aif", version, about = "Active-inference agent hierarchy runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace, metrics and summary.
    Run {
        /// JSON run configuration; explicit flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Run a scenario behind the HTTP control and event endpoints.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: std::net::SocketAddr,
        /// Delay between steps.
        #[arg(long, default_value_t = 100)]
        interval_ms: u64,
        /// Start paused; use POST /control to step or resume.
        #[arg(long)]
        paused: bool,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Re-check a trace and report violations.
    Audit {
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Compute safety metrics from a trace.
    Metrics {
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Render free-energy series from a trace to SVG.
    Plot {
        trace: PathBuf,
        #[arg(long, default_value = "fe.svg")]
        out: PathBuf,
        #[arg(long, default_value = "free energy")]
        title: String,
    },
}

fn resolve(matches: Option<&ArgMatches>, file: Option<&Path>, flags: RunConfig) -> Result<RunConfig, ConfigError> {
    let Some(path) = file else {
        flags.validate()?;
        return Ok(flags);
    };
    let base = RunConfig::load(path)?;
    let mut merged = serde_json::to_value(&base).expect("config serializes");
    let cli = serde_json::to_value(&flags).expect("config serializes");
    if let Some(m) = matches {
        for id in m.ids() {
            if m.value_source(id.as_str()) == Some(ValueSource::CommandLine) {
                if let Some(v) = cli.get(id.as_str()) {
                    merged[id.as_str()] = v.clone();
                }
            }
        }
    }
    let config: RunConfig = serde_json::from_value(merged)
        .map_err(|e| ConfigError::Invalid { field: "config".into(), message: e.to_string() })?;
    config.validate()?;
    Ok(config)
}

fn read(path: &Path) -> Result<String, RuntimeError> {
    std::fs::read_to_string(path).map_err(|e| RuntimeError::Io(format!("{}: {e}", path.display())))
}

fn records(path: &Path) -> Result<Vec<aif_core::trace::TraceRecord>, RuntimeError> {
    parse_jsonl(&read(path)?).map_err(|(line, reason)| RuntimeError::MalformedTrace { line, reason })
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<ExitCode, RuntimeError> {
    let sub = matches.subcommand().map(|(_, m)| m);
    match cli.command {
        Command::Run { config, run } => {
            let config = resolve(sub, config.as_deref(), run)?;
            let outcome = run_experiment(&config)?;
            print!("{}", outcome.metrics.to_table());
            println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"));
            if outcome.ok() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("invariant violations detected");
                Ok(ExitCode::from(1))
            }
        }
        Command::Serve { config, addr, interval_ms, paused, run } => {
            let config = resolve(sub, config.as_deref(), run)?;
            let options = ServeOptions { addr, interval: Duration::from_millis(interval_ms), paused };
            let rt = tokio::runtime::Runtime::new().map_err(|e| RuntimeError::Io(e.to_string()))?;
            rt.block_on(serve(config, options))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Audit { trace, json } => {
            let report = audit_text(&read(&trace)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.to_text());
            }
            Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Metrics { trace, json } => {
            let m = compute_metrics(&records(&trace)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
            } else {
                print!("{}", m.to_table());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { trace, out, title } => {
            let svg = render_svg(&title, &series_from_trace(&records(&trace)?), 960, 480);
            std::fs::write(&out, svg).map_err(|e| RuntimeError::Io(format!("{}: {e}", out.display())))?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli, &matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
