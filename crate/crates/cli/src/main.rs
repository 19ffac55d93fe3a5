//! `cft`: run the experiment sweeps and inspect the channel model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cft_core::config::{ConfigError, ExperimentConfig, DEFAULT_CONFIG};
use cft_core::simulator::{self, Metric, SimError};
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "cft",
    version,
    about = "Cluster-based file transfer experiments for highway VANETs"
)]
struct Cli {
    /// Config file; the built-in defaults are used when absent.
    #[arg(long, global = true, env = "CFT_CONFIG")]
    config: Option<PathBuf>,
    /// Directory for CSV output.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Number of seeds per grid point.
    #[arg(long, global = true)]
    seeds: Option<u32>,
    /// Override a config value, e.g. `--set experiment.densities=[5,10]`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Average connection time of opposite-direction pairs over (ρ, R).
    ConnectionTime,
    /// Average MAC throughput over (ρ, R, SD).
    Throughput,
    /// Average per-link transmission capability over (ρ, R).
    Capacity,
    /// Maximum deliverable volume per density, CFT against direct transfer.
    MaxVolume,
    /// Average cluster size per (ρ, file size).
    ClusterSize,
    /// Rate probabilities and E(c) against distance.
    RateCurve {
        /// Largest distance in m.
        #[arg(long, default_value_t = 600.0)]
        max_distance: f64,
        /// Spacing in m.
        #[arg(long, default_value_t = 10.0)]
        step: f64,
    },
    /// Load the config and print the resolved SI values.
    ValidateConfig,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut overrides = cli.overrides.clone();
    if let Some(n) = cli.seeds {
        if n == 0 {
            return Err(Failure::Usage("--seeds must be at least 1".into()));
        }
        overrides.push(format!("experiment.seeds={n}"));
    }
    Ok(match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => ExperimentConfig::from_toml(DEFAULT_CONFIG, &overrides)?,
    })
}

fn create_output(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn sweep(cli: &Cli, cfg: &ExperimentConfig, metric: Metric) -> Result<(), Failure> {
    let table = simulator::run_sweep(cfg, metric)?;
    let (path, mut out) = create_output(&cli.out, &format!("{}.csv", metric.name()))?;
    table.write_csv(&mut out)?;
    out.flush().map_err(|e| io_failure(&path, e))?;
    for line in table.summary_lines() {
        println!("{line}");
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::ConnectionTime => sweep(cli, &cfg, Metric::ConnectionTime),
        Command::Throughput => sweep(cli, &cfg, Metric::Throughput),
        Command::Capacity => sweep(cli, &cfg, Metric::Capability),
        Command::MaxVolume => sweep(cli, &cfg, Metric::MaxVolume),
        Command::ClusterSize => sweep(cli, &cfg, Metric::ClusterSize),
        Command::RateCurve { max_distance, step } => {
            if !(*step > 0.0) || !(*max_distance > 0.0) {
                return Err(Failure::Usage(
                    "--step and --max-distance must be positive".into(),
                ));
            }
            let count = (max_distance / step).floor() as usize;
            let distances: Vec<f64> = (1..=count).map(|k| k as f64 * step).collect();
            let (path, mut out) = create_output(&cli.out, "rate_curve.csv")?;
            simulator::rate_curve_csv(&cfg, &distances, &mut out)?;
            out.flush().map_err(|e| io_failure(&path, e))?;
            println!(
                "{} distances written to {}",
                distances.len(),
                path.display()
            );
            Ok(())
        }
        Command::ValidateConfig => {
            print!("{}", cfg.describe());
            Ok(())
        }
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
