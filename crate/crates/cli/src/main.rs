use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use csbeam::beamformers::Algorithm;
use csbeam::geometry::Position;
use csbeam::imaging_metrics::DEFAULT_FLOOR_DB;
use csbeam_cli::commands::{self, Overrides};
use csbeam_cli::config::{RunConfig, Snr};
use csbeam_cli::error::{exit, CliError};

#[derive(Parser)]
#[command(name = "csbeam", version, about = "Compressive-sensing acoustic beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory, replacing the config's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, replacing the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Write per-iteration solver traces.
    #[arg(long)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the clean and noisy records.
    Simulate(RunArgs),
    /// Beamform a single (algorithm, SNR, frequency) cell.
    Beamform {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        algo: Algorithm,
        /// dB, or "inf".
        #[arg(long, allow_hyphen_values = true)]
        snr: Snr,
        #[arg(long)]
        freq: f64,
    },
    /// Run every cell of the config and write the comparison table.
    Sweep(RunArgs),
    /// Print the metrics of a saved map as JSON.
    Metrics {
        map: PathBuf,
        /// True source position `x,y,z`.
        #[arg(long, value_parser = parse_position, allow_hyphen_values = true)]
        truth: Option<Position>,
        #[arg(long, default_value_t = DEFAULT_FLOOR_DB, allow_hyphen_values = true)]
        floor: f64,
    },
}

fn parse_position(s: &str) -> Result<Position, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok(Position::new(x, y, z)),
        [x, y] => Ok(Position::new(x, y, 1.0)),
        _ => Err("expected x,y or x,y,z".into()),
    }
}

fn load(run: &RunArgs) -> Result<(RunConfig, Overrides), CliError> {
    let config = RunConfig::load(&run.config)?;
    let overrides = Overrides {
        out: run.out.clone(),
        seed: run.seed,
        trace: run.trace,
        parallelism: commands::parallelism_from_env()?,
    };
    Ok((config, overrides))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(run) => {
            let (config, overrides) = load(&run)?;
            let m = commands::simulate(&config, &overrides)?;
            eprintln!("wrote {} files to {}", m.files.len(), m.config.output_dir.display());
        }
        Command::Beamform { run, algo, snr, freq } => {
            let (config, overrides) = load(&run)?;
            let report = commands::beamform(&config, &overrides, algo, snr, freq)?.into_result()?;
            for c in &report.cells {
                eprintln!("{} {} dB {} Hz: {}", c.algorithm, c.snr, c.frequency, c.status.as_str());
            }
        }
        Command::Sweep(run) => {
            let (config, overrides) = load(&run)?;
            let report = commands::sweep(&config, &overrides)?.into_result()?;
            eprintln!("{} cells written to {}", report.cells.len(), report.manifest.config.output_dir.display());
        }
        Command::Metrics { map, truth, floor } => {
            let m = commands::metrics(&map, truth, floor)?;
            println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS as u8),
        Err(e) => {
            eprintln!("csbeam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
