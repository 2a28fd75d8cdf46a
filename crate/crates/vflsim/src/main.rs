//! Command-line driver for the simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vflsim::harness::{run_experiment, run_sweep, ExperimentConfig, SweepAxis};

/// Output directory override, taking precedence over the config file.
const OUTPUT_ENV: &str = "VFLSIM_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "vflsim",
    about = "Vertical federated learning simulator with a clean-label backdoor adversary"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed in the config and write one JSON report per run.
    Run {
        config: PathBuf,
        /// Run only this seed instead of the config's list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the config with the attack and defenses disabled.
    Baseline {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one parameter over a list of values, several seeds each.
    Sweep {
        config: PathBuf,
        /// One of: start_round, budget_pct, window, dp_variance,
        /// participants, selection.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `1,5,10,50`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Comma-separated seeds; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config, reporting the first problem found.
    Validate { config: PathBuf },
}

fn output_dir(cli_out: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = cli_out {
        return dir;
    }
    if let Ok(dir) = std::env::var(OUTPUT_ENV) {
        return PathBuf::from(dir);
    }
    config
        .output_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_seeds(
    config: &ExperimentConfig,
    seeds: &[u64],
    dir: &Path,
    label: &str,
) -> vflsim::Result<()> {
    for &seed in seeds {
        let report = run_experiment(config, seed)?;
        let path = dir.join(format!("{label}-seed{seed}.json"));
        report.write_json(&path)?;
        let asr = report
            .final_asr
            .map(|a| format!("{a:.3}"))
            .unwrap_or_else(|| "-".to_string());
        let lia = report
            .lia
            .map(|l| format!("{l:.3}"))
            .unwrap_or_else(|| "-".to_string());
        println!(
            "seed {seed}: MTA {:.3}  ASR {asr}  LIA {lia}  ({:.1}s) -> {}",
            report.final_mta,
            report.wall_clock_secs,
            path.display()
        );
    }
    Ok(())
}

fn real_main() -> vflsim::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => {
            let config = ExperimentConfig::from_path(&config)?;
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| config.seeds.clone());
            let dir = output_dir(out, &config);
            run_seeds(&config, &seeds, &dir, "run")
        }
        Command::Baseline { config, seed, out } => {
            let mut config = ExperimentConfig::from_path(&config)?;
            config.attack = None;
            config.defense = Default::default();
            config.validate()?;
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| config.seeds.clone());
            let dir = output_dir(out, &config);
            run_seeds(&config, &seeds, &dir, "baseline")
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let config = ExperimentConfig::from_path(&config)?;
            let axis: SweepAxis = axis.parse()?;
            let seeds = if seeds.is_empty() {
                config.seeds.clone()
            } else {
                seeds
            };
            let table = run_sweep(&config, axis, &values, &seeds)?;
            let dir = output_dir(out, &config);
            table.write_runs_csv(&dir.join("sweep_runs.csv"))?;
            table.write_summary_csv(&dir.join("sweep_summary.csv"))?;
            for s in &table.summary {
                let lia = s
                    .mean_lia
                    .map(|l| format!("{l:.3}"))
                    .unwrap_or_else(|| "-".to_string());
                println!(
                    "{} = {:>8}: ASR {:.3} +- {:.3}  MTA {:.3} +- {:.3}  LIA {lia}",
                    s.axis, s.value, s.mean_asr, s.std_asr, s.mean_mta, s.std_mta
                );
            }
            println!("wrote {}", dir.join("sweep_summary.csv").display());
            Ok(())
        }
        Command::Validate { config } => {
            ExperimentConfig::from_path(&config)?;
            println!("ok");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
