use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ivrl_core::harness::sweep::load_toml;
use ivrl_core::harness::{self, ExperimentConfig};
use ivrl_core::Result;

/// Inverse-variance RL experiments.
#[derive(Parser)]
#[command(name = "ivrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed pair of a config, or a single pair.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, requires = "net_seed")]
        env_seed: Option<u64>,
        #[arg(long, requires = "env_seed")]
        net_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the cross product of a parameter grid, one subdirectory per point.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Episodes-to-solve percentiles over the metrics files in a directory.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        threshold: f64,
        #[arg(long, default_value_t = 100)]
        window: usize,
    },
    /// Render return curves and variance diagnostics to SVG.
    Plot {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            env_seed,
            net_seed,
            out,
        } => {
            let resolved = ExperimentConfig::load(&config)?.resolve()?;
            let pair = env_seed.zip(net_seed).map(|p| vec![p]);
            let outputs = harness::run_experiment_pairs(&resolved, pair.as_deref(), &out)?;
            for o in &outputs {
                let last = o.records.last();
                println!(
                    "env {} net {}: {} episodes, {} steps, final windowed return {}",
                    o.env_seed,
                    o.net_seed,
                    o.records.len(),
                    o.total_steps(),
                    last.map_or(f64::NAN, |r| r.return_w100)
                );
            }
        }
        Command::Sweep { config, grid, out } => {
            let base = load_toml(&config, "config")?;
            let grid = load_toml(&grid, "grid")?;
            for (point, outputs) in harness::sweep(&base, &grid, &out)? {
                println!("{}: {} runs", point.dir.display(), outputs.len());
            }
        }
        Command::Summarize { dir, threshold, window } => {
            println!("{}", harness::summarize(&dir, threshold, window)?);
        }
        Command::Plot { dir, out } => {
            harness::plot_dir(&dir, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
