//! Command-line front end: run experiments, sweep preset directories,
//! certify fixed points, and cache least-squares references.

use blocktomo::config::read_config;
use blocktomo::fixedpoint::verify_fixed_point;
use blocktomo::runner::{build_instance, output_dir, run_experiment, run_stem};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "blocktomo", about = "Block-iterative tomographic reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write CSV, reconstruction, and plots.
    Run {
        /// Path to a preset file.
        config: PathBuf,
    },
    /// Run every *.cfg preset in a directory, in name order.
    Sweep {
        /// Directory of preset files.
        config_dir: PathBuf,
    },
    /// Check that the least-squares solution is a fixed point of the
    /// configured system's epoch map.
    Fixedpoint {
        /// Path to a preset file; mu0 and the run seed drive the check.
        config: PathBuf,
        /// Random selections per mask family.
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Solve and cache the least-squares reference for a config.
    Oracle {
        /// Path to a preset file.
        config: PathBuf,
    },
}

fn run(cli: Cli) -> blocktomo::Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = read_config(&config)?;
            let log = run_experiment(&cfg)?;
            let last = log.rows.last().expect("runs always log the final epoch");
            println!(
                "{}: {} epochs, ds {:.6e}, snr {:.2} dB, gap {:.6e} -> {}",
                run_stem(&cfg),
                last.epoch,
                last.ds,
                last.snr,
                last.gap,
                log.csv_path.display()
            );
        }
        Command::Sweep { config_dir } => {
            let mut presets: Vec<PathBuf> = std::fs::read_dir(&config_dir)
                .map_err(|e| {
                    blocktomo::Error::Config(format!("{}: {e}", config_dir.display()))
                })?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "cfg"))
                .collect();
            presets.sort();
            if presets.is_empty() {
                return Err(blocktomo::Error::Config(format!(
                    "no .cfg presets in {}",
                    config_dir.display()
                )));
            }
            for preset in presets {
                let cfg = read_config(&preset)?;
                let log = run_experiment(&cfg)?;
                let last = log.rows.last().expect("runs always log the final epoch");
                println!(
                    "{}: ds {:.6e}, snr {:.2} dB, gap {:.6e}",
                    run_stem(&cfg),
                    last.ds,
                    last.snr,
                    last.gap
                );
            }
        }
        Command::Fixedpoint { config, trials } => {
            let cfg = read_config(&config)?;
            let inst = build_instance(&cfg)?;
            let report =
                verify_fixed_point(&inst.system, &inst.y, cfg.tuning.mu0, trials, cfg.run.seed)?;
            let text = report.render();
            print!("{text}");
            let dir = output_dir(&cfg);
            std::fs::create_dir_all(&dir).map_err(|e| {
                blocktomo::Error::Config(format!("cannot create {}: {e}", dir.display()))
            })?;
            let path = dir.join(format!("{}_fixedpoint.txt", run_stem(&cfg)));
            std::fs::write(&path, &text).map_err(|e| {
                blocktomo::Error::Config(format!("cannot write {}: {e}", path.display()))
            })?;
            println!("report: {}", path.display());
        }
        Command::Oracle { config } => {
            let cfg = read_config(&config)?;
            let inst = build_instance(&cfg)?;
            let (path, x_lsq) = blocktomo::runner::oracle_solution(&cfg, &inst)?;
            println!("cached {} values at {}", x_lsq.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
