use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use simreal_cli::{cmd_report, cmd_run, cmd_sweep, default_config, load_config, render_report, CellResult, Overrides};
use simreal_core::config::{ExperimentConfig, TrackKind};
use simreal_core::experiment::available_threads;
use simreal_core::sampling::Strategy;

#[derive(Parser)]
#[command(name = "simreal", version, about = "Sim-to-real active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy for every configured seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Selection strategy (default: the config's selection.strategy).
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Run several strategies on identical seeds and write a comparison report.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Strategies to compare (repeatable; default: the config's run.strategies).
        #[arg(long, value_parser = parse_strategy)]
        strategy: Vec<Strategy>,
    },
    /// Summarize stored runs found under the given directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Config file (TOML) or preset name: digits-analog, detection-analog.
    #[arg(long)]
    config: Option<String>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; one subdirectory per (strategy, seed).
    #[arg(long, env = "SIMREAL_OUT", default_value = "runs")]
    out: PathBuf,
    /// Track override; without --config selects that track's preset.
    #[arg(long, value_parser = parse_track)]
    track: Option<TrackKind>,
    /// Worker threads for independent runs (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_track(s: &str) -> Result<TrackKind, String> {
    s.parse()
}

impl Common {
    fn config(&self, strategies: Vec<Strategy>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(src) => load_config(src)?,
            None => default_config(self.track.unwrap_or(TrackKind::Classification)),
        };
        Overrides { seed: self.seed, track: self.track, strategies }.apply(&mut cfg)?;
        Ok(cfg)
    }

    fn threads(&self) -> usize {
        self.threads.unwrap_or_else(available_threads).max(1)
    }
}

/// Print one line per cell; true when all succeeded.
fn print_cells(cells: &[CellResult]) -> bool {
    for c in cells {
        match &c.error {
            None => println!("{} seed {}: {}", c.strategy, c.seed, c.dir.display()),
            Some(e) => eprintln!("error: {} seed {}: {e}", c.strategy, c.seed),
        }
    }
    cells.iter().all(CellResult::ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { common, strategy } => {
            let cfg = common.config(Vec::new())?;
            Ok(print_cells(&cmd_run(&cfg, strategy, &common.out, common.threads())?))
        }
        Command::Sweep { common, strategy } => {
            let cfg = common.config(strategy)?;
            let (cells, report) = cmd_sweep(&cfg, &common.out, common.threads())?;
            let ok = print_cells(&cells);
            println!("\n{report}");
            Ok(ok)
        }
        Command::Report { dirs } => {
            let (groups, warnings) = cmd_report(&dirs)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", render_report(&groups));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
