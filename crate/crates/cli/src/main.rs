//! `beacon-sim`: attack-probability tables, scenario traces and reward
//! constants.

mod commands;
mod config;
mod plot;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::{GlobalArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "beacon-sim", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo probability and mean cost of a length-n reorg.
    ReorgProb {
        #[arg(long, default_value_t = 1)]
        from: u64,
        #[arg(long, default_value_t = 8)]
        to: u64,
    },
    /// Exact probability and cost of delaying finality for n epochs.
    FinalityProb {
        #[arg(long, default_value_t = 1)]
        from: u64,
        #[arg(long, default_value_t = 10)]
        to: u64,
    },
    /// Play a reorg attack and emit its JSON trace.
    SimulateReorg {
        /// Use the four-seat textbook example instead of a sampled schedule.
        #[arg(long)]
        toy: bool,
        /// Number of honest blocks to orphan.
        #[arg(long, default_value_t = 1)]
        n: u64,
        /// Sampled epochs to try before giving up.
        #[arg(long, default_value_t = 10_000)]
        max_draws: u64,
        #[arg(long)]
        quiet: bool,
    },
    /// Play a finality-delay attack (or an honest run) and emit its JSON trace.
    SimulateFinality {
        /// Run every epoch honestly.
        #[arg(long)]
        honest: bool,
        #[arg(long, default_value_t = 4)]
        epochs: usize,
        /// Epoch(s) to attack; repeatable.
        #[arg(long = "attack-epoch", default_values_t = [1u64])]
        attack_epochs: Vec<u64>,
        #[arg(long, default_value_t = 1_000)]
        max_draws: u64,
        #[arg(long)]
        quiet: bool,
    },
    /// Reward constants in Gwei and USD.
    Rewards,
}

fn run(cli: Cli) -> Result<()> {
    let config = RunConfig::resolve(&cli.global)?;
    let out = cli.global.out.as_deref();
    let plot = cli.global.plot.as_deref();
    let (text, log) = match cli.command {
        Command::ReorgProb { from, to } => (
            commands::reorg_prob(&config, from, to, cli.global.threads, plot)?,
            None,
        ),
        Command::FinalityProb { from, to } => {
            (commands::finality_prob(&config, from, to, plot)?, None)
        }
        Command::Rewards => (commands::rewards(&config)?, None),
        Command::SimulateReorg {
            toy,
            n,
            max_draws,
            quiet,
        } => {
            let sim = commands::simulate_reorg(&config, toy, n, max_draws)?;
            (sim.json, (!quiet).then_some(sim.log))
        }
        Command::SimulateFinality {
            honest,
            epochs,
            attack_epochs,
            max_draws,
            quiet,
        } => {
            let sim =
                commands::simulate_finality(&config, honest, epochs, &attack_epochs, max_draws)?;
            (sim.json, (!quiet).then_some(sim.log))
        }
    };
    if let Some(log) = log {
        eprint!("{log}");
    }
    commands::emit(out, &text)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
