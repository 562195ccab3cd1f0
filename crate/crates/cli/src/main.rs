//! `sawtooth`: command-line entry point for backfilling, compiling, scoring,
//! simulating, summarizing and validating agent trajectory datasets.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{CommonArgs, RolloutFlags};

#[derive(Debug, Parser)]
#[command(name = "sawtooth", version, about = "Dynamic reasoning context toolkit for SWE agent trajectories")]
struct Cli {
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize reasoning and digests for shallow trajectories.
    Backfill {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// mock, replay:<transcript.jsonl> or an http(s) URL.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        max_attempts: Option<usize>,
        #[arg(long)]
        timeout_secs: Option<u64>,
        /// Where progress is saved on failure [default: <out>.checkpoint.jsonl].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Resume from a checkpoint file written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Save every prompt/response exchange as a replay transcript.
        #[arg(long)]
        record: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compile enriched trajectories into loss-masked training snapshots.
    Compile {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// [default: <out>.manifest.json]
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Snapshots longer than this (context plus target) are dropped.
        #[arg(long)]
        max_sequence_tokens: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compression rate and reward per trajectory.
    Score {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file [default: stdout].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = commands::score::Format::Json)]
        format: commands::score::Format,
        #[arg(long)]
        beta: Option<String>,
        #[arg(long)]
        gamma: Option<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run scripted rollouts and compare context strategies.
    Simulate {
        /// Scenario JSON file; repeat for several. Episode i uses scenario i mod count.
        #[arg(long = "scenario", required = true)]
        scenarios: Vec<PathBuf>,
        /// disable-thinking, interleaved, current-step, dynamic:N or dynamic:lo..hi; repeatable
        /// [default: dynamic with the configured window].
        #[arg(long = "strategy")]
        strategies: Vec<String>,
        /// [default: number of scenarios]
        #[arg(long)]
        episodes: Option<usize>,
        /// Drive the agent from an endpoint instead of the scenario scripts.
        #[arg(long)]
        policy_endpoint: Option<String>,
        /// Rollout records, one JSON line each.
        #[arg(long)]
        out: PathBuf,
        /// [default: <out>.metrics.csv]
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[command(flatten)]
        rollout: RolloutFlags,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Summarize a trajectory or snapshot file.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check schemas and, for snapshot files, the reasoning visibility rule.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Source trajectories to audit snapshots against [default: rebuilt from the snapshots].
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match commands::run(cli.config.as_ref(), cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
