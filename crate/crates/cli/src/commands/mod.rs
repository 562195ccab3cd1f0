use std::path::{Path, PathBuf};

use sawtooth_core::{parse_trajectories, Trajectory};

use crate::config::Settings;
use crate::error::CliError;
use crate::{io, Command};

mod backfill;
mod compile;
pub mod score;
mod simulate;
mod stats;
mod validate;

pub fn run(config: Option<&PathBuf>, command: Command) -> Result<(), CliError> {
    match command {
        Command::Backfill {
            input,
            out,
            endpoint,
            max_attempts,
            timeout_secs,
            checkpoint,
            resume,
            record,
            common,
        } => {
            let settings = Settings::resolve(config, &common)?;
            backfill::run(
                &settings,
                backfill::Args {
                    input,
                    out,
                    endpoint,
                    max_attempts,
                    timeout_secs,
                    checkpoint,
                    resume,
                    record,
                },
            )
        }
        Command::Compile {
            input,
            out,
            manifest,
            max_sequence_tokens,
            common,
        } => {
            let settings = Settings::resolve(config, &common)?;
            compile::run(&settings, &input, &out, manifest, max_sequence_tokens)
        }
        Command::Score {
            input,
            out,
            format,
            beta,
            gamma,
            common,
        } => {
            let settings = Settings::resolve(config, &common)?;
            let reward = settings.reward(beta.as_deref(), gamma.as_deref())?;
            score::run(&settings, &reward, &input, out.as_deref(), format)
        }
        Command::Simulate {
            scenarios,
            strategies,
            episodes,
            policy_endpoint,
            out,
            metrics,
            rollout,
            common,
        } => {
            let settings = Settings::resolve(config, &common)?;
            simulate::run(
                &settings,
                simulate::Args {
                    scenarios,
                    strategies,
                    episodes,
                    policy_endpoint,
                    out,
                    metrics,
                    rollout,
                },
            )
        }
        Command::Stats { input, out, common } => {
            let settings = Settings::resolve(config, &common)?;
            stats::run(&settings, &input, out.as_deref())
        }
        Command::Validate {
            input,
            trajectories,
            out,
            common,
        } => {
            let settings = Settings::resolve(config, &common)?;
            validate::run(&settings, &input, trajectories.as_deref(), out.as_deref())
        }
    }
}

pub(crate) fn load_trajectories(path: &Path) -> Result<(String, Vec<Trajectory>), CliError> {
    let text = io::read(path)?;
    let trajs = parse_trajectories(&text).map_err(|e| CliError::input(path, e))?;
    Ok((text, trajs))
}

/// Snapshot files start with a record carrying `segments`.
pub(crate) fn is_snapshot_file(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .is_some_and(|v| v.get("segments").is_some())
}
