use std::path::Path;

use sawtooth_core::reward::{compression_report, reports_to_csv, trajectory_reward, ReportExport, RewardConfig};

use crate::commands::load_trajectories;
use crate::config::Settings;
use crate::error::CliError;
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    /// One JSON report per line.
    Json,
    Csv,
}

pub fn run(
    settings: &Settings,
    reward: &RewardConfig,
    input: &Path,
    out: Option<&Path>,
    format: Format,
) -> Result<(), CliError> {
    let (_, trajs) = load_trajectories(input)?;
    let mut rows = Vec::with_capacity(trajs.len());
    for traj in &trajs {
        let window = settings.window.resolve(&traj.task_id);
        let report = compression_report(traj, window, &settings.counter)
            .map_err(|e| CliError::input(input, format!("{}: {e}", traj.task_id)))?;
        let r = trajectory_reward(&report, traj.success, reward);
        rows.push(ReportExport::new(&report, Some((traj.success, r))));
    }
    let text = match format {
        Format::Json => rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("report serializes") + "\n")
            .collect(),
        Format::Csv => reports_to_csv(&rows).map_err(|e| CliError::Failed(e.to_string()))?,
    };
    io::emit(out, &text)
}
