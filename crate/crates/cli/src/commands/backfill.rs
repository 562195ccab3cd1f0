use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sawtooth_core::backfill::{
    backfill_batch, backfill_trajectory_from, BackfillFailure, Checkpoint, EnrichedStep, Recorder, SynthesizerClient,
};
use sawtooth_core::{serialize_trajectories, Trajectory};

use crate::commands::load_trajectories;
use crate::config::Settings;
use crate::error::CliError;
use crate::io;

pub struct Args {
    pub input: PathBuf,
    pub out: PathBuf,
    pub endpoint: Option<String>,
    pub max_attempts: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub record: Option<PathBuf>,
}

fn load_checkpoints(path: &Path) -> Result<HashMap<String, Checkpoint>, CliError> {
    let text = io::read(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cp: Checkpoint =
            serde_json::from_str(line).map_err(|e| CliError::input(path, format!("line {}: {e}", i + 1)))?;
        out.insert(cp.task_id.clone(), cp);
    }
    Ok(out)
}

fn completed(traj: &Trajectory) -> Checkpoint {
    Checkpoint {
        task_id: traj.task_id.clone(),
        last_enriched_step: traj.len(),
        enriched: traj
            .steps
            .iter()
            .map(|s| EnrichedStep {
                index: s.index,
                reasoning: s.reasoning.clone().unwrap_or_default(),
                digest: s.digest.clone().unwrap_or_default(),
            })
            .collect(),
    }
}

pub fn run(settings: &Settings, args: Args) -> Result<(), CliError> {
    let (_, trajs) = load_trajectories(&args.input)?;
    let mut ids = std::collections::HashSet::new();
    if let Some(dup) = trajs.iter().find(|t| !ids.insert(t.task_id.as_str())) {
        return Err(CliError::input(&args.input, format!("duplicate task id `{}`", dup.task_id)));
    }

    let endpoint = settings.endpoint(args.endpoint.as_deref())?;
    let mut client = SynthesizerClient::from_endpoint(
        &endpoint,
        settings.synth_timeout(args.timeout_secs),
        settings.max_attempts(args.max_attempts),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let recorder = args.record.as_ref().map(|_| Arc::new(Recorder::new(client.backend.clone())));
    if let Some(r) = &recorder {
        client.backend = r.clone();
    }

    let results: Vec<(String, Result<Trajectory, BackfillFailure>)> = match &args.resume {
        None => backfill_batch(&trajs, &settings.window, &settings.counter, &client, settings.concurrency),
        Some(path) => {
            let checkpoints = load_checkpoints(path)?;
            trajs
                .iter()
                .map(|t| {
                    let cp = checkpoints.get(&t.task_id);
                    (
                        t.task_id.clone(),
                        backfill_trajectory_from(t, cp, &settings.window, &settings.counter, &client),
                    )
                })
                .collect()
        }
    };
    let mut by_id: HashMap<String, Result<Trajectory, BackfillFailure>> = results.into_iter().collect();

    let mut enriched = Vec::with_capacity(trajs.len());
    let mut checkpoints = Vec::with_capacity(trajs.len());
    let mut failures = Vec::new();
    for t in &trajs {
        match by_id.remove(&t.task_id).expect("one result per task") {
            Ok(done) => {
                checkpoints.push(completed(&done));
                enriched.push(done);
            }
            Err(f) => {
                failures.push(format!("{}: {}", t.task_id, f.error));
                checkpoints.push(f.checkpoint);
            }
        }
    }

    if let (Some(path), Some(rec)) = (&args.record, &recorder) {
        io::write(path, rec.transcript_jsonl().as_bytes())?;
    }
    if !failures.is_empty() {
        let cp_path = args.checkpoint.clone().unwrap_or_else(|| io::sidecar(&args.out, ".checkpoint.jsonl"));
        let text: String = checkpoints
            .iter()
            .map(|c| serde_json::to_string(c).expect("checkpoint serializes") + "\n")
            .collect();
        io::write(&cp_path, text.as_bytes())?;
        return Err(CliError::Failed(format!(
            "{} of {} trajectories failed (checkpoint: {}):\n  {}",
            failures.len(),
            trajs.len(),
            cp_path.display(),
            failures.join("\n  ")
        )));
    }
    io::write(&args.out, serialize_trajectories(&enriched).as_bytes())?;
    eprintln!("backfilled {} trajectories -> {}", enriched.len(), args.out.display());
    Ok(())
}
