use std::path::{Path, PathBuf};

use sawtooth_core::snapshot::{
    compile_snapshots, serialize_snapshot_steps, sha256_hex, Manifest, ManifestTask,
};

use crate::commands::load_trajectories;
use crate::config::Settings;
use crate::error::CliError;
use crate::io;

pub fn run(
    settings: &Settings,
    input: &Path,
    out: &Path,
    manifest: Option<PathBuf>,
    max_sequence_tokens: Option<usize>,
) -> Result<(), CliError> {
    let (text, trajs) = load_trajectories(input)?;
    let max_tokens = settings.max_sequence_tokens(max_sequence_tokens);

    let mut body = String::new();
    let mut tasks = Vec::with_capacity(trajs.len());
    let mut warnings = Vec::new();
    let mut total = 0;
    for traj in &trajs {
        for step in traj.empty_digest_steps() {
            warnings.push(format!("{}: step {step} has an empty digest", traj.task_id));
        }
        let set = compile_snapshots(traj, &settings.window, &settings.counter)
            .map_err(|e| CliError::input(input, format!("{}: {e}", traj.task_id)))?;
        let (kept, dropped) = set.partition_by_length(max_tokens, &settings.counter);
        for (step, tokens) in &dropped {
            warnings.push(format!(
                "{}: snapshot {step} dropped, {tokens} tokens exceed {max_tokens}",
                traj.task_id
            ));
        }
        body.push_str(&serialize_snapshot_steps(&set, Some(&kept)));
        total += kept.len();
        tasks.push(ManifestTask {
            task_id: traj.task_id.clone(),
            window: set.window_used,
            steps: traj.len(),
            snapshots: kept.len(),
            dropped_steps: dropped.iter().map(|(s, _)| *s).collect(),
        });
    }

    let manifest_doc = Manifest {
        source_sha256: sha256_hex(text.as_bytes()),
        counter: settings.counter.mode_label(),
        trajectories: trajs.len(),
        snapshots: total,
        max_sequence_tokens: Some(max_tokens),
        tasks,
        warnings,
    };
    for w in &manifest_doc.warnings {
        eprintln!("warning: {w}");
    }
    let manifest_path = manifest.unwrap_or_else(|| io::sidecar(out, ".manifest.json"));
    let manifest_text = serde_json::to_string_pretty(&manifest_doc).expect("manifest serializes") + "\n";
    io::write_all(&[(out, body.as_bytes()), (&manifest_path, manifest_text.as_bytes())])?;
    eprintln!(
        "compiled {total} snapshots from {} trajectories -> {}",
        trajs.len(),
        out.display()
    );
    Ok(())
}
