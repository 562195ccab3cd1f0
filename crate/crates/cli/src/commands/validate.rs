use std::collections::HashMap;
use std::path::Path;

use sawtooth_core::snapshot::{audit_visibility, parse_snapshots, trajectory_from_snapshots, AuditReport};
use sawtooth_core::{parse_trajectories, Trajectory};
use serde::Serialize;

use crate::commands::{is_snapshot_file, load_trajectories};
use crate::config::Settings;
use crate::error::CliError;
use crate::io;

#[derive(Debug, Serialize)]
struct Report {
    file: String,
    kind: &'static str,
    ok: bool,
    records: usize,
    errors: Vec<String>,
    warnings: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    audits: Vec<AuditReport>,
}

pub fn run(_settings: &Settings, input: &Path, sources: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let text = io::read(input)?;
    let mut report = Report {
        file: input.display().to_string(),
        kind: "trajectories",
        ok: true,
        records: 0,
        errors: Vec::new(),
        warnings: Vec::new(),
        audits: Vec::new(),
    };

    if is_snapshot_file(&text) {
        report.kind = "snapshots";
        let sources: Option<HashMap<String, Trajectory>> = match sources {
            Some(p) => Some(load_trajectories(p)?.1.into_iter().map(|t| (t.task_id.clone(), t)).collect()),
            None => None,
        };
        match parse_snapshots(&text) {
            Err(e) => report.errors.push(e.to_string()),
            Ok(sets) => {
                report.records = sets.iter().map(|s| s.snapshots.len()).sum();
                for set in &sets {
                    let id = set.task_id().unwrap_or_default().to_string();
                    let source = match &sources {
                        Some(map) => match map.get(&id) {
                            Some(t) => t.clone(),
                            None => {
                                report.errors.push(format!("{id}: no source trajectory"));
                                continue;
                            }
                        },
                        None => match trajectory_from_snapshots(set) {
                            Ok(t) => t,
                            Err(e) => {
                                report.errors.push(format!("{id}: {e}"));
                                continue;
                            }
                        },
                    };
                    if set.snapshots.len() != source.len() {
                        report
                            .warnings
                            .push(format!("{id}: {} snapshots for {} steps", set.snapshots.len(), source.len()));
                    }
                    match audit_visibility(set, &source) {
                        Ok(audit) => {
                            for v in &audit.violations {
                                report.errors.push(format!(
                                    "{id}: snapshot {} exposes reasoning of step {} outside window {}",
                                    v.snapshot_step, v.source_step, audit.window
                                ));
                            }
                            for g in &audit.digest_gaps {
                                report.errors.push(format!(
                                    "{id}: snapshot {} lacks the digest of step {}",
                                    g.snapshot_step, g.missing_step
                                ));
                            }
                            report.audits.push(audit);
                        }
                        Err(e) => report.errors.push(e.to_string()),
                    }
                }
            }
        }
    } else {
        match parse_trajectories(&text) {
            Err(e) => report.errors.push(e.to_string()),
            Ok(trajs) => {
                report.records = trajs.len();
                for t in &trajs {
                    for step in t.empty_digest_steps() {
                        report.warnings.push(format!("{}: step {step} has an empty digest", t.task_id));
                    }
                    if t.is_empty() {
                        report.warnings.push(format!("{}: no steps", t.task_id));
                    }
                }
            }
        }
    }

    report.ok = report.errors.is_empty();
    io::emit(out, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    if report.ok {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} problem(s) in {}", report.errors.len(), report.file)))
    }
}
