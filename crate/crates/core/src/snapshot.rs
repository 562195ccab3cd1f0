//! Trajectory snapshots: one training sample per step.
//!
//! Snapshot `t` pairs the frozen context `C_t` (loss 0) with the target
//! `reasoning -> digest -> action` (loss 1). Each reasoning trace is a target
//! exactly once and is visible as context only in the next `N` snapshots.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::action::{decode_action, encode_action, ActionError, ActionParseError};
use crate::context::{render_context, ContextError, RenderedContext, Segment, SegmentKind, Strategy, WindowPolicy};
use crate::token::TokenCounter;
use crate::trajectory::{Step, TaskHeader, Trajectory};

/// Reasoning bodies shorter than this many whitespace tokens are only
/// matched through step-tagged reasoning segments during audits.
pub const MIN_SUBSTRING_AUDIT_TOKENS: usize = 8;

/// SFT sequence budget; longer snapshots are dropped at compile time.
pub const DEFAULT_MAX_SEQUENCE_TOKENS: usize = 26000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub reasoning: String,
    pub digest: String,
    pub action_xml: String,
}

impl Target {
    pub fn tokens(&self, counter: &TokenCounter) -> usize {
        counter.count(&self.reasoning) + counter.count(&self.digest) + counter.count(&self.action_xml)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub context: RenderedContext,
    pub target: Target,
    pub step: usize,
    pub task_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotSet {
    pub snapshots: Vec<Snapshot>,
    pub window_used: usize,
    pub counter_mode: String,
}

impl SnapshotSet {
    pub fn task_id(&self) -> Option<&str> {
        self.snapshots.first().map(|s| s.task_id.as_str())
    }

    /// Splits snapshot steps into those within `max_tokens` (context plus
    /// target) and those over it, as `(kept, dropped)` with token totals.
    pub fn partition_by_length(
        &self,
        max_tokens: usize,
        counter: &TokenCounter,
    ) -> (Vec<usize>, Vec<(usize, usize)>) {
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for s in &self.snapshots {
            let total = s.context.total_tokens + s.target.tokens(counter);
            if total > max_tokens {
                dropped.push((s.step, total));
            } else {
                kept.push(s.step);
            }
        }
        (kept, dropped)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("trajectory {0} has no steps")]
    EmptyTrajectory(String),
    #[error("step {step}: {what} missing; trajectory must be enriched before compilation")]
    MissingData { step: usize, what: &'static str },
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("step {step}: {source}")]
    Action {
        step: usize,
        #[source]
        source: ActionError,
    },
}

pub fn compile_snapshots(
    traj: &Trajectory,
    policy: &WindowPolicy,
    counter: &TokenCounter,
) -> Result<SnapshotSet, SnapshotError> {
    if traj.is_empty() {
        return Err(SnapshotError::EmptyTrajectory(traj.task_id.clone()));
    }
    for step in &traj.steps {
        if step.reasoning.is_none() {
            return Err(SnapshotError::MissingData {
                step: step.index,
                what: "reasoning",
            });
        }
        if step.digest.is_none() {
            return Err(SnapshotError::MissingData {
                step: step.index,
                what: "digest",
            });
        }
    }
    let window = policy.resolve(&traj.task_id);
    let strategy = Strategy::dynamic(window);

    let snapshots = traj
        .steps
        .iter()
        .map(|step| {
            let context = render_context(traj, step.index, &strategy, counter)?;
            let action_xml = encode_action(&step.action).map_err(|source| SnapshotError::Action {
                step: step.index,
                source,
            })?;
            Ok(Snapshot {
                context,
                target: Target {
                    reasoning: step.reasoning.clone().unwrap_or_default(),
                    digest: step.digest.clone().unwrap_or_default(),
                    action_xml,
                },
                step: step.index,
                task_id: traj.task_id.clone(),
            })
        })
        .collect::<Result<Vec<_>, SnapshotError>>()?;

    Ok(SnapshotSet {
        snapshots,
        window_used: window,
        counter_mode: counter.mode_label(),
    })
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    kind: SegmentKind,
    step_index: usize,
    text: String,
    token_count: usize,
    loss: u8,
}

#[derive(Serialize, Deserialize)]
struct TargetRecord {
    kind: TargetKind,
    text: String,
    loss: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TargetKind {
    Reasoning,
    Digest,
    Action,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRecord {
    task_id: String,
    step: usize,
    window: usize,
    counter: String,
    segments: Vec<SegmentRecord>,
    target: Vec<TargetRecord>,
}

fn to_record(set: &SnapshotSet, s: &Snapshot) -> SnapshotRecord {
    SnapshotRecord {
        task_id: s.task_id.clone(),
        step: s.step,
        window: set.window_used,
        counter: set.counter_mode.clone(),
        segments: s
            .context
            .segments
            .iter()
            .map(|seg| SegmentRecord {
                kind: seg.kind,
                step_index: seg.step_index,
                text: seg.text.clone(),
                token_count: seg.token_count,
                loss: 0,
            })
            .collect(),
        target: [
            (TargetKind::Reasoning, &s.target.reasoning),
            (TargetKind::Digest, &s.target.digest),
            (TargetKind::Action, &s.target.action_xml),
        ]
        .into_iter()
        .map(|(kind, text)| TargetRecord {
            kind,
            text: text.clone(),
            loss: 1,
        })
        .collect(),
    }
}

/// One JSON line per snapshot, in step order.
pub fn serialize_snapshots(set: &SnapshotSet) -> String {
    serialize_snapshot_steps(set, None)
}

/// Like [`serialize_snapshots`], restricted to the given steps when `only`
/// is set.
pub fn serialize_snapshot_steps(set: &SnapshotSet, only: Option<&[usize]>) -> String {
    let mut out = String::new();
    for s in &set.snapshots {
        if only.is_some_and(|keep| !keep.contains(&s.step)) {
            continue;
        }
        out.push_str(&serde_json::to_string(&to_record(set, s)).expect("snapshot serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("snapshot line {line}: {reason}")]
pub struct SnapshotParseError {
    pub line: usize,
    pub reason: String,
}

/// Parses snapshot JSONL back into sets, grouping consecutive lines that
/// share a task id.
pub fn parse_snapshots(text: &str) -> Result<Vec<SnapshotSet>, SnapshotParseError> {
    let mut sets: Vec<SnapshotSet> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |reason: String| SnapshotParseError { line, reason };
        let rec: SnapshotRecord = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if rec.segments.iter().any(|s| s.loss != 0) || rec.target.iter().any(|t| t.loss != 1) {
            return Err(err("loss flags must be 0 on context and 1 on target".into()));
        }
        let kinds: Vec<TargetKind> = rec.target.iter().map(|t| t.kind).collect();
        if kinds != [TargetKind::Reasoning, TargetKind::Digest, TargetKind::Action] {
            return Err(err("target must be reasoning, digest, action in that order".into()));
        }
        let mut texts = rec.target.into_iter().map(|t| t.text);
        let target = Target {
            reasoning: texts.next().unwrap_or_default(),
            digest: texts.next().unwrap_or_default(),
            action_xml: texts.next().unwrap_or_default(),
        };
        let segments = rec
            .segments
            .into_iter()
            .map(|s| Segment {
                kind: s.kind,
                step_index: s.step_index,
                text: s.text,
                token_count: s.token_count,
            })
            .collect();
        let snapshot = Snapshot {
            context: RenderedContext::from_segments(segments, rec.step, Strategy::dynamic(rec.window)),
            target,
            step: rec.step,
            task_id: rec.task_id,
        };
        match sets.last_mut() {
            Some(set) if set.task_id() == Some(snapshot.task_id.as_str()) => {
                if set.window_used != rec.window {
                    return Err(err("window differs within one task".into()));
                }
                set.snapshots.push(snapshot);
            }
            _ => sets.push(SnapshotSet {
                snapshots: vec![snapshot],
                window_used: rec.window,
                counter_mode: rec.counter,
            }),
        }
    }
    Ok(sets)
}

/// Dataset provenance sidecar written next to a snapshot file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub source_sha256: String,
    pub counter: String,
    pub trajectories: usize,
    pub snapshots: usize,
    pub max_sequence_tokens: Option<usize>,
    pub tasks: Vec<ManifestTask>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestTask {
    pub task_id: String,
    pub window: usize,
    pub steps: usize,
    pub snapshots: usize,
    pub dropped_steps: Vec<usize>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    /// Snapshot whose context leaks the reasoning.
    pub snapshot_step: usize,
    /// Step the leaked reasoning belongs to.
    pub source_step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DigestGap {
    pub snapshot_step: usize,
    pub missing_step: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub task_id: String,
    pub window: usize,
    pub violations: Vec<Violation>,
    pub digest_gaps: Vec<DigestGap>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.digest_gaps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("snapshot set is for task `{set}` but trajectory is `{traj}`")]
    TaskMismatch { set: String, traj: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RebuildError {
    #[error("snapshot set is empty")]
    Empty,
    #[error("snapshot {found} found where step {expected} was expected")]
    Gap { expected: usize, found: usize },
    #[error("snapshot {0} has no {1} segment")]
    MissingSegment(usize, &'static str),
    #[error("snapshot {step}: {source}")]
    Action {
        step: usize,
        #[source]
        source: ActionParseError,
    },
}

/// Recovers the source trajectory from its own snapshots: each target holds
/// `(r_t, d_t, a_t)` and each context ends with `o_t` after the header.
/// Success is unknown and set to `false`.
pub fn trajectory_from_snapshots(set: &SnapshotSet) -> Result<Trajectory, RebuildError> {
    let first = set.snapshots.first().ok_or(RebuildError::Empty)?;
    let header_text = |kind: SegmentKind, what| {
        first
            .context
            .segments
            .iter()
            .find(|s| s.kind == kind)
            .map(|s| s.text.clone())
            .ok_or(RebuildError::MissingSegment(first.step, what))
    };
    let header = TaskHeader {
        system_prompt: header_text(SegmentKind::System, "system")?,
        issue_statement: header_text(SegmentKind::Task, "task")?,
    };
    let mut steps = Vec::with_capacity(set.snapshots.len());
    for (i, snap) in set.snapshots.iter().enumerate() {
        if snap.step != i + 1 {
            return Err(RebuildError::Gap {
                expected: i + 1,
                found: snap.step,
            });
        }
        let observation = snap
            .context
            .segments
            .iter()
            .rev()
            .find(|s| s.kind == SegmentKind::Observation && s.step_index == snap.step)
            .ok_or(RebuildError::MissingSegment(snap.step, "observation"))?;
        let action = decode_action(&snap.target.action_xml).map_err(|source| RebuildError::Action {
            step: snap.step,
            source,
        })?;
        steps.push(
            Step::new(snap.step, observation.text.clone(), action)
                .with_thinking(snap.target.reasoning.clone(), snap.target.digest.clone()),
        );
    }
    Ok(Trajectory::new(first.task_id.clone(), header, false, steps))
}

/// Checks every snapshot context against the visibility rule: reasoning of
/// step `j` may appear in snapshot `t` only when `t - N <= j <= t - 1`, and
/// the digest of every `j < t` must be present.
pub fn audit_visibility(set: &SnapshotSet, traj: &Trajectory) -> Result<AuditReport, AuditError> {
    if let Some(id) = set.task_id() {
        if id != traj.task_id {
            return Err(AuditError::TaskMismatch {
                set: id.to_string(),
                traj: traj.task_id.clone(),
            });
        }
    }
    let n = set.window_used;
    let mut violations = BTreeSet::new();
    let mut gaps = BTreeSet::new();

    for snap in &set.snapshots {
        let t = snap.step;
        let segs = &snap.context.segments;
        for step in &traj.steps {
            let j = step.index;
            let visible = j < t && j + n >= t;
            if !visible {
                let tagged = segs
                    .iter()
                    .any(|s| s.kind == SegmentKind::Reasoning && s.step_index == j);
                let leaked = tagged
                    || step.reasoning.as_deref().is_some_and(|r| {
                        TokenCounter::Whitespace.count(r) >= MIN_SUBSTRING_AUDIT_TOKENS
                            && segs.iter().any(|s| s.text.contains(r))
                    });
                if leaked {
                    violations.insert(Violation {
                        snapshot_step: t,
                        source_step: j,
                    });
                }
            }
            if j < t {
                let covered = segs.iter().any(|s| {
                    s.kind == SegmentKind::Digest
                        && s.step_index == j
                        && Some(s.text.as_str()) == step.digest.as_deref()
                });
                if !covered {
                    gaps.insert(DigestGap {
                        snapshot_step: t,
                        missing_step: j,
                    });
                }
            }
        }
    }

    Ok(AuditReport {
        task_id: traj.task_id.clone(),
        window: n,
        violations: violations.into_iter().collect(),
        digest_gaps: gaps.into_iter().collect(),
    })
}
