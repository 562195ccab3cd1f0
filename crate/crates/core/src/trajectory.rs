//! Trajectory data model and its JSONL form.
//!
//! A trajectory file holds one header record followed by one record per
//! step:
//!
//! ```text
//! {"task_id":..,"system_prompt":..,"issue_statement":..,"success":..}
//! {"index":1,"observation":..,"shallow_thought":..,"reasoning":..,"digest":..,"action":{..}}
//! ```
//!
//! Files may concatenate several trajectories; each header starts a new one.
//! Unknown fields are kept in `extras` and written back unchanged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::action::{Action, ActionError};

pub type Extras = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskHeader {
    pub system_prompt: String,
    pub issue_statement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub observation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shallow_thought: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    pub action: Action,
    #[serde(flatten)]
    pub extras: Extras,
}

impl Step {
    pub fn new(index: usize, observation: impl Into<String>, action: Action) -> Self {
        Self {
            index,
            observation: observation.into(),
            shallow_thought: None,
            reasoning: None,
            digest: None,
            action,
            extras: Extras::new(),
        }
    }

    pub fn with_shallow_thought(mut self, thought: impl Into<String>) -> Self {
        self.shallow_thought = Some(thought.into());
        self
    }

    pub fn with_thinking(mut self, reasoning: impl Into<String>, digest: impl Into<String>) -> Self {
        self.reasoning = Some(reasoning.into());
        self.digest = Some(digest.into());
        self
    }

    pub fn is_enriched(&self) -> bool {
        self.reasoning.is_some() && self.digest.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub header: TaskHeader,
    pub success: bool,
    pub steps: Vec<Step>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: Extras,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("step {step}: expected index {expected}")]
    NonConsecutive { step: usize, expected: usize },
    #[error("step {0}: reasoning and digest must be present together")]
    UnpairedThinking(usize),
    #[error("step {step}: {source}")]
    Action {
        step: usize,
        #[source]
        source: ActionError,
    },
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>, header: TaskHeader, success: bool, steps: Vec<Step>) -> Self {
        Self {
            task_id: task_id.into(),
            header,
            success,
            steps,
            extras: Extras::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step `t`, 1-based.
    pub fn step(&self, t: usize) -> Option<&Step> {
        t.checked_sub(1).and_then(|i| self.steps.get(i))
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        for (i, step) in self.steps.iter().enumerate() {
            validate_step(step, i + 1)?;
        }
        Ok(())
    }

    /// Steps whose digest is present but empty. Accepted, but reported by
    /// validation tooling.
    pub fn empty_digest_steps(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.digest.as_deref().is_some_and(str::is_empty))
            .map(|s| s.index)
            .collect()
    }
}

fn validate_step(step: &Step, expected: usize) -> Result<(), TrajectoryError> {
    if step.index != expected {
        return Err(TrajectoryError::NonConsecutive {
            step: step.index,
            expected,
        });
    }
    if step.reasoning.is_some() != step.digest.is_some() {
        return Err(TrajectoryError::UnpairedThinking(step.index));
    }
    step.action.validate().map_err(|source| TrajectoryError::Action {
        step: step.index,
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line} ({record}): {reason}")]
pub struct SchemaError {
    pub line: usize,
    pub record: String,
    pub reason: String,
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    task_id: String,
    system_prompt: String,
    issue_statement: String,
    success: bool,
    #[serde(flatten)]
    extras: Extras,
}

/// Parses a document holding exactly one trajectory.
pub fn parse_trajectory(text: &str) -> Result<Trajectory, SchemaError> {
    let mut all = parse_trajectories(text)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        0 => Err(SchemaError {
            line: 1,
            record: "header".into(),
            reason: "document is empty".into(),
        }),
        n => Err(SchemaError {
            line: 1,
            record: "document".into(),
            reason: format!("expected one trajectory, found {n}"),
        }),
    }
}

/// Parses a document holding any number of concatenated trajectories.
pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>, SchemaError> {
    let mut out: Vec<Trajectory> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| SchemaError {
            line,
            record: "record".into(),
            reason: format!("invalid JSON: {e}"),
        })?;
        let is_header = value.get("index").is_none() && value.get("task_id").is_some();
        if is_header {
            let h: HeaderRecord = serde_json::from_value(value).map_err(|e| SchemaError {
                line,
                record: "header".into(),
                reason: e.to_string(),
            })?;
            out.push(Trajectory {
                task_id: h.task_id,
                header: TaskHeader {
                    system_prompt: h.system_prompt,
                    issue_statement: h.issue_statement,
                },
                success: h.success,
                steps: Vec::new(),
                extras: h.extras,
            });
            continue;
        }
        let record = match value.get("index").and_then(Value::as_u64) {
            Some(idx) => format!("step {idx}"),
            None => "step".to_string(),
        };
        let Some(traj) = out.last_mut() else {
            return Err(SchemaError {
                line,
                record,
                reason: "step record before any header".into(),
            });
        };
        let step: Step = serde_json::from_value(value).map_err(|e| SchemaError {
            line,
            record: record.clone(),
            reason: e.to_string(),
        })?;
        validate_step(&step, traj.steps.len() + 1).map_err(|e| SchemaError {
            line,
            record,
            reason: e.to_string(),
        })?;
        traj.steps.push(step);
    }
    Ok(out)
}

/// Canonical JSONL: header line then one line per step, trailing newline.
pub fn serialize_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    let header = HeaderRecord {
        task_id: traj.task_id.clone(),
        system_prompt: traj.header.system_prompt.clone(),
        issue_statement: traj.header.issue_statement.clone(),
        success: traj.success,
        extras: traj.extras.clone(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for step in &traj.steps {
        out.push_str(&serde_json::to_string(step).expect("step serializes"));
        out.push('\n');
    }
    out
}

pub fn serialize_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> String {
    trajs.into_iter().map(serialize_trajectory).collect()
}
