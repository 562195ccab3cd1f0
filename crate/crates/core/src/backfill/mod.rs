//! Hindsight backfill of reasoning and digests.
//!
//! A shallow trajectory carries, per step, an observation, a short thought
//! and an action. For each step in ascending order the synthesizer is given
//! the dynamic context the agent would have seen (including digests it
//! already produced for earlier steps), the short thought as a hint, and
//! the ground-truth action; its reply is parsed into `(reasoning, digest)`
//! and installed before moving on.

mod client;
mod prompt;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{encode_action, ActionError};
use crate::context::{render_context, ContextError, Strategy, WindowPolicy};
use crate::response::{parse_synthesizer_response, FormatError};
use crate::token::TokenCounter;
use crate::trajectory::Trajectory;

pub use client::{
    extract_completion, prompt_hash, ClientError, CompletionBackend, Endpoint, Exchange, HttpBackend,
    MockBackend, Recorder, ReplayBackend, ScriptedBackend, ScriptedReply, SynthesizerClient,
    TranscriptEntry,
};
pub use prompt::{
    instruction, render_prompt, ACTION_LABEL, HINT_LABEL, HISTORY_LABEL, INSTRUCTION_LABEL, ISSUE_LABEL,
    OBSERVATION_LABEL, STEP_LABEL, SYSTEM_LABEL,
};

pub const DEFAULT_MAX_ATTEMPTS: usize = 3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackfillRequest {
    pub prompt: String,
    pub step: usize,
    pub task_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackfillResult {
    pub reasoning: String,
    pub digest: String,
    pub attempts_used: usize,
    pub rejected_samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackfillError {
    #[error("trajectory {0} has no steps")]
    EmptyTrajectory(String),
    #[error("step {t} out of range 1..={len}")]
    OutOfRange { t: usize, len: usize },
    #[error("step {step} is not enriched yet; backfill proceeds strictly step by step")]
    Sequencing { step: usize },
    #[error("step {step} has no shallow thought to use as hint")]
    MissingHint { step: usize },
    #[error("step {step} already has reasoning")]
    AlreadyEnriched { step: usize },
    #[error("step {step}: all {attempts} attempts failed (last: {last_error})")]
    Exhausted {
        step: usize,
        attempts: usize,
        samples: Vec<String>,
        last_error: String,
    },
    #[error("step {step}: {source}")]
    Client {
        step: usize,
        #[source]
        source: ClientError,
    },
    #[error("checkpoint is for task `{checkpoint}` but trajectory is `{traj}`")]
    CheckpointMismatch { checkpoint: String, traj: String },
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("step {step}: {source}")]
    Action {
        step: usize,
        #[source]
        source: ActionError,
    },
}

/// Builds the synthesizer prompt for step `t`.
pub fn build_backfill_prompt(
    traj: &Trajectory,
    t: usize,
    policy: &WindowPolicy,
    counter: &TokenCounter,
    client: &SynthesizerClient,
) -> Result<BackfillRequest, BackfillError> {
    if t < 1 || t > traj.len() {
        return Err(BackfillError::OutOfRange { t, len: traj.len() });
    }
    if let Some(step) = traj.steps[..t - 1].iter().find(|s| !s.is_enriched()) {
        return Err(BackfillError::Sequencing { step: step.index });
    }
    let current = &traj.steps[t - 1];
    let hint = current
        .shallow_thought
        .as_deref()
        .ok_or(BackfillError::MissingHint { step: t })?;
    let action_xml = encode_action(&current.action).map_err(|source| BackfillError::Action { step: t, source })?;
    let ctx = render_context(traj, t, &Strategy::Dynamic(*policy), counter)?;
    Ok(BackfillRequest {
        prompt: render_prompt(&ctx, hint, &action_xml, &client.tags),
        step: t,
        task_id: traj.task_id.clone(),
    })
}

/// Requests and parses `(r_t, d_t)`, retrying up to `client.max_attempts`.
pub fn backfill_step(
    traj: &Trajectory,
    t: usize,
    policy: &WindowPolicy,
    counter: &TokenCounter,
    client: &SynthesizerClient,
) -> Result<BackfillResult, BackfillError> {
    let request = build_backfill_prompt(traj, t, policy, counter, client)?;
    let mut rejected = Vec::new();
    let mut last_error = String::new();
    for attempt in 1..=client.max_attempts {
        match client.complete(&request.prompt) {
            Ok(text) => match parse_synthesizer_response(&text, &client.tags) {
                Ok((reasoning, digest)) => {
                    return Ok(BackfillResult {
                        reasoning,
                        digest,
                        attempts_used: attempt,
                        rejected_samples: rejected,
                    })
                }
                Err(FormatError { code }) => {
                    last_error = format!("format error: {code}");
                    rejected.push(text);
                }
            },
            Err(e) if e.is_retryable() => last_error = e.to_string(),
            Err(source) => return Err(BackfillError::Client { step: t, source }),
        }
    }
    Err(BackfillError::Exhausted {
        step: t,
        attempts: client.max_attempts,
        samples: rejected,
        last_error,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedStep {
    pub index: usize,
    pub reasoning: String,
    pub digest: String,
}

/// Resume point written when a trajectory fails part-way.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub task_id: String,
    pub last_enriched_step: usize,
    #[serde(default)]
    pub enriched: Vec<EnrichedStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("backfill of {} failed: {error}", checkpoint.task_id)]
pub struct BackfillFailure {
    pub error: BackfillError,
    pub checkpoint: Checkpoint,
}

pub fn backfill_trajectory(
    traj: &Trajectory,
    policy: &WindowPolicy,
    counter: &TokenCounter,
    client: &SynthesizerClient,
) -> Result<Trajectory, BackfillFailure> {
    backfill_trajectory_from(traj, None, policy, counter, client)
}

/// Backfills every step, optionally resuming after the steps recorded in
/// `checkpoint`. Nothing partial is returned: on failure the caller gets the
/// error plus a checkpoint to resume from.
pub fn backfill_trajectory_from(
    traj: &Trajectory,
    checkpoint: Option<&Checkpoint>,
    policy: &WindowPolicy,
    counter: &TokenCounter,
    client: &SynthesizerClient,
) -> Result<Trajectory, BackfillFailure> {
    let fail = |error, enriched: Vec<EnrichedStep>| BackfillFailure {
        error,
        checkpoint: Checkpoint {
            task_id: traj.task_id.clone(),
            last_enriched_step: enriched.len(),
            enriched,
        },
    };
    if traj.is_empty() {
        return Err(fail(BackfillError::EmptyTrajectory(traj.task_id.clone()), vec![]));
    }
    for step in &traj.steps {
        if step.reasoning.is_some() {
            return Err(fail(BackfillError::AlreadyEnriched { step: step.index }, vec![]));
        }
        if step.shallow_thought.is_none() {
            return Err(fail(BackfillError::MissingHint { step: step.index }, vec![]));
        }
    }

    let mut work = traj.clone();
    let mut enriched: Vec<EnrichedStep> = Vec::new();
    if let Some(cp) = checkpoint {
        if cp.task_id != traj.task_id {
            return Err(fail(
                BackfillError::CheckpointMismatch {
                    checkpoint: cp.task_id.clone(),
                    traj: traj.task_id.clone(),
                },
                vec![],
            ));
        }
        for (i, e) in cp.enriched.iter().take(cp.last_enriched_step).enumerate() {
            if e.index != i + 1 || e.index > work.len() {
                return Err(fail(BackfillError::Sequencing { step: i + 1 }, vec![]));
            }
            let step = &mut work.steps[i];
            step.reasoning = Some(e.reasoning.clone());
            step.digest = Some(e.digest.clone());
            enriched.push(e.clone());
        }
    }

    for t in enriched.len() + 1..=work.len() {
        match backfill_step(&work, t, policy, counter, client) {
            Ok(res) => {
                let step = &mut work.steps[t - 1];
                step.reasoning = Some(res.reasoning.clone());
                step.digest = Some(res.digest.clone());
                enriched.push(EnrichedStep {
                    index: t,
                    reasoning: res.reasoning,
                    digest: res.digest,
                });
            }
            Err(error) => return Err(fail(error, enriched)),
        }
    }
    Ok(work)
}

/// Backfills many trajectories with at most `concurrency` in flight. Results
/// are ordered by task id whatever the completion order.
pub fn backfill_batch(
    trajs: &[Trajectory],
    policy: &WindowPolicy,
    counter: &TokenCounter,
    client: &SynthesizerClient,
    concurrency: usize,
) -> Vec<(String, Result<Trajectory, BackfillFailure>)> {
    use rayon::prelude::*;

    let run = || -> Vec<_> {
        trajs
            .par_iter()
            .map(|t| (t.task_id.clone(), backfill_trajectory(t, policy, counter, client)))
            .collect()
    };
    let mut out = match rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => trajs
            .iter()
            .map(|t| (t.task_id.clone(), backfill_trajectory(t, policy, counter, client)))
            .collect(),
    };
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::action::{tools, Action};
    use crate::response::ResponseTags;
    use crate::trajectory::{Step, TaskHeader};

    fn shallow(t: usize) -> Trajectory {
        let steps = (1..=t)
            .map(|i| {
                Step::new(i, format!("observation-{i} text"), Action::new(tools::EXECUTE_BASH, [("cmd", format!("cmd-{i}"))]).unwrap())
                    .with_shallow_thought(format!("hint-{i} text"))
            })
            .collect();
        Trajectory::new(
            "task-b",
            TaskHeader {
                system_prompt: "agent system prompt".into(),
                issue_statement: "issue text".into(),
            },
            true,
            steps,
        )
    }

    fn good(i: usize) -> String {
        ResponseTags::default().compose(&format!("reasoning {i}"), &format!("digest {i}"), "")
    }

    fn scripted(replies: Vec<ScriptedReply>, attempts: usize) -> SynthesizerClient {
        SynthesizerClient::new(Arc::new(ScriptedBackend::new(replies)), attempts)
    }

    #[test]
    fn first_step_prompt_has_empty_history() {
        let req = build_backfill_prompt(&shallow(3), 1, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &SynthesizerClient::mock()).unwrap();
        let history = req.prompt.split(HISTORY_LABEL).nth(1).unwrap();
        assert!(history.starts_with("\n\n### CURRENT OBSERVATION\nobservation-1 text"));
        assert!(req.prompt.contains("### SEMANTIC HINT\nhint-1 text\n"));
        assert!(req.prompt.contains("### GROUND-TRUTH ACTION\n<function=execute_bash><parameter=cmd>cmd-1</parameter></function>\n"));
    }

    #[test]
    fn step_four_window_two_prompt() {
        let mut tr = shallow(5);
        for i in 0..3 {
            tr.steps[i] = tr.steps[i].clone().with_thinking(format!("R{} body", i + 1), format!("D{} body", i + 1));
        }
        let req = build_backfill_prompt(&tr, 4, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &SynthesizerClient::mock()).unwrap();
        assert!(req.prompt.contains("D1 body") && !req.prompt.contains("R1 body"));
        for s in ["R2 body", "D2 body", "R3 body", "D3 body"] {
            assert!(req.prompt.contains(s), "{s}");
        }
        assert!(!req.prompt.contains("observation-5"));
    }

    #[test]
    fn sequencing_error_names_step() {
        let mut tr = shallow(4);
        tr.steps[0] = tr.steps[0].clone().with_thinking("r", "d");
        let e = build_backfill_prompt(&tr, 3, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &SynthesizerClient::mock()).unwrap_err();
        assert_eq!(e, BackfillError::Sequencing { step: 2 });
    }

    #[test]
    fn first_attempt_success() {
        let client = scripted(vec![ScriptedReply::Text(good(1))], 3);
        let res = backfill_step(&shallow(1), 1, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &client).unwrap();
        assert_eq!(res.attempts_used, 1);
        assert_eq!(res.reasoning, "reasoning 1");
        assert!(res.rejected_samples.is_empty());
    }

    #[test]
    fn fail_twice_then_succeed() {
        let bad1 = "<digest>d</digest><think>r</think>".to_string();
        let bad2 = "no blocks at all".to_string();
        let client = scripted(
            vec![ScriptedReply::Text(bad1.clone()), ScriptedReply::Text(bad2.clone()), ScriptedReply::Text(good(1))],
            3,
        );
        let res = backfill_step(&shallow(1), 1, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &client).unwrap();
        assert_eq!(res.attempts_used, 3);
        assert_eq!(res.rejected_samples, vec![bad1, bad2]);
    }

    #[test]
    fn always_malformed_exhausts() {
        let client = scripted(
            vec![ScriptedReply::Text("x".into()), ScriptedReply::Text("y".into()), ScriptedReply::Text(good(1))],
            2,
        );
        match backfill_step(&shallow(1), 1, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &client) {
            Err(BackfillError::Exhausted { samples, attempts, .. }) => {
                assert_eq!(attempts, 2);
                assert_eq!(samples, vec!["x", "y"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn timeout_counts_as_attempt() {
        let client = scripted(vec![ScriptedReply::Timeout, ScriptedReply::Text(good(1))], 2);
        let res = backfill_step(&shallow(1), 1, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &client).unwrap();
        assert_eq!(res.attempts_used, 2);
        assert!(res.rejected_samples.is_empty());
        let client = scripted(vec![ScriptedReply::Timeout], 1);
        assert!(matches!(
            backfill_step(&shallow(1), 1, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &client),
            Err(BackfillError::Exhausted { .. })
        ));
    }

    #[test]
    fn whole_trajectory_with_mock() {
        let rec = Arc::new(Recorder::new(Arc::new(MockBackend::default())));
        let client = SynthesizerClient::new(rec.clone(), 1);
        let src = shallow(3);
        let out = backfill_trajectory(&src, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &client).unwrap();
        assert!(out.steps.iter().all(|s| s.is_enriched()));
        assert_eq!(src, shallow(3));
        let prompts = rec.prompts();
        assert_eq!(prompts.len(), 3);
        // later prompts carry the digests synthesized earlier
        for (t, p) in prompts.iter().enumerate().skip(1) {
            for earlier in &out.steps[..t] {
                assert!(p.contains(earlier.digest.as_deref().unwrap()));
            }
        }
        for (a, b) in src.steps.iter().zip(&out.steps) {
            assert_eq!((&a.observation, &a.action, &a.shallow_thought), (&b.observation, &b.action, &b.shallow_thought));
        }
    }

    #[test]
    fn empty_trajectory_guard() {
        let tr = Trajectory::new("e", shallow(1).header, true, vec![]);
        let err = backfill_trajectory(&tr, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &SynthesizerClient::mock()).unwrap_err();
        assert_eq!(err.error, BackfillError::EmptyTrajectory("e".into()));
    }

    #[test]
    fn failure_yields_checkpoint_and_resume_completes() {
        let tr = shallow(3);
        let client = scripted(vec![ScriptedReply::Text(good(1)), ScriptedReply::Text("bad".into())], 1);
        let fail = backfill_trajectory(&tr, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &client).unwrap_err();
        assert!(matches!(fail.error, BackfillError::Exhausted { step: 2, .. }));
        assert_eq!(fail.checkpoint.last_enriched_step, 1);
        assert_eq!(fail.checkpoint.enriched[0].reasoning, "reasoning 1");

        let client = scripted(vec![ScriptedReply::Text(good(2)), ScriptedReply::Text(good(3))], 1);
        let out = backfill_trajectory_from(&tr, Some(&fail.checkpoint), &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &client).unwrap();
        let digests: Vec<_> = out.steps.iter().map(|s| s.digest.clone().unwrap()).collect();
        assert_eq!(digests, ["digest 1", "digest 2", "digest 3"]);
    }

    #[test]
    fn already_enriched_rejected() {
        let mut tr = shallow(2);
        tr.steps[1] = tr.steps[1].clone().with_thinking("r", "d");
        let err = backfill_trajectory(&tr, &WindowPolicy::fixed(2), &TokenCounter::Whitespace, &SynthesizerClient::mock()).unwrap_err();
        assert_eq!(err.error, BackfillError::AlreadyEnriched { step: 2 });
    }

    #[test]
    fn batch_orders_by_task_id() {
        let mut trajs = Vec::new();
        for id in ["zeta", "alpha", "mu"] {
            let mut t = shallow(2);
            t.task_id = id.into();
            trajs.push(t);
        }
        let out = backfill_batch(&trajs, &WindowPolicy::uniform(2, 5, 3).unwrap(), &TokenCounter::Whitespace, &SynthesizerClient::mock(), 2);
        let ids: Vec<_> = out.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["alpha", "mu", "zeta"]);
        assert!(out.iter().all(|(_, r)| r.is_ok()));
    }
}
