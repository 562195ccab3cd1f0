//! Constant-size environment and policy for analytic rollout checks.
//!
//! Every observation has exactly `observation_tokens` whitespace tokens and
//! every response carries reasoning and digest of fixed size, so context
//! growth and cap crossings have closed forms.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::action::{encode_action, tools, Action};
use crate::response::ResponseTags;
use crate::trajectory::TaskHeader;

use super::clock::Clock;
use super::env::{EnvError, Environment, Transition};
use super::policy::{Policy, PolicyError};

/// `n` distinct whitespace-separated words tagged with `tag`.
pub fn words(tag: &str, n: usize) -> String {
    (0..n).map(|i| format!("{tag}.{i}")).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone)]
pub struct FixedSizeEnvironment {
    pub task_id: String,
    pub observation_tokens: usize,
    header: TaskHeader,
    steps: usize,
    submitted: bool,
}

impl FixedSizeEnvironment {
    pub fn new(task_id: impl Into<String>, observation_tokens: usize) -> Self {
        Self {
            task_id: task_id.into(),
            observation_tokens,
            header: TaskHeader {
                system_prompt: "system".into(),
                issue_statement: "issue".into(),
            },
            steps: 0,
            submitted: false,
        }
    }

    pub fn with_header(mut self, header: TaskHeader) -> Self {
        self.header = header;
        self
    }

    fn observation(&self) -> String {
        words(&format!("o{}", self.steps + 1), self.observation_tokens)
    }
}

impl Environment for FixedSizeEnvironment {
    fn task_id(&self) -> &str {
        &self.task_id
    }

    fn header(&self) -> TaskHeader {
        self.header.clone()
    }

    fn reset(&mut self) -> Result<String, EnvError> {
        self.steps = 0;
        self.submitted = false;
        Ok(self.observation())
    }

    fn step(&mut self, action: &Action) -> Result<Transition, EnvError> {
        if self.submitted {
            return Err(EnvError::Finished);
        }
        self.steps += 1;
        if action.is_submit() {
            self.submitted = true;
            return Ok(Transition {
                observation: "Submitted.".into(),
                done: true,
            });
        }
        Ok(Transition {
            observation: self.observation(),
            done: false,
        })
    }

    fn verdict(&self) -> bool {
        self.submitted
    }
}

/// Responds with fixed-size reasoning and digest and a one-token bash call,
/// submitting at `submit_at` if set. With `thinking` off, emits only the
/// action.
#[derive(Debug, Clone)]
pub struct FixedSizePolicy {
    pub reasoning_tokens: usize,
    pub digest_tokens: usize,
    pub thinking: bool,
    pub submit_at: Option<usize>,
    /// Per-step override of the reasoning size, `(step, tokens)`.
    pub reasoning_override: Option<(usize, usize)>,
    pub tags: ResponseTags,
    step: usize,
}

impl FixedSizePolicy {
    pub fn new(reasoning_tokens: usize, digest_tokens: usize) -> Self {
        Self {
            reasoning_tokens,
            digest_tokens,
            thinking: true,
            submit_at: None,
            reasoning_override: None,
            tags: ResponseTags::default(),
            step: 0,
        }
    }

    pub fn submit_at(mut self, step: usize) -> Self {
        self.submit_at = Some(step);
        self
    }

    pub fn without_thinking(mut self) -> Self {
        self.thinking = false;
        self
    }

    pub fn action_for(step: usize, submit: bool) -> Action {
        if submit {
            Action::submit()
        } else {
            Action::new(tools::EXECUTE_BASH, [("cmd", format!("probe-{step}"))]).expect("valid action")
        }
    }

    /// Whitespace tokens of the response at `step`: reasoning + digest + the
    /// four tag tokens + one action token.
    pub fn response_tokens(&self, step: usize) -> usize {
        if !self.thinking {
            return 1;
        }
        let r = match self.reasoning_override {
            Some((s, n)) if s == step => n,
            _ => self.reasoning_tokens,
        };
        r + self.digest_tokens + 4 + 1
    }
}

impl Policy for FixedSizePolicy {
    fn respond(&mut self, _context: &str) -> Result<String, PolicyError> {
        self.step += 1;
        let t = self.step;
        let submit = self.submit_at == Some(t);
        let xml = encode_action(&Self::action_for(t, submit)).expect("valid action");
        if !self.thinking {
            return Ok(xml);
        }
        let r_tokens = match self.reasoning_override {
            Some((s, n)) if s == t => n,
            _ => self.reasoning_tokens,
        };
        Ok(self.tags.compose(
            &words(&format!("r{t}"), r_tokens),
            &words(&format!("d{t}"), self.digest_tokens),
            &xml,
        ))
    }
}

/// Policy wrapper that advances a shared virtual clock on each call.
pub struct TimedPolicy<P> {
    pub inner: P,
    pub clock: VirtualClock,
    pub per_call: Duration,
}

impl<P: Policy> Policy for TimedPolicy<P> {
    fn respond(&mut self, context: &str) -> Result<String, PolicyError> {
        self.clock.advance(self.per_call);
        self.inner.respond(context)
    }
}

/// Manually advanced clock shared between a rollout and its test doubles.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    millis: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn advance(&self, by: Duration) {
        self.millis.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn elapsed(&self) -> Duration {
        Duration::from_millis(self.millis.load(Ordering::SeqCst))
    }
}
