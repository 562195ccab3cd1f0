//! Context rendering under the four history strategies.
//!
//! At step `t` the agent sees a fixed prefix (system prompt, issue
//! statement), one group of segments per earlier step, and finally the
//! observation `o_t`. What each earlier group contains depends on the
//! strategy:
//!
//! | strategy           | group for step `j < t`                                   |
//! |--------------------|----------------------------------------------------------|
//! | `disable-thinking` | `o_j, a_j`                                               |
//! | `current-step`     | `o_j, d_j, a_j`                                          |
//! | `interleaved`      | `o_j, r_j, d_j, a_j`                                     |
//! | `dynamic(N)`       | `o_j, r_j, d_j, a_j` if `j >= t - N`, else `o_j, d_j, a_j` |
//!
//! Observations and actions are always kept; only reasoning is evicted.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::action::{encode_action, ActionError};
use crate::token::TokenCounter;
use crate::trajectory::{Step, TaskHeader, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WindowMode {
    Fixed(usize),
    Uniform { lo: usize, hi: usize },
}

/// Size of the sliding reasoning window.
///
/// A uniform policy draws one size per trajectory, keyed by `(seed, task_id)`,
/// so backfill, compilation and rollouts agree on `N` for the same task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub mode: WindowMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("uniform window requires 1 <= lo <= hi, got {lo}..{hi}")]
    BadRange { lo: usize, hi: usize },
    #[error("cannot parse window spec `{0}` (expected N or LO..HI)")]
    Syntax(String),
}

impl WindowPolicy {
    pub fn fixed(n: usize) -> Self {
        Self {
            mode: WindowMode::Fixed(n),
            seed: 0,
        }
    }

    pub fn uniform(lo: usize, hi: usize, seed: u64) -> Result<Self, WindowError> {
        if lo < 1 || lo > hi {
            return Err(WindowError::BadRange { lo, hi });
        }
        Ok(Self {
            mode: WindowMode::Uniform { lo, hi },
            seed,
        })
    }

    /// Parses `N` or `LO..HI`.
    pub fn parse(spec: &str, seed: u64) -> Result<Self, WindowError> {
        let spec = spec.trim();
        if let Some((lo, hi)) = spec.split_once("..") {
            let lo = lo.trim().parse().map_err(|_| WindowError::Syntax(spec.into()))?;
            let hi = hi.trim().parse().map_err(|_| WindowError::Syntax(spec.into()))?;
            return Self::uniform(lo, hi, seed);
        }
        let n = spec.parse().map_err(|_| WindowError::Syntax(spec.into()))?;
        Ok(Self {
            mode: WindowMode::Fixed(n),
            seed,
        })
    }

    pub fn resolve(&self, task_id: &str) -> usize {
        match self.mode {
            WindowMode::Fixed(n) => n,
            WindowMode::Uniform { lo, hi } => {
                let mut hasher = Sha256::new();
                hasher.update(self.seed.to_le_bytes());
                hasher.update(task_id.as_bytes());
                let digest = hasher.finalize();
                let mut seed = [0u8; 32];
                seed.copy_from_slice(&digest);
                ChaCha8Rng::from_seed(seed).gen_range(lo..=hi)
            }
        }
    }
}

impl fmt::Display for WindowPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            WindowMode::Fixed(n) => write!(f, "{n}"),
            WindowMode::Uniform { lo, hi } => write!(f, "{lo}..{hi}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    DisableThinking,
    Interleaved,
    CurrentStep,
    Dynamic(WindowPolicy),
}

impl Strategy {
    pub fn dynamic(n: usize) -> Self {
        Self::Dynamic(WindowPolicy::fixed(n))
    }

    pub fn uses_thinking(&self) -> bool {
        !matches!(self, Self::DisableThinking)
    }

    /// Window size in effect for `task_id`; `None` for non-dynamic strategies.
    pub fn window_for(&self, task_id: &str) -> Option<usize> {
        match self {
            Self::Dynamic(p) => Some(p.resolve(task_id)),
            _ => None,
        }
    }

    /// Parses `disable-thinking`, `interleaved`, `current-step`,
    /// `dynamic:N` or `dynamic:LO..HI`.
    pub fn parse(spec: &str, seed: u64) -> Result<Self, StrategyParseError> {
        match spec.trim() {
            "disable-thinking" => Ok(Self::DisableThinking),
            "interleaved" => Ok(Self::Interleaved),
            "current-step" => Ok(Self::CurrentStep),
            other => match other.strip_prefix("dynamic:") {
                Some(w) => Ok(Self::Dynamic(WindowPolicy::parse(w, seed)?)),
                None => Err(StrategyParseError::Unknown(other.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyParseError {
    #[error("unknown strategy `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Window(#[from] WindowError),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DisableThinking => f.write_str("disable-thinking"),
            Self::Interleaved => f.write_str("interleaved"),
            Self::CurrentStep => f.write_str("current-step"),
            Self::Dynamic(p) => write!(f, "dynamic:{p}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = StrategyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    System,
    Task,
    Observation,
    Reasoning,
    Digest,
    Action,
}

impl SegmentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::System => "system",
            Self::Task => "task",
            Self::Observation => "observation",
            Self::Reasoning => "reasoning",
            Self::Digest => "digest",
            Self::Action => "action",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub step_index: usize,
    pub text: String,
    pub token_count: usize,
}

impl Segment {
    fn new(kind: SegmentKind, step_index: usize, text: String, counter: &TokenCounter) -> Self {
        let token_count = counter.count(&text);
        Self {
            kind,
            step_index,
            text,
            token_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedContext {
    pub segments: Vec<Segment>,
    pub total_tokens: usize,
    /// The step being generated.
    pub step: usize,
    pub strategy: Strategy,
}

impl RenderedContext {
    pub fn from_segments(segments: Vec<Segment>, step: usize, strategy: Strategy) -> Self {
        let total_tokens = segments.iter().map(|s| s.token_count).sum();
        Self {
            segments,
            total_tokens,
            step,
            strategy,
        }
    }

    /// Tokens in the system and task prefix.
    pub fn prefix_tokens(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s.kind, SegmentKind::System | SegmentKind::Task))
            .map(|s| s.token_count)
            .sum()
    }

    /// Text form handed to a policy or synthesizer.
    ///
    /// Reasoning and digests use the same tags an agent emits, so the
    /// history reads like the model's own earlier turns.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            let block = match seg.kind {
                SegmentKind::System => format!("[system]\n{}\n", seg.text),
                SegmentKind::Task => format!("[issue]\n{}\n", seg.text),
                SegmentKind::Observation => {
                    format!("[observation {}]\n{}\n", seg.step_index, seg.text)
                }
                SegmentKind::Reasoning => format!("[assistant {}]\n<think>\n{}\n</think>\n", seg.step_index, seg.text),
                SegmentKind::Digest => format!("<digest>\n{}\n</digest>\n", seg.text),
                SegmentKind::Action => format!("{}\n", seg.text),
            };
            // digest/action continue the assistant turn opened above; when the
            // reasoning was evicted, open the turn here.
            let needs_turn = matches!(seg.kind, SegmentKind::Digest | SegmentKind::Action)
                && !out.ends_with("</think>\n")
                && !out.ends_with("</digest>\n");
            if needs_turn {
                out.push_str(&format!("[assistant {}]\n", seg.step_index));
            }
            out.push_str(&block);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.segments).expect("segments serialize")
    }
}

/// Sum of segment token counts.
pub fn context_length(ctx: &RenderedContext) -> usize {
    ctx.total_tokens
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("step {t} out of range 1..={len}")]
    OutOfRange { t: usize, len: usize },
    #[error("step {step}: {what} required by strategy {strategy} is missing")]
    MissingData {
        step: usize,
        what: &'static str,
        strategy: Strategy,
    },
    #[error("system prompt and issue statement must be non-empty")]
    EmptyHeader,
    #[error("step {step}: {source}")]
    Action {
        step: usize,
        #[source]
        source: ActionError,
    },
}

/// Renders `C_t` for a recorded trajectory.
pub fn render_context(
    traj: &Trajectory,
    t: usize,
    strategy: &Strategy,
    counter: &TokenCounter,
) -> Result<RenderedContext, ContextError> {
    if t < 1 || t > traj.len() {
        return Err(ContextError::OutOfRange { t, len: traj.len() });
    }
    render_parts(
        &traj.header,
        &traj.task_id,
        &traj.steps[..t - 1],
        Some(&traj.steps[t - 1].observation),
        strategy,
        counter,
    )
}

/// Context retained once the whole trajectory has run: every step's group
/// under the strategy, with the window anchored after step `T` and no
/// trailing observation.
pub fn render_final(
    traj: &Trajectory,
    strategy: &Strategy,
    counter: &TokenCounter,
) -> Result<RenderedContext, ContextError> {
    render_parts(&traj.header, &traj.task_id, &traj.steps, None, strategy, counter)
}

/// Renders the context following `history`, optionally terminated by the
/// current observation. The step being generated is `history.len() + 1`.
pub fn render_parts(
    header: &TaskHeader,
    task_id: &str,
    history: &[Step],
    current_observation: Option<&str>,
    strategy: &Strategy,
    counter: &TokenCounter,
) -> Result<RenderedContext, ContextError> {
    if header.system_prompt.is_empty() || header.issue_statement.is_empty() {
        return Err(ContextError::EmptyHeader);
    }
    let t = history.len() + 1;
    let window = strategy.window_for(task_id);

    let mut segments = Vec::with_capacity(2 + 4 * history.len() + 1);
    segments.push(Segment::new(SegmentKind::System, 0, header.system_prompt.clone(), counter));
    segments.push(Segment::new(SegmentKind::Task, 0, header.issue_statement.clone(), counter));

    for step in history {
        let j = step.index;
        let missing = |what| ContextError::MissingData {
            step: j,
            what,
            strategy: *strategy,
        };
        let (keep_reasoning, keep_digest) = match (strategy, window) {
            (Strategy::DisableThinking, _) => (false, false),
            (Strategy::CurrentStep, _) => (false, true),
            (Strategy::Interleaved, _) => (true, true),
            (Strategy::Dynamic(_), Some(n)) => (j + n >= t, true),
            (Strategy::Dynamic(_), None) => unreachable!("dynamic strategy always has a window"),
        };

        segments.push(Segment::new(SegmentKind::Observation, j, step.observation.clone(), counter));
        if keep_reasoning {
            let r = step.reasoning.as_ref().ok_or_else(|| missing("reasoning"))?;
            segments.push(Segment::new(SegmentKind::Reasoning, j, r.clone(), counter));
        }
        if keep_digest {
            let d = step.digest.as_ref().ok_or_else(|| missing("digest"))?;
            segments.push(Segment::new(SegmentKind::Digest, j, d.clone(), counter));
        }
        let xml = encode_action(&step.action).map_err(|source| ContextError::Action { step: j, source })?;
        segments.push(Segment::new(SegmentKind::Action, j, xml, counter));
    }

    if let Some(obs) = current_observation {
        segments.push(Segment::new(SegmentKind::Observation, t, obs.to_string(), counter));
    }
    Ok(RenderedContext::from_segments(segments, t, *strategy))
}

/// `(t, context_length(C_t))` for `t = 1..=T`.
pub fn growth_series(
    traj: &Trajectory,
    strategy: &Strategy,
    counter: &TokenCounter,
) -> Result<Vec<(usize, usize)>, ContextError> {
    (1..=traj.len())
        .map(|t| render_context(traj, t, strategy, counter).map(|c| (t, c.total_tokens)))
        .collect()
}
