//! Simulated multi-turn rollouts.
//!
//! [`run_rollout`] drives an [`Environment`] and a [`Policy`] in strict turn
//! order: render the context, generate, parse, step the environment. A
//! rollout stops on the first triggered condition, checked as follows:
//!
//! - timeout: before rendering, after generation and after each transition,
//!   and it takes precedence at each of those points;
//! - max-context: on the rendered context, before generation;
//! - max-response-tokens: on the raw response, after generation;
//! - submit: after the environment transition;
//! - max-steps: after the step is appended.

mod clock;
mod env;
mod policy;
pub mod synthetic;

use std::time::Duration;

use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::encode_action;
use crate::context::{render_parts, ContextError, Strategy};
use crate::rational::{ratio, to_exact_string, to_f64, Rational};
use crate::response::{parse_agent_response, ResponseError, ResponseRules, ResponseTags};
use crate::token::TokenCounter;
use crate::trajectory::{Step, Trajectory};

pub use clock::{Clock, WallClock};
pub use env::{EnvError, Environment, Scenario, ScriptedEnvironment, Transition, DEFAULT_SYSTEM_PROMPT};
pub use policy::{ClientPolicy, Policy, PolicyError, ScriptedPolicy};

pub const DEFAULT_MAX_STEPS: usize = 50;
pub const EVALUATION_MAX_STEPS: usize = 60;
pub const DEFAULT_MAX_RESPONSE_TOKENS: usize = 4096;
pub const DEFAULT_MAX_CONTEXT_TOKENS: usize = 65536;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(1800);

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub max_steps: usize,
    pub max_response_tokens: usize,
    pub max_context_tokens: usize,
    pub timeout: Duration,
    pub strategy: Strategy,
    pub counter: TokenCounter,
    pub tags: ResponseTags,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid rollout config: {0} must be positive")]
pub struct ConfigError(pub &'static str);

impl RolloutConfig {
    /// Training caps: 50 steps.
    pub fn training(strategy: Strategy) -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            max_response_tokens: DEFAULT_MAX_RESPONSE_TOKENS,
            max_context_tokens: DEFAULT_MAX_CONTEXT_TOKENS,
            timeout: DEFAULT_TIMEOUT,
            strategy,
            counter: TokenCounter::default(),
            tags: ResponseTags::default(),
        }
    }

    /// Evaluation caps: 60 steps.
    pub fn evaluation(strategy: Strategy) -> Self {
        Self {
            max_steps: EVALUATION_MAX_STEPS,
            ..Self::training(strategy)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_steps == 0 {
            return Err(ConfigError("max_steps"));
        }
        if self.max_response_tokens == 0 {
            return Err(ConfigError("max_response_tokens"));
        }
        if self.max_context_tokens == 0 {
            return Err(ConfigError("max_context_tokens"));
        }
        if self.timeout.is_zero() {
            return Err(ConfigError("timeout"));
        }
        Ok(())
    }

    fn rules(&self) -> ResponseRules {
        ResponseRules {
            tags: self.tags.clone(),
            max_response_tokens: self.max_response_tokens,
            counter: self.counter.clone(),
            thinking: self.strategy.uses_thinking(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    MaxSteps,
    MaxResponseTokens,
    MaxContext,
    Timeout,
    Submit,
}

impl TerminationReason {
    pub const ALL: [TerminationReason; 5] = [
        Self::MaxSteps,
        Self::MaxResponseTokens,
        Self::MaxContext,
        Self::Timeout,
        Self::Submit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MaxSteps => "max-steps",
            Self::MaxResponseTokens => "max-response-tokens",
            Self::MaxContext => "max-context",
            Self::Timeout => "timeout",
            Self::Submit => "submit",
        }
    }
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseLengths {
    pub len_r: usize,
    pub len_d: usize,
    pub len_a: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub strategy: String,
    pub trajectory: Trajectory,
    pub reason: TerminationReason,
    /// Step being generated when a pre- or mid-generation cap fired, or the
    /// last completed step otherwise.
    pub terminated_at: usize,
    pub per_step_response: Vec<ResponseLengths>,
    /// Rendered context length before generating each completed step.
    pub context_series: Vec<usize>,
}

impl RolloutRecord {
    pub fn steps(&self) -> usize {
        self.trajectory.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RolloutError {
    #[error("environment error at step {step}: {source}")]
    Environment { step: usize, source: EnvError },
    #[error("policy error at step {step}: {source}")]
    Policy { step: usize, source: PolicyError },
    #[error("malformed response at step {step}: {source}")]
    Response { step: usize, source: ResponseError },
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub fn run_rollout(
    env: &mut dyn Environment,
    policy: &mut dyn Policy,
    config: &RolloutConfig,
) -> Result<RolloutRecord, RolloutError> {
    run_rollout_with_clock(env, policy, config, &WallClock::start())
}

pub fn run_rollout_with_clock(
    env: &mut dyn Environment,
    policy: &mut dyn Policy,
    config: &RolloutConfig,
    clock: &dyn Clock,
) -> Result<RolloutRecord, RolloutError> {
    config.validate()?;
    let rules = config.rules();
    let header = env.header();
    let task_id = env.task_id().to_string();
    let mut observation = env.reset().map_err(|source| RolloutError::Environment { step: 0, source })?;

    let mut steps: Vec<Step> = Vec::new();
    let mut per_step_response = Vec::new();
    let mut context_series = Vec::new();
    let timed_out = || clock.elapsed() >= config.timeout;

    let (reason, terminated_at) = loop {
        let t = steps.len() + 1;
        if timed_out() {
            break (TerminationReason::Timeout, t - 1);
        }
        let ctx = render_parts(&header, &task_id, &steps, Some(&observation), &config.strategy, &config.counter)?;
        if ctx.total_tokens > config.max_context_tokens {
            break (TerminationReason::MaxContext, t);
        }

        let text = policy
            .respond(&ctx.to_text())
            .map_err(|source| RolloutError::Policy { step: t, source })?;
        if timed_out() {
            break (TerminationReason::Timeout, t - 1);
        }
        let parsed = match parse_agent_response(&text, &rules) {
            Ok(p) => p,
            Err(ResponseError::TooLong { .. }) => break (TerminationReason::MaxResponseTokens, t),
            Err(source) => return Err(RolloutError::Response { step: t, source }),
        };

        let transition = env
            .step(&parsed.action)
            .map_err(|source| RolloutError::Environment { step: t, source })?;

        let xml = encode_action(&parsed.action).expect("decoded actions re-encode");
        per_step_response.push(ResponseLengths {
            len_r: parsed.reasoning.as_deref().map_or(0, |r| config.counter.count(r)),
            len_d: parsed.digest.as_deref().map_or(0, |d| config.counter.count(d)),
            len_a: config.counter.count(&xml),
        });
        context_series.push(ctx.total_tokens);
        let submitted = parsed.action.is_submit() || transition.done;
        let mut step = Step::new(t, std::mem::replace(&mut observation, transition.observation), parsed.action);
        step.reasoning = parsed.reasoning;
        step.digest = parsed.digest;
        steps.push(step);

        if timed_out() {
            break (TerminationReason::Timeout, t);
        }
        if submitted {
            break (TerminationReason::Submit, t);
        }
        if steps.len() >= config.max_steps {
            break (TerminationReason::MaxSteps, t);
        }
    };

    Ok(RolloutRecord {
        strategy: config.strategy.to_string(),
        trajectory: Trajectory::new(task_id, header, env.verdict(), steps),
        reason,
        terminated_at,
        per_step_response,
        context_series,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsSummary {
    pub n_rollouts: usize,
    pub success_rate: Rational,
    pub avg_steps: Rational,
    pub avg_reasoning_tokens: Rational,
    pub avg_digest_tokens: Rational,
    pub avg_action_tokens: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot summarize an empty set of rollouts")]
pub struct EmptyMetrics;

/// Rollout-level success rate and step count; token averages are per
/// completed step across all rollouts.
pub fn summarize_metrics(records: &[RolloutRecord]) -> Result<MetricsSummary, EmptyMetrics> {
    if records.is_empty() {
        return Err(EmptyMetrics);
    }
    let n = records.len();
    let successes = records.iter().filter(|r| r.trajectory.success).count();
    let total_steps: usize = records.iter().map(|r| r.per_step_response.len()).sum();
    let sum = |f: fn(&ResponseLengths) -> usize| -> Rational {
        if total_steps == 0 {
            return Rational::zero();
        }
        let s: usize = records.iter().flat_map(|r| &r.per_step_response).map(f).sum();
        ratio(s, total_steps)
    };
    Ok(MetricsSummary {
        n_rollouts: n,
        success_rate: ratio(successes, n),
        avg_steps: ratio(records.iter().map(|r| r.steps()).sum(), n),
        avg_reasoning_tokens: sum(|l| l.len_r),
        avg_digest_tokens: sum(|l| l.len_d),
        avg_action_tokens: sum(|l| l.len_a),
    })
}

/// One strategy's results over the shared episode set.
#[derive(Debug, Clone)]
pub struct StrategyRow {
    pub strategy: Strategy,
    /// Records of episodes that completed, in episode order.
    pub records: Vec<RolloutRecord>,
    /// `(episode, error)` for episodes that failed.
    pub errors: Vec<(usize, RolloutError)>,
    pub summary: Option<MetricsSummary>,
}

impl StrategyRow {
    pub fn series(&self) -> Vec<&[usize]> {
        self.records.iter().map(|r| r.context_series.as_slice()).collect()
    }

    /// Final context increment of the first completed episode.
    pub fn steady_state_increment(&self) -> Option<i64> {
        self.records.first().and_then(|r| steady_state_increment(&r.context_series))
    }
}

pub fn steady_state_increment(series: &[usize]) -> Option<i64> {
    match series {
        [.., a, b] => Some(*b as i64 - *a as i64),
        _ => None,
    }
}

/// Runs episodes `0..episodes` under each strategy, at most `concurrency`
/// at a time. Factories receive the episode index so the same seeded episode
/// is replayed under every strategy.
pub fn compare_strategies<E, P, FE, FP>(
    env_factory: FE,
    policy_factory: FP,
    strategies: &[Strategy],
    config: &RolloutConfig,
    episodes: usize,
    concurrency: usize,
) -> Vec<StrategyRow>
where
    E: Environment,
    P: Policy,
    FE: Fn(usize) -> E + Sync,
    FP: Fn(usize, &Strategy) -> P + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    strategies
        .iter()
        .map(|strategy| {
            let cfg = RolloutConfig {
                strategy: *strategy,
                ..config.clone()
            };
            let results: Vec<Result<RolloutRecord, RolloutError>> = pool.install(|| {
                (0..episodes)
                    .into_par_iter()
                    .map(|i| {
                        let mut env = env_factory(i);
                        let mut policy = policy_factory(i, strategy);
                        run_rollout(&mut env, &mut policy, &cfg)
                    })
                    .collect()
            });
            let mut records = Vec::new();
            let mut errors = Vec::new();
            for (i, r) in results.into_iter().enumerate() {
                match r {
                    Ok(rec) => records.push(rec),
                    Err(e) => errors.push((i, e)),
                }
            }
            let summary = summarize_metrics(&records).ok();
            StrategyRow {
                strategy: *strategy,
                records,
                errors,
                summary,
            }
        })
        .collect()
}

/// CSV table: strategy, episode counts, steps, success and per-step token
/// decomposition. Exact values are given alongside decimals.
pub fn metrics_csv(rows: &[StrategyRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "strategy",
        "n_rollouts",
        "errors",
        "avg_steps",
        "success_rate",
        "avg_reasoning_tokens",
        "avg_digest_tokens",
        "avg_action_tokens",
        "steady_state_increment",
        "avg_steps_exact",
        "success_rate_exact",
    ])?;
    for row in rows {
        let s = row.summary.as_ref();
        let dec = |f: fn(&MetricsSummary) -> &Rational| s.map_or(String::new(), |s| format!("{:.4}", to_f64(f(s))));
        let exact = |f: fn(&MetricsSummary) -> &Rational| s.map_or(String::new(), |s| to_exact_string(f(s)));
        w.write_record([
            row.strategy.to_string(),
            row.records.len().to_string(),
            row.errors.len().to_string(),
            dec(|s| &s.avg_steps),
            dec(|s| &s.success_rate),
            dec(|s| &s.avg_reasoning_tokens),
            dec(|s| &s.avg_digest_tokens),
            dec(|s| &s.avg_action_tokens),
            row.steady_state_increment().map_or(String::new(), |v| v.to_string()),
            exact(|s| &s.avg_steps),
            exact(|s| &s.success_rate),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
