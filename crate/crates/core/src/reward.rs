//! Trajectory-level compression rate and the gated, clipped reward.
//!
//! With `|tau_t| = |o_t| + |r_t| + |d_t| + |a_t|`:
//!
//! - `L_full`   = sum of `|tau_t|` over all steps (every reasoning kept);
//! - `L_hybrid` = context retained at the end of the trajectory under a
//!   window of `N`: full tuples for the last `min(N, T)` steps and
//!   `|o| + |d| + |a|` for every earlier step;
//! - `R_comp`   = `1 - L_hybrid / L_full`;
//! - reward     = `success * (1 + beta * min(R_comp, gamma))`.
//!
//! The system prompt and issue statement are excluded from both lengths.
//! All arithmetic is exact.

use std::cmp::min;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{encode_action, ActionError};
use crate::context::{render_final, ContextError, Strategy};
use crate::rational::{ratio, to_exact_string, to_f64, Rational};
use crate::token::TokenCounter;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLengths {
    pub step: usize,
    pub len_o: usize,
    pub len_r: usize,
    pub len_d: usize,
    pub len_a: usize,
    pub len_tuple: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressionReport {
    pub task_id: String,
    pub per_step: Vec<StepLengths>,
    pub l_full: usize,
    pub l_hybrid: usize,
    pub r_comp: Rational,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewardConfig {
    pub beta: Rational,
    pub gamma: Rational,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            beta: Rational::new(1, 5),
            gamma: Rational::new(11, 20),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("step {step}: {what} missing; trajectory must be enriched")]
    Unenriched { step: usize, what: &'static str },
    #[error("step {0}: reasoning is empty, step-wise ratio undefined")]
    UndefinedRatio(usize),
    #[error("beta must be >= 0 and gamma in (0, 1]")]
    InvalidConfig,
    #[error("step {step}: {source}")]
    Action {
        step: usize,
        #[source]
        source: ActionError,
    },
    #[error(transparent)]
    Context(#[from] ContextError),
}

impl RewardConfig {
    pub fn new(beta: Rational, gamma: Rational) -> Result<Self, RewardError> {
        let cfg = Self { beta, gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if self.beta < Rational::zero() || self.gamma <= Rational::zero() || self.gamma > Rational::one() {
            return Err(RewardError::InvalidConfig);
        }
        Ok(())
    }
}

fn enriched_texts(traj: &Trajectory) -> Result<Vec<(&str, &str)>, RewardError> {
    traj.steps
        .iter()
        .map(|s| {
            let r = s.reasoning.as_deref().ok_or(RewardError::Unenriched {
                step: s.index,
                what: "reasoning",
            })?;
            let d = s.digest.as_deref().ok_or(RewardError::Unenriched {
                step: s.index,
                what: "digest",
            })?;
            Ok((r, d))
        })
        .collect()
}

/// `R_comp = 1 - hybrid / full`, with an empty trajectory counting as no
/// saving.
pub fn compression_rate(l_full: usize, l_hybrid: usize) -> Rational {
    if l_full == 0 {
        return Rational::zero();
    }
    Rational::one() - ratio(l_hybrid, l_full)
}

pub fn compression_report(
    traj: &Trajectory,
    window: usize,
    counter: &TokenCounter,
) -> Result<CompressionReport, RewardError> {
    let texts = enriched_texts(traj)?;
    let mut per_step = Vec::with_capacity(traj.len());
    for (step, (r, d)) in traj.steps.iter().zip(texts) {
        let xml = encode_action(&step.action).map_err(|source| RewardError::Action {
            step: step.index,
            source,
        })?;
        let (len_o, len_r, len_d, len_a) = (
            counter.count(&step.observation),
            counter.count(r),
            counter.count(d),
            counter.count(&xml),
        );
        per_step.push(StepLengths {
            step: step.index,
            len_o,
            len_r,
            len_d,
            len_a,
            len_tuple: len_o + len_r + len_d + len_a,
        });
    }

    let t = per_step.len();
    let keep_from = t - min(window, t);
    let l_full = per_step.iter().map(|s| s.len_tuple).sum();
    let l_hybrid = per_step
        .iter()
        .enumerate()
        .map(|(i, s)| if i >= keep_from { s.len_tuple } else { s.len_tuple - s.len_r })
        .sum();

    Ok(CompressionReport {
        task_id: traj.task_id.clone(),
        per_step,
        l_full,
        l_hybrid,
        r_comp: compression_rate(l_full, l_hybrid),
        window,
    })
}

pub fn trajectory_reward(report: &CompressionReport, success: bool, config: &RewardConfig) -> Rational {
    if !success {
        return Rational::zero();
    }
    let clipped = if report.r_comp < config.gamma {
        report.r_comp
    } else {
        config.gamma
    };
    Rational::one() + config.beta * clipped
}

/// Mean of per-step `1 - |d_t| / |r_t|`. For contrast with the global rate
/// only; the reward never uses it.
pub fn local_compression_mean(traj: &Trajectory, counter: &TokenCounter) -> Result<Rational, RewardError> {
    let texts = enriched_texts(traj)?;
    if texts.is_empty() {
        return Ok(Rational::zero());
    }
    let mut sum = Rational::zero();
    for (step, (r, d)) in traj.steps.iter().zip(&texts) {
        let len_r = counter.count(r);
        if len_r == 0 {
            return Err(RewardError::UndefinedRatio(step.index));
        }
        sum += Rational::one() - ratio(counter.count(d), len_r);
    }
    Ok(sum / Rational::from_integer(texts.len() as i128))
}

/// Recomputes `(L_full, L_hybrid)` by rendering the final interleaved and
/// dynamic contexts and subtracting their fixed prefix. Independent of the
/// per-step arithmetic in [`compression_report`].
pub fn oracle_lengths(
    traj: &Trajectory,
    window: usize,
    counter: &TokenCounter,
) -> Result<(usize, usize), RewardError> {
    enriched_texts(traj)?;
    let full = render_final(traj, &Strategy::Interleaved, counter)?;
    let hybrid = render_final(traj, &Strategy::dynamic(window), counter)?;
    Ok((
        full.total_tokens - full.prefix_tokens(),
        hybrid.total_tokens - hybrid.prefix_tokens(),
    ))
}

/// JSON export of one scored trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportExport {
    pub task_id: String,
    pub window: usize,
    pub per_step: Vec<StepLengths>,
    #[serde(rename = "L_full")]
    pub l_full: usize,
    #[serde(rename = "L_hybrid")]
    pub l_hybrid: usize,
    #[serde(rename = "R_comp")]
    pub r_comp: f64,
    #[serde(rename = "R_comp_exact")]
    pub r_comp_exact: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_exact: Option<String>,
}

impl ReportExport {
    pub fn new(report: &CompressionReport, scored: Option<(bool, Rational)>) -> Self {
        Self {
            task_id: report.task_id.clone(),
            window: report.window,
            per_step: report.per_step.clone(),
            l_full: report.l_full,
            l_hybrid: report.l_hybrid,
            r_comp: to_f64(&report.r_comp),
            r_comp_exact: to_exact_string(&report.r_comp),
            success: scored.as_ref().map(|(s, _)| *s),
            reward: scored.as_ref().map(|(_, r)| to_f64(r)),
            reward_exact: scored.as_ref().map(|(_, r)| to_exact_string(r)),
        }
    }
}

/// CSV with one row per trajectory, for batch scoring.
pub fn reports_to_csv(rows: &[ReportExport]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "task_id", "window", "steps", "L_full", "L_hybrid", "R_comp", "R_comp_exact", "success", "reward",
    ])?;
    for r in rows {
        w.write_record([
            r.task_id.clone(),
            r.window.to_string(),
            r.per_step.len().to_string(),
            r.l_full.to_string(),
            r.l_hybrid.to_string(),
            r.r_comp.to_string(),
            r.r_comp_exact.clone(),
            r.success.map(|s| s.to_string()).unwrap_or_default(),
            r.reward.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
