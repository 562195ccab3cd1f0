//! Dynamic reasoning context toolkit for multi-turn software-engineering
//! agents.
//!
//! The agent keeps full detailed reasoning only for the last `N` steps and a
//! short digest for every older step, while observations and actions are
//! always retained. This crate renders such contexts, compiles trajectories
//! into loss-masked training snapshots, backfills shallow trajectories with
//! synthesized reasoning and digests, scores trajectories with a gated
//! compression reward, and simulates rollouts.

pub mod action;
pub mod backfill;
pub mod context;
pub mod rational;
pub mod response;
pub mod reward;
pub mod rollout;
pub mod snapshot;
pub mod token;
pub mod trajectory;

pub use action::{decode_action, encode_action, Action};
pub use context::{
    context_length, growth_series, render_context, RenderedContext, Segment, SegmentKind, Strategy,
    WindowPolicy,
};
pub use token::{count_tokens, TokenCounter};
pub use trajectory::{
    parse_trajectories, parse_trajectory, serialize_trajectories, serialize_trajectory, Step, TaskHeader, Trajectory,
};
