//! Backfill prompt template.
//!
//! Labeled sections, in fixed order: instruction, step number, agent system
//! prompt, issue, history (steps before `t` under the dynamic window),
//! current observation, semantic hint `s_t`, ground-truth action `a_t`.

use crate::context::{RenderedContext, SegmentKind};
use crate::response::ResponseTags;

pub const INSTRUCTION_LABEL: &str = "### INSTRUCTION";
pub const STEP_LABEL: &str = "### STEP";
pub const SYSTEM_LABEL: &str = "### AGENT SYSTEM PROMPT";
pub const ISSUE_LABEL: &str = "### ISSUE";
pub const HISTORY_LABEL: &str = "### HISTORY";
pub const OBSERVATION_LABEL: &str = "### CURRENT OBSERVATION";
pub const HINT_LABEL: &str = "### SEMANTIC HINT";
pub const ACTION_LABEL: &str = "### GROUND-TRUTH ACTION";

pub fn instruction(tags: &ResponseTags) -> String {
    format!(
        "You are annotating a recorded trajectory of a software-engineering agent. \
For the current step, write the detailed reasoning the agent should produce before taking \
the ground-truth action below, then a concise digest of that reasoning that will stay in \
the agent's memory after the detailed reasoning is dropped. Build on the recent reasoning \
visible in the history rather than re-analyzing the whole task. Stay faithful to the \
semantic hint, and let the reasoning arrive at the ground-truth action without saying it \
was given. Reply with the reasoning inside <{r}></{r}> followed by the digest inside \
<{d}></{d}>, and nothing else.",
        r = tags.reasoning,
        d = tags.digest
    )
}

/// Assembles the prompt text from the dynamic context of step `t`.
pub fn render_prompt(ctx: &RenderedContext, hint: &str, action_xml: &str, tags: &ResponseTags) -> String {
    let text_of = |kind: SegmentKind| -> &str {
        ctx.segments
            .iter()
            .find(|s| s.kind == kind)
            .map(|s| s.text.as_str())
            .unwrap_or("")
    };
    let history: Vec<_> = ctx
        .segments
        .iter()
        .filter(|s| s.step_index >= 1 && s.step_index < ctx.step)
        .cloned()
        .collect();
    let history_text = RenderedContext::from_segments(history, ctx.step, ctx.strategy).to_text();
    let observation = ctx
        .segments
        .last()
        .filter(|s| s.kind == SegmentKind::Observation && s.step_index == ctx.step)
        .map(|s| s.text.as_str())
        .unwrap_or("");

    let mut out = String::new();
    let mut push = |label: &str, body: &str| {
        out.push_str(label);
        out.push('\n');
        out.push_str(body);
        if !body.ends_with('\n') {
            out.push('\n');
        }
    };
    push(INSTRUCTION_LABEL, &instruction(tags));
    push(STEP_LABEL, &ctx.step.to_string());
    push(SYSTEM_LABEL, text_of(SegmentKind::System));
    push(ISSUE_LABEL, text_of(SegmentKind::Task));
    push(HISTORY_LABEL, &history_text);
    push(OBSERVATION_LABEL, observation);
    push(HINT_LABEL, hint);
    push(ACTION_LABEL, action_xml);
    out
}
