use std::collections::BTreeMap;
use std::path::Path;

use sawtooth_core::rational::{ratio, to_exact_string, to_f64, Rational};
use sawtooth_core::reward::compression_report;
use sawtooth_core::snapshot::parse_snapshots;
use sawtooth_core::{encode_action, parse_trajectories};
use serde_json::{json, Value};

use crate::commands::is_snapshot_file;
use crate::config::Settings;
use crate::error::CliError;
use crate::io;

fn mean(sum: usize, n: usize) -> Value {
    if n == 0 {
        return Value::Null;
    }
    let r = ratio(sum, n);
    json!({"value": to_f64(&r), "exact": to_exact_string(&r)})
}

fn exact(r: &Rational) -> Value {
    json!({"value": to_f64(r), "exact": to_exact_string(r)})
}

pub fn run(settings: &Settings, input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = io::read(input)?;
    let counter = &settings.counter;
    let summary = if is_snapshot_file(&text) {
        let sets = parse_snapshots(&text).map_err(|e| CliError::input(input, e))?;
        let snaps: Vec<_> = sets.iter().flat_map(|s| &s.snapshots).collect();
        let mut windows: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &sets {
            *windows.entry(s.window_used).or_default() += 1;
        }
        let ctx: Vec<usize> = snaps.iter().map(|s| s.context.total_tokens).collect();
        let tgt: usize = snaps.iter().map(|s| s.target.tokens(counter)).sum();
        json!({
            "kind": "snapshots",
            "tasks": sets.len(),
            "snapshots": snaps.len(),
            "windows": windows,
            "context_tokens": {
                "min": ctx.iter().min(),
                "max": ctx.iter().max(),
                "mean": mean(ctx.iter().sum(), ctx.len()),
            },
            "target_tokens_mean": mean(tgt, snaps.len()),
            "counter": counter.mode_label(),
        })
    } else {
        let trajs = parse_trajectories(&text).map_err(|e| CliError::input(input, e))?;
        let steps: Vec<usize> = trajs.iter().map(|t| t.len()).collect();
        let all: Vec<_> = trajs.iter().flat_map(|t| &t.steps).collect();
        let enriched: Vec<_> = all.iter().filter(|s| s.is_enriched()).collect();
        let sum = |f: &dyn Fn(&sawtooth_core::Step) -> usize| -> usize { enriched.iter().map(|s| f(s)).sum() };
        let len_o = sum(&|s| counter.count(&s.observation));
        let len_r = sum(&|s| counter.count(s.reasoning.as_deref().unwrap_or_default()));
        let len_d = sum(&|s| counter.count(s.digest.as_deref().unwrap_or_default()));
        let len_a = sum(&|s| encode_action(&s.action).map(|x| counter.count(&x)).unwrap_or(0));
        let mut r_comp = Vec::new();
        for t in trajs.iter().filter(|t| !t.is_empty() && t.steps.iter().all(|s| s.is_enriched())) {
            let report = compression_report(t, settings.window.resolve(&t.task_id), counter)
                .map_err(|e| CliError::input(input, format!("{}: {e}", t.task_id)))?;
            r_comp.push(report.r_comp);
        }
        let r_mean = (!r_comp.is_empty()).then(|| {
            exact(&(r_comp.iter().copied().sum::<Rational>() / Rational::from_integer(r_comp.len() as i128)))
        });
        json!({
            "kind": "trajectories",
            "trajectories": trajs.len(),
            "successes": trajs.iter().filter(|t| t.success).count(),
            "success_rate": mean(trajs.iter().filter(|t| t.success).count(), trajs.len()),
            "steps": {
                "total": all.len(),
                "min": steps.iter().min(),
                "max": steps.iter().max(),
                "mean": mean(all.len(), trajs.len()),
            },
            "enriched_steps": enriched.len(),
            "shallow_steps": all.iter().filter(|s| !s.is_enriched() && s.shallow_thought.is_some()).count(),
            "empty_digests": trajs.iter().map(|t| t.empty_digest_steps().len()).sum::<usize>(),
            "mean_tokens_per_enriched_step": {
                "observation": mean(len_o, enriched.len()),
                "reasoning": mean(len_r, enriched.len()),
                "digest": mean(len_d, enriched.len()),
                "action": mean(len_a, enriched.len()),
            },
            "mean_r_comp": r_mean,
            "window": settings.window.to_string(),
            "counter": counter.mode_label(),
        })
    };
    io::emit(out, &(serde_json::to_string_pretty(&summary).expect("stats serialize") + "\n"))
}
