use std::path::PathBuf;
use std::sync::Arc;

use sawtooth_core::backfill::{CompletionBackend, Endpoint, SynthesizerClient};
use sawtooth_core::rollout::{
    compare_strategies, metrics_csv, ClientPolicy, Policy, Scenario, ScriptedEnvironment, ScriptedPolicy,
};

use crate::config::{RolloutFlags, Settings};
use crate::error::CliError;
use crate::io;

pub struct Args {
    pub scenarios: Vec<PathBuf>,
    pub strategies: Vec<String>,
    pub episodes: Option<usize>,
    pub policy_endpoint: Option<String>,
    pub out: PathBuf,
    pub metrics: Option<PathBuf>,
    pub rollout: RolloutFlags,
}

pub fn run(settings: &Settings, args: Args) -> Result<(), CliError> {
    let config = settings.rollout(&args.rollout)?;
    let strategies = if args.strategies.is_empty() {
        vec![config.strategy]
    } else {
        args.strategies
            .iter()
            .map(|s| settings.strategy(s))
            .collect::<Result<Vec<_>, _>>()?
    };

    let mut scenarios = Vec::with_capacity(args.scenarios.len());
    for path in &args.scenarios {
        let s = Scenario::from_json(&io::read(path)?).map_err(|e| CliError::input(path, e))?;
        scenarios.push(s);
    }
    let backend: Option<Arc<dyn CompletionBackend>> = match &args.policy_endpoint {
        Some(spec) => {
            let endpoint = Endpoint::parse(spec).map_err(|e| CliError::Usage(format!("--policy-endpoint: {e}")))?;
            let client = SynthesizerClient::from_endpoint(&endpoint, config.timeout, 1)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Some(client.backend)
        }
        None => {
            if let Some((s, path)) = scenarios
                .iter()
                .zip(&args.scenarios)
                .find(|(s, _)| s.scripted_responses.is_none())
            {
                return Err(CliError::input(
                    path,
                    format!("scenario {} has no scripted_responses and no --policy-endpoint was given", s.task_id),
                ));
            }
            None
        }
    };

    let episodes = args.episodes.unwrap_or(scenarios.len());
    let rows = compare_strategies(
        |i| ScriptedEnvironment::new(scenarios[i % scenarios.len()].clone()),
        |i, _| -> Box<dyn Policy> {
            match &backend {
                Some(b) => Box::new(ClientPolicy::new(b.clone())),
                None => Box::new(ScriptedPolicy::new(
                    scenarios[i % scenarios.len()].scripted_responses.clone().unwrap_or_default(),
                )),
            }
        },
        &strategies,
        &config,
        episodes,
        settings.concurrency,
    );

    let mut records = String::new();
    for row in &rows {
        for rec in &row.records {
            records.push_str(&rec.to_json());
            records.push('\n');
        }
        for (episode, err) in &row.errors {
            eprintln!("warning: {} episode {episode}: {err}", row.strategy);
        }
    }
    let metrics = metrics_csv(&rows).map_err(|e| CliError::Failed(e.to_string()))?;
    let metrics_path = args.metrics.unwrap_or_else(|| io::sidecar(&args.out, ".metrics.csv"));
    io::write_all(&[(&args.out, records.as_bytes()), (&metrics_path, metrics.as_bytes())])?;
    eprint!("{metrics}");
    Ok(())
}
