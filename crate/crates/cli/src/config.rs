//! Settings resolution: command-line flags, then the TOML config file, then
//! built-in defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use sawtooth_core::backfill::{Endpoint, DEFAULT_MAX_ATTEMPTS, DEFAULT_TIMEOUT};
use sawtooth_core::rational::{parse_decimal, Rational};
use sawtooth_core::reward::RewardConfig;
use sawtooth_core::rollout::RolloutConfig;
use sawtooth_core::snapshot::DEFAULT_MAX_SEQUENCE_TOKENS;
use sawtooth_core::{Strategy, TokenCounter, WindowPolicy};
use serde::Deserialize;

use crate::error::CliError;

pub const ENDPOINT_ENV: &str = "SAWTOOTH_SYNTH_ENDPOINT";
pub const DEFAULT_WINDOW: &str = "2..5";

/// A decimal written either as a TOML number or a string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Decimal {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Decimal {
    fn to_rational(&self, key: &str) -> Result<Rational, CliError> {
        let text = match self {
            Decimal::Int(i) => i.to_string(),
            Decimal::Float(f) => f.to_string(),
            Decimal::Text(s) => s.clone(),
        };
        parse_decimal(&text).ok_or_else(|| CliError::Config(format!("{key}: `{text}` is not a decimal")))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub window: Option<String>,
    pub counter: Option<String>,
    pub concurrency: Option<usize>,
    #[serde(default)]
    pub reward: RewardSection,
    #[serde(default)]
    pub compile: CompileSection,
    #[serde(default)]
    pub synthesizer: SynthesizerSection,
    #[serde(default)]
    pub rollout: RolloutSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    pub beta: Option<Decimal>,
    pub gamma: Option<Decimal>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompileSection {
    pub max_sequence_tokens: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizerSection {
    pub endpoint: Option<String>,
    pub max_attempts: Option<usize>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    pub preset: Option<String>,
    pub max_steps: Option<usize>,
    pub max_response_tokens: Option<usize>,
    pub max_context_tokens: Option<usize>,
    pub timeout_secs: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Flags shared by every subcommand; `None` means "not given".
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// Seed for window sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Window size `N` or uniform range `lo..hi`.
    #[arg(long)]
    pub window: Option<String>,
    /// Token counter: whitespace, bytes-div-4 or table:<path>.
    #[arg(long)]
    pub counter: Option<String>,
    /// Maximum trajectories or rollouts processed at once.
    #[arg(long)]
    pub concurrency: Option<usize>,
}

pub struct Settings {
    pub seed: u64,
    pub window: WindowPolicy,
    pub counter: TokenCounter,
    pub concurrency: usize,
    pub file: FileConfig,
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

impl Settings {
    pub fn resolve(config: Option<&PathBuf>, common: &CommonArgs) -> Result<Self, CliError> {
        let file = FileConfig::load(config.map(PathBuf::as_path))?;
        let seed = pick(common.seed, file.seed, 0);
        let window_spec = pick(common.window.clone(), file.window.clone(), DEFAULT_WINDOW.to_string());
        let window =
            WindowPolicy::parse(&window_spec, seed).map_err(|e| CliError::Usage(format!("--window {window_spec}: {e}")))?;
        let counter_spec = pick(common.counter.clone(), file.counter.clone(), "whitespace".to_string());
        let counter = TokenCounter::from_mode(&counter_spec).map_err(|e| CliError::Config(e.to_string()))?;
        let concurrency = pick(common.concurrency, file.concurrency, 4);
        if concurrency == 0 {
            return Err(CliError::Usage("--concurrency must be at least 1".into()));
        }
        Ok(Self {
            seed,
            window,
            counter,
            concurrency,
            file,
        })
    }

    pub fn reward(&self, beta: Option<&str>, gamma: Option<&str>) -> Result<RewardConfig, CliError> {
        let defaults = RewardConfig::default();
        let flag = |v: Option<&str>, key: &str| -> Result<Option<Rational>, CliError> {
            v.map(|s| parse_decimal(s).ok_or_else(|| CliError::Usage(format!("--{key}: `{s}` is not a decimal"))))
                .transpose()
        };
        let file = |v: &Option<Decimal>, key: &str| v.as_ref().map(|d| d.to_rational(key)).transpose();
        let beta = pick(flag(beta, "beta")?, file(&self.file.reward.beta, "reward.beta")?, defaults.beta);
        let gamma = pick(flag(gamma, "gamma")?, file(&self.file.reward.gamma, "reward.gamma")?, defaults.gamma);
        RewardConfig::new(beta, gamma).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn max_sequence_tokens(&self, flag: Option<usize>) -> usize {
        pick(flag, self.file.compile.max_sequence_tokens, DEFAULT_MAX_SEQUENCE_TOKENS)
    }

    /// Endpoint precedence: flag, then the environment variable, then the
    /// config file, then the offline mock.
    pub fn endpoint(&self, flag: Option<&str>) -> Result<Endpoint, CliError> {
        let env = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty());
        let spec = flag
            .map(str::to_string)
            .or(env)
            .or(self.file.synthesizer.endpoint.clone())
            .unwrap_or_else(|| "mock".into());
        Endpoint::parse(&spec).map_err(|e| CliError::Usage(format!("endpoint `{spec}`: {e}")))
    }

    pub fn max_attempts(&self, flag: Option<usize>) -> usize {
        pick(flag, self.file.synthesizer.max_attempts, DEFAULT_MAX_ATTEMPTS)
    }

    pub fn synth_timeout(&self, flag: Option<u64>) -> Duration {
        pick(
            flag.map(Duration::from_secs),
            self.file.synthesizer.timeout_secs.map(Duration::from_secs),
            DEFAULT_TIMEOUT,
        )
    }

    pub fn strategy(&self, spec: &str) -> Result<Strategy, CliError> {
        Strategy::parse(spec, self.seed).map_err(|e| CliError::Usage(format!("--strategy {spec}: {e}")))
    }

    pub fn rollout(&self, flags: &RolloutFlags) -> Result<RolloutConfig, CliError> {
        let file = &self.file.rollout;
        let preset = pick(flags.preset.clone(), file.preset.clone(), "training".into());
        let strategy = Strategy::Dynamic(self.window);
        let mut cfg = match preset.as_str() {
            "training" => RolloutConfig::training(strategy),
            "evaluation" => RolloutConfig::evaluation(strategy),
            other => return Err(CliError::Usage(format!("unknown preset `{other}` (training|evaluation)"))),
        };
        cfg.counter = self.counter.clone();
        cfg.max_steps = pick(flags.max_steps, file.max_steps, cfg.max_steps);
        cfg.max_response_tokens = pick(flags.max_response_tokens, file.max_response_tokens, cfg.max_response_tokens);
        cfg.max_context_tokens = pick(flags.max_context_tokens, file.max_context_tokens, cfg.max_context_tokens);
        cfg.timeout = Duration::from_secs(pick(flags.timeout_secs, file.timeout_secs, cfg.timeout.as_secs()));
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct RolloutFlags {
    /// Cap preset: training (50 steps) or evaluation (60 steps).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub max_response_tokens: Option<usize>,
    #[arg(long)]
    pub max_context_tokens: Option<usize>,
    /// Per-rollout wall-clock limit in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}
