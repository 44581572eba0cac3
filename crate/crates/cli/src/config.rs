use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use beacon_sim::montecarlo::{McConfig, Parallelism};
use beacon_sim::{ProtocolParams, RewardParams, TieBreak};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 2020;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreakArg {
    MinId,
    MaxId,
}

impl From<TieBreakArg> for TieBreak {
    fn from(t: TieBreakArg) -> Self {
        match t {
            TieBreakArg::MinId => TieBreak::MinId,
            TieBreakArg::MaxId => TieBreak::MaxId,
        }
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Attacker's fraction of total stake.
    #[arg(long, global = true)]
    pub stake: Option<f64>,
    #[arg(long, global = true)]
    pub slots_per_epoch: Option<u64>,
    #[arg(long, global = true)]
    pub committee_size: Option<usize>,
    /// Monte Carlo trials.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub usd_per_eth: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub tie_break: Option<TieBreakArg>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write results here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write an SVG plot (probability commands only).
    #[arg(long, global = true)]
    pub plot: Option<PathBuf>,
    /// Charge the inactivity leak once per withheld validator.
    #[arg(long, global = true)]
    pub strict_leak: bool,
    /// Worker threads for trials; 1 runs serially, 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// TOML file with run settings and a `[rewards]` table.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub stake: Option<f64>,
    pub slots_per_epoch: Option<u64>,
    pub committee_size: Option<usize>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub usd_per_eth: Option<f64>,
    pub tie_break: Option<TieBreakArg>,
    pub format: Option<Format>,
    pub strict_leak: Option<bool>,
    pub rewards: Option<RewardParams>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved and validated settings. This is what gets echoed into
/// JSON output, so it holds nothing that varies between equivalent runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub stake: f64,
    pub slots_per_epoch: u64,
    pub committee_size: usize,
    pub trials: u64,
    pub seed: u64,
    pub usd_per_eth: f64,
    pub tie_break: TieBreakArg,
    pub strict_leak: bool,
    pub rewards: RewardParams,
    #[serde(skip)]
    pub format: Format,
}

impl RunConfig {
    pub fn resolve(args: &GlobalArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let stake = args.stake.or(file.stake).unwrap_or(0.3);
        let slots_per_epoch = args.slots_per_epoch.or(file.slots_per_epoch).unwrap_or(32);
        let committee_size = args.committee_size.or(file.committee_size).unwrap_or(128);
        let mut rewards = file.rewards.unwrap_or_default();
        if let Some(usd) = args.usd_per_eth.or(file.usd_per_eth) {
            rewards.usd_per_eth = usd;
        }
        // reward arithmetic always uses the simulated validator count
        rewards.total_validators = slots_per_epoch.saturating_mul(committee_size as u64);
        let config = RunConfig {
            stake,
            slots_per_epoch,
            committee_size,
            trials: args.trials.or(file.trials).unwrap_or(100_000),
            seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            usd_per_eth: rewards.usd_per_eth,
            tie_break: args
                .tie_break
                .or(file.tie_break)
                .unwrap_or(TieBreakArg::MinId),
            strict_leak: args.strict_leak || file.strict_leak.unwrap_or(false),
            format: args.format.or(file.format).unwrap_or(Format::Csv),
            rewards,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.stake) {
            bail!("--stake must lie in [0, 1], got {}", self.stake);
        }
        if self.trials == 0 {
            bail!("--trials must be at least 1");
        }
        ProtocolParams::new(self.slots_per_epoch, self.committee_size)?;
        self.rewards.validate()?;
        Ok(())
    }

    pub fn params(&self) -> ProtocolParams {
        ProtocolParams {
            slots_per_epoch: self.slots_per_epoch,
            committee_size: self.committee_size,
        }
    }

    pub fn mc(&self) -> McConfig {
        McConfig {
            params: self.params(),
            stake: self.stake,
            rewards: self.rewards.clone(),
        }
    }

    pub fn tie(&self) -> TieBreak {
        self.tie_break.into()
    }
}

/// Runs `f` with the requested degree of parallelism.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce(Parallelism) -> T + Send) -> Result<T> {
    if threads == 1 {
        return Ok(f(Parallelism::Serial));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building thread pool")?;
    Ok(pool.install(|| f(Parallelism::Parallel)))
}
