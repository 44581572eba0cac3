//! Seeded Monte Carlo estimators.
//!
//! Trial `i` of a run with master seed `s` draws from `ChaCha8Rng` seeded
//! with `s` on stream `i`, so every trial's randomness is fixed regardless of
//! how trials are spread over threads. Results are aggregated as integer
//! counts, which makes serial and parallel runs bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack_finality::delay_probability;
use crate::attack_reorg::{epoch_reorg_feasible, post_fork_attestations};
use crate::protocol::{CommitteeSchedule, ConfigError, ProtocolParams};
use crate::rewards::{inclusion_reward, Gwei, RewardError, RewardParams};

pub const DEFAULT_TRIALS: u64 = 100_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Serial,
    /// Uses the current rayon thread pool.
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub params: ProtocolParams,
    pub stake: f64,
    pub rewards: RewardParams,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            params: ProtocolParams::default(),
            stake: 0.3,
            rewards: RewardParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub std_error: f64,
    pub successes: u64,
    pub trials: u64,
    pub seed: u64,
}

impl Estimate {
    pub fn from_counts(successes: u64, trials: u64, seed: u64) -> Self {
        let point = if trials == 0 {
            0.0
        } else {
            successes as f64 / trials as f64
        };
        let std_error = if trials == 0 {
            0.0
        } else {
            (point * (1.0 - point) / trials as f64).sqrt()
        };
        Estimate {
            point,
            std_error,
            successes,
            trials,
            seed,
        }
    }
}

/// Mean reorg cost over the trials where a window existed.
#[derive(Debug, Clone, PartialEq)]
pub enum CostEstimate {
    Mean {
        mean: Gwei,
        std_error: f64,
        successes: u64,
    },
    NoSuccesses,
}

impl CostEstimate {
    pub fn mean(&self) -> Option<&Gwei> {
        match self {
            CostEstimate::Mean { mean, .. } => Some(mean),
            CostEstimate::NoSuccesses => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReorgRow {
    pub n: u64,
    pub probability: Estimate,
    pub cost: CostEstimate,
}

pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub fn trial_schedule(
    config: &McConfig,
    seed: u64,
    trial: u64,
) -> Result<CommitteeSchedule, ConfigError> {
    CommitteeSchedule::sample(config.params, config.stake, &mut trial_rng(seed, trial))
}

/// Runs `trial` for every index and sums the integer tallies.
fn run_trials<T, F>(trials: u64, parallelism: Parallelism, trial: F) -> T
where
    T: Tally,
    F: Fn(u64) -> T + Sync + Send,
{
    match parallelism {
        Parallelism::Serial => (0..trials).map(trial).fold(T::zero(), T::merge),
        Parallelism::Parallel => (0..trials)
            .into_par_iter()
            .map(trial)
            .reduce(T::zero, T::merge),
    }
}

trait Tally: Send {
    fn zero() -> Self;
    fn merge(self, other: Self) -> Self;
}

impl Tally for u64 {
    fn zero() -> Self {
        0
    }
    fn merge(self, other: Self) -> Self {
        self + other
    }
}

#[derive(Debug, Clone, Default)]
struct ReorgTally {
    successes: Vec<u64>,
    sum_k: Vec<u128>,
    sum_k2: Vec<u128>,
}

impl Tally for ReorgTally {
    fn zero() -> Self {
        ReorgTally::default()
    }
    fn merge(mut self, other: Self) -> Self {
        if self.successes.is_empty() {
            return other;
        }
        if other.successes.is_empty() {
            return self;
        }
        for i in 0..self.successes.len() {
            self.successes[i] += other.successes[i];
            self.sum_k[i] += other.sum_k[i];
            self.sum_k2[i] += other.sum_k2[i];
        }
        self
    }
}

/// Probability and mean cost for each reorg length in `ns`, all evaluated on
/// the same per-trial schedules.
pub fn reorg_sweep(
    config: &McConfig,
    ns: &[u64],
    trials: u64,
    seed: u64,
    parallelism: Parallelism,
) -> Result<Vec<ReorgRow>, McError> {
    // validate once up front so trials cannot fail
    trial_schedule(config, seed, 0)?;
    let per_attestation = inclusion_reward(&config.rewards, 1)?;
    let tally = run_trials(trials, parallelism, |t| {
        let schedule = trial_schedule(config, seed, t).expect("validated config");
        let mut tally = ReorgTally {
            successes: vec![0; ns.len()],
            sum_k: vec![0; ns.len()],
            sum_k2: vec![0; ns.len()],
        };
        for (i, &n) in ns.iter().enumerate() {
            if let Some(w) = epoch_reorg_feasible(&schedule, n) {
                let k = post_fork_attestations(&schedule, &w) as u128;
                tally.successes[i] = 1;
                tally.sum_k[i] = k;
                tally.sum_k2[i] = k * k;
            }
        }
        tally
    });

    Ok(ns
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let successes = tally.successes.get(i).copied().unwrap_or(0);
            let cost = if successes == 0 {
                CostEstimate::NoSuccesses
            } else {
                let sum_k = tally.sum_k[i];
                let mean_k = sum_k as f64 / successes as f64;
                let var_k = (tally.sum_k2[i] as f64 / successes as f64 - mean_k * mean_k).max(0.0);
                CostEstimate::Mean {
                    mean: (&per_attestation * sum_k as u64).div_int(successes),
                    std_error: (var_k / successes as f64).sqrt() * per_attestation.to_f64(),
                    successes,
                }
            };
            ReorgRow {
                n,
                probability: Estimate::from_counts(successes, trials, seed),
                cost,
            }
        })
        .collect())
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum McError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("at least one trial is required")]
    NoTrials,
}

/// Fraction of random epochs admitting a length-`n` reorg window.
pub fn estimate_reorg_probability(
    config: &McConfig,
    n: u64,
    trials: u64,
    seed: u64,
    parallelism: Parallelism,
) -> Result<Estimate, McError> {
    if trials == 0 {
        return Err(McError::NoTrials);
    }
    Ok(reorg_sweep(config, &[n], trials, seed, parallelism)?[0].probability)
}

pub fn estimate_reorg_cost(
    config: &McConfig,
    n: u64,
    trials: u64,
    seed: u64,
    parallelism: Parallelism,
) -> Result<CostEstimate, McError> {
    if trials == 0 {
        return Err(McError::NoTrials);
    }
    Ok(reorg_sweep(config, &[n], trials, seed, parallelism)?
        .remove(0)
        .cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayCheck {
    pub estimate: Estimate,
    pub exact: f64,
    /// (estimate - exact) / standard error under the exact value.
    pub z_score: f64,
}

/// Simulated coin sequences against the exact no-two-heads probability.
pub fn verify_delay_probability(
    n: u32,
    p_justify: f64,
    trials: u64,
    seed: u64,
    parallelism: Parallelism,
) -> Result<DelayCheck, McError> {
    if trials == 0 {
        return Err(McError::NoTrials);
    }
    let p = p_justify.clamp(0.0, 1.0);
    let successes = run_trials(trials, parallelism, |t| {
        let mut rng = trial_rng(seed, t);
        let mut previous_heads = false;
        for _ in 0..n {
            let heads = rng.random_bool(p);
            if heads && previous_heads {
                return 0u64;
            }
            previous_heads = heads;
        }
        1
    });
    let estimate = Estimate::from_counts(successes, trials, seed);
    let exact = delay_probability(n, p);
    let se = (exact * (1.0 - exact) / trials as f64).sqrt();
    let diff = estimate.point - exact;
    let z_score = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    Ok(DelayCheck {
        estimate,
        exact,
        z_score,
    })
}
