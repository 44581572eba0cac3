//! Attester reward and penalty formulas, in exact Gwei.
//!
//! The base reward follows the protocol's integer semantics (floor division
//! after an integer square root). Everything derived from it is kept as an
//! exact rational and only rounded when rendered.

use std::fmt;
use std::ops::{Add, Mul};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GWEI_PER_ETH: u64 = 1_000_000_000;
/// Epochs without finality after which the inactivity leak applies.
pub const MIN_EPOCHS_TO_INACTIVITY_PENALTY: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("total validators must be positive")]
    ZeroValidators,
    #[error("inclusion delay must be at least 1 slot")]
    ZeroInclusionDelay,
    #[error("epochs since finality cannot be negative, got {0}")]
    NegativeEpochs(i64),
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub base_reward_factor: u64,
    pub base_rewards_per_epoch: u64,
    pub proposer_reward_quotient: u64,
    pub inactivity_penalty_quotient: u64,
    /// Gwei.
    pub max_effective_balance: u64,
    pub total_validators: u64,
    /// Reporting only.
    pub usd_per_eth: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            base_reward_factor: 64,
            base_rewards_per_epoch: 4,
            proposer_reward_quotient: 8,
            inactivity_penalty_quotient: 1 << 24,
            max_effective_balance: 32 * GWEI_PER_ETH,
            total_validators: 4096,
            usd_per_eth: 500.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.total_validators == 0 {
            return Err(RewardError::ZeroValidators);
        }
        let positive = [
            ("base_reward_factor", self.base_reward_factor),
            ("base_rewards_per_epoch", self.base_rewards_per_epoch),
            ("proposer_reward_quotient", self.proposer_reward_quotient),
            (
                "inactivity_penalty_quotient",
                self.inactivity_penalty_quotient,
            ),
            ("max_effective_balance", self.max_effective_balance),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(RewardError::NonPositive(name));
            }
        }
        if self.usd_per_eth.is_nan() || self.usd_per_eth <= 0.0 {
            return Err(RewardError::NonPositive("usd_per_eth"));
        }
        Ok(())
    }

    pub fn total_staked(&self) -> u128 {
        self.total_validators as u128 * self.max_effective_balance as u128
    }
}

/// Exact non-negative Gwei amount.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Gwei(BigRational);

impl Gwei {
    pub fn zero() -> Self {
        Gwei(BigRational::zero())
    }

    pub fn from_integer(v: u128) -> Self {
        Gwei(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn from_ratio(numer: u128, denom: u128) -> Self {
        Gwei(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn as_rational(&self) -> &BigRational {
        &self.0
    }

    /// Nearest integer Gwei, halves rounded up.
    pub fn rounded(&self) -> BigInt {
        let twice = &self.0 * BigInt::from(2) + BigInt::from(1);
        twice.numer().div_floor(&(twice.denom() * BigInt::from(2)))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn div_int(&self, by: u64) -> Gwei {
        Gwei(&self.0 / BigInt::from(by))
    }
}

impl fmt::Display for Gwei {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.rounded())
    }
}

impl Add for Gwei {
    type Output = Gwei;
    fn add(self, rhs: Gwei) -> Gwei {
        Gwei(self.0 + rhs.0)
    }
}

impl Add<&Gwei> for &Gwei {
    type Output = Gwei;
    fn add(self, rhs: &Gwei) -> Gwei {
        Gwei(&self.0 + &rhs.0)
    }
}

impl Mul<u64> for &Gwei {
    type Output = Gwei;
    fn mul(self, rhs: u64) -> Gwei {
        Gwei(&self.0 * BigInt::from(rhs))
    }
}

impl Mul<u64> for Gwei {
    type Output = Gwei;
    fn mul(self, rhs: u64) -> Gwei {
        &self * rhs
    }
}

impl std::iter::Sum for Gwei {
    fn sum<I: Iterator<Item = Gwei>>(iter: I) -> Gwei {
        iter.fold(Gwei::zero(), |a, b| a + b)
    }
}

/// `floor(sqrt(total_validators * max_effective_balance))`.
pub fn total_stake_sqrt(params: &RewardParams) -> u128 {
    params.total_staked().isqrt()
}

/// Base reward per validator per epoch (ρ).
pub fn base_reward(params: &RewardParams) -> Result<Gwei, RewardError> {
    params.validate()?;
    let sqrt = total_stake_sqrt(params);
    let per_epoch = params.max_effective_balance as u128 * params.base_reward_factor as u128
        / sqrt
        / params.base_rewards_per_epoch as u128;
    Ok(Gwei::from_integer(per_epoch))
}

/// Inclusion reward for an attestation included `delay` slots late (ι(d)).
pub fn inclusion_reward(params: &RewardParams, delay: u64) -> Result<Gwei, RewardError> {
    if delay == 0 {
        return Err(RewardError::ZeroInclusionDelay);
    }
    let rho = base_reward(params)?;
    let q = params.proposer_reward_quotient;
    // rho * (1 - 1/q) / d
    Ok(Gwei(
        rho.0 * BigRational::new((q - 1).into(), (q * delay).into()),
    ))
}

/// Full value of one timely, correct attestation (ν = 3ρ + ι(1)).
pub fn max_attestation_value(params: &RewardParams) -> Result<Gwei, RewardError> {
    let rho = base_reward(params)?;
    Ok(&rho * 3 + inclusion_reward(params, 1)?)
}

/// Gwei per epoch-since-finality of the inactivity leak.
pub fn inactivity_leak_coefficient(params: &RewardParams) -> Gwei {
    Gwei::from_ratio(
        params.max_effective_balance as u128,
        params.inactivity_penalty_quotient as u128,
    )
}

/// Inactivity leak penalty λ(e_f); zero until more than four epochs have
/// passed without finality.
pub fn inactivity_leak(
    params: &RewardParams,
    epochs_since_finality: i64,
) -> Result<Gwei, RewardError> {
    if epochs_since_finality < 0 {
        return Err(RewardError::NegativeEpochs(epochs_since_finality));
    }
    let e = epochs_since_finality as u64;
    if e <= MIN_EPOCHS_TO_INACTIVITY_PENALTY {
        return Ok(Gwei::zero());
    }
    Ok(inactivity_leak_coefficient(params) * e)
}

pub fn to_usd(amount: &Gwei, params: &RewardParams) -> f64 {
    amount.to_f64() / GWEI_PER_ETH as f64 * params.usd_per_eth
}
