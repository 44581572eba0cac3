//! EBB-withholding finality delay.
//!
//! The attacker proposes the first two slots of an epoch and keeps both
//! blocks private, so honest attesters in those slots name the borrowed
//! previous-epoch block as their FFG target. Once enough honest votes are
//! wasted the fork is released and the attacker withholds the rest of its
//! attestations for the epoch, leaving both candidate links short of a
//! supermajority.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finality::{link_count, supermajority_threshold, update_finality};
use crate::fork_choice::TieBreak;
use crate::protocol::{attacker_count, Actor, BlockId, CommitteeSchedule, Epoch, Visibility};
use crate::rewards::{inactivity_leak, max_attestation_value, Gwei, RewardError, RewardParams};
use crate::sim::{run_honest, SimError, Simulator, Trace, VoteData};

/// Honest attestations the attacker must see cast for the wrong target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WasteThreshold {
    pub withheld: u64,
    pub honest_incorrect_base: i64,
    /// One more, since the attacker signs one correct-target attestation.
    pub honest_incorrect_with_own: i64,
    pub slots_needed: u64,
    /// Attacker holds at least a third of the stake.
    pub above_one_third: bool,
}

impl WasteThreshold {
    pub fn from_counts(total: usize, committee_size: usize, attackers: usize) -> Self {
        let total_i = total as i64;
        let threshold = supermajority_threshold(total) as i64;
        let withheld = attackers as i64;
        let base = (total_i - threshold + 1) - withheld;
        let with_own = base + 1;
        let slots_needed = (with_own.max(0) as u64).div_ceil(committee_size.max(1) as u64);
        WasteThreshold {
            withheld: attackers as u64,
            honest_incorrect_base: base,
            honest_incorrect_with_own: with_own,
            slots_needed,
            above_one_third: 3 * attackers >= total,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FinalityDelayError {
    #[error("stake must lie strictly between 0 and 1, got {0}")]
    StakeOutOfRange(f64),
    #[error("attacker does not propose {which} slot of epoch {epoch}")]
    ProposerPrecondition { epoch: Epoch, which: &'static str },
    #[error(
        "epoch {epoch}: only {wasted} wrong-target honest attestations before an honest proposer at offset {offset}, need {needed}"
    )]
    NotEnoughWaste {
        epoch: Epoch,
        wasted: u64,
        needed: i64,
        offset: u64,
    },
    #[error("epoch {0} is not covered by the supplied schedules")]
    EpochOutOfRange(Epoch),
    #[error("epoch 0 starts at genesis and cannot be attacked")]
    GenesisEpoch,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Threshold arithmetic for a given stake. Stakes at or above one third
/// are still computed; `above_one_third` flags them.
pub fn waste_threshold(
    total: usize,
    committee_size: usize,
    stake: f64,
) -> Result<WasteThreshold, FinalityDelayError> {
    if !(stake > 0.0 && stake < 1.0) {
        return Err(FinalityDelayError::StakeOutOfRange(stake));
    }
    Ok(WasteThreshold::from_counts(
        total,
        committee_size,
        attacker_count(stake, total),
    ))
}

/// Probability the attacker proposes both the EBB slot and the next one.
pub fn denial_probability(stake: f64) -> f64 {
    stake * stake
}

/// Probability that `n` independent flips with `P(H) = p_justify` contain
/// no two consecutive heads.
pub fn delay_probability(n: u32, p_justify: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let q = 1.0 - p_justify;
    // probability mass of valid prefixes ending in tails / heads
    let (mut tails, mut heads) = (q, p_justify);
    for _ in 1..n {
        (tails, heads) = ((tails + heads) * q, tails * p_justify);
    }
    tails + heads
}

/// Attacker's cost of an `n`-epoch delay:
/// `ceil(n/2) * withheld * ν` for `n <= 4`, otherwise
/// `ceil(n/2) * withheld * 2ν + λ(n)`. With `strict_leak` the leak term is
/// charged per withheld validator.
pub fn delay_cost(
    n: u64,
    params: &RewardParams,
    stake: f64,
    strict_leak: bool,
) -> Result<Gwei, RewardError> {
    let withheld = attacker_count(stake, params.total_validators as usize) as u64;
    let nu = max_attestation_value(params)?;
    let denials = n.div_ceil(2);
    if n <= 4 {
        return Ok(&nu * (denials * withheld));
    }
    let leak = inactivity_leak(params, n as i64)?;
    let leak = if strict_leak { leak * withheld } else { leak };
    Ok(&nu * (2 * denials * withheld) + leak)
}

/// When the private fork is released and how many honest votes it wasted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalityPlan {
    pub epoch: Epoch,
    /// Fork is released at the end of this slot offset.
    pub release_offset: u64,
    pub wasted: u64,
    pub threshold: WasteThreshold,
}

/// Counts honest seats from the start of the epoch until the threshold is
/// met. Waiting past offset 1 requires the attacker to keep proposing.
pub fn plan_finality_delay(
    schedule: &CommitteeSchedule,
    epoch: Epoch,
) -> Result<FinalityPlan, FinalityDelayError> {
    if schedule.slots_per_epoch() < 2 {
        return Err(FinalityDelayError::ProposerPrecondition {
            epoch,
            which: "the slot after the EBB",
        });
    }
    if !schedule.attacker_proposes(0) {
        return Err(FinalityDelayError::ProposerPrecondition {
            epoch,
            which: "the EBB",
        });
    }
    if !schedule.attacker_proposes(1) {
        return Err(FinalityDelayError::ProposerPrecondition {
            epoch,
            which: "the slot after the EBB",
        });
    }
    let threshold = WasteThreshold::from_counts(
        schedule.total_validators(),
        schedule.committee_size(),
        schedule.attacker_count(),
    );
    let mut wasted = 0u64;
    for offset in 0..schedule.slots_per_epoch() as usize {
        if offset >= 2 && !schedule.attacker_proposes(offset) {
            return Err(FinalityDelayError::NotEnoughWaste {
                epoch,
                wasted,
                needed: threshold.honest_incorrect_with_own,
                offset: offset as u64,
            });
        }
        wasted += schedule.honest_seats(offset) as u64;
        if offset >= 1 && wasted as i64 >= threshold.honest_incorrect_with_own {
            return Ok(FinalityPlan {
                epoch,
                release_offset: offset as u64,
                wasted,
                threshold,
            });
        }
    }
    Err(FinalityDelayError::NotEnoughWaste {
        epoch,
        wasted,
        needed: threshold.honest_incorrect_with_own,
        offset: schedule.slots_per_epoch(),
    })
}

#[derive(Debug, Clone)]
pub struct FinalityDelayOutcome {
    pub trace: Trace,
    pub plans: Vec<FinalityPlan>,
    /// Per attacked epoch: (withheld EBB, borrowed EBB honest voters targeted).
    pub fork_ebbs: Vec<(BlockId, BlockId)>,
    pub fork_blocks: Vec<Vec<BlockId>>,
}

impl FinalityDelayOutcome {
    /// Votes for (source, withheld EBB) and (source, borrowed EBB) in `epoch`.
    pub fn candidate_link_counts(&self, epoch: Epoch) -> Option<(u64, u64)> {
        let idx = self.plans.iter().position(|p| p.epoch == epoch)?;
        let (ebb, borrowed) = self.fork_ebbs[idx];
        let view = self.trace.state.view(Actor::Public);
        let source = update_finality(&view, epoch - 1).last_justified();
        Some((
            link_count(&view, source, ebb, epoch),
            link_count(&view, source, borrowed, epoch),
        ))
    }
}

/// Single-epoch attack; every other scheduled epoch is played honestly.
pub fn execute_finality_delay(
    schedules: &[CommitteeSchedule],
    target_epoch: Epoch,
    tie_break: TieBreak,
) -> Result<FinalityDelayOutcome, FinalityDelayError> {
    execute_finality_delays(schedules, &[target_epoch], tie_break)
}

/// Attacks each epoch in `targets`; all other epochs are honest.
pub fn execute_finality_delays(
    schedules: &[CommitteeSchedule],
    targets: &[Epoch],
    tie_break: TieBreak,
) -> Result<FinalityDelayOutcome, FinalityDelayError> {
    let targets: BTreeSet<Epoch> = targets.iter().copied().collect();
    let mut plans = Vec::new();
    for &e in &targets {
        if e == 0 {
            return Err(FinalityDelayError::GenesisEpoch);
        }
        let schedule = schedules
            .get(e as usize)
            .ok_or(FinalityDelayError::EpochOutOfRange(e))?;
        plans.push(plan_finality_delay(schedule, e)?);
    }

    let mut sim = Simulator::new(schedules, tie_break)?;
    let spe = sim.params().slots_per_epoch;
    let mut fork_ebbs = Vec::new();
    let mut fork_blocks = Vec::new();
    for (epoch, schedule) in schedules.iter().enumerate() {
        let epoch = epoch as Epoch;
        let Some(plan) = plans.iter().find(|p| p.epoch == epoch) else {
            for slot in epoch * spe..(epoch + 1) * spe {
                sim.honest_slot(slot)?;
            }
            continue;
        };
        let start = epoch * spe;
        let source = sim.source_for(Actor::Attacker, epoch);
        let parent = sim.head(Actor::Public);
        let borrowed = sim.vote_for_head(Actor::Public, start, parent).target;

        let mut tip = parent;
        let mut blocks = Vec::new();
        for offset in 0..spe {
            let slot = start + offset;
            let private_phase = offset <= plan.release_offset;
            if private_phase {
                tip = sim.propose(slot, tip, Visibility::Private)?;
                blocks.push(tip);
            } else {
                sim.honest_propose(slot)?;
            }
            sim.honest_members_attest(slot)?;
            let ebb = blocks[0];
            for &v in schedule.committee(offset as usize) {
                if !schedule.is_attacker(v) {
                    continue;
                }
                if offset == 0 && v == schedule.proposer(0) {
                    let vote = VoteData {
                        source,
                        target: ebb,
                        head: ebb,
                    };
                    sim.attest(slot, v, vote, Visibility::Private);
                } else {
                    sim.withhold(slot, v);
                }
            }
            if offset == plan.release_offset {
                sim.release_all(slot);
            }
            sim.end_slot(slot);
        }
        fork_ebbs.push((blocks[0], borrowed));
        fork_blocks.push(blocks);
    }

    Ok(FinalityDelayOutcome {
        trace: sim.finish(),
        plans,
        fork_ebbs,
        fork_blocks,
    })
}

/// The same schedules played honestly, for comparison.
pub fn counterfactual_honest(
    schedules: &[CommitteeSchedule],
    tie_break: TieBreak,
) -> Result<Trace, FinalityDelayError> {
    Ok(run_honest(schedules, tie_break)?)
}
