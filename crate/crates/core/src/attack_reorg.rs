//! Private-fork reorg strategy.
//!
//! The attacker proposes `m` consecutive slots and keeps those blocks, and
//! every attestation it makes over the following `n` slots, private. Honest
//! attesters during the fork vote for the fork's parent, so their weight
//! counts for both branches. The `n` honest blocks built meanwhile are
//! orphaned on release iff the attacker's seats over all `m + n` slots
//! outnumber the honest seats over the last `n`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fork_choice::{compute_weights, ebb_on_chain, ghost_head, TieBreak};
use crate::protocol::{
    Actor, BlockId, CommitteeSchedule, ConfigError, ProtocolParams, Slot, ValidatorIndex,
    Visibility,
};
use crate::rewards::{inclusion_reward, Gwei, RewardError, RewardParams};
use crate::sim::{SimError, Simulator, Trace, VoteData};

/// A candidate attack: fork over `[start, start + fork_len)`, honest blocks
/// over the next `reorg_len` slots. Slots are offsets within the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorgWindow {
    pub start_slot: u64,
    pub fork_len: u64,
    pub reorg_len: u64,
}

impl ReorgWindow {
    pub fn new(start_slot: u64, fork_len: u64, reorg_len: u64) -> Self {
        ReorgWindow {
            start_slot,
            fork_len,
            reorg_len,
        }
    }

    pub fn end(&self) -> u64 {
        self.start_slot + self.fork_len + self.reorg_len
    }

    /// Offsets of the honest (to-be-orphaned) slots.
    pub fn reorg_slots(&self) -> std::ops::Range<usize> {
        (self.start_slot + self.fork_len) as usize..self.end() as usize
    }

    pub fn fork_slots(&self) -> std::ops::Range<usize> {
        self.start_slot as usize..(self.start_slot + self.fork_len) as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReorgError {
    #[error("fork and reorg lengths must both be at least 1")]
    ZeroLength,
    #[error("window {0:?} does not fit inside one epoch of {1} slots")]
    CrossesEpoch(ReorgWindow, u64),
    #[error("window {0:?} is not feasible for this schedule")]
    Infeasible(ReorgWindow),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn check_window(schedule: &CommitteeSchedule, w: &ReorgWindow) -> Result<(), ReorgError> {
    if w.fork_len == 0 || w.reorg_len == 0 {
        return Err(ReorgError::ZeroLength);
    }
    if w.end() > schedule.slots_per_epoch() {
        return Err(ReorgError::CrossesEpoch(*w, schedule.slots_per_epoch()));
    }
    Ok(())
}

fn seats_hold(schedule: &CommitteeSchedule, w: &ReorgWindow) -> bool {
    let attacker: usize = (w.start_slot as usize..w.end() as usize)
        .map(|o| schedule.attacker_seats(o))
        .sum();
    let honest: usize = w.reorg_slots().map(|o| schedule.honest_seats(o)).sum();
    w.fork_slots().all(|o| schedule.attacker_proposes(o)) && attacker > honest
}

/// Attacker proposes every fork slot and holds more seats over the whole
/// window than honest validators hold over its last `reorg_len` slots.
pub fn window_feasible(schedule: &CommitteeSchedule, w: &ReorgWindow) -> Result<bool, ReorgError> {
    check_window(schedule, w)?;
    Ok(seats_hold(schedule, w))
}

/// First feasible window for an `n`-block reorg, scanning start slot then
/// fork length in ascending order.
pub fn epoch_reorg_feasible(schedule: &CommitteeSchedule, n: u64) -> Option<ReorgWindow> {
    let spe = schedule.slots_per_epoch();
    if n == 0 || n >= spe {
        return None;
    }
    let slots = spe as usize;
    // prefix sums of attacker / honest seats
    let mut red = vec![0usize; slots + 1];
    let mut black = vec![0usize; slots + 1];
    for o in 0..slots {
        red[o + 1] = red[o] + schedule.attacker_seats(o);
        black[o + 1] = black[o] + schedule.honest_seats(o);
    }
    let n = n as usize;
    for start in 0..slots {
        let mut m = 1;
        while start + m + n <= slots && schedule.attacker_proposes(start + m - 1) {
            let end = start + m + n;
            if red[end] - red[start] > black[end] - black[start + m] {
                return Some(ReorgWindow::new(start as u64, m as u64, n as u64));
            }
            m += 1;
        }
    }
    None
}

/// Attacker seats in the last `reorg_len` slots: attestations made after the
/// private fork ends, which lose their inclusion reward.
pub fn post_fork_attestations(schedule: &CommitteeSchedule, w: &ReorgWindow) -> u64 {
    w.reorg_slots()
        .map(|o| schedule.attacker_seats(o) as u64)
        .sum()
}

/// `k * 7ρ/8` with `k` the post-fork attacker attestations.
pub fn reorg_cost(
    schedule: &CommitteeSchedule,
    w: &ReorgWindow,
    params: &RewardParams,
) -> Result<Gwei, RewardError> {
    Ok(inclusion_reward(params, 1)? * post_fork_attestations(schedule, w))
}

#[derive(Debug, Clone)]
pub struct ReorgOutcome {
    pub trace: Trace,
    pub window: ReorgWindow,
    /// Absolute slot of the first fork block.
    pub start_slot: Slot,
    pub fork_parent: BlockId,
    pub fork_blocks: Vec<BlockId>,
    pub honest_blocks: Vec<BlockId>,
    pub head_before_release: BlockId,
    pub head_after_release: BlockId,
    pub canonical_before_release: Vec<BlockId>,
    pub canonical_after_release: Vec<BlockId>,
    /// Blocks on the public canonical chain before release but not after.
    pub orphaned: Vec<BlockId>,
    pub fork_branch_weight: u64,
    pub honest_branch_weight: u64,
}

/// Runs the strategy. Epoch 0 is played honestly on the same committees
/// (it only provides the fork's parent chain); the attack runs in epoch 1
/// and the trace ends at the release point.
pub fn execute_reorg(
    schedule: &CommitteeSchedule,
    w: &ReorgWindow,
    tie_break: TieBreak,
) -> Result<ReorgOutcome, ReorgError> {
    if !window_feasible(schedule, w)? {
        return Err(ReorgError::Infeasible(*w));
    }
    let schedules = [schedule.clone(), schedule.clone()];
    let mut sim = Simulator::new(&schedules, tie_break)?;
    let spe = schedule.slots_per_epoch();
    let start_slot = spe + w.start_slot;
    for slot in 0..start_slot {
        sim.honest_slot(slot)?;
    }

    // step 1: private fork on top of the public head
    let fork_parent = sim.head(Actor::Public);
    let mut tip = fork_parent;
    let mut fork_blocks = Vec::new();
    for slot in start_slot..start_slot + w.fork_len {
        tip = sim.propose(slot, tip, Visibility::Private)?;
        fork_blocks.push(tip);
        sim.honest_members_attest(slot)?;
        attackers_vote_fork(&mut sim, slot, tip)?;
        sim.end_slot(slot);
    }

    // step 2: honest proposers extend the stale public head; an attacker
    // proposer here builds publicly as well so exactly n blocks are at stake
    let mut honest_blocks = Vec::new();
    let release_slot = start_slot + w.fork_len + w.reorg_len - 1;
    for slot in start_slot + w.fork_len..=release_slot {
        let parent = sim.head(Actor::Public);
        honest_blocks.push(sim.propose(slot, parent, Visibility::Public)?);
        sim.honest_members_attest(slot)?;
        attackers_vote_fork(&mut sim, slot, tip)?;
        if slot == release_slot {
            break;
        }
        sim.end_slot(slot);
    }

    let head_before_release = sim.head(Actor::Public);
    let canonical_before_release = sim
        .state()
        .view(Actor::Public)
        .chain_to(head_before_release);

    // step 3: publish the fork and the withheld attestations
    sim.release_all(release_slot);
    sim.end_slot(release_slot);

    let trace = sim.finish();
    let view = trace.state.view(Actor::Public);
    let head_after_release =
        ghost_head(&view, BlockId::GENESIS, tie_break).map_err(|_| ReorgError::Infeasible(*w))?;
    let canonical_after_release = view.chain_to(head_after_release);
    let orphaned = canonical_before_release
        .iter()
        .copied()
        .filter(|b| !canonical_after_release.contains(b))
        .collect();
    let weights = compute_weights(&view);
    let fork_branch_weight = weights.weight(fork_blocks[0]).unwrap_or(0);
    let honest_branch_weight = weights.weight(honest_blocks[0]).unwrap_or(0);

    Ok(ReorgOutcome {
        trace,
        window: *w,
        start_slot,
        fork_parent,
        fork_blocks,
        honest_blocks,
        head_before_release,
        head_after_release,
        canonical_before_release,
        canonical_after_release,
        orphaned,
        fork_branch_weight,
        honest_branch_weight,
    })
}

fn attackers_vote_fork(sim: &mut Simulator<'_>, slot: Slot, tip: BlockId) -> Result<(), SimError> {
    let epoch = sim.params().epoch_of(slot);
    let view = sim.state().view(Actor::Attacker);
    let vote = VoteData {
        source: sim.source_for(Actor::Attacker, epoch),
        target: ebb_on_chain(&view, tip, epoch),
        head: tip,
    };
    for &v in sim.committee(slot)? {
        if sim.is_attacker(slot, v) {
            sim.attest(slot, v, vote, Visibility::Private);
        }
    }
    Ok(())
}

/// Single-epoch schedule with `red[o]` attacker seats at offset `o`; the
/// proposer (first seat) is an attacker iff `proposer_red[o]`. Attackers are
/// the lowest indices, one validator per seat.
pub fn schedule_from_seats(
    committee: usize,
    red: &[usize],
    proposer_red: &[bool],
) -> Result<CommitteeSchedule, ConfigError> {
    let slots = red.len();
    let params = ProtocolParams::new(slots as u64, committee)?;
    if proposer_red.len() != slots {
        return Err(ConfigError::CommitteeCount {
            expected: slots,
            got: proposer_red.len(),
        });
    }
    let total_red: usize = red.iter().sum();
    let mut next_red = 0 as ValidatorIndex;
    let mut next_black = total_red as ValidatorIndex;
    let mut committees = Vec::with_capacity(slots);
    for (offset, (&r, &red_proposer)) in red.iter().zip(proposer_red).enumerate() {
        if r > committee || (red_proposer && r == 0) || (!red_proposer && r == committee) {
            return Err(ConfigError::SeatLayout {
                offset,
                red: r,
                committee,
            });
        }
        let mut reds: Vec<ValidatorIndex> = (next_red..next_red + r as ValidatorIndex).collect();
        next_red += r as ValidatorIndex;
        let black = (committee - r) as ValidatorIndex;
        let mut blacks: Vec<ValidatorIndex> = (next_black..next_black + black).collect();
        next_black += black;
        let mut c = Vec::with_capacity(committee);
        c.push(if red_proposer {
            reds.remove(0)
        } else {
            blacks.remove(0)
        });
        c.extend(reds);
        c.extend(blacks);
        committees.push(c);
    }
    CommitteeSchedule::from_committees(params, committees, 0..total_red as ValidatorIndex)
}

/// The textbook length-1 reorg on four-seat committees: the attacker
/// proposes slot 1 (its only seat there) and holds two of four seats in slot
/// 2, so the released block outweighs the honest one 3 to 2.
pub fn figure_toy() -> (CommitteeSchedule, ReorgWindow) {
    let schedule = schedule_from_seats(4, &[0, 1, 2, 0], &[false, true, false, false])
        .expect("static toy schedule");
    (schedule, ReorgWindow::new(1, 1, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::check_slashable;

    fn toy() -> CommitteeSchedule {
        figure_toy().0
    }

    fn schedule_with(committee: usize, red: &[usize], proposer_red: &[bool]) -> CommitteeSchedule {
        schedule_from_seats(committee, red, proposer_red).unwrap()
    }

    #[test]
    fn toy_window_is_feasible_three_versus_two() {
        let s = toy();
        let w = ReorgWindow::new(1, 1, 1);
        assert_eq!(window_feasible(&s, &w), Ok(true));
        assert_eq!(epoch_reorg_feasible(&s, 1), Some(w));
    }

    #[test]
    fn toy_execution_orphans_the_honest_block() {
        let out = execute_reorg(&toy(), &ReorgWindow::new(1, 1, 1), TieBreak::MinId).unwrap();
        assert_eq!(out.fork_branch_weight, 3);
        assert_eq!(out.honest_branch_weight, 2);
        assert_eq!(out.head_before_release, out.honest_blocks[0]);
        assert_eq!(out.head_after_release, out.fork_blocks[0]);
        assert_eq!(out.orphaned, out.honest_blocks);
        assert!(check_slashable(&out.trace.state).is_empty());
        assert!(out.trace.release_is_monotone());
    }

    #[test]
    fn honest_fork_slot_votes_land_on_the_common_ancestor() {
        let out = execute_reorg(&toy(), &ReorgWindow::new(1, 1, 1), TieBreak::MinId).unwrap();
        let view = out.trace.state.view(Actor::Public);
        let honest_fork_votes: Vec<_> = view
            .attestations()
            .filter(|a| a.slot == out.start_slot && !toy().is_attacker(a.validator))
            .collect();
        assert_eq!(honest_fork_votes.len(), 3);
        assert!(honest_fork_votes.iter().all(|a| a.head == out.fork_parent));
        let w = compute_weights(&view);
        let on_parent = crate::fork_choice::latest_messages(&view)
            .values()
            .filter(|a| a.head == out.fork_parent)
            .count() as u64;
        assert!(on_parent >= 3);
        // votes on the ancestor count for neither leaf
        assert_eq!(
            w.weight(out.fork_parent).unwrap(),
            on_parent
                + w.weight(out.fork_blocks[0]).unwrap()
                + w.weight(out.honest_blocks[0]).unwrap()
        );
    }

    #[test]
    fn proposer_only_attacker_cannot_outvote() {
        let s = schedule_with(4, &[0, 1, 0, 0], &[false, true, false, false]);
        let w = ReorgWindow::new(1, 1, 1);
        assert_eq!(window_feasible(&s, &w), Ok(false));
        assert_eq!(
            execute_reorg(&s, &w, TieBreak::MinId).unwrap_err(),
            ReorgError::Infeasible(w)
        );
    }

    #[test]
    fn no_attacker_proposals_means_nothing_feasible() {
        let s = schedule_with(4, &[2, 2, 3, 3], &[false; 4]);
        for n in 1..4 {
            assert_eq!(epoch_reorg_feasible(&s, n), None);
        }
    }

    #[test]
    fn window_must_fit_in_epoch() {
        let s = toy();
        assert!(matches!(
            window_feasible(&s, &ReorgWindow::new(2, 1, 2)),
            Err(ReorgError::CrossesEpoch(..))
        ));
        assert_eq!(
            window_feasible(&s, &ReorgWindow::new(1, 0, 1)),
            Err(ReorgError::ZeroLength)
        );
        assert_eq!(epoch_reorg_feasible(&s, 4), None);
    }

    #[test]
    fn two_block_fork_with_typical_membership() {
        // attacker proposes offsets 5 and 6; ~30% seats everywhere
        let mut red = vec![38usize; 32];
        red[5] = 39;
        red[6] = 38;
        let mut prop = vec![false; 32];
        prop[5] = true;
        prop[6] = true;
        let s = schedule_with(128, &red, &prop);
        // one-block fork from slot 5 fails: 39 + 38 < 90
        assert_eq!(window_feasible(&s, &ReorgWindow::new(5, 1, 1)), Ok(false));
        // two-block fork: 39 + 38 + 38 = 115 > 90
        assert_eq!(epoch_reorg_feasible(&s, 1), Some(ReorgWindow::new(5, 2, 1)));
    }

    #[test]
    fn cost_counts_post_fork_seats() {
        let s = toy();
        let p = RewardParams::default();
        let w = ReorgWindow::new(1, 1, 1);
        assert_eq!(post_fork_attestations(&s, &w), 2);
        assert_eq!(
            reorg_cost(&s, &w, &p).unwrap(),
            Gwei::from_ratio(2 * 7 * 44_721, 8)
        );
        let none = schedule_with(4, &[0, 1, 0, 0], &[false, true, false, false]);
        assert_eq!(reorg_cost(&none, &w, &p).unwrap(), Gwei::zero());
    }
}
