//! Slot-driven simulation driver: honest validator behaviour, an event log
//! and per-slot snapshots. Attack strategies drive it slot by slot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finality::{update_finality, FinalityState};
use crate::fork_choice::{ebb_on_chain, ghost_head, TieBreak};
use crate::protocol::{
    check_slashable, Actor, Attestation, BlockId, ChainState, CommitteeSchedule, ConfigError,
    Epoch, ProtocolParams, Slot, StateError, ValidatorIndex, Violation, Visibility,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("at least one epoch schedule is required")]
    NoSchedules,
    #[error("epoch {0} schedule has different dimensions from epoch 0")]
    MismatchedSchedules(Epoch),
    #[error("slot {0} lies beyond the scheduled epochs")]
    SlotOutOfRange(Slot),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Propose,
    Attest,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Honest,
    Attacker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Propose,
    ProposePrivate,
    Attest,
    AttestPrivate,
    Withhold,
    Release,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub slot: Slot,
    pub phase: Phase,
    pub actor: Role,
    pub action: Action,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<BlockId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attestation: Option<Attestation>,
}

/// State of the public view at the end of a slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSnapshot {
    pub slot: Slot,
    pub public_head: BlockId,
    pub public_messages: usize,
    pub total_messages: usize,
}

/// FFG vote and head chosen by a validator from its view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteData {
    pub source: BlockId,
    pub target: BlockId,
    pub head: BlockId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub head: BlockId,
    pub canonical: Vec<BlockId>,
    pub justified: Vec<BlockId>,
    pub finalized: Vec<BlockId>,
    pub slashable: Vec<Violation>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub params: ProtocolParams,
    pub tie_break: TieBreak,
    pub events: Vec<Event>,
    pub snapshots: Vec<SlotSnapshot>,
    pub state: ChainState,
    /// Last simulated slot.
    pub end_slot: Slot,
}

impl Trace {
    pub fn last_epoch(&self) -> Epoch {
        self.params.epoch_of(self.end_slot)
    }

    pub fn public_head(&self) -> BlockId {
        ghost_head(
            &self.state.view(Actor::Public),
            BlockId::GENESIS,
            self.tie_break,
        )
        .unwrap_or(BlockId::GENESIS)
    }

    pub fn finality(&self) -> FinalityState {
        update_finality(&self.state.view(Actor::Public), self.last_epoch())
    }

    pub fn summary(&self) -> FinalSummary {
        let view = self.state.view(Actor::Public);
        let head = self.public_head();
        let finality = self.finality();
        FinalSummary {
            head,
            canonical: view.chain_to(head),
            justified: finality.justified.into_iter().collect(),
            finalized: finality.finalized.into_iter().collect(),
            slashable: check_slashable(&self.state),
        }
    }

    /// True when the public message set never shrank from one slot to the next.
    pub fn release_is_monotone(&self) -> bool {
        self.snapshots
            .windows(2)
            .all(|w| w[0].public_messages <= w[1].public_messages)
    }
}

pub struct Simulator<'s> {
    schedules: &'s [CommitteeSchedule],
    params: ProtocolParams,
    state: ChainState,
    tie_break: TieBreak,
    events: Vec<Event>,
    snapshots: Vec<SlotSnapshot>,
    last_slot: Slot,
}

impl<'s> Simulator<'s> {
    /// One schedule per simulated epoch, starting at epoch 0.
    pub fn new(schedules: &'s [CommitteeSchedule], tie_break: TieBreak) -> Result<Self, SimError> {
        let first = schedules.first().ok_or(SimError::NoSchedules)?;
        let params = first.params();
        for (e, s) in schedules.iter().enumerate() {
            if s.params() != params {
                return Err(SimError::MismatchedSchedules(e as Epoch));
            }
        }
        Ok(Simulator {
            schedules,
            params,
            state: ChainState::new(params),
            tie_break,
            events: Vec::new(),
            snapshots: Vec::new(),
            last_slot: 0,
        })
    }

    pub fn params(&self) -> ProtocolParams {
        self.params
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }

    /// One past the last schedulable slot.
    pub fn slot_bound(&self) -> Slot {
        self.schedules.len() as Slot * self.params.slots_per_epoch
    }

    fn locate(&self, slot: Slot) -> Result<(&'s CommitteeSchedule, usize), SimError> {
        let epoch = self.params.epoch_of(slot) as usize;
        let schedule = self
            .schedules
            .get(epoch)
            .ok_or(SimError::SlotOutOfRange(slot))?;
        Ok((schedule, (slot % self.params.slots_per_epoch) as usize))
    }

    pub fn committee(&self, slot: Slot) -> Result<&'s [ValidatorIndex], SimError> {
        let (s, offset) = self.locate(slot)?;
        Ok(s.committee(offset))
    }

    pub fn proposer(&self, slot: Slot) -> Result<ValidatorIndex, SimError> {
        let (s, offset) = self.locate(slot)?;
        Ok(s.proposer(offset))
    }

    pub fn is_attacker(&self, slot: Slot, validator: ValidatorIndex) -> bool {
        self.locate(slot)
            .map(|(s, _)| s.is_attacker(validator))
            .unwrap_or(false)
    }

    fn role(&self, slot: Slot, validator: ValidatorIndex) -> Role {
        if self.is_attacker(slot, validator) {
            Role::Attacker
        } else {
            Role::Honest
        }
    }

    pub fn head(&self, actor: Actor) -> BlockId {
        ghost_head(&self.state.view(actor), BlockId::GENESIS, self.tie_break)
            .unwrap_or(BlockId::GENESIS)
    }

    /// Justified checkpoint to use as source for attestations in `epoch`.
    pub fn source_for(&self, actor: Actor, epoch: Epoch) -> BlockId {
        if epoch == 0 {
            return BlockId::GENESIS;
        }
        update_finality(&self.state.view(actor), epoch - 1).last_justified()
    }

    /// Vote an honest validator with this view would cast at `slot`.
    pub fn honest_vote(&self, actor: Actor, slot: Slot) -> VoteData {
        let head = self.head(actor);
        self.vote_for_head(actor, slot, head)
    }

    /// FFG source/target consistent with the chain ending at `head`.
    pub fn vote_for_head(&self, actor: Actor, slot: Slot, head: BlockId) -> VoteData {
        let epoch = self.params.epoch_of(slot);
        let view = self.state.view(actor);
        VoteData {
            source: self.source_for(actor, epoch),
            target: ebb_on_chain(&view, head, epoch),
            head,
        }
    }

    pub fn propose(
        &mut self,
        slot: Slot,
        parent: BlockId,
        visibility: Visibility,
    ) -> Result<BlockId, SimError> {
        let proposer = self.proposer(slot)?;
        let id = self.state.add_block(slot, proposer, parent, visibility)?;
        self.events.push(Event {
            slot,
            phase: Phase::Propose,
            actor: self.role(slot, proposer),
            action: match visibility {
                Visibility::Public => Action::Propose,
                Visibility::Private => Action::ProposePrivate,
            },
            block: Some(id),
            attestation: None,
        });
        self.touch(slot);
        Ok(id)
    }

    /// Proposer builds publicly on the head of its own view.
    pub fn honest_propose(&mut self, slot: Slot) -> Result<BlockId, SimError> {
        let proposer = self.proposer(slot)?;
        let actor = if self.is_attacker(slot, proposer) {
            Actor::Attacker
        } else {
            Actor::Public
        };
        let parent = self.head(actor);
        self.propose(slot, parent, Visibility::Public)
    }

    pub fn attest(
        &mut self,
        slot: Slot,
        validator: ValidatorIndex,
        vote: VoteData,
        visibility: Visibility,
    ) {
        let attestation = Attestation {
            validator,
            slot,
            source: vote.source,
            target: vote.target,
            head: vote.head,
        };
        self.state.add_attestation(attestation, visibility);
        self.events.push(Event {
            slot,
            phase: Phase::Attest,
            actor: self.role(slot, validator),
            action: match visibility {
                Visibility::Public => Action::Attest,
                Visibility::Private => Action::AttestPrivate,
            },
            block: None,
            attestation: Some(attestation),
        });
        self.touch(slot);
    }

    pub fn withhold(&mut self, slot: Slot, validator: ValidatorIndex) {
        self.events.push(Event {
            slot,
            phase: Phase::Attest,
            actor: self.role(slot, validator),
            action: Action::Withhold,
            block: None,
            attestation: None,
        });
        self.touch(slot);
    }

    /// Honest members of the slot's committee attest publicly from the
    /// public view. Returns the vote they cast.
    pub fn honest_members_attest(&mut self, slot: Slot) -> Result<VoteData, SimError> {
        let vote = self.honest_vote(Actor::Public, slot);
        for &v in self.committee(slot)? {
            if !self.is_attacker(slot, v) {
                self.attest(slot, v, vote, Visibility::Public);
            }
        }
        Ok(vote)
    }

    /// Attacker members follow the honest rule from the attacker view.
    pub fn attacker_members_attest_honestly(&mut self, slot: Slot) -> Result<(), SimError> {
        let vote = self.honest_vote(Actor::Attacker, slot);
        for &v in self.committee(slot)? {
            if self.is_attacker(slot, v) {
                self.attest(slot, v, vote, Visibility::Public);
            }
        }
        Ok(())
    }

    /// A full slot in which everybody follows the protocol.
    pub fn honest_slot(&mut self, slot: Slot) -> Result<(), SimError> {
        self.state.set_current_slot(slot);
        if slot > 0 {
            self.honest_propose(slot)?;
        }
        self.honest_members_attest(slot)?;
        self.attacker_members_attest_honestly(slot)?;
        self.end_slot(slot);
        Ok(())
    }

    pub fn release_all(&mut self, slot: Slot) {
        let (blocks, atts) = self.state.release_all();
        for b in blocks {
            self.events.push(Event {
                slot,
                phase: Phase::Release,
                actor: Role::Attacker,
                action: Action::Release,
                block: Some(b),
                attestation: None,
            });
        }
        for i in atts {
            self.events.push(Event {
                slot,
                phase: Phase::Release,
                actor: Role::Attacker,
                action: Action::Release,
                block: None,
                attestation: self.state.attestation(i).copied(),
            });
        }
        self.touch(slot);
    }

    pub fn end_slot(&mut self, slot: Slot) {
        self.touch(slot);
        self.snapshots.push(SlotSnapshot {
            slot,
            public_head: self.head(Actor::Public),
            public_messages: self.state.public_message_count(),
            total_messages: self.state.block_count() + self.state.attestation_count(),
        });
    }

    fn touch(&mut self, slot: Slot) {
        self.last_slot = self.last_slot.max(slot);
        self.state.set_current_slot(self.last_slot);
    }

    pub fn finish(self) -> Trace {
        Trace {
            params: self.params,
            tie_break: self.tie_break,
            events: self.events,
            snapshots: self.snapshots,
            state: self.state,
            end_slot: self.last_slot,
        }
    }
}

/// Everybody honest over every scheduled slot.
pub fn run_honest(schedules: &[CommitteeSchedule], tie_break: TieBreak) -> Result<Trace, SimError> {
    let mut sim = Simulator::new(schedules, tie_break)?;
    for slot in 0..sim.slot_bound() {
        sim.honest_slot(slot)?;
    }
    Ok(sim.finish())
}

/// Independent schedules for `epochs` consecutive epochs, one sub-seed each.
pub fn draw_schedules(
    params: ProtocolParams,
    stake: f64,
    epochs: usize,
    seed: u64,
) -> Result<Vec<CommitteeSchedule>, ConfigError> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    (0..epochs)
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64);
            CommitteeSchedule::sample(params, stake, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(epochs: usize) -> Vec<CommitteeSchedule> {
        draw_schedules(ProtocolParams::new(8, 6).unwrap(), 0.3, epochs, 11).unwrap()
    }

    #[test]
    fn honest_run_justifies_every_epoch_and_finalizes_one_behind() {
        let schedules = small(4);
        let trace = run_honest(&schedules, TieBreak::MinId).unwrap();
        let f = trace.finality();
        for e in 1..4 {
            assert!(f.is_epoch_justified(e), "epoch {e}");
        }
        for e in 0..3 {
            let cp = f.justified_by_epoch[&e];
            assert_eq!(f.finalized_checkpoints.get(&cp), Some(&(e + 1)));
        }
        assert!(trace.summary().slashable.is_empty());
        assert!(trace.release_is_monotone());
    }

    #[test]
    fn honest_chain_is_linear_and_full() {
        let schedules = small(2);
        let trace = run_honest(&schedules, TieBreak::MinId).unwrap();
        let s = trace.summary();
        assert_eq!(s.canonical.len(), 16);
        assert_eq!(trace.state.block_count(), 16);
        // one attestation per validator per epoch
        assert_eq!(trace.state.attestation_count(), 2 * 48);
    }

    #[test]
    fn mismatched_schedules_are_rejected() {
        let mut schedules = small(1);
        schedules.extend(draw_schedules(ProtocolParams::new(4, 12).unwrap(), 0.3, 1, 1).unwrap());
        assert!(matches!(
            Simulator::new(&schedules, TieBreak::MinId),
            Err(SimError::MismatchedSchedules(1))
        ));
        assert!(matches!(
            Simulator::new(&[], TieBreak::MinId),
            Err(SimError::NoSchedules)
        ));
    }

    #[test]
    fn drawn_schedules_are_reproducible_and_independent() {
        let a = small(3);
        assert_eq!(a, small(3));
        assert_ne!(a[0], a[1]);
    }
}
