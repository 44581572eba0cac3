//! Core domain types: slots and epochs, blocks, attestations, committee
//! schedules and the chain state with its public / attacker-private split.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Slot = u64;
pub type Epoch = u64;
pub type ValidatorIndex = u32;

pub const DEFAULT_SLOTS_PER_EPOCH: u64 = 32;
pub const DEFAULT_COMMITTEE_SIZE: usize = 128;

/// Identifier of a block. Ids are handed out in creation order, genesis is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u32);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("slots_per_epoch and committee_size must both be at least 1")]
    ZeroDimension,
    #[error(
        "total validators {total} does not equal slots_per_epoch {slots_per_epoch} x committee_size {committee_size}"
    )]
    DimensionMismatch {
        total: usize,
        slots_per_epoch: u64,
        committee_size: usize,
    },
    #[error("stake fraction must lie in [0, 1], got {0}")]
    StakeOutOfRange(f64),
    #[error("expected {expected} committees, got {got}")]
    CommitteeCount { expected: usize, got: usize },
    #[error("committee at slot offset {offset} has {len} members, expected {expected}")]
    CommitteeLength {
        offset: usize,
        len: usize,
        expected: usize,
    },
    #[error("slot offset {offset}: {red} attacker seats cannot fill a committee of {committee} with that proposer")]
    SeatLayout {
        offset: usize,
        red: usize,
        committee: usize,
    },
    #[error("validator {0} is out of range or appears more than once in the epoch")]
    NotAPartition(ValidatorIndex),
}

/// Epoch geometry shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub slots_per_epoch: u64,
    pub committee_size: usize,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            slots_per_epoch: DEFAULT_SLOTS_PER_EPOCH,
            committee_size: DEFAULT_COMMITTEE_SIZE,
        }
    }
}

impl ProtocolParams {
    pub fn new(slots_per_epoch: u64, committee_size: usize) -> Result<Self, ConfigError> {
        if slots_per_epoch == 0 || committee_size == 0 {
            return Err(ConfigError::ZeroDimension);
        }
        Ok(ProtocolParams {
            slots_per_epoch,
            committee_size,
        })
    }

    pub fn total_validators(&self) -> usize {
        self.slots_per_epoch as usize * self.committee_size
    }

    pub fn epoch_of(&self, slot: Slot) -> Epoch {
        slot / self.slots_per_epoch
    }

    pub fn epoch_start(&self, epoch: Epoch) -> Slot {
        epoch * self.slots_per_epoch
    }
}

/// Number of attacker validators for a stake fraction, floored.
///
/// A small epsilon absorbs binary representation error so that e.g.
/// `0.29 * 100` counts as 29 rather than 28.
pub fn attacker_count(stake: f64, total: usize) -> usize {
    let raw = stake * total as f64;
    ((raw + 1e-9).floor().max(0.0) as usize).min(total)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub slot: Slot,
    /// `None` only for genesis.
    pub proposer: Option<ValidatorIndex>,
    pub parent: Option<BlockId>,
}

/// A validator's vote: FFG source / target plus the fork-choice head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attestation {
    pub validator: ValidatorIndex,
    pub slot: Slot,
    pub source: BlockId,
    pub target: BlockId,
    pub head: BlockId,
}

/// Per-slot committee assignment for one epoch plus the attacker set.
///
/// Slot positions are offsets within the epoch. The first member of each
/// committee is that slot's proposer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeSchedule {
    params: ProtocolParams,
    committees: Vec<Vec<ValidatorIndex>>,
    attacker: Vec<bool>,
    attacker_seats: Vec<u32>,
}

impl CommitteeSchedule {
    /// Uniformly random partition of the validators into committees, seeded.
    pub fn build(
        total_validators: usize,
        slots_per_epoch: u64,
        committee_size: usize,
        stake_fraction: f64,
        rng_seed: u64,
    ) -> Result<Self, ConfigError> {
        let params = ProtocolParams::new(slots_per_epoch, committee_size)?;
        if total_validators != params.total_validators() {
            return Err(ConfigError::DimensionMismatch {
                total: total_validators,
                slots_per_epoch,
                committee_size,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        Self::sample(params, stake_fraction, &mut rng)
    }

    /// Draws a schedule from an existing rng. The attacker set is always the
    /// lowest `floor(stake * total)` indices; only the committee placement is
    /// random.
    pub fn sample<R: Rng + ?Sized>(
        params: ProtocolParams,
        stake_fraction: f64,
        rng: &mut R,
    ) -> Result<Self, ConfigError> {
        if !(0.0..=1.0).contains(&stake_fraction) {
            return Err(ConfigError::StakeOutOfRange(stake_fraction));
        }
        let total = params.total_validators();
        let mut validators: Vec<ValidatorIndex> = (0..total as ValidatorIndex).collect();
        validators.shuffle(rng);
        let committees = validators
            .chunks(params.committee_size)
            .map(<[ValidatorIndex]>::to_vec)
            .collect();
        let attackers = attacker_count(stake_fraction, total);
        Self::from_committees(params, committees, 0..attackers as ValidatorIndex)
    }

    /// Hand-built schedule. The committees must partition `0..total`.
    pub fn from_committees(
        params: ProtocolParams,
        committees: Vec<Vec<ValidatorIndex>>,
        attackers: impl IntoIterator<Item = ValidatorIndex>,
    ) -> Result<Self, ConfigError> {
        let total = params.total_validators();
        if committees.len() != params.slots_per_epoch as usize {
            return Err(ConfigError::CommitteeCount {
                expected: params.slots_per_epoch as usize,
                got: committees.len(),
            });
        }
        let mut seen = vec![false; total];
        for (offset, committee) in committees.iter().enumerate() {
            if committee.len() != params.committee_size {
                return Err(ConfigError::CommitteeLength {
                    offset,
                    len: committee.len(),
                    expected: params.committee_size,
                });
            }
            for &v in committee {
                match seen.get_mut(v as usize) {
                    Some(slot) if !*slot => *slot = true,
                    _ => return Err(ConfigError::NotAPartition(v)),
                }
            }
        }
        let mut attacker = vec![false; total];
        for v in attackers {
            match attacker.get_mut(v as usize) {
                Some(flag) => *flag = true,
                None => return Err(ConfigError::NotAPartition(v)),
            }
        }
        let attacker_seats = committees
            .iter()
            .map(|c| c.iter().filter(|&&v| attacker[v as usize]).count() as u32)
            .collect();
        Ok(CommitteeSchedule {
            params,
            committees,
            attacker,
            attacker_seats,
        })
    }

    pub fn params(&self) -> ProtocolParams {
        self.params
    }

    pub fn slots_per_epoch(&self) -> u64 {
        self.params.slots_per_epoch
    }

    pub fn committee_size(&self) -> usize {
        self.params.committee_size
    }

    pub fn total_validators(&self) -> usize {
        self.params.total_validators()
    }

    pub fn committees(&self) -> &[Vec<ValidatorIndex>] {
        &self.committees
    }

    pub fn committee(&self, offset: usize) -> &[ValidatorIndex] {
        &self.committees[offset]
    }

    pub fn proposer(&self, offset: usize) -> ValidatorIndex {
        self.committees[offset][0]
    }

    pub fn is_attacker(&self, validator: ValidatorIndex) -> bool {
        self.attacker
            .get(validator as usize)
            .copied()
            .unwrap_or(false)
    }

    pub fn attacker_proposes(&self, offset: usize) -> bool {
        self.is_attacker(self.proposer(offset))
    }

    pub fn attacker_set(&self) -> impl Iterator<Item = ValidatorIndex> + '_ {
        self.attacker
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(v, _)| v as ValidatorIndex)
    }

    pub fn attacker_count(&self) -> usize {
        self.attacker.iter().filter(|&&a| a).count()
    }

    pub fn attacker_seats(&self, offset: usize) -> usize {
        self.attacker_seats[offset] as usize
    }

    pub fn honest_seats(&self, offset: usize) -> usize {
        self.params.committee_size - self.attacker_seats(offset)
    }

    /// Same committees, different attacker set. Used by tests and scenario
    /// construction.
    pub fn with_attackers(
        &self,
        attackers: impl IntoIterator<Item = ValidatorIndex>,
    ) -> Result<Self, ConfigError> {
        Self::from_committees(self.params, self.committees.clone(), attackers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    Private,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Public,
    Attacker,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("block at slot {slot} must come after its parent at slot {parent_slot}")]
    SlotNotAfterParent { slot: Slot, parent_slot: Slot },
    #[error("public block cannot extend private parent {0}")]
    PrivateParent(BlockId),
    #[error("unknown attestation index {0}")]
    UnknownAttestation(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry<T> {
    item: T,
    public: bool,
}

/// Block tree and attestation pool, each message tagged public or private.
///
/// Release is monotone: there is no way to make a public message private.
#[derive(Debug, Clone)]
pub struct ChainState {
    params: ProtocolParams,
    blocks: Vec<Entry<Block>>,
    children: Vec<Vec<BlockId>>,
    attestations: Vec<Entry<Attestation>>,
    current_slot: Slot,
}

impl ChainState {
    pub fn new(params: ProtocolParams) -> Self {
        let genesis = Block {
            id: BlockId::GENESIS,
            slot: 0,
            proposer: None,
            parent: None,
        };
        ChainState {
            params,
            blocks: vec![Entry {
                item: genesis,
                public: true,
            }],
            children: vec![Vec::new()],
            attestations: Vec::new(),
            current_slot: 0,
        }
    }

    pub fn params(&self) -> ProtocolParams {
        self.params
    }

    pub fn current_slot(&self) -> Slot {
        self.current_slot
    }

    pub fn set_current_slot(&mut self, slot: Slot) {
        self.current_slot = slot;
    }

    pub fn add_block(
        &mut self,
        slot: Slot,
        proposer: ValidatorIndex,
        parent: BlockId,
        visibility: Visibility,
    ) -> Result<BlockId, StateError> {
        let parent_entry = self
            .blocks
            .get(parent.index())
            .ok_or(StateError::UnknownBlock(parent))?;
        if parent_entry.item.slot >= slot {
            return Err(StateError::SlotNotAfterParent {
                slot,
                parent_slot: parent_entry.item.slot,
            });
        }
        let public = visibility == Visibility::Public;
        if public && !parent_entry.public {
            return Err(StateError::PrivateParent(parent));
        }
        let id = BlockId(self.blocks.len() as u32);
        self.blocks.push(Entry {
            item: Block {
                id,
                slot,
                proposer: Some(proposer),
                parent: Some(parent),
            },
            public,
        });
        self.children.push(Vec::new());
        self.children[parent.index()].push(id);
        Ok(id)
    }

    /// Adds an attestation and returns its pool index. Referenced blocks are
    /// not validated; fork choice ignores votes for blocks it cannot see.
    pub fn add_attestation(&mut self, attestation: Attestation, visibility: Visibility) -> usize {
        self.attestations.push(Entry {
            item: attestation,
            public: visibility == Visibility::Public,
        });
        self.attestations.len() - 1
    }

    /// Publishes a block together with any still-private ancestors.
    pub fn release_block(&mut self, id: BlockId) -> Result<Vec<BlockId>, StateError> {
        if id.index() >= self.blocks.len() {
            return Err(StateError::UnknownBlock(id));
        }
        let mut released = Vec::new();
        let mut cursor = Some(id);
        while let Some(b) = cursor {
            let entry = &mut self.blocks[b.index()];
            if entry.public {
                break;
            }
            entry.public = true;
            released.push(b);
            cursor = entry.item.parent;
        }
        released.reverse();
        Ok(released)
    }

    pub fn release_attestation(&mut self, index: usize) -> Result<(), StateError> {
        let entry = self
            .attestations
            .get_mut(index)
            .ok_or(StateError::UnknownAttestation(index))?;
        entry.public = true;
        Ok(())
    }

    /// Publishes every private message. Returns the released block ids and
    /// attestation indices.
    pub fn release_all(&mut self) -> (Vec<BlockId>, Vec<usize>) {
        let mut blocks = Vec::new();
        for entry in self.blocks.iter_mut().filter(|e| !e.public) {
            entry.public = true;
            blocks.push(entry.item.id);
        }
        let mut atts = Vec::new();
        for (i, entry) in self.attestations.iter_mut().enumerate() {
            if !entry.public {
                entry.public = true;
                atts.push(i);
            }
        }
        (blocks, atts)
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(id.index()).map(|e| &e.item)
    }

    pub fn is_public(&self, id: BlockId) -> bool {
        self.blocks.get(id.index()).is_some_and(|e| e.public)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn attestation(&self, index: usize) -> Option<&Attestation> {
        self.attestations.get(index).map(|e| &e.item)
    }

    pub fn attestation_count(&self) -> usize {
        self.attestations.len()
    }

    /// Number of public blocks plus public attestations.
    pub fn public_message_count(&self) -> usize {
        self.blocks.iter().filter(|e| e.public).count()
            + self.attestations.iter().filter(|e| e.public).count()
    }

    pub fn view(&self, actor: Actor) -> View<'_> {
        View { state: self, actor }
    }
}

/// Read-only, filtered window onto a [`ChainState`].
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    state: &'a ChainState,
    actor: Actor,
}

impl<'a> View<'a> {
    pub fn actor(&self) -> Actor {
        self.actor
    }

    pub fn params(&self) -> ProtocolParams {
        self.state.params
    }

    fn visible(&self, public: bool) -> bool {
        public || self.actor == Actor::Attacker
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.state
            .blocks
            .get(id.index())
            .is_some_and(|e| self.visible(e.public))
    }

    pub fn block(&self, id: BlockId) -> Option<&'a Block> {
        self.state
            .blocks
            .get(id.index())
            .filter(|e| self.visible(e.public))
            .map(|e| &e.item)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &'a Block> + '_ {
        self.state
            .blocks
            .iter()
            .filter(|e| self.visible(e.public))
            .map(|e| &e.item)
    }

    pub fn children(&self, id: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        self.state
            .children
            .get(id.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
            .iter()
            .copied()
            .filter(|&c| self.contains(c))
    }

    pub fn attestations(&self) -> impl Iterator<Item = &'a Attestation> + '_ {
        self.state
            .attestations
            .iter()
            .filter(|e| self.visible(e.public))
            .map(|e| &e.item)
    }

    /// Upper bound on block ids, for dense per-block tables.
    pub fn id_bound(&self) -> usize {
        self.state.blocks.len()
    }

    /// Chain from genesis to `tip`, inclusive.
    pub fn chain_to(&self, tip: BlockId) -> Vec<BlockId> {
        let mut chain = Vec::new();
        let mut cursor = self.block(tip);
        while let Some(b) = cursor {
            chain.push(b.id);
            cursor = b.parent.and_then(|p| self.block(p));
        }
        chain.reverse();
        chain
    }

    pub fn is_ancestor(&self, ancestor: BlockId, descendant: BlockId) -> bool {
        let mut cursor = self.block(descendant);
        while let Some(b) = cursor {
            if b.id == ancestor {
                return true;
            }
            if b.id < ancestor {
                return false;
            }
            cursor = b.parent.and_then(|p| self.block(p));
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DoubleProposal {
        proposer: ValidatorIndex,
        slot: Slot,
        blocks: Vec<BlockId>,
    },
    DoubleAttestation {
        validator: ValidatorIndex,
        slot: Slot,
        count: usize,
    },
}

/// Every (proposer, slot) with two distinct blocks and every
/// (validator, slot) with two distinct attestations, over all messages.
pub fn check_slashable(state: &ChainState) -> Vec<Violation> {
    let mut proposals: BTreeMap<(ValidatorIndex, Slot), Vec<BlockId>> = BTreeMap::new();
    for entry in &state.blocks {
        let b = &entry.item;
        if let Some(p) = b.proposer {
            proposals.entry((p, b.slot)).or_default().push(b.id);
        }
    }
    let mut votes: BTreeMap<(ValidatorIndex, Slot), Vec<&Attestation>> = BTreeMap::new();
    for entry in &state.attestations {
        let a = &entry.item;
        let seen = votes.entry((a.validator, a.slot)).or_default();
        if !seen.contains(&a) {
            seen.push(a);
        }
    }

    let mut violations: Vec<Violation> = proposals
        .into_iter()
        .filter(|(_, blocks)| blocks.len() > 1)
        .map(|((proposer, slot), blocks)| Violation::DoubleProposal {
            proposer,
            slot,
            blocks,
        })
        .collect();
    violations.extend(votes.into_iter().filter(|(_, atts)| atts.len() > 1).map(
        |((validator, slot), atts)| Violation::DoubleAttestation {
            validator,
            slot,
            count: atts.len(),
        },
    ));
    violations
}
