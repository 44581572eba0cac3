//! Latest-message-driven GHOST over a view, and epoch boundary blocks.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Attestation, BlockId, Epoch, ValidatorIndex, View};

/// Rule for choosing between sibling subtrees of equal weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    MinId,
    MaxId,
}

impl TieBreak {
    /// True when `candidate` should replace `best` at equal weight.
    fn prefers(self, candidate: BlockId, best: BlockId) -> bool {
        match self {
            TieBreak::MinId => candidate < best,
            TieBreak::MaxId => candidate > best,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ForkChoiceError {
    #[error("start block {0} is not visible in this view")]
    StartNotVisible(BlockId),
}

/// For each validator with a visible attestation, the one with the highest slot.
pub fn latest_messages<'a>(view: &View<'a>) -> BTreeMap<ValidatorIndex, &'a Attestation> {
    let mut latest: BTreeMap<ValidatorIndex, &'a Attestation> = BTreeMap::new();
    for att in view.attestations() {
        latest
            .entry(att.validator)
            .and_modify(|cur| {
                if att.slot > cur.slot {
                    *cur = att;
                }
            })
            .or_insert(att);
    }
    latest
}

/// Subtree weights: latest-message head votes for a block or any descendant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightMap {
    weights: Vec<Option<u64>>,
    /// Validators whose latest head vote names a block this view cannot see.
    pub ignored_votes: Vec<ValidatorIndex>,
}

impl WeightMap {
    /// `None` for blocks outside the view.
    pub fn weight(&self, id: BlockId) -> Option<u64> {
        self.weights.get(id.index()).copied().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockId, u64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter_map(|(i, w)| w.map(|w| (BlockId(i as u32), w)))
    }
}

pub fn compute_weights(view: &View<'_>) -> WeightMap {
    let bound = view.id_bound();
    let mut weights: Vec<Option<u64>> = (0..bound)
        .map(|i| view.contains(BlockId(i as u32)).then_some(0))
        .collect();
    let mut ignored_votes = Vec::new();
    for (validator, att) in latest_messages(view) {
        match weights.get_mut(att.head.index()) {
            Some(Some(w)) => *w += 1,
            _ => ignored_votes.push(validator),
        }
    }
    // Parents always have smaller ids than their children, so a single
    // descending sweep pushes every subtree total up to the root.
    for i in (1..bound).rev() {
        let id = BlockId(i as u32);
        let Some(own) = weights[i] else { continue };
        if let Some(parent) = view.block(id).and_then(|b| b.parent) {
            if let Some(Some(pw)) = weights.get_mut(parent.index()) {
                *pw += own;
            }
        }
    }
    WeightMap {
        weights,
        ignored_votes,
    }
}

/// Heaviest child of `id`, or `None` at a leaf.
pub fn best_child(
    view: &View<'_>,
    weights: &WeightMap,
    id: BlockId,
    tie_break: TieBreak,
) -> Option<BlockId> {
    let mut best: Option<(BlockId, u64)> = None;
    for child in view.children(id) {
        let w = weights.weight(child).unwrap_or(0);
        best = match best {
            None => Some((child, w)),
            Some((b, bw)) => match w.cmp(&bw) {
                Ordering::Greater => Some((child, w)),
                Ordering::Equal if tie_break.prefers(child, b) => Some((child, w)),
                _ => Some((b, bw)),
            },
        };
    }
    best.map(|(b, _)| b)
}

/// Walks from `start` to a leaf, taking the heaviest child at each fork.
pub fn ghost_head(
    view: &View<'_>,
    start: BlockId,
    tie_break: TieBreak,
) -> Result<BlockId, ForkChoiceError> {
    let weights = compute_weights(view);
    ghost_head_with(view, &weights, start, tie_break)
}

pub fn ghost_head_with(
    view: &View<'_>,
    weights: &WeightMap,
    start: BlockId,
    tie_break: TieBreak,
) -> Result<BlockId, ForkChoiceError> {
    if !view.contains(start) {
        return Err(ForkChoiceError::StartNotVisible(start));
    }
    let mut head = start;
    while let Some(next) = best_child(view, weights, head, tie_break) {
        head = next;
    }
    Ok(head)
}

/// EBB of `epoch` on the chain ending at `head`: the block at the epoch's
/// first slot if present, else the highest-slot block before that slot.
pub fn ebb_on_chain(view: &View<'_>, head: BlockId, epoch: Epoch) -> BlockId {
    let boundary = view.params().epoch_start(epoch);
    let mut cursor = view.block(head);
    while let Some(b) = cursor {
        if b.slot <= boundary {
            return b.id;
        }
        cursor = b.parent.and_then(|p| view.block(p));
    }
    BlockId::GENESIS
}

/// EBB of `epoch` on this view's canonical chain (GHOST from genesis).
pub fn epoch_boundary_block(view: &View<'_>, epoch: Epoch, tie_break: TieBreak) -> BlockId {
    // genesis is always visible
    let head = ghost_head(view, BlockId::GENESIS, tie_break).unwrap_or(BlockId::GENESIS);
    ebb_on_chain(view, head, epoch)
}
