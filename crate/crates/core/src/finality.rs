//! Casper FFG: supermajority links, justification and (case 4) finalization.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::protocol::{BlockId, Epoch, View};

/// `ceil(2/3 * total)`: distinct validators needed for a supermajority link.
pub fn supermajority_threshold(total_validators: usize) -> u64 {
    (2 * total_validators as u64).div_ceil(3)
}

/// (source, target) -> number of distinct validators, per epoch.
pub type LinkTally = BTreeMap<(BlockId, BlockId), u64>;

/// Tallies visible attestations by the epoch of their slot.
pub fn tally_links(view: &View<'_>, up_to_epoch: Epoch) -> BTreeMap<Epoch, LinkTally> {
    let params = view.params();
    let mut voted: HashSet<(u32, Epoch, BlockId, BlockId)> = HashSet::new();
    let mut tallies: BTreeMap<Epoch, LinkTally> = BTreeMap::new();
    for att in view.attestations() {
        let epoch = params.epoch_of(att.slot);
        if epoch > up_to_epoch {
            continue;
        }
        if voted.insert((att.validator, epoch, att.source, att.target)) {
            *tallies
                .entry(epoch)
                .or_default()
                .entry((att.source, att.target))
                .or_default() += 1;
        }
    }
    tallies
}

pub fn link_count(view: &View<'_>, source: BlockId, target: BlockId, epoch: Epoch) -> u64 {
    tally_links(view, epoch)
        .get(&epoch)
        .and_then(|t| t.get(&(source, target)))
        .copied()
        .unwrap_or(0)
}

/// True iff at least `ceil(2/3 * total)` distinct validators attested
/// (source, target) during `epoch`.
pub fn supermajority_link(
    view: &View<'_>,
    source: BlockId,
    target: BlockId,
    epoch: Epoch,
    total_validators: usize,
) -> bool {
    link_count(view, source, target, epoch) >= supermajority_threshold(total_validators)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalityState {
    pub justified: BTreeSet<BlockId>,
    /// Finalized checkpoints and all of their ancestors.
    pub finalized: BTreeSet<BlockId>,
    /// Epoch -> EBB justified by that epoch's attestations. Epoch 0 maps to genesis.
    pub justified_by_epoch: BTreeMap<Epoch, BlockId>,
    /// Checkpoints finalized directly by a link (not via ancestry), with the
    /// epoch whose attestations finalized them.
    pub finalized_checkpoints: BTreeMap<BlockId, Epoch>,
    pub tallies: BTreeMap<Epoch, LinkTally>,
}

impl FinalityState {
    /// Justified checkpoint with the highest epoch.
    pub fn last_justified(&self) -> BlockId {
        self.justified_by_epoch
            .values()
            .next_back()
            .copied()
            .unwrap_or(BlockId::GENESIS)
    }

    pub fn is_epoch_justified(&self, epoch: Epoch) -> bool {
        self.justified_by_epoch.contains_key(&epoch)
    }

    /// Latest checkpoint finalized directly, if any.
    pub fn last_finalized_checkpoint(&self) -> Option<BlockId> {
        self.finalized_checkpoints
            .iter()
            .max_by_key(|(_, &e)| e)
            .map(|(&b, _)| b)
    }
}

/// Replays epochs `1..=up_to_epoch`: a target is justified by a supermajority
/// link from an already-justified source; a justified checkpoint of epoch
/// `e - 1` is finalized when it sources a supermajority link to the justified
/// checkpoint of epoch `e`.
pub fn update_finality(view: &View<'_>, up_to_epoch: Epoch) -> FinalityState {
    let threshold = supermajority_threshold(view.params().total_validators());
    let tallies = tally_links(view, up_to_epoch);

    let mut justified = BTreeSet::from([BlockId::GENESIS]);
    let mut justified_by_epoch = BTreeMap::from([(0, BlockId::GENESIS)]);
    let mut finalized_checkpoints = BTreeMap::new();

    for epoch in 1..=up_to_epoch {
        let Some(tally) = tallies.get(&epoch) else {
            continue;
        };
        let links: Vec<(BlockId, BlockId)> = tally
            .iter()
            .filter(|(&(s, t), &count)| count >= threshold && s != t && justified.contains(&s))
            .map(|(&link, _)| link)
            .collect();
        for (source, target) in links {
            justified.insert(target);
            justified_by_epoch.insert(epoch, target);
            if justified_by_epoch.get(&(epoch - 1)) == Some(&source) {
                finalized_checkpoints.insert(source, epoch);
            }
        }
    }

    let mut finalized = BTreeSet::new();
    for &checkpoint in finalized_checkpoints.keys() {
        for b in view.chain_to(checkpoint) {
            finalized.insert(b);
        }
    }

    FinalityState {
        justified,
        finalized,
        justified_by_epoch,
        finalized_checkpoints,
        tallies,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Actor, Attestation, ChainState, ProtocolParams, Visibility};
    use std::collections::BTreeMap;

    fn chain(st: &mut ChainState, slots: impl IntoIterator<Item = u64>) -> BTreeMap<u64, BlockId> {
        let mut tip = BlockId::GENESIS;
        let mut out = BTreeMap::new();
        for s in slots {
            tip = st.add_block(s, s as u32, tip, Visibility::Public).unwrap();
            out.insert(s, tip);
        }
        out
    }

    fn link(
        st: &mut ChainState,
        epoch: u64,
        source: BlockId,
        target: BlockId,
        voters: std::ops::Range<u32>,
    ) {
        for v in voters {
            st.add_attestation(
                Attestation {
                    validator: v,
                    slot: epoch * 32 + (v as u64 % 32),
                    source,
                    target,
                    head: target,
                },
                Visibility::Public,
            );
        }
    }

    #[test]
    fn threshold_at_defaults() {
        assert_eq!(supermajority_threshold(4096), 2731);
        assert_eq!(supermajority_threshold(3), 2);
        assert_eq!(supermajority_threshold(0), 0);
    }

    #[test]
    fn link_boundary_2731_vs_2730() {
        let mut st = ChainState::new(ProtocolParams::default());
        let b = chain(&mut st, 1..=40);
        link(&mut st, 1, BlockId::GENESIS, b[&32], 0..2730);
        let view = st.view(Actor::Public);
        assert!(!supermajority_link(
            &view,
            BlockId::GENESIS,
            b[&32],
            1,
            4096
        ));
        link(&mut st, 1, BlockId::GENESIS, b[&32], 2730..2731);
        let view = st.view(Actor::Public);
        assert!(supermajority_link(&view, BlockId::GENESIS, b[&32], 1, 4096));
    }

    #[test]
    fn no_attestations_no_link() {
        let st = ChainState::new(ProtocolParams::default());
        let view = st.view(Actor::Public);
        assert!(!supermajority_link(
            &view,
            BlockId::GENESIS,
            BlockId::GENESIS,
            1,
            4096
        ));
        let f = update_finality(&view, 5);
        assert_eq!(f.justified, BTreeSet::from([BlockId::GENESIS]));
        assert!(f.finalized.is_empty());
    }

    #[test]
    fn duplicate_votes_count_once() {
        let mut st = ChainState::new(ProtocolParams::default());
        let b = chain(&mut st, 1..=33);
        link(&mut st, 1, BlockId::GENESIS, b[&32], 0..2000);
        link(&mut st, 1, BlockId::GENESIS, b[&32], 0..2000);
        assert_eq!(
            link_count(&st.view(Actor::Public), BlockId::GENESIS, b[&32], 1),
            2000
        );
    }

    #[test]
    fn borrowed_ebb_is_justified_and_previous_finalized() {
        let mut st = ChainState::new(ProtocolParams::default());
        let b = chain(&mut st, (1..=63).chain(65..=70));
        link(&mut st, 1, BlockId::GENESIS, b[&32], 0..2731);
        link(&mut st, 2, b[&32], b[&63], 0..2731);
        let f = update_finality(&st.view(Actor::Public), 2);
        assert_eq!(
            f.justified,
            BTreeSet::from([BlockId::GENESIS, b[&32], b[&63]])
        );
        assert!(f.finalized.contains(&b[&32]));
        assert!(f.finalized.contains(&b[&31]));
        assert!(!f.finalized.contains(&b[&33]));
        assert_eq!(f.last_justified(), b[&63]);
        assert_eq!(f.last_finalized_checkpoint(), Some(b[&32]));
    }

    #[test]
    fn link_from_unjustified_source_does_not_justify() {
        let mut st = ChainState::new(ProtocolParams::default());
        let b = chain(&mut st, 1..=70);
        link(&mut st, 2, b[&32], b[&64], 0..4000);
        let f = update_finality(&st.view(Actor::Public), 2);
        assert_eq!(f.justified, BTreeSet::from([BlockId::GENESIS]));
    }

    #[test]
    fn skipped_epoch_justifies_without_finalizing() {
        let mut st = ChainState::new(ProtocolParams::default());
        let b = chain(&mut st, 1..=100);
        link(&mut st, 2, BlockId::GENESIS, b[&64], 0..4000);
        let f = update_finality(&st.view(Actor::Public), 2);
        assert!(f.justified.contains(&b[&64]));
        assert!(f.finalized.is_empty());
        link(&mut st, 3, b[&64], b[&96], 0..4000);
        let f = update_finality(&st.view(Actor::Public), 3);
        assert!(f.finalized.contains(&b[&64]));
        assert!(f.finalized.contains(&BlockId::GENESIS));
        // finalized is always a subset of justified checkpoints' ancestry
        assert!(f
            .finalized_checkpoints
            .keys()
            .all(|c| f.justified.contains(c)));
    }

    #[test]
    fn adding_attestations_never_unjustifies() {
        let mut st = ChainState::new(ProtocolParams::default());
        let b = chain(&mut st, 1..=70);
        link(&mut st, 1, BlockId::GENESIS, b[&32], 0..2731);
        let before = update_finality(&st.view(Actor::Public), 2).justified;
        link(&mut st, 1, BlockId::GENESIS, b[&31], 2731..4096);
        link(&mut st, 2, b[&32], b[&64], 0..100);
        let after = update_finality(&st.view(Actor::Public), 2).justified;
        assert!(before.is_subset(&after));
    }
}
