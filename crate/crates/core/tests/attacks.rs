use beacon_sim::attack_finality::{
    counterfactual_honest, execute_finality_delay, execute_finality_delays, plan_finality_delay,
    FinalityDelayError,
};
use beacon_sim::attack_reorg::{
    epoch_reorg_feasible, execute_reorg, post_fork_attestations, schedule_from_seats,
    window_feasible, ReorgWindow,
};
use beacon_sim::montecarlo::{trial_schedule, McConfig};
use beacon_sim::protocol::check_slashable;
use beacon_sim::scenario::find_finality_scenario;
use beacon_sim::sim::draw_schedules;
use beacon_sim::{Actor, CommitteeSchedule, ProtocolParams, TieBreak, ValidatorIndex};
use proptest::prelude::*;

/// Rebuilds `schedule` so that an attacker sits in the proposer seat at each
/// of `offsets` (swapping within the committee).
fn with_attacker_proposers(schedule: &CommitteeSchedule, offsets: &[usize]) -> CommitteeSchedule {
    let mut committees: Vec<Vec<ValidatorIndex>> = schedule.committees().to_vec();
    for &o in offsets {
        let c = &mut committees[o];
        let pos = c
            .iter()
            .position(|&v| schedule.is_attacker(v))
            .expect("committee has an attacker seat");
        c.swap(0, pos);
    }
    CommitteeSchedule::from_committees(schedule.params(), committees, schedule.attacker_set())
        .unwrap()
}

#[test]
fn every_feasible_window_orphans_exactly_n_blocks() {
    let config = McConfig::default();
    let mut executed = [0usize; 4];
    for trial in 0..400 {
        let schedule = trial_schedule(&config, 7, trial).unwrap();
        for n in 1..=4u64 {
            // a handful of executions per length keeps this test quick
            if executed[n as usize - 1] == 6 {
                continue;
            }
            let Some(w) = epoch_reorg_feasible(&schedule, n) else {
                continue;
            };
            let out = execute_reorg(&schedule, &w, TieBreak::MinId).unwrap();
            assert_eq!(out.orphaned.len() as u64, n);
            assert_eq!(out.orphaned, out.honest_blocks);
            assert!(out.fork_branch_weight > out.honest_branch_weight);
            assert_eq!(out.head_after_release, *out.fork_blocks.last().unwrap());
            assert_eq!(out.head_before_release, *out.honest_blocks.last().unwrap());
            assert!(out.trace.release_is_monotone());
            assert!(check_slashable(&out.trace.state).is_empty());
            // the honest view before release never saw the fork
            assert!(out
                .canonical_before_release
                .iter()
                .all(|b| !out.fork_blocks.contains(b)));
            executed[n as usize - 1] += 1;
        }
    }
    assert!(executed.iter().take(3).all(|&e| e > 0), "{executed:?}");
}

#[test]
fn max_id_tie_break_gives_the_same_reorg() {
    let config = McConfig::default();
    let mut seen = 0;
    for trial in 0..200 {
        if seen == 4 {
            break;
        }
        let schedule = trial_schedule(&config, 11, trial).unwrap();
        if let Some(w) = epoch_reorg_feasible(&schedule, 2) {
            let a = execute_reorg(&schedule, &w, TieBreak::MinId).unwrap();
            let b = execute_reorg(&schedule, &w, TieBreak::MaxId).unwrap();
            assert_eq!(a.orphaned.len(), b.orphaned.len());
            assert_eq!(a.fork_branch_weight, b.fork_branch_weight);
            seen += 1;
        }
    }
    assert!(seen > 0);
}

fn seat_layout() -> impl Strategy<Value = (usize, Vec<usize>, Vec<bool>)> {
    (2usize..7, 2usize..9).prop_flat_map(|(committee, slots)| {
        (
            Just(committee),
            prop::collection::vec(0..=committee, slots),
            prop::collection::vec(any::<bool>(), slots),
        )
            .prop_map(|(c, mut red, mut prop)| {
                for i in 0..red.len() {
                    // keep every layout constructible
                    if red[i] == 0 {
                        prop[i] = false;
                    }
                    if red[i] == c {
                        prop[i] = true;
                    }
                }
                red.iter_mut().for_each(|r| *r = (*r).min(c));
                (c, red, prop)
            })
    })
}

proptest! {
    #[test]
    fn feasibility_matches_a_seat_recount((committee, red, prop) in seat_layout()) {
        let s = schedule_from_seats(committee, &red, &prop).unwrap();
        let slots = red.len();
        for start in 0..slots {
            for m in 1..=slots - start {
                for n in 1..=slots - start - m {
                    let w = ReorgWindow::new(start as u64, m as u64, n as u64);
                    let fork_proposers = (start..start + m).all(|o| prop[o]);
                    let red_total: usize = red[start..start + m + n].iter().sum();
                    let black_tail: usize =
                        red[start + m..start + m + n].iter().map(|r| committee - r).sum();
                    let expected = fork_proposers && red_total > black_tail;
                    prop_assert_eq!(window_feasible(&s, &w), Ok(expected));
                    if expected {
                        let k: usize = red[start + m..start + m + n].iter().sum();
                        prop_assert_eq!(post_fork_attestations(&s, &w), k as u64);
                    }
                }
            }
        }
    }

    #[test]
    fn an_extra_attacker_seat_never_breaks_a_window(
        (committee, red, prop) in seat_layout(),
        slot_pick in any::<prop::sample::Index>(),
    ) {
        let s = schedule_from_seats(committee, &red, &prop).unwrap();
        let o = slot_pick.index(red.len());
        prop_assume!(red[o] < committee);
        let mut more = red.clone();
        more[o] += 1;
        let mut more_prop = prop.clone();
        // a committee of attackers can only have an attacker proposer
        more_prop[o] |= more[o] == committee;
        let t = schedule_from_seats(committee, &more, &more_prop).unwrap();
        for n in 1..red.len() as u64 {
            if epoch_reorg_feasible(&s, n).is_some() {
                prop_assert!(epoch_reorg_feasible(&t, n).is_some());
            }
        }
    }
}

#[test]
fn delayed_epoch_stays_unjustified_and_finality_resumes() {
    let params = ProtocolParams::default();
    let (_, schedules) = find_finality_scenario(params, 0.3, 5, &[2], 99, 2_000)
        .unwrap()
        .expect("precondition holds for some draw");
    let out = execute_finality_delay(&schedules, 2, TieBreak::MinId).unwrap();
    let f = out.trace.finality();
    assert!(f.is_epoch_justified(1));
    assert!(!f.is_epoch_justified(2));
    assert!(f.is_epoch_justified(3) && f.is_epoch_justified(4));
    let (withheld, borrowed) = out.candidate_link_counts(2).unwrap();
    assert!(withheld < 2731 && borrowed < 2731);
    // the fork's EBB ends up canonical once released
    let (ebb, _) = out.fork_ebbs[0];
    assert!(out.trace.summary().canonical.contains(&ebb));
    assert!(check_slashable(&out.trace.state).is_empty());
    // epoch 3 justifies but cannot finalize across the gap; epoch 4 does
    let ebb3 = f.justified_by_epoch[&3];
    assert_eq!(f.finalized_checkpoints.get(&ebb3), Some(&4));
    let ebb1 = f.justified_by_epoch[&1];
    assert!(!f.finalized_checkpoints.contains_key(&ebb1));

    let honest = counterfactual_honest(&schedules, TieBreak::MinId)
        .unwrap()
        .finality();
    assert!((0..5).all(|e| honest.is_epoch_justified(e)));
    let ebb2 = honest.justified_by_epoch[&2];
    assert_eq!(honest.finalized_checkpoints.get(&ebb2), Some(&3));
}

#[test]
fn alternating_attacks_prevent_finalization() {
    let params = ProtocolParams::default();
    let drawn = draw_schedules(params, 0.3, 6, 5).unwrap();
    // force the proposer precondition; the committees stay as drawn
    let mut schedules = drawn.clone();
    for e in [1usize, 3, 5] {
        schedules[e] = with_attacker_proposers(&drawn[e], &[0, 1]);
    }
    for e in [1u64, 3, 5] {
        if let Err(err) = plan_finality_delay(&schedules[e as usize], e) {
            panic!("epoch {e}: {err}");
        }
    }
    let out = execute_finality_delays(&schedules, &[1, 3, 5], TieBreak::MinId).unwrap();
    let f = out.trace.finality();
    for e in [1u64, 3, 5] {
        assert!(!f.is_epoch_justified(e), "epoch {e} justified");
    }
    for e in [2u64, 4] {
        assert!(f.is_epoch_justified(e), "epoch {e} not justified");
    }
    // only genesis-era checkpoints are final
    assert!(f.finalized_checkpoints.values().all(|&e| e <= 1));
    assert!(check_slashable(&out.trace.state).is_empty());
}

#[test]
fn honest_proposer_at_the_ebb_is_reported() {
    let params = ProtocolParams::default();
    let schedules = draw_schedules(params, 0.3, 3, 1).unwrap();
    let mut honest_ebb = None;
    for seed in 0..200 {
        let s = draw_schedules(params, 0.3, 3, seed).unwrap();
        if !s[1].attacker_proposes(0) {
            honest_ebb = Some(s);
            break;
        }
    }
    let s = honest_ebb.unwrap_or(schedules);
    assert!(matches!(
        execute_finality_delay(&s, 1, TieBreak::MinId),
        Err(FinalityDelayError::ProposerPrecondition { epoch: 1, .. })
    ));
    assert!(matches!(
        execute_finality_delay(&s, 0, TieBreak::MinId),
        Err(FinalityDelayError::GenesisEpoch)
    ));
}

#[test]
fn attacked_public_view_sees_the_fork_only_after_release() {
    let params = ProtocolParams::default();
    let (_, schedules) = find_finality_scenario(params, 0.3, 3, &[1], 3, 2_000)
        .unwrap()
        .unwrap();
    let out = execute_finality_delay(&schedules, 1, TieBreak::MinId).unwrap();
    assert!(out.trace.release_is_monotone());
    let view = out.trace.state.view(Actor::Public);
    for b in &out.fork_blocks[0] {
        assert!(view.contains(*b));
    }
}
