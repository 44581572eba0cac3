//! Seeded search for schedules that satisfy an attack's preconditions.

use crate::attack_finality::plan_finality_delay;
use crate::attack_reorg::{epoch_reorg_feasible, ReorgWindow};
use crate::montecarlo::{trial_schedule, McConfig};
use crate::protocol::{CommitteeSchedule, ConfigError, Epoch, ProtocolParams};
use crate::sim::draw_schedules;

/// First draw (index into the seed's trial streams) whose epoch admits a
/// length-`n` reorg, searching at most `max_draws` draws.
pub fn find_reorg_scenario(
    config: &McConfig,
    n: u64,
    seed: u64,
    max_draws: u64,
) -> Result<Option<(u64, CommitteeSchedule, ReorgWindow)>, ConfigError> {
    for draw in 0..max_draws {
        let schedule = trial_schedule(config, seed, draw)?;
        if let Some(w) = epoch_reorg_feasible(&schedule, n) {
            return Ok(Some((draw, schedule, w)));
        }
    }
    Ok(None)
}

/// First draw of `epochs` schedules (sub-seed `seed + draw`) in which every
/// epoch in `targets` satisfies the finality-delay preconditions.
pub fn find_finality_scenario(
    params: ProtocolParams,
    stake: f64,
    epochs: usize,
    targets: &[Epoch],
    seed: u64,
    max_draws: u64,
) -> Result<Option<(u64, Vec<CommitteeSchedule>)>, ConfigError> {
    for draw in 0..max_draws {
        let schedules = draw_schedules(params, stake, epochs, seed.wrapping_add(draw))?;
        let ok = targets.iter().all(|&e| {
            schedules
                .get(e as usize)
                .is_some_and(|s| plan_finality_delay(s, e).is_ok())
        });
        if ok {
            return Ok(Some((draw, schedules)));
        }
    }
    Ok(None)
}
