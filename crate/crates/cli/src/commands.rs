use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use beacon_sim::attack_finality::{
    delay_cost, delay_probability, denial_probability, execute_finality_delays,
    plan_finality_delay, FinalityPlan,
};
use beacon_sim::attack_reorg::{execute_reorg, figure_toy, reorg_cost, ReorgWindow};
use beacon_sim::finality::supermajority_threshold;
use beacon_sim::montecarlo::{reorg_sweep, CostEstimate};
use beacon_sim::rewards::{
    base_reward, inactivity_leak_coefficient, inclusion_reward, max_attestation_value, to_usd,
};
use beacon_sim::scenario::{find_finality_scenario, find_reorg_scenario};
use beacon_sim::sim::{draw_schedules, run_honest, Event, FinalSummary, Trace};
use beacon_sim::{Block, BlockId, Epoch, Gwei};
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::config::{with_threads, Format, RunConfig};
use crate::plot::{Plot, Series};

pub const CSV_HEADER: &str = "n,probability,std_error,trials,seed,cost_gwei,cost_usd";

/// Probability guide lines: once an hour, a day and a year, in epochs.
pub const FREQUENCY_GUIDES: [(f64, &str); 3] = [
    (1.0 / 9.375, "hourly"),
    (1.0 / 225.0, "daily"),
    (1.0 / 82_125.0, "yearly"),
];

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub n: u64,
    pub probability: f64,
    pub std_error: f64,
    /// Zero for exact (non-sampled) rows.
    pub trials: u64,
    pub seed: u64,
    pub cost_gwei: Option<u128>,
    pub cost_usd: Option<f64>,
}

#[derive(Serialize)]
struct Table<'a> {
    config: &'a RunConfig,
    rows: &'a [Row],
}

fn gwei_int(g: &Gwei) -> u128 {
    g.rounded().to_u128().unwrap_or(u128::MAX)
}

pub fn render_rows(config: &RunConfig, rows: &[Row]) -> Result<String> {
    match config.format {
        Format::Json => Ok(serde_json::to_string_pretty(&Table { config, rows })? + "\n"),
        Format::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.n,
                    r.probability,
                    r.std_error,
                    r.trials,
                    r.seed,
                    r.cost_gwei.map(|c| c.to_string()).unwrap_or_default(),
                    r.cost_usd.map(|c| c.to_string()).unwrap_or_default()
                );
            }
            Ok(out)
        }
    }
}

pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn check_range(from: u64, to: u64) -> Result<()> {
    if from == 0 || from > to {
        bail!("invalid n range {from}..={to}: need 1 <= from <= to");
    }
    if to - from >= 10_000 {
        bail!("n range {from}..={to} is too long");
    }
    Ok(())
}

fn write_plot(
    path: &Path,
    config: &RunConfig,
    title: &str,
    rows: &[Row],
    guides: bool,
) -> Result<()> {
    let plot = Plot {
        title,
        series: Series {
            n: rows.iter().map(|r| r.n).collect(),
            probability: rows.iter().map(|r| r.probability).collect(),
            cost_usd: rows.iter().map(|r| r.cost_usd).collect(),
        },
        usd_per_eth: config.usd_per_eth,
        guides: if guides {
            FREQUENCY_GUIDES.to_vec()
        } else {
            Vec::new()
        },
    };
    std::fs::write(path, plot.render()).with_context(|| format!("writing {}", path.display()))
}

pub fn reorg_prob(
    config: &RunConfig,
    from: u64,
    to: u64,
    threads: usize,
    plot: Option<&Path>,
) -> Result<String> {
    check_range(from, to)?;
    let ns: Vec<u64> = (from..=to).collect();
    let mc = config.mc();
    let sweep = with_threads(threads, |par| {
        reorg_sweep(&mc, &ns, config.trials, config.seed, par)
    })??;
    let rows: Vec<Row> = sweep
        .iter()
        .map(|r| {
            let cost = match &r.cost {
                CostEstimate::Mean { mean, .. } => Some(mean),
                CostEstimate::NoSuccesses => None,
            };
            Row {
                n: r.n,
                probability: r.probability.point,
                std_error: r.probability.std_error,
                trials: r.probability.trials,
                seed: r.probability.seed,
                cost_gwei: cost.map(gwei_int),
                cost_usd: cost.map(|c| to_usd(c, &config.rewards)),
            }
        })
        .collect();
    if let Some(path) = plot {
        write_plot(
            path,
            config,
            "Malicious reorg: probability per epoch and mean cost",
            &rows,
            false,
        )?;
    }
    render_rows(config, &rows)
}

pub fn finality_prob(
    config: &RunConfig,
    from: u64,
    to: u64,
    plot: Option<&Path>,
) -> Result<String> {
    check_range(from, to)?;
    let p_justify = 1.0 - denial_probability(config.stake);
    let rows = (from..=to)
        .map(|n| {
            let cost = delay_cost(n, &config.rewards, config.stake, config.strict_leak)?;
            Ok(Row {
                n,
                probability: delay_probability(n as u32, p_justify),
                std_error: 0.0,
                trials: 0,
                seed: config.seed,
                cost_gwei: Some(gwei_int(&cost)),
                cost_usd: Some(to_usd(&cost, &config.rewards)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = plot {
        write_plot(
            path,
            config,
            "Finality delay: probability of n epochs and cost",
            &rows,
            true,
        )?;
    }
    render_rows(config, &rows)
}

#[derive(Serialize)]
struct Constant {
    name: &'static str,
    gwei: f64,
    rendered_gwei: String,
    usd: f64,
}

pub fn rewards(config: &RunConfig) -> Result<String> {
    let p = &config.rewards;
    let values = [
        ("base_reward", base_reward(p)?),
        ("inclusion_reward_1", inclusion_reward(p, 1)?),
        ("max_attestation_value", max_attestation_value(p)?),
        ("inactivity_leak_per_epoch", inactivity_leak_coefficient(p)),
    ];
    let constants: Vec<Constant> = values
        .iter()
        .map(|(name, g)| Constant {
            name,
            gwei: g.to_f64(),
            // the leak coefficient is fractional, so show it to 2 places
            rendered_gwei: if *name == "inactivity_leak_per_epoch" {
                format!("{:.2}", g.to_f64())
            } else {
                g.to_string()
            },
            usd: to_usd(g, p),
        })
        .collect();
    match config.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                config: &'a RunConfig,
                constants: &'a [Constant],
            }
            Ok(serde_json::to_string_pretty(&Out {
                config,
                constants: &constants,
            })? + "\n")
        }
        Format::Csv => {
            let mut out = String::from("name,gwei,usd\n");
            for c in &constants {
                let _ = writeln!(out, "{},{},{}", c.name, c.rendered_gwei, c.usd);
            }
            Ok(out)
        }
    }
}

#[derive(Serialize)]
struct BlockOut {
    #[serde(flatten)]
    block: Block,
    public: bool,
}

#[derive(Serialize)]
struct TraceOut<'a, S: Serialize> {
    config: &'a RunConfig,
    scenario: S,
    blocks: Vec<BlockOut>,
    events: &'a [Event],
    #[serde(rename = "final")]
    final_state: FinalSummary,
}

fn trace_json<S: Serialize>(config: &RunConfig, scenario: S, trace: &Trace) -> Result<String> {
    let blocks = (0..trace.state.block_count())
        .filter_map(|i| {
            let id = BlockId(i as u32);
            trace.state.block(id).map(|b| BlockOut {
                block: b.clone(),
                public: trace.state.is_public(id),
            })
        })
        .collect();
    let out = TraceOut {
        config,
        scenario,
        blocks,
        events: &trace.events,
        final_state: trace.summary(),
    };
    Ok(serde_json::to_string_pretty(&out)? + "\n")
}

fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::from("?"),
    }
}

/// One line per run of identical (slot, phase, actor, action) events.
pub fn event_log(trace: &Trace) -> String {
    let mut out = String::new();
    let mut i = 0;
    let ev = &trace.events;
    while i < ev.len() {
        let e = &ev[i];
        let mut j = i + 1;
        while j < ev.len()
            && (ev[j].slot, ev[j].phase, ev[j].actor, ev[j].action)
                == (e.slot, e.phase, e.actor, e.action)
            && ev[j].block.is_none()
            && e.block.is_none()
        {
            j += 1;
        }
        let _ = write!(
            out,
            "slot {:>4} {:<8} {:<8} {}",
            e.slot,
            label(&e.phase),
            label(&e.actor),
            label(&e.action)
        );
        if let Some(b) = e.block {
            let _ = write!(out, " {b}");
            if let Some(parent) = trace.state.block(b).and_then(|b| b.parent) {
                let _ = write!(out, " on {parent}");
            }
        }
        if j - i > 1 {
            let _ = write!(out, " x{}", j - i);
        }
        if let Some(a) = &e.attestation {
            let _ = write!(
                out,
                " (source {} target {} head {})",
                a.source, a.target, a.head
            );
        }
        out.push('\n');
        i = j;
    }
    let s = trace.summary();
    let ids = |v: &[BlockId]| {
        v.iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(out, "head {} | canonical {}", s.head, ids(&s.canonical));
    let _ = writeln!(
        out,
        "justified {} | finalized {}",
        ids(&s.justified),
        ids(&s.finalized)
    );
    let _ = writeln!(out, "slashable violations: {}", s.slashable.len());
    out
}

#[derive(Serialize)]
struct ReorgScenario {
    kind: &'static str,
    toy: bool,
    draw: Option<u64>,
    window: ReorgWindow,
    start_slot: u64,
    fork_parent: BlockId,
    fork_blocks: Vec<BlockId>,
    honest_blocks: Vec<BlockId>,
    head_before_release: BlockId,
    head_after_release: BlockId,
    orphaned: Vec<BlockId>,
    fork_branch_weight: u64,
    honest_branch_weight: u64,
    cost_gwei: u128,
    cost_usd: f64,
}

pub struct Simulated {
    pub json: String,
    pub log: String,
}

pub fn simulate_reorg(config: &RunConfig, toy: bool, n: u64, max_draws: u64) -> Result<Simulated> {
    let (draw, schedule, window) = if toy {
        let (s, w) = figure_toy();
        (None, s, w)
    } else {
        if n == 0 {
            bail!("reorg length must be at least 1");
        }
        match find_reorg_scenario(&config.mc(), n, config.seed, max_draws)? {
            Some((d, s, w)) => (Some(d), s, w),
            None => bail!(
                "precondition failed: no epoch among {max_draws} draws (seed {}) gives the attacker \
                 proposers for a fork that outweighs {n} honest slots",
                config.seed
            ),
        }
    };
    let out = execute_reorg(&schedule, &window, config.tie())?;
    let cost = reorg_cost(&schedule, &window, &config.rewards)?;
    let scenario = ReorgScenario {
        kind: "reorg",
        toy,
        draw,
        window,
        start_slot: out.start_slot,
        fork_parent: out.fork_parent,
        fork_blocks: out.fork_blocks.clone(),
        honest_blocks: out.honest_blocks.clone(),
        head_before_release: out.head_before_release,
        head_after_release: out.head_after_release,
        orphaned: out.orphaned.clone(),
        fork_branch_weight: out.fork_branch_weight,
        honest_branch_weight: out.honest_branch_weight,
        cost_gwei: gwei_int(&cost),
        cost_usd: to_usd(&cost, &config.rewards),
    };
    let mut log = event_log(&out.trace);
    let _ = writeln!(
        log,
        "fork weight {} vs honest weight {}; orphaned {} block(s)",
        out.fork_branch_weight,
        out.honest_branch_weight,
        out.orphaned.len()
    );
    Ok(Simulated {
        json: trace_json(config, scenario, &out.trace)?,
        log,
    })
}

#[derive(Serialize)]
struct LinkCounts {
    epoch: Epoch,
    withheld_ebb: BlockId,
    borrowed_ebb: BlockId,
    withheld_ebb_votes: u64,
    borrowed_ebb_votes: u64,
    threshold: u64,
}

#[derive(Serialize)]
struct FinalityScenario {
    kind: &'static str,
    epochs: usize,
    draw: Option<u64>,
    attacked_epochs: Vec<Epoch>,
    plans: Vec<FinalityPlan>,
    links: Vec<LinkCounts>,
    justified_epochs: Vec<Epoch>,
}

pub fn simulate_finality(
    config: &RunConfig,
    honest: bool,
    epochs: usize,
    targets: &[Epoch],
    max_draws: u64,
) -> Result<Simulated> {
    if epochs == 0 {
        bail!("--epochs must be at least 1");
    }
    let params = config.params();
    if honest {
        let schedules = draw_schedules(params, config.stake, epochs, config.seed)?;
        let trace = run_honest(&schedules, config.tie())?;
        let scenario = FinalityScenario {
            kind: "honest",
            epochs,
            draw: None,
            attacked_epochs: Vec::new(),
            plans: Vec::new(),
            links: Vec::new(),
            justified_epochs: trace
                .finality()
                .justified_by_epoch
                .keys()
                .copied()
                .collect(),
        };
        return Ok(Simulated {
            json: trace_json(config, scenario, &trace)?,
            log: event_log(&trace),
        });
    }

    if let Some(&bad) = targets.iter().find(|&&e| e == 0 || e as usize >= epochs) {
        bail!("attack epoch {bad} must lie in 1..{epochs}");
    }
    let found = find_finality_scenario(
        params,
        config.stake,
        epochs,
        targets,
        config.seed,
        max_draws,
    )?;
    let Some((draw, schedules)) = found else {
        // name the precondition that failed on the seed's own draw
        let first = draw_schedules(params, config.stake, epochs, config.seed)?;
        let reason = targets
            .iter()
            .find_map(|&e| plan_finality_delay(&first[e as usize], e).err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        bail!(
            "precondition failed in all {max_draws} draws (seed {}): {reason}",
            config.seed
        );
    };
    let out = execute_finality_delays(&schedules, targets, config.tie())?;
    let total = params.total_validators();
    let links = out
        .plans
        .iter()
        .zip(&out.fork_ebbs)
        .map(|(plan, &(withheld_ebb, borrowed_ebb))| {
            let (w, b) = out.candidate_link_counts(plan.epoch).unwrap_or((0, 0));
            LinkCounts {
                epoch: plan.epoch,
                withheld_ebb,
                borrowed_ebb,
                withheld_ebb_votes: w,
                borrowed_ebb_votes: b,
                threshold: supermajority_threshold(total),
            }
        })
        .collect::<Vec<_>>();
    let mut log = event_log(&out.trace);
    for l in &links {
        let _ = writeln!(
            log,
            "epoch {}: withheld EBB {} got {} votes, borrowed EBB {} got {} votes, {} needed",
            l.epoch,
            l.withheld_ebb,
            l.withheld_ebb_votes,
            l.borrowed_ebb,
            l.borrowed_ebb_votes,
            l.threshold
        );
    }
    let scenario = FinalityScenario {
        kind: "finality",
        epochs,
        draw: Some(draw),
        attacked_epochs: out.plans.iter().map(|p| p.epoch).collect(),
        plans: out.plans.clone(),
        links,
        justified_epochs: out
            .trace
            .finality()
            .justified_by_epoch
            .keys()
            .copied()
            .collect(),
    };
    Ok(Simulated {
        json: trace_json(config, scenario, &out.trace)?,
        log,
    })
}
