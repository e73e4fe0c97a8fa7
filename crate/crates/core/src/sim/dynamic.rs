//! Multi-slot driver: the environment changes at every slot boundary, each
//! algorithm re-plans during the slot's configuration phase, and one
//! continuous simulation carries queues across slots.

use std::io::Write;

use rand::Rng;

use super::{simulate, stats, substream, Phase, SimOptions, TaskRecord, PURPOSE_ENV};
use crate::baselines::BaselineConfig;
use crate::error::{Error, Result};
use crate::exit_profile::ExitTable;
use crate::fmt::sig6;
use crate::model::Scenario;
use crate::par::Execution;
use crate::planner::{self, Algorithm, Plan};

/// Device arrival rates and server capacities for one slot, indexed by node.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub arrival: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DynamicOptions {
    pub slots: usize,
    /// Range of the per-slot multiplier on each device's base arrival rate.
    pub arrival_jitter: (f64, f64),
    pub sim: SimOptions,
    pub baselines: BaselineConfig,
    /// Delay each new configuration by its message-exchange latency when
    /// that exceeds the configuration phase; otherwise every plan applies
    /// at the end of the phase.
    pub decision_latency: bool,
    pub exec: Execution,
}

impl Default for DynamicOptions {
    fn default() -> Self {
        Self {
            slots: 40,
            arrival_jitter: (0.5, 1.5),
            sim: SimOptions {
                warmup_fraction: 0.0,
                drain_limit: 60.0,
                ..SimOptions::default()
            },
            baselines: BaselineConfig::default(),
            decision_latency: true,
            exec: Execution::default(),
        }
    }
}

/// Per-slot environments. Each node draws from its own stream, so the
/// sequence is shared by every algorithm run with the same seed.
pub fn sample_environments(
    s: &Scenario,
    slots: usize,
    jitter: (f64, f64),
    seed: u64,
) -> Vec<Environment> {
    let topo = s.topology();
    let n = topo.node_count();
    let mut rngs: Vec<_> = (0..n)
        .map(|k| substream(seed, topo.id(k) as u64, PURPOSE_ENV))
        .collect();
    (0..slots)
        .map(|_| {
            let mut arrival = vec![0.0; n];
            let mut mu = vec![0.0; n];
            for k in 0..n {
                let node = &s.nodes[k];
                let rng = &mut rngs[k];
                if node.is_device() {
                    let f = if jitter.0 < jitter.1 {
                        rng.random_range(jitter.0..=jitter.1)
                    } else {
                        jitter.0
                    };
                    arrival[k] = node.arrival_rate * f;
                } else if node.modes.is_empty() {
                    mu[k] = node.mu;
                } else {
                    mu[k] = node.modes[rng.random_range(0..node.modes.len())];
                }
            }
            Environment { arrival, mu }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotReport {
    pub slot: usize,
    pub algorithm: String,
    pub mean_delay: f64,
    pub p95_delay: f64,
    pub accuracy: f64,
    pub tasks: usize,
    pub util_max: f64,
    /// Mean over tasks born after the slot's configuration phase.
    pub mean_delay_excl_config: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: usize,
    pub algorithm: String,
    pub slots: usize,
    pub mean_delay: f64,
    pub p95_delay: f64,
    pub accuracy: f64,
    pub tasks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    /// Median of the per-slot mean delays.
    pub median_delay: f64,
    pub mean_delay: f64,
    pub accuracy: f64,
    pub tasks: usize,
    pub unfinished: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicReport {
    pub slots: Vec<SlotReport>,
    pub groups: Vec<GroupReport>,
    pub summary: Vec<AlgorithmSummary>,
}

pub const GROUP_SLOTS: usize = 10;

struct AlgoRun {
    slots: Vec<SlotReport>,
    groups: Vec<GroupReport>,
    summary: AlgorithmSummary,
}

fn run_one(
    s: &Scenario,
    table: &ExitTable,
    alg: Algorithm,
    envs: &[Environment],
    opts: &DynamicOptions,
    seed: u64,
) -> Result<AlgoRun> {
    let slot = s.params.slot_seconds;
    let config = s.params.config_phase_ms / 1e3;
    let mut phases = Vec::with_capacity(envs.len());
    let mut warm: Option<Plan> = None;
    for (k, env) in envs.iter().enumerate() {
        let sk = s.with_environment(&env.arrival, &env.mu);
        let p = planner::plan(
            &sk,
            table,
            alg,
            warm.as_ref(),
            &opts.baselines,
            seed ^ ((k as u64) << 32),
        )?;
        let start = k as f64 * slot;
        let ready = if opts.decision_latency {
            config.max(p.latency)
        } else {
            config
        };
        // slot 0 has no earlier configuration to fall back on
        let apply_at = if k == 0 { 0.0 } else { start + ready.min(slot) };
        log::debug!("{alg} slot {k}: decision latency {:.3}s", p.latency);
        phases.push(Phase::new(
            &sk,
            table,
            start,
            apply_at,
            p.strategy.clone(),
            &p.thresholds,
        )?);
        warm = Some(p);
    }
    let horizon = envs.len() as f64 * slot;
    let mut out = simulate(s, &phases, horizon, seed, &opts.sim, None);
    out.tasks
        .sort_by(|a, b| a.done.total_cmp(&b.done).then(a.id.cmp(&b.id)));
    let skip = (out.tasks.len() as f64 * opts.sim.warmup_fraction).floor() as usize;
    let kept = &out.tasks[skip..];
    let name = alg.to_string();
    let topo = s.topology();

    let mut by_slot: Vec<Vec<&TaskRecord>> = vec![Vec::new(); envs.len()];
    for t in kept {
        by_slot[t.phase].push(t);
    }
    let slots: Vec<SlotReport> = by_slot
        .iter()
        .enumerate()
        .map(|(k, ts)| {
            let st = stats(ts.iter().copied());
            let excl = stats(ts.iter().copied().filter(|t| t.born >= phases[k].apply_at));
            let util_max = (0..topo.node_count())
                .filter(|&j| topo.layer(j) > 0)
                .map(|j| out.work[k][j] / slot / phases[k].mu[j])
                .fold(0.0, f64::max);
            SlotReport {
                slot: k,
                algorithm: name.clone(),
                mean_delay: st.mean,
                p95_delay: st.p95,
                accuracy: st.accuracy,
                tasks: ts.len(),
                util_max,
                mean_delay_excl_config: excl.mean,
            }
        })
        .collect();

    let groups = by_slot
        .chunks(GROUP_SLOTS)
        .enumerate()
        .map(|(g, chunk)| {
            let st = stats(chunk.iter().flatten().copied());
            GroupReport {
                group: g,
                algorithm: name.clone(),
                slots: chunk.len(),
                mean_delay: st.mean,
                p95_delay: st.p95,
                accuracy: st.accuracy,
                tasks: chunk.iter().map(Vec::len).sum(),
            }
        })
        .collect();

    let all = stats(kept.iter());
    let mut per_slot: Vec<f64> = slots
        .iter()
        .filter(|r| r.tasks > 0)
        .map(|r| r.mean_delay)
        .collect();
    let summary = AlgorithmSummary {
        algorithm: name,
        median_delay: median(&mut per_slot),
        mean_delay: all.mean,
        accuracy: all.accuracy,
        tasks: kept.len(),
        unfinished: out.unfinished,
    };
    Ok(AlgoRun {
        slots,
        groups,
        summary,
    })
}

/// Median; zero for an empty slice.
pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Runs every algorithm over the same environment sequence and the same
/// task-level random draws.
pub fn dynamic_experiment(
    s: &Scenario,
    table: &ExitTable,
    algorithms: &[Algorithm],
    opts: &DynamicOptions,
    seed: u64,
) -> Result<DynamicReport> {
    if opts.slots == 0 {
        return Err(Error::Config("slots must be at least 1".into()));
    }
    if algorithms.is_empty() {
        return Err(Error::Config("no algorithms given".into()));
    }
    let envs = sample_environments(s, opts.slots, opts.arrival_jitter, seed);
    let runs = opts
        .exec
        .map(algorithms, |&alg| run_one(s, table, alg, &envs, opts, seed));
    let mut report = DynamicReport {
        slots: Vec::new(),
        groups: Vec::new(),
        summary: Vec::new(),
    };
    for r in runs {
        let r = r?;
        report.slots.extend(r.slots);
        report.groups.extend(r.groups);
        report.summary.push(r.summary);
    }
    Ok(report)
}

/// Pools per-seed runs: `median_delay` is the median over seeds of each
/// run's mean delay, `mean_delay` their average, accuracy is task-weighted.
/// Algorithms keep their first-seen order.
pub fn pooled_summary(runs: &[DynamicReport]) -> Vec<AlgorithmSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in runs {
        for a in &r.summary {
            if !names.contains(&a.algorithm.as_str()) {
                names.push(&a.algorithm);
            }
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rows: Vec<&AlgorithmSummary> = runs
                .iter()
                .flat_map(|r| &r.summary)
                .filter(|a| a.algorithm == name)
                .collect();
            let mut means: Vec<f64> = rows.iter().map(|a| a.mean_delay).collect();
            let tasks: usize = rows.iter().map(|a| a.tasks).sum();
            let correct: f64 = rows.iter().map(|a| a.accuracy * a.tasks as f64).sum();
            AlgorithmSummary {
                algorithm: name.to_string(),
                mean_delay: means.iter().sum::<f64>() / means.len() as f64,
                median_delay: median(&mut means),
                accuracy: if tasks == 0 {
                    0.0
                } else {
                    correct / tasks as f64
                },
                tasks,
                unfinished: rows.iter().map(|a| a.unfinished).sum(),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[AlgorithmSummary], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "algorithm,median_delay_ms,mean_delay_ms,accuracy,tasks,unfinished"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.algorithm,
            sig6(r.median_delay * 1e3),
            sig6(r.mean_delay * 1e3),
            sig6(r.accuracy),
            r.tasks,
            r.unfinished
        )?;
    }
    Ok(())
}

pub const SLOT_HEADER: &str =
    "slot,algorithm,mean_delay_ms,p95_delay_ms,accuracy,tasks,util_max,mean_delay_excl_config_ms";

/// Writes slot rows; `seed` adds a leading column when given.
pub fn write_slots_csv<W: Write>(
    rows: &[(Option<u64>, &SlotReport)],
    mut w: W,
) -> std::io::Result<()> {
    let seeded = rows.first().is_some_and(|r| r.0.is_some());
    if seeded {
        write!(w, "seed,")?;
    }
    writeln!(w, "{SLOT_HEADER}")?;
    for (seed, r) in rows {
        if let Some(seed) = seed {
            write!(w, "{seed},")?;
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.slot,
            r.algorithm,
            sig6(r.mean_delay * 1e3),
            sig6(r.p95_delay * 1e3),
            sig6(r.accuracy),
            r.tasks,
            sig6(r.util_max),
            sig6(r.mean_delay_excl_config * 1e3)
        )?;
    }
    Ok(())
}

pub fn write_groups_csv<W: Write>(
    rows: &[(Option<u64>, &GroupReport)],
    mut w: W,
) -> std::io::Result<()> {
    let seeded = rows.first().is_some_and(|r| r.0.is_some());
    if seeded {
        write!(w, "seed,")?;
    }
    writeln!(
        w,
        "group,algorithm,slots,mean_delay_ms,p95_delay_ms,accuracy,tasks"
    )?;
    for (seed, r) in rows {
        if let Some(seed) = seed {
            write!(w, "{seed},")?;
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.group,
            r.algorithm,
            r.slots,
            sig6(r.mean_delay * 1e3),
            sig6(r.p95_delay * 1e3),
            sig6(r.accuracy),
            r.tasks
        )?;
    }
    Ok(())
}
