//! Named configuration algorithms and a single entry point that runs one
//! configuration phase for any of them.

use std::fmt;
use std::str::FromStr;

use crate::baselines::{self, BaselineConfig};
use crate::dto::{self, DtoOptions, ThresholdMode, TraceRow};
use crate::error::{Error, Result};
use crate::exit_profile::ExitTable;
use crate::model::{Scenario, Strategy, ThresholdSetting};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Algorithm {
    DtoEe,
    /// Offloading optimization with every threshold pinned at this value.
    DtoFixed(f64),
    Cf,
    Bf,
    Ngto,
    Ga,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "dto-ee" => Algorithm::DtoEe,
            "cf" => Algorithm::Cf,
            "bf" => Algorithm::Bf,
            "ngto" => Algorithm::Ngto,
            "ga" => Algorithm::Ga,
            other => match other.strip_prefix("dto-fixed:") {
                Some(c) => {
                    let c: f64 = c
                        .parse()
                        .map_err(|_| Error::UnknownAlgorithm(s.to_string()))?;
                    if !(0.0..=1.0).contains(&c) {
                        return Err(Error::UnknownAlgorithm(s.to_string()));
                    }
                    Algorithm::DtoFixed(c)
                }
                None => return Err(Error::UnknownAlgorithm(s.to_string())),
            },
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::DtoEe => f.write_str("dto-ee"),
            Algorithm::DtoFixed(c) => write!(f, "dto-fixed:{}", crate::fmt::sig6(*c)),
            Algorithm::Cf => f.write_str("cf"),
            Algorithm::Bf => f.write_str("bf"),
            Algorithm::Ngto => f.write_str("ngto"),
            Algorithm::Ga => f.write_str("ga"),
        }
    }
}

/// Parses a comma-separated algorithm list.
pub fn parse_algorithms(list: &str) -> Result<Vec<Algorithm>> {
    list.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Outcome of one configuration phase.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub strategy: Strategy,
    pub thresholds: ThresholdSetting,
    /// Per-round trace; empty for the heuristic baselines.
    pub trace: Vec<TraceRow>,
    /// Seconds of message exchange the decision needs before it can be
    /// applied; see [`decision_latency`].
    pub latency: f64,
}

/// Sequential message hops each algorithm needs, priced at
/// `comm_delay_ms` per hop:
///
/// * DTO variants: one request and one status hop per executed round.
/// * CF and BF: one request/status exchange with the receivers.
/// * NGTO: offloaders take turns, each turn one request/status exchange,
///   so a cycle costs two hops per offloader.
/// * GA: every device in turn gathers path state from all `H` layers
///   (a round trip over `H` hops).
///
/// Thresholds that move during a phase trigger re-planning, and each
/// re-plan adds its own hops.
pub fn decision_latency(
    s: &Scenario,
    alg: Algorithm,
    rounds: usize,
    ngto_cycles: usize,
    solves: usize,
) -> f64 {
    let hop = s.params.comm_delay_ms / 1e3;
    let offloaders = s.offloaders().len() as f64;
    let devices = s.topology().layer_nodes(0).len() as f64;
    let hops = match alg {
        Algorithm::DtoEe | Algorithm::DtoFixed(_) => 2.0 * rounds as f64,
        Algorithm::Cf | Algorithm::Bf => 2.0,
        Algorithm::Ngto => 2.0 * offloaders * ngto_cycles as f64,
        Algorithm::Ga => 2.0 * s.depth() as f64 * devices * solves as f64,
    };
    hops * hop
}

/// Runs `alg` for one configuration phase. `warm` is the previous phase's
/// plan; iterative methods start from it.
pub fn plan(
    s: &Scenario,
    table: &ExitTable,
    alg: Algorithm,
    warm: Option<&Plan>,
    cfg: &BaselineConfig,
    seed: u64,
) -> Result<Plan> {
    let init_c = match warm {
        Some(w) => w.thresholds.clone(),
        None => dto::initial_thresholds(s, table)?,
    };
    let init_p = || warm.map_or_else(|| Strategy::uniform(s), |w| w.strategy.clone());
    let dto_plan = |out: dto::DtoOutcome| Plan {
        latency: decision_latency(s, alg, out.trace.len() - 1, 0, 0),
        strategy: out.strategy,
        thresholds: out.thresholds,
        trace: out.trace,
    };
    match alg {
        Algorithm::DtoEe => {
            let out = dto::run_config_phase(s, table, init_p(), init_c, DtoOptions::default())?;
            Ok(dto_plan(out))
        }
        Algorithm::DtoFixed(c) => {
            let opts = DtoOptions {
                thresholds: ThresholdMode::Frozen,
                ..DtoOptions::default()
            };
            let out = dto::run_config_phase(s, table, init_p(), table.uniform_setting(c)?, opts)?;
            Ok(dto_plan(out))
        }
        Algorithm::Cf => heuristic(s, table, alg, init_c, |_| {
            Ok((baselines::cf_strategy(s), 0))
        }),
        Algorithm::Bf => heuristic(s, table, alg, init_c, |_| {
            Ok((baselines::bf_strategy(s), 0))
        }),
        Algorithm::Ngto => {
            let start = warm.map(|w| w.strategy.clone());
            heuristic(s, table, alg, init_c, |c| {
                let out = baselines::ngto_solve_from(s, table, c, &cfg.ngto, start.as_ref())?;
                if !out.converged {
                    log::debug!(
                        "ngto stopped after {} cycles without converging",
                        out.cycles
                    );
                }
                Ok((out.strategy, out.cycles))
            })
        }
        Algorithm::Ga => {
            let prev = warm.map(|w| w.strategy.clone());
            heuristic(s, table, alg, init_c, |c| {
                let out = baselines::ga_solve_from(s, table, c, &cfg.ga, seed, prev.as_ref())?;
                Ok((out.strategy, 0))
            })
        }
    }
}

/// Threshold schedule around a strategy solver returning
/// `(strategy, ngto cycles)`.
fn heuristic(
    s: &Scenario,
    table: &ExitTable,
    alg: Algorithm,
    init_c: ThresholdSetting,
    mut f: impl FnMut(&ThresholdSetting) -> Result<(Strategy, usize)>,
) -> Result<Plan> {
    let mut cycles = 0;
    let mut solves = 0;
    let (strategy, thresholds) = dto::threshold_schedule(s, table, init_c, |c| {
        let (p, k) = f(c)?;
        cycles += k;
        solves += 1;
        Ok(p)
    })?;
    Ok(Plan {
        strategy,
        thresholds,
        trace: Vec::new(),
        latency: decision_latency(s, alg, 0, cycles, solves),
    })
}
