//! Per-device genetic path search. Devices commit one at a time (ascending
//! id); each searches for the single receiver path with the lowest expected
//! delay given the load already committed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GaConfig;
use crate::analytics::propagate_flows;
use crate::error::Result;
use crate::exit_profile::ExitTable;
use crate::model::{Scenario, Strategy, ThresholdSetting};

#[derive(Clone, Debug, PartialEq)]
pub struct GaOutcome {
    pub strategy: Strategy,
    /// Chosen path per device: `(device, nodes at layers 1..=H)`.
    pub paths: Vec<(usize, Vec<usize>)>,
    /// Best fitness after each generation (generation 0 first), per device.
    pub history: Vec<Vec<f64>>,
}

struct Scorer<'a> {
    s: &'a Scenario,
    /// Fraction of a device's tasks that reach layer `h`.
    reach: Vec<f64>,
    load: Vec<f64>,
}

impl Scorer<'_> {
    fn hop_edge(&self, from: usize, to: usize) -> usize {
        self.s
            .topology()
            .edge_between(from, to)
            .expect("repaired path")
    }

    fn fitness(&self, device: usize, path: &[usize]) -> f64 {
        let s = self.s;
        let eps = s.params.epsilon;
        let phi = s.arrival_rate(device);
        let mut prev = device;
        let mut total = 0.0;
        for (k, &n) in path.iter().enumerate() {
            let h = k + 1;
            let alpha = s.alpha(h);
            let e = self.hop_edge(prev, n);
            let load = self.load[n] + phi * self.reach[h] * alpha;
            let cap = s.mu(n) - eps;
            let sojourn = if load <= cap {
                alpha / (s.mu(n) - load)
            } else {
                alpha / eps + alpha / (eps * eps) * (load - cap)
            };
            total += self.reach[h] * (s.beta(h) / s.rate(e) + sojourn);
            prev = n;
        }
        total
    }

    fn commit(&mut self, device: usize, path: &[usize]) {
        let phi = self.s.arrival_rate(device);
        for (k, &n) in path.iter().enumerate() {
            self.load[n] += phi * self.reach[k + 1] * self.s.alpha(k + 1);
        }
    }
}

fn random_successor(s: &Scenario, node: usize, rng: &mut ChaCha8Rng) -> usize {
    let topo = s.topology();
    let r = topo.out_edges(node);
    topo.edge_to(rng.random_range(r))
}

/// Replaces every gene from position `from` on that does not follow its
/// predecessor with a random successor.
fn repair(s: &Scenario, device: usize, path: &mut [usize], from: usize, rng: &mut ChaCha8Rng) {
    let topo = s.topology();
    for k in from..path.len() {
        let prev = if k == 0 { device } else { path[k - 1] };
        if topo.edge_between(prev, path[k]).is_none() {
            path[k] = random_successor(s, prev, rng);
        }
    }
}

fn random_path(s: &Scenario, device: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut path = Vec::with_capacity(s.depth());
    let mut at = device;
    for _ in 0..s.depth() {
        at = random_successor(s, at, rng);
        path.push(at);
    }
    path
}

fn search(
    s: &Scenario,
    scorer: &Scorer<'_>,
    device: usize,
    cfg: &GaConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<f64>) {
    let depth = s.depth();
    let mut pop: Vec<Vec<usize>> = (0..cfg.population)
        .map(|_| random_path(s, device, rng))
        .collect();
    let mut fit: Vec<f64> = pop.iter().map(|p| scorer.fitness(device, p)).collect();
    let best_of = |fit: &[f64]| {
        let mut b = 0;
        for k in 1..fit.len() {
            if fit[k] < fit[b] {
                b = k;
            }
        }
        b
    };
    let mut history = vec![fit[best_of(&fit)]];
    for _ in 0..cfg.generations {
        let elite = best_of(&fit);
        let mut next = vec![pop[elite].clone()];
        while next.len() < cfg.population {
            let mut pick = || {
                let mut b = rng.random_range(0..pop.len());
                for _ in 1..cfg.tournament_size {
                    let c = rng.random_range(0..pop.len());
                    if fit[c] < fit[b] {
                        b = c;
                    }
                }
                b
            };
            let (a, b) = (pick(), pick());
            let mut child = pop[a].clone();
            if depth > 1 {
                let cut = rng.random_range(1..depth);
                child[cut..].copy_from_slice(&pop[b][cut..]);
                repair(s, device, &mut child, cut, rng);
            }
            for k in 0..depth {
                if rng.random::<f64>() < cfg.mutation_rate {
                    let prev = if k == 0 { device } else { child[k - 1] };
                    child[k] = random_successor(s, prev, rng);
                    repair(s, device, &mut child, k + 1, rng);
                }
            }
            next.push(child);
        }
        pop = next;
        fit = pop.iter().map(|p| scorer.fitness(device, p)).collect();
        history.push(fit[best_of(&fit)]);
    }
    let b = best_of(&fit);
    (pop.swap_remove(b), history)
}

/// GA with loads starting from zero (or, with `stale_info`, from the
/// uniform strategy).
pub fn ga_solve(
    s: &Scenario,
    table: &ExitTable,
    c: &ThresholdSetting,
    cfg: &GaConfig,
    seed: u64,
) -> Result<GaOutcome> {
    ga_solve_from(s, table, c, cfg, seed, None)
}

/// GA where the stale snapshot, when enabled, is the load of `prev`.
pub fn ga_solve_from(
    s: &Scenario,
    table: &ExitTable,
    c: &ThresholdSetting,
    cfg: &GaConfig,
    seed: u64,
    prev: Option<&Strategy>,
) -> Result<GaOutcome> {
    let surviving = table.surviving_by_layer(c, s.depth())?;
    let topo = s.topology();
    let mut reach = vec![1.0; s.depth() + 1];
    for h in 1..=s.depth() {
        reach[h] = reach[h - 1] * surviving[h - 1];
    }
    let snapshot = if cfg.stale_info {
        let p = prev.cloned().unwrap_or_else(|| Strategy::uniform(s));
        propagate_flows(s, &p, &surviving).lambda
    } else {
        vec![0.0; topo.node_count()]
    };
    let mut scorer = Scorer {
        s,
        reach: reach.clone(),
        load: snapshot,
    };
    let mut devices: Vec<usize> = topo.layer_nodes(0).collect();
    devices.sort_by_key(|&i| topo.id(i));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(devices.len());
    let mut history = Vec::with_capacity(devices.len());
    for &d in &devices {
        let (path, hist) = search(s, &scorer, d, cfg, &mut rng);
        if !cfg.stale_info {
            scorer.commit(d, &path);
        }
        paths.push((d, path));
        history.push(hist);
    }

    // device rows point at the first hop; server rows mix next hops by flow
    let mut weight = vec![0.0; topo.edge_count()];
    for (d, path) in &paths {
        let phi = s.arrival_rate(*d);
        let mut prev = *d;
        for (k, &n) in path.iter().enumerate() {
            let e = topo.edge_between(prev, n).expect("repaired path");
            weight[e] += if k == 0 { 1.0 } else { phi * reach[k] };
            prev = n;
        }
    }
    let strategy = Strategy::from_rows(s, |i| {
        let r = topo.out_edges(i);
        let total: f64 = weight[r.clone()].iter().sum();
        if total > 0.0 {
            weight[r].iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / r.len() as f64; r.len()]
        }
    });
    Ok(GaOutcome {
        strategy,
        paths,
        history,
    })
}
