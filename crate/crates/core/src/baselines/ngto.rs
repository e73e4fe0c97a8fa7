//! Cyclic best response: each offloader in turn minimizes its own expected
//! one-hop delay with every other row held fixed.

use super::{project_simplex, NgtoConfig};
use crate::analytics::propagate_flows;
use crate::error::Result;
use crate::exit_profile::ExitTable;
use crate::model::{Scenario, Strategy, ThresholdSetting};

#[derive(Clone, Debug, PartialEq)]
pub struct NgtoOutcome {
    pub strategy: Strategy,
    pub converged: bool,
    pub cycles: usize,
}

/// Receiver state seen by one offloader: load from everyone else, and the
/// offloader's own compute rate if it sent everything to that receiver.
struct LocalView {
    base: Vec<f64>,
    mu: Vec<f64>,
    transfer: Vec<f64>,
    own: f64,
    alpha: f64,
    k: f64,
    eps: f64,
}

impl LocalView {
    fn new(s: &Scenario, p: &Strategy, surviving: &[f64], i: usize) -> Self {
        let topo = s.topology();
        let flow = propagate_flows(s, p, surviving);
        let h = topo.layer(i);
        let alpha = s.alpha(h + 1);
        let beta = s.beta(h + 1);
        let own = flow.phi[i] * surviving[h] * alpha;
        let edges = topo.out_edges(i);
        Self {
            base: edges
                .clone()
                .map(|e| flow.lambda[topo.edge_to(e)] - p.get(e) * own)
                .collect(),
            mu: edges.clone().map(|e| s.mu(topo.edge_to(e))).collect(),
            transfer: edges.map(|e| beta / s.rate(e)).collect(),
            own,
            alpha,
            k: s.params.k,
            eps: s.params.epsilon,
        }
    }

    /// Sojourn and its derivative in load, continued linearly past
    /// `mu - epsilon`.
    fn sojourn(&self, j: usize, load: f64) -> (f64, f64) {
        let cap = self.mu[j] - self.eps;
        if load <= cap {
            let gap = self.mu[j] - load;
            (self.alpha / gap, self.alpha / (gap * gap))
        } else {
            let d = self.alpha / (self.eps * self.eps);
            (self.alpha / self.eps + d * (load - cap), d)
        }
    }

    fn cost(&self, row: &[f64]) -> f64 {
        row.iter()
            .enumerate()
            .map(|(j, &p)| {
                let load = self.base[j] + p * self.own;
                let excess = (load - self.mu[j] + self.eps).max(0.0);
                p * (self.transfer[j] + self.sojourn(j, load).0) + self.k * excess * excess
            })
            .sum()
    }

    fn grad(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &p)| {
                let load = self.base[j] + p * self.own;
                let (t, dt) = self.sojourn(j, load);
                let excess = (load - self.mu[j] + self.eps).max(0.0);
                self.transfer[j] + t + p * dt * self.own + 2.0 * self.k * excess * self.own
            })
            .collect()
    }
}

/// Expected one-hop cost of node `i` if it used `row` while all other rows
/// stay as in `p`.
pub fn local_cost(s: &Scenario, p: &Strategy, surviving: &[f64], i: usize, row: &[f64]) -> f64 {
    LocalView::new(s, p, surviving, i).cost(row)
}

fn best_response(view: &LocalView, start: &[f64], cfg: &NgtoConfig) -> Vec<f64> {
    let mut x = start.to_vec();
    let mut fx = view.cost(&x);
    for _ in 0..cfg.inner_steps {
        let g = view.grad(&x);
        let mut step = cfg.inner_step;
        let mut improved = false;
        for _ in 0..40 {
            let y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let y = project_simplex(&y);
            let fy = view.cost(&y);
            if fy < fx {
                x = y;
                fx = fy;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    x
}

/// Best-response cycles in ascending node id, starting from the uniform
/// strategy, until no row moves by more than `tol`, or `max_cycles` is
/// reached (reported as not converged).
pub fn ngto_solve(
    s: &Scenario,
    table: &ExitTable,
    c: &ThresholdSetting,
    cfg: &NgtoConfig,
) -> Result<NgtoOutcome> {
    ngto_solve_from(s, table, c, cfg, None)
}

/// As [`ngto_solve`], starting from `init` when given.
pub fn ngto_solve_from(
    s: &Scenario,
    table: &ExitTable,
    c: &ThresholdSetting,
    cfg: &NgtoConfig,
    init: Option<&Strategy>,
) -> Result<NgtoOutcome> {
    let surviving = table.surviving_by_layer(c, s.depth())?;
    let topo = s.topology();
    let mut order: Vec<usize> = s.offloaders().collect();
    order.sort_by_key(|&i| topo.id(i));
    let mut p = init.cloned().unwrap_or_else(|| Strategy::uniform(s));
    for cycle in 1..=cfg.max_cycles {
        let mut change = 0.0f64;
        for &i in &order {
            let view = LocalView::new(s, &p, &surviving, i);
            let row = best_response(&view, p.row(i), cfg);
            for (a, b) in row.iter().zip(p.row(i)) {
                change = change.max((a - b).abs());
            }
            p.row_mut(i).copy_from_slice(&row);
        }
        if change < cfg.tol {
            return Ok(NgtoOutcome {
                strategy: p,
                converged: true,
                cycles: cycle,
            });
        }
    }
    Ok(NgtoOutcome {
        strategy: p,
        converged: false,
        cycles: cfg.max_cycles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::tests::{link, node, scenario, sub};

    #[test]
    fn symmetric_receivers_split_evenly() {
        let s = scenario(
            vec![sub(1, 1.0, 0.1)],
            vec![
                node(0, 0, 0.0, 6.0),
                node(1, 1, 10.0, 0.0),
                node(2, 1, 10.0, 0.0),
            ],
            vec![link(0, 1, 2.0), link(0, 2, 2.0)],
        );
        let out = ngto_solve(
            &s,
            &ExitTable::branchless(1.0),
            &ThresholdSetting::new(vec![]),
            &NgtoConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.strategy.get(0) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn dominant_receiver_wins_at_light_load() {
        let s = scenario(
            vec![sub(1, 1.0, 0.1)],
            vec![
                node(0, 0, 0.0, 0.5),
                node(1, 1, 10.0, 0.0),
                node(2, 1, 40.0, 0.0),
                node(3, 1, 10.0, 0.0),
            ],
            vec![link(0, 1, 2.0), link(0, 2, 8.0), link(0, 3, 2.0)],
        );
        let out = ngto_solve(
            &s,
            &ExitTable::branchless(1.0),
            &ThresholdSetting::new(vec![]),
            &NgtoConfig::default(),
        )
        .unwrap();
        let row = out.strategy.row(0);
        assert!(row[1] > row[0] && row[1] > row[2], "{row:?}");
    }
}
