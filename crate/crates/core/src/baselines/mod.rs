//! Comparison strategies: capacity-proportional (CF), bandwidth-proportional
//! (BF), selfish best response (NGTO), and per-device genetic path search
//! (GA).

mod ga;
mod ngto;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Scenario, Strategy};

pub use ga::{ga_solve, ga_solve_from, GaOutcome};
pub use ngto::{local_cost, ngto_solve, ngto_solve_from, NgtoOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgtoConfig {
    pub max_cycles: usize,
    pub tol: f64,
    /// Projected-gradient iterations per best response.
    pub inner_steps: usize,
    pub inner_step: f64,
}

impl Default for NgtoConfig {
    fn default() -> Self {
        Self {
            max_cycles: 200,
            tol: 1e-4,
            inner_steps: 500,
            inner_step: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    /// Score paths against loads from a snapshot taken before any device
    /// commits, instead of refreshing after each device.
    pub stale_info: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 30,
            generations: 50,
            mutation_rate: 0.1,
            tournament_size: 3,
            stale_info: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default)]
    pub ngto: NgtoConfig,
    #[serde(default)]
    pub ga: GaConfig,
}

impl BaselineConfig {
    pub fn check(&self) -> Result<()> {
        if self.ga.population < 2 {
            return Err(Error::Config("ga.population must be >= 2".into()));
        }
        if self.ga.tournament_size < 1 {
            return Err(Error::Config("ga.tournament_size must be >= 1".into()));
        }
        // negated so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.ngto.tol > 0.0) {
            return Err(Error::Config("ngto.tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Rows proportional to receiver capacity.
pub fn cf_strategy(s: &Scenario) -> Strategy {
    let topo = s.topology();
    Strategy::from_rows(s, |i| proportional(topo.successors(i).map(|j| s.mu(j))))
}

/// Rows proportional to link rate.
pub fn bf_strategy(s: &Scenario) -> Strategy {
    let topo = s.topology();
    Strategy::from_rows(s, |i| proportional(topo.out_edges(i).map(|e| s.rate(e))))
}

fn proportional(w: impl Iterator<Item = f64>) -> Vec<f64> {
    let w: Vec<f64> = w.collect();
    let sum: f64 = w.iter().sum();
    w.iter().map(|x| x / sum).collect()
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (k as f64 + 1.0);
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::tests::{link, node, scenario, sub};

    #[test]
    fn cf_and_bf_rows() {
        let s = scenario(
            vec![sub(1, 1.0, 0.1)],
            vec![
                node(0, 0, 0.0, 1.0),
                node(1, 1, 10.0, 0.0),
                node(2, 1, 30.0, 0.0),
            ],
            vec![link(0, 1, 2.0), link(0, 2, 8.0)],
        );
        assert_eq!(cf_strategy(&s).probs(), &[0.25, 0.75]);
        assert_eq!(bf_strategy(&s).probs(), &[0.2, 0.8]);
        let one = scenario(
            vec![sub(1, 1.0, 0.1)],
            vec![node(0, 0, 0.0, 1.0), node(1, 1, 10.0, 0.0)],
            vec![link(0, 1, 2.0)],
        );
        assert_eq!(cf_strategy(&one).probs(), &[1.0]);
        assert_eq!(bf_strategy(&one).probs(), &[1.0]);
        let eq = scenario(
            vec![sub(1, 1.0, 0.1)],
            vec![
                node(0, 0, 0.0, 1.0),
                node(1, 1, 10.0, 0.0),
                node(2, 1, 10.0, 0.0),
            ],
            vec![link(0, 1, 3.0), link(0, 2, 3.0)],
        );
        assert_eq!(cf_strategy(&eq).probs(), &[0.5, 0.5]);
        assert_eq!(bf_strategy(&eq).probs(), &[0.5, 0.5]);
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.9, 0.4, -0.3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12 && p[2] == 0.0);
    }

    #[test]
    fn config_checks() {
        let mut c = BaselineConfig::default();
        assert!(c.check().is_ok());
        c.ga.population = 1;
        assert!(c.check().is_err());
    }
}
