use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::error::{Error, Result};

/// Offloading probabilities `p(i, j)` for every offloader -> receiver edge.
///
/// Stored densely by edge index; each offloader's row is the contiguous
/// slice of its out-edges, ordered by successor id.
#[derive(Clone, Debug, PartialEq)]
pub struct Strategy {
    probs: Vec<f64>,
    offsets: Arc<[usize]>,
}

impl Strategy {
    /// Every offloader splits evenly over its successors.
    pub fn uniform(s: &Scenario) -> Self {
        let topo = s.topology();
        let mut probs = vec![0.0; topo.edge_count()];
        for i in 0..topo.node_count() {
            let r = topo.out_edges(i);
            let w = 1.0 / r.len() as f64;
            for e in r {
                probs[e] = w;
            }
        }
        Self::from_probs(s, probs)
    }

    pub fn from_probs(s: &Scenario, probs: Vec<f64>) -> Self {
        assert_eq!(probs.len(), s.topology().edge_count());
        Self {
            probs,
            offsets: s.topology().out_offsets().into(),
        }
    }

    /// Builds a strategy row by row from `f(node, n_successors)`.
    pub fn from_rows(s: &Scenario, mut f: impl FnMut(usize) -> Vec<f64>) -> Self {
        let topo = s.topology();
        let mut probs = vec![0.0; topo.edge_count()];
        for i in s.offloaders() {
            let r = topo.out_edges(i);
            let row = f(i);
            assert_eq!(row.len(), r.len());
            probs[r].copy_from_slice(&row);
        }
        Self::from_probs(s, probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, edge: usize) -> f64 {
        self.probs[edge]
    }

    pub fn set(&mut self, edge: usize, p: f64) {
        self.probs[edge] = p;
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.probs[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn row_mut(&mut self, node: usize) -> &mut [f64] {
        let (a, b) = (self.offsets[node], self.offsets[node + 1]);
        &mut self.probs[a..b]
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Largest absolute coordinate change between two strategies.
    pub fn max_change(&self, other: &Strategy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rows violating the simplex constraints, as `(node, row sum)`.
    pub fn invalid_rows(&self, tol: f64) -> Vec<(usize, f64)> {
        (0..self.node_count())
            .filter(|&i| self.offsets[i + 1] > self.offsets[i])
            .filter_map(|i| {
                let row = self.row(i);
                let sum = compensated_sum(row);
                let in_range = row.iter().all(|&p| (0.0..=1.0).contains(&p));
                (!in_range || (sum - 1.0).abs() > tol).then_some((i, sum))
            })
            .collect()
    }

    pub fn to_doc(&self, s: &Scenario) -> StrategyDoc {
        let topo = s.topology();
        StrategyDoc {
            rows: s
                .offloaders()
                .map(|i| StrategyRow {
                    node: topo.id(i),
                    successors: topo.successors(i).map(|j| topo.id(j)).collect(),
                    p: self.row(i).to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_doc(s: &Scenario, doc: &StrategyDoc) -> Result<Self> {
        let topo = s.topology();
        let mut probs = vec![f64::NAN; topo.edge_count()];
        for row in &doc.rows {
            let i = topo.index_of(row.node)?;
            if row.successors.len() != row.p.len() {
                return Err(Error::Config(format!(
                    "strategy row for node {} has {} successors but {} probabilities",
                    row.node,
                    row.successors.len(),
                    row.p.len()
                )));
            }
            for (&sid, &p) in row.successors.iter().zip(&row.p) {
                let j = topo.index_of(sid)?;
                let e = topo
                    .edge_between(i, j)
                    .ok_or_else(|| Error::Config(format!("no link {} -> {}", row.node, sid)))?;
                probs[e] = p;
            }
        }
        if let Some(e) = probs.iter().position(|p| p.is_nan()) {
            return Err(Error::Config(format!(
                "strategy has no entry for link {} -> {}",
                topo.id(topo.edge_from(e)),
                topo.id(topo.edge_to(e))
            )));
        }
        Ok(Self::from_probs(s, probs))
    }
}

/// Neumaier-compensated summation.
pub(crate) fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Serialized strategy: one row per offloader.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyDoc {
    pub rows: Vec<StrategyRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyRow {
    pub node: u32,
    pub successors: Vec<u32>,
    pub p: Vec<f64>,
}

/// Confidence thresholds, one grid index per exit branch (ascending layer).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThresholdSetting {
    pub idx: Vec<usize>,
}

impl ThresholdSetting {
    pub fn new(idx: Vec<usize>) -> Self {
        Self { idx }
    }
}
