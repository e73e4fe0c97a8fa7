//! Static domain types: scenario documents, node/link/sub-model specs,
//! algorithm parameters, and the derived topology.
//!
//! Units are fixed throughout the crate: compute in GFLOP, capacities in
//! GFLOP/s, payloads in MB, bandwidth in MB/s, time in seconds and arrivals
//! in tasks/s.

mod strategy;
mod topology;
mod validate;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exit_profile::{DifficultyProfile, ExitTableDoc};

pub use strategy::{Strategy, StrategyDoc, StrategyRow, ThresholdSetting};
pub use topology::Topology;
pub use validate::{validate_doc, validate_scenario, Diagnostic, Severity};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubModelSpec {
    pub index: usize,
    /// Compute demand per task (GFLOP).
    pub alpha: f64,
    /// Input payload size (MB).
    pub beta_in: f64,
    #[serde(default)]
    pub has_exit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: u32,
    pub layer: usize,
    /// Computing capacity (GFLOP/s); zero for end devices.
    #[serde(default)]
    pub mu: f64,
    /// Poisson arrival rate (tasks/s); end devices only.
    #[serde(default)]
    pub arrival_rate: f64,
    /// Alternative capacities (device power modes).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<f64>,
}

impl NodeSpec {
    pub fn is_device(&self) -> bool {
        self.layer == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: u32,
    pub to: u32,
    /// Transmission rate (MB/s).
    pub rate: f64,
}

/// Where the accuracy-ratio table comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExitTableSpec {
    Synthetic {
        seed: u64,
        samples: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<DifficultyProfile>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid_step: Option<f64>,
    },
    Records {
        path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid_step: Option<f64>,
    },
    Inline {
        table: ExitTableDoc,
    },
}

/// Parameter block as written in a document; every field optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_c: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_phase_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm_delay_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_threshold: Option<f64>,
}

impl ParamsDoc {
    /// Applies a `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let float = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))
        };
        let int = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("`{key}` expects an integer, got `{value}`")))
        };
        match key {
            "a" => self.a = Some(float()?),
            "k" | "K" => self.k = Some(float()?),
            "epsilon" => self.epsilon = Some(float()?),
            "tau_p" => self.tau_p = Some(float()?),
            "tau_c" => self.tau_c = Some(int()?),
            "m" => self.m = Some(int()?),
            "n" => self.n = Some(int()?),
            "slot_seconds" => self.slot_seconds = Some(float()?),
            "config_phase_ms" => self.config_phase_ms = Some(float()?),
            "comm_delay_ms" => self.comm_delay_ms = Some(float()?),
            "init_threshold" => self.init_threshold = Some(float()?),
            _ => return Err(Error::Config(format!("unknown parameter `{key}`"))),
        }
        Ok(())
    }
}

/// Resolved algorithm parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgoParams {
    /// Utility weight on delay, in `[0, 1]`.
    pub a: f64,
    /// Penalty factor.
    pub k: f64,
    /// Capacity margin (GFLOP/s).
    pub epsilon: f64,
    /// Strategy step size in `(0, 1]`.
    pub tau_p: f64,
    /// Threshold step in grid units.
    pub tau_c: usize,
    /// Threshold update period (rounds).
    pub m: usize,
    /// Communication rounds per configuration phase.
    pub n: usize,
    pub slot_seconds: f64,
    pub config_phase_ms: f64,
    pub comm_delay_ms: f64,
    /// Starting confidence threshold for every branch; grid maximum if unset.
    pub init_threshold: Option<f64>,
}

impl AlgoParams {
    pub const DEFAULT_A: f64 = 0.5;
    pub const DEFAULT_K: f64 = 1e6;
    pub const DEFAULT_TAU_P: f64 = 0.1;
    pub const DEFAULT_M: usize = 5;
    pub const DEFAULT_N: usize = 25;

    fn resolve(doc: &ParamsDoc, min_mu: f64) -> Self {
        Self {
            a: doc.a.unwrap_or(Self::DEFAULT_A),
            k: doc.k.unwrap_or(Self::DEFAULT_K),
            epsilon: doc.epsilon.unwrap_or(0.01 * min_mu),
            tau_p: doc.tau_p.unwrap_or(Self::DEFAULT_TAU_P),
            tau_c: doc.tau_c.unwrap_or(1),
            m: doc.m.unwrap_or(Self::DEFAULT_M),
            n: doc.n.unwrap_or(Self::DEFAULT_N),
            slot_seconds: doc.slot_seconds.unwrap_or(5.0),
            config_phase_ms: doc.config_phase_ms.unwrap_or(100.0),
            comm_delay_ms: doc.comm_delay_ms.unwrap_or(2.0),
            init_threshold: doc.init_threshold,
        }
    }

    fn to_doc(&self) -> ParamsDoc {
        ParamsDoc {
            a: Some(self.a),
            k: Some(self.k),
            epsilon: Some(self.epsilon),
            tau_p: Some(self.tau_p),
            tau_c: Some(self.tau_c),
            m: Some(self.m),
            n: Some(self.n),
            slot_seconds: Some(self.slot_seconds),
            config_phase_ms: Some(self.config_phase_ms),
            comm_delay_ms: Some(self.comm_delay_ms),
            init_threshold: self.init_threshold,
        }
    }

    /// Whether `n` rounds of one request and one status hop fit in the
    /// configuration phase.
    pub fn round_budget_ok(&self) -> bool {
        self.n as f64 * 2.0 * self.comm_delay_ms <= self.config_phase_ms + 1e-9
    }
}

/// Scenario document as serialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub version: u32,
    pub sub_models: Vec<SubModelSpec>,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_table: Option<ExitTableSpec>,
    #[serde(default)]
    pub params: ParamsDoc,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioDoc {
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let doc: ScenarioDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Parse {
                path,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })?;
        if doc.version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: doc.version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Fully validated scenario with derived adjacency.
///
/// `nodes[k]` corresponds to topology node `k` and `links[e]` to edge `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub sub_models: Vec<SubModelSpec>,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub params: AlgoParams,
    pub exit_table: Option<ExitTableSpec>,
    pub seed: u64,
    topo: Topology,
    branches: Vec<usize>,
}

/// Parses and validates a scenario document.
pub fn load_scenario(bytes: &[u8]) -> Result<Scenario> {
    Scenario::from_doc(ScenarioDoc::from_slice(bytes)?)
}

impl Scenario {
    pub fn from_doc(doc: ScenarioDoc) -> Result<Self> {
        let errors: Vec<Diagnostic> = validate_doc(&doc)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .collect();
        if !errors.is_empty() {
            return Err(Error::Invalid(errors));
        }
        let depth = doc.sub_models.len();
        let pairs: Vec<(u32, usize)> = doc.nodes.iter().map(|n| (n.id, n.layer)).collect();
        let edges: Vec<(u32, u32)> = doc.links.iter().map(|l| (l.from, l.to)).collect();
        let topo = Topology::build(&pairs, &edges, depth)?;

        let mut sub_models = doc.sub_models;
        sub_models.sort_by_key(|s| s.index);
        let mut nodes: Vec<Option<NodeSpec>> = vec![None; topo.node_count()];
        for n in doc.nodes {
            let k = topo.index_of(n.id)?;
            nodes[k] = Some(n);
        }
        let mut links: Vec<Option<LinkSpec>> = vec![None; topo.edge_count()];
        for l in doc.links {
            let f = topo.index_of(l.from)?;
            let t = topo.index_of(l.to)?;
            let e = topo.edge_between(f, t).expect("edge indexed");
            links[e] = Some(l);
        }
        let min_mu = nodes
            .iter()
            .flatten()
            .filter(|n| n.layer > 0)
            .map(|n| n.mu)
            .fold(f64::INFINITY, f64::min);
        let branches = sub_models
            .iter()
            .filter(|s| s.has_exit)
            .map(|s| s.index)
            .collect();
        Ok(Self {
            params: AlgoParams::resolve(&doc.params, min_mu),
            sub_models,
            nodes: nodes
                .into_iter()
                .map(|n| n.expect("node indexed"))
                .collect(),
            links: links
                .into_iter()
                .map(|l| l.expect("link indexed"))
                .collect(),
            exit_table: doc.exit_table,
            seed: doc.seed,
            topo,
            branches,
        })
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        load_scenario(&std::fs::read(path)?)
    }

    /// Document form with all parameters resolved.
    pub fn to_doc(&self) -> ScenarioDoc {
        ScenarioDoc {
            version: SCHEMA_VERSION,
            sub_models: self.sub_models.clone(),
            nodes: self.nodes.clone(),
            links: self.links.clone(),
            exit_table: self.exit_table.clone(),
            params: self.params.to_doc(),
            seed: self.seed,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    /// Number of sub-models `H`.
    pub fn depth(&self) -> usize {
        self.sub_models.len()
    }

    /// Layers `h` carrying an exit branch, ascending.
    pub fn branch_layers(&self) -> &[usize] {
        &self.branches
    }

    pub fn alpha(&self, h: usize) -> f64 {
        self.sub_models[h - 1].alpha
    }

    pub fn beta(&self, h: usize) -> f64 {
        self.sub_models[h - 1].beta_in
    }

    pub fn mu(&self, node: usize) -> f64 {
        self.nodes[node].mu
    }

    pub fn arrival_rate(&self, node: usize) -> f64 {
        self.nodes[node].arrival_rate
    }

    pub fn rate(&self, edge: usize) -> f64 {
        self.links[edge].rate
    }

    /// Total device arrival rate `Phi`.
    pub fn total_arrival(&self) -> f64 {
        self.topo
            .layer_nodes(0)
            .map(|i| self.nodes[i].arrival_rate)
            .sum()
    }

    /// Nodes that offload (every layer below `H`).
    pub fn offloaders(&self) -> std::ops::Range<usize> {
        0..self.topo.layer_nodes(self.depth()).start
    }

    /// Copy with replaced device arrival rates and server capacities
    /// (indexed by node). Used by the dynamic-environment driver.
    pub fn with_environment(&self, arrival: &[f64], mu: &[f64]) -> Self {
        let mut s = self.clone();
        for (k, n) in s.nodes.iter_mut().enumerate() {
            if n.layer == 0 {
                n.arrival_rate = arrival[k];
            } else {
                n.mu = mu[k];
            }
        }
        s
    }

    /// Copy with device arrival rates multiplied by `factor`.
    pub fn scaled_arrivals(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for n in s.nodes.iter_mut().filter(|n| n.layer == 0) {
            n.arrival_rate *= factor;
        }
        s
    }
}
