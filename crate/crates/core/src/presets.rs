//! Bundled scenarios and exit-table resolution.
//!
//! The two presets describe a ResNet101 pipeline (four sub-models, exits
//! after the second and third) and a Bert-large pipeline (five sub-models,
//! exits after the second, third and fourth). Sub-model costs and accuracies
//! are the published per-partition figures. Topology, link rates and device
//! modes come from [`generate`], which is deterministic; the JSON files in
//! `presets/` are its output and a test keeps the two in sync.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exit_profile::{
    build_exit_table, default_grid, synthesize_records, BranchRecordSet, DifficultyProfile,
    ExitTable,
};
use crate::model::{
    ExitTableSpec, LinkSpec, NodeSpec, ParamsDoc, Scenario, ScenarioDoc, SubModelSpec,
    SCHEMA_VERSION,
};

pub const RESNET101_JSON: &str = include_str!("../presets/resnet101.json");
pub const BERT_JSON: &str = include_str!("../presets/bert.json");
pub const RESNET101_RECORDS_CSV: &str = include_str!("../presets/resnet101_records.csv");

/// Device families and their power modes (GFLOP/s), fastest first.
pub const DEVICE_MODES: [(&str, &[f64]); 3] = [
    ("tx2", &[30.0, 20.0]),
    ("nx", &[80.0, 60.0, 40.0]),
    ("agx", &[100.0, 70.0]),
];

pub const GRID_STEP: f64 = 0.05;
pub const RECORD_SAMPLES: usize = 2000;
pub const RECORD_SEED: u64 = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    ResNet101,
    Bert,
}

struct Shape {
    alpha: &'static [f64],
    beta: &'static [f64],
    branches: &'static [usize],
    branch_accuracy: &'static [f64],
    final_accuracy: f64,
    servers: &'static [usize],
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::ResNet101, Preset::Bert];

    pub fn file_name(self) -> &'static str {
        match self {
            Preset::ResNet101 => "resnet101.json",
            Preset::Bert => "bert.json",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let stem = name.trim_end_matches(".json");
        Self::ALL
            .into_iter()
            .find(|p| p.file_name().trim_end_matches(".json") == stem)
    }

    pub fn json(self) -> &'static str {
        match self {
            Preset::ResNet101 => RESNET101_JSON,
            Preset::Bert => BERT_JSON,
        }
    }

    pub fn load(self) -> Scenario {
        crate::model::load_scenario(self.json().as_bytes()).expect("bundled preset is valid")
    }

    fn shape(self) -> Shape {
        match self {
            Preset::ResNet101 => Shape {
                alpha: &[2.21, 1.97, 1.97, 1.68],
                beta: &[0.14, 0.77, 0.77, 0.77],
                branches: &[2, 3],
                branch_accuracy: &[0.470, 0.582],
                final_accuracy: 0.681,
                servers: &[6, 5, 5, 4],
            },
            Preset::Bert => Shape {
                alpha: &[6.44, 8.05, 8.08, 8.08, 8.08],
                beta: &[0.01, 0.56, 0.56, 0.56, 0.56],
                branches: &[2, 3, 4],
                branch_accuracy: &[0.552, 0.568, 0.572],
                final_accuracy: 0.582,
                servers: &[6, 5, 5, 4, 4],
            },
        }
    }

    /// Difficulty profile matching the published branch and final accuracies.
    pub fn profile(self) -> DifficultyProfile {
        let sh = self.shape();
        DifficultyProfile {
            branch_accuracy: sh.branch_accuracy.to_vec(),
            final_accuracy: sh.final_accuracy,
            ..DifficultyProfile::default_for(sh.branches.len())
        }
    }

    pub fn records(self) -> BranchRecordSet {
        let sh = self.shape();
        synthesize_records(
            RECORD_SEED,
            RECORD_SAMPLES,
            &self.profile(),
            sh.branches,
            sh.alpha.len(),
        )
    }
}

/// Knobs for [`generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub devices: usize,
    /// Receivers per offloader, inclusive range.
    pub fanout: (usize, usize),
    /// Device-to-server bandwidth range (MB/s).
    pub device_rate: (f64, f64),
    /// Server-to-server bandwidth range (MB/s).
    pub server_rate: (f64, f64),
    /// Target peak layer utilization with every server in its mean mode and
    /// no early exits.
    pub load: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            devices: 50,
            fanout: (2, 4),
            device_rate: (1.0, 10.0),
            server_rate: (10.0, 20.0),
            load: 0.6,
            seed: 2024,
        }
    }
}

fn round3(x: f64) -> f64 {
    (x * 1e3).round() / 1e3
}

/// Builds a preset scenario document.
pub fn generate(preset: Preset, cfg: &GeneratorConfig) -> ScenarioDoc {
    let sh = preset.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let depth = sh.alpha.len();
    let sub_models = (0..depth)
        .map(|k| SubModelSpec {
            index: k + 1,
            alpha: sh.alpha[k],
            beta_in: sh.beta[k],
            has_exit: sh.branches.contains(&(k + 1)),
        })
        .collect();

    let mut layers: Vec<Vec<u32>> = vec![(0..cfg.devices as u32).collect()];
    let mut nodes: Vec<NodeSpec> = layers[0]
        .iter()
        .map(|&id| NodeSpec {
            id,
            layer: 0,
            mu: 0.0,
            arrival_rate: 0.0,
            modes: vec![],
        })
        .collect();
    let mut next_id = cfg.devices as u32;
    // mean-mode capacity per layer
    let mut layer_mean = vec![0.0; depth + 1];
    for h in 1..=depth {
        let mut ids = Vec::new();
        for _ in 0..sh.servers[h - 1] {
            let (_, modes) = DEVICE_MODES[rng.random_range(0..DEVICE_MODES.len())];
            layer_mean[h] += modes.iter().sum::<f64>() / modes.len() as f64;
            nodes.push(NodeSpec {
                id: next_id,
                layer: h,
                mu: modes[0],
                arrival_rate: 0.0,
                modes: modes.to_vec(),
            });
            ids.push(next_id);
            next_id += 1;
        }
        layers.push(ids);
    }

    let mut links = Vec::new();
    for h in 0..depth {
        let (lo, hi) = if h == 0 {
            cfg.device_rate
        } else {
            cfg.server_rate
        };
        let targets = &layers[h + 1];
        let mut fed = vec![false; targets.len()];
        let mut chosen: Vec<Vec<usize>> = Vec::new();
        for _ in &layers[h] {
            let max = cfg.fanout.1.min(targets.len());
            let min = cfg.fanout.0.min(max);
            let k = rng.random_range(min..=max);
            let mut pick = sample(&mut rng, targets.len(), k).into_vec();
            pick.sort_unstable();
            for &t in &pick {
                fed[t] = true;
            }
            chosen.push(pick);
        }
        // every server needs at least one feeder
        for t in 0..targets.len() {
            if !fed[t] {
                let i = (0..chosen.len())
                    .min_by_key(|&i| (chosen[i].len(), i))
                    .expect("offloaders");
                chosen[i].push(t);
                chosen[i].sort_unstable();
            }
        }
        for (i, pick) in chosen.iter().enumerate() {
            for &t in pick {
                links.push(LinkSpec {
                    from: layers[h][i],
                    to: targets[t],
                    rate: round3(rng.random_range(lo..=hi)),
                });
            }
        }
    }

    // total arrival rate that puts the busiest layer at `load`
    let phi = (1..=depth)
        .map(|h| cfg.load * layer_mean[h] / sh.alpha[h - 1])
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = (0..cfg.devices)
        .map(|_| rng.random_range(0.5..1.5))
        .collect();
    let wsum: f64 = weights.iter().sum();
    for (k, w) in weights.iter().enumerate() {
        nodes[k].arrival_rate = round3(phi * w / wsum);
    }

    ScenarioDoc {
        version: SCHEMA_VERSION,
        sub_models,
        nodes,
        links,
        exit_table: Some(ExitTableSpec::Synthetic {
            seed: RECORD_SEED,
            samples: RECORD_SAMPLES,
            profile: Some(preset.profile()),
            grid_step: Some(GRID_STEP),
        }),
        params: ParamsDoc::default(),
        seed: cfg.seed,
    }
}

/// Knobs for [`random_scenario`].
#[derive(Clone, Debug, PartialEq)]
pub struct RandomConfig {
    /// Number of sub-model layers, inclusive range.
    pub depth: (usize, usize),
    /// Nodes per layer (devices included), inclusive range.
    pub width: (usize, usize),
    pub mu: (f64, f64),
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub rate: (f64, f64),
    /// Peak node utilization under the uniform strategy with no exits,
    /// inclusive range.
    pub load: (f64, f64),
    /// Mark every intermediate layer as an exit branch.
    pub exits: bool,
}

impl Default for RandomConfig {
    fn default() -> Self {
        Self {
            depth: (1, 4),
            width: (1, 5),
            mu: (5.0, 25.0),
            alpha: (0.5, 3.0),
            beta: (0.1, 1.0),
            rate: (1.0, 20.0),
            load: (0.2, 0.8),
            exits: false,
        }
    }
}

/// Random layered scenario with every offloader linked to a random nonempty
/// subset of the next layer and arrivals scaled to the drawn peak load.
pub fn random_scenario(seed: u64, cfg: &RandomConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(cfg.depth.0..=cfg.depth.1);
    let sub_models = (1..=depth)
        .map(|h| SubModelSpec {
            index: h,
            alpha: rng.random_range(cfg.alpha.0..=cfg.alpha.1),
            beta_in: rng.random_range(cfg.beta.0..=cfg.beta.1),
            has_exit: cfg.exits && h < depth,
        })
        .collect();
    let mut layers: Vec<Vec<u32>> = Vec::new();
    let mut nodes = Vec::new();
    let mut id = 0u32;
    for h in 0..=depth {
        let w = rng.random_range(cfg.width.0..=cfg.width.1);
        let mut ids = Vec::new();
        for _ in 0..w {
            nodes.push(NodeSpec {
                id,
                layer: h,
                mu: if h == 0 {
                    0.0
                } else {
                    rng.random_range(cfg.mu.0..=cfg.mu.1)
                },
                arrival_rate: if h == 0 {
                    rng.random_range(0.5..=1.5)
                } else {
                    0.0
                },
                modes: vec![],
            });
            ids.push(id);
            id += 1;
        }
        layers.push(ids);
    }
    let mut links = Vec::new();
    for h in 0..depth {
        let n = layers[h + 1].len();
        let mut fed = vec![false; n];
        let mut chosen = Vec::new();
        for _ in &layers[h] {
            let k = rng.random_range(1..=n);
            let mut pick = sample(&mut rng, n, k).into_vec();
            pick.sort_unstable();
            for &t in &pick {
                fed[t] = true;
            }
            chosen.push(pick);
        }
        for t in 0..n {
            if !fed[t] {
                let i = rng.random_range(0..chosen.len());
                chosen[i].push(t);
                chosen[i].sort_unstable();
            }
        }
        for (i, pick) in chosen.iter().enumerate() {
            for &t in pick {
                links.push(LinkSpec {
                    from: layers[h][i],
                    to: layers[h + 1][t],
                    rate: rng.random_range(cfg.rate.0..=cfg.rate.1),
                });
            }
        }
    }
    let load = rng.random_range(cfg.load.0..=cfg.load.1);
    let doc = ScenarioDoc {
        version: SCHEMA_VERSION,
        sub_models,
        nodes,
        links,
        // branches need a table; a small synthetic one with the default profile
        exit_table: (cfg.exits && depth > 1).then_some(ExitTableSpec::Synthetic {
            seed,
            samples: 1000,
            profile: None,
            grid_step: None,
        }),
        params: ParamsDoc::default(),
        seed,
    };
    let s = Scenario::from_doc(doc).expect("generated scenario is valid");
    let flow = crate::analytics::propagate_flows(
        &s,
        &crate::model::Strategy::uniform(&s),
        &vec![1.0; depth + 1],
    );
    let topo = s.topology();
    let peak = (topo.layer_nodes(1).start..topo.node_count())
        .map(|j| flow.lambda[j] / s.mu(j))
        .fold(0.0, f64::max);
    s.scaled_arrivals(load / peak)
}

/// Resolves a scenario document name: an existing path is read from disk,
/// otherwise a bundled preset with that file name is used.
pub fn read_scenario_source(path: &Path) -> Result<Vec<u8>> {
    match std::fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            match Preset::from_name(name) {
                Some(p) => Ok(p.json().as_bytes().to_vec()),
                None => Err(e.into()),
            }
        }
        Err(e) => Err(e.into()),
    }
}

/// Reads a records CSV; a missing `resnet101_records.csv` falls back to the
/// bundled copy.
pub fn load_records(path: &Path) -> Result<BranchRecordSet> {
    read_records(&path.to_string_lossy(), None)
}

fn read_records(path: &str, base: Option<&Path>) -> Result<BranchRecordSet> {
    let full = match base {
        Some(b) => b.join(path),
        None => Path::new(path).to_path_buf(),
    };
    match std::fs::File::open(&full) {
        Ok(f) => BranchRecordSet::read_csv(std::io::BufReader::new(f)),
        Err(e)
            if e.kind() == std::io::ErrorKind::NotFound
                && Path::new(path).file_name().and_then(|n| n.to_str())
                    == Some("resnet101_records.csv") =>
        {
            BranchRecordSet::read_csv(RESNET101_RECORDS_CSV.as_bytes())
        }
        Err(e) => Err(e.into()),
    }
}

/// Builds the accuracy-ratio table a scenario refers to. Relative record
/// paths are taken from `base`. A scenario without a table gets a
/// synthetic one with the default profile, or a branchless table with
/// perfect accuracy when it has no exits.
pub fn resolve_exit_table(s: &Scenario, base: Option<&Path>) -> Result<ExitTable> {
    let branches = s.branch_layers();
    let depth = s.depth();
    let grids = |step: Option<f64>| vec![default_grid(step.unwrap_or(GRID_STEP)); branches.len()];
    let table = match &s.exit_table {
        None if branches.is_empty() => ExitTable::branchless(1.0),
        None => {
            let recs = synthesize_records(
                s.seed,
                1000,
                &DifficultyProfile::default_for(branches.len()),
                branches,
                depth,
            );
            build_exit_table(&recs, &grids(None))?
        }
        Some(ExitTableSpec::Synthetic {
            seed,
            samples,
            profile,
            grid_step,
        }) => {
            let profile = profile
                .clone()
                .unwrap_or_else(|| DifficultyProfile::default_for(branches.len()));
            if profile.branch_accuracy.len() != branches.len() {
                return Err(Error::TableMismatch(format!(
                    "profile has {} branch accuracies, scenario has {} exits",
                    profile.branch_accuracy.len(),
                    branches.len()
                )));
            }
            let recs = synthesize_records(*seed, *samples, &profile, branches, depth);
            build_exit_table(&recs, &grids(*grid_step))?
        }
        Some(ExitTableSpec::Records { path, grid_step }) => {
            let recs = read_records(path, base)?;
            if recs.branches != branches {
                return Err(Error::TableMismatch(format!(
                    "records cover branches {:?}, scenario has {:?}",
                    recs.branches, branches
                )));
            }
            build_exit_table(&recs, &grids(*grid_step))?
        }
        Some(ExitTableSpec::Inline { table }) => ExitTable::from_doc(table)?,
    };
    if table.branches() != branches {
        return Err(Error::TableMismatch(format!(
            "table branches {:?}, scenario branches {:?}",
            table.branches(),
            branches
        )));
    }
    Ok(table)
}
