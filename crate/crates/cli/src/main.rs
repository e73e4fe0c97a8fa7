//! `epo`: batch front end for scenario validation, exit-table building,
//! strategy optimization, simulation and multi-slot experiments.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use epo_core::analytics;
use epo_core::baselines::BaselineConfig;
use epo_core::dto;
use epo_core::exit_profile::{build_exit_table, default_grid, ExitTable};
use epo_core::fmt::sig6;
use epo_core::model::{validate_scenario, Scenario, ScenarioDoc, Severity, Strategy};
use epo_core::par::Execution;
use epo_core::planner::{self, parse_algorithms, Algorithm};
use epo_core::presets;
use epo_core::sim::{self, DynamicOptions, ExitMode, ServiceDist, SimOptions};

#[derive(Parser)]
#[command(
    name = "epo",
    version,
    about = "Task offloading and early-exit threshold optimizer"
)]
struct Cli {
    /// Seed override (defaults to the scenario's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Parameter override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario document; exits 1 on errors.
    Validate {
        scenario: PathBuf,
        /// Optional strategy JSON to check against the scenario.
        #[arg(long)]
        strategy: Option<PathBuf>,
    },
    /// Build an accuracy-ratio table from branch records.
    ExitTable(ExitTableArgs),
    /// Run one configuration phase and write the strategy, thresholds and trace.
    Optimize {
        scenario: PathBuf,
        #[arg(long, default_value = "dto-ee")]
        alg: String,
    },
    /// Plan with one algorithm, then simulate the offloading phase.
    Simulate(SimulateArgs),
    /// Multi-slot dynamic experiment over several seeds.
    Experiment(ExperimentArgs),
    /// Compare analytic gradients with central differences on random instances.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
}

#[derive(Args)]
struct ExitTableArgs {
    /// Records CSV.
    records: PathBuf,
    /// Uniform grid step for every branch.
    #[arg(long, conflicts_with = "grid")]
    grid_step: Option<f64>,
    /// Explicit comma-separated grid shared by every branch.
    #[arg(long)]
    grid: Option<String>,
    /// Output file name inside `--out`.
    #[arg(long, default_value = "exit_table.json")]
    output: String,
}

#[derive(Args)]
struct SimulateArgs {
    scenario: PathBuf,
    #[arg(long, default_value = "dto-ee")]
    alg: String,
    /// Simulated seconds of arrivals.
    #[arg(long, default_value_t = 200.0)]
    duration: f64,
    /// Replay validation records for exits instead of Bernoulli draws.
    #[arg(long)]
    replay: bool,
    /// Exponential instead of deterministic service demand.
    #[arg(long)]
    exponential: bool,
    /// Write a per-task trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    scenario: PathBuf,
    #[arg(long, default_value = "dto-ee,cf,bf,ngto,ga")]
    algs: String,
    #[arg(long, default_value_t = 40)]
    slots: usize,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Run seeds one after another.
    #[arg(long)]
    sequential: bool,
    /// Apply every plan at the end of the configuration phase, however many
    /// message hops it took to compute.
    #[arg(long)]
    no_decision_latency: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    /// Full argument list, so every flag that shaped the outputs is recorded.
    args: Vec<String>,
    scenario: Option<String>,
    seed: Option<u64>,
    overrides: &'a [String],
    out: String,
    tool_version: &'static str,
    inputs: Vec<String>,
    input_sha256: String,
}

/// Everything read from disk, hashed into the manifest.
#[derive(Default)]
struct Inputs {
    names: Vec<String>,
    hasher: Sha256,
}

impl Inputs {
    fn add(&mut self, name: &str, bytes: &[u8]) {
        self.names.push(name.to_string());
        self.hasher.update((name.len() as u64).to_le_bytes());
        self.hasher.update(name.as_bytes());
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
    }
}

struct Ctx {
    out: PathBuf,
    seed: Option<u64>,
    set: Vec<String>,
    inputs: Inputs,
    scenario_name: Option<String>,
}

impl Ctx {
    fn load_scenario(&mut self, path: &Path) -> Result<Scenario> {
        let bytes = presets::read_scenario_source(path)
            .with_context(|| format!("reading {}", path.display()))?;
        self.inputs.add(&path.display().to_string(), &bytes);
        self.scenario_name = Some(path.display().to_string());
        let mut doc = ScenarioDoc::from_slice(&bytes)
            .with_context(|| format!("parsing {}", path.display()))?;
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects key=value, got `{kv}`"))?;
            doc.params.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            doc.seed = seed;
        }
        Ok(Scenario::from_doc(doc)?)
    }

    fn table(&mut self, s: &Scenario, scenario_path: &Path) -> Result<ExitTable> {
        let base = scenario_path.parent().filter(|p| p.exists());
        if let Some(epo_core::model::ExitTableSpec::Records { path, .. }) = &s.exit_table {
            let full = base.map_or_else(|| PathBuf::from(path), |b| b.join(path));
            if let Ok(bytes) = fs::read(&full) {
                self.inputs.add(&full.display().to_string(), &bytes);
            }
        }
        Ok(presets::resolve_exit_table(s, base)?)
    }

    /// Writes the manifest; must precede every other output.
    fn manifest(&mut self, command: &str) -> Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        let inputs = std::mem::take(&mut self.inputs);
        let hash = inputs.hasher.finalize();
        let m = Manifest {
            command,
            args: std::env::args().skip(1).collect(),
            scenario: self.scenario_name.clone(),
            seed: self.seed,
            overrides: &self.set,
            out: self.out.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs: inputs.names,
            input_sha256: hex::encode(hash),
        };
        let mut json = serde_json::to_string_pretty(&m)?;
        json.push('\n');
        fs::write(self.out.join("manifest.json"), json)?;
        Ok(())
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.out.join(name);
        let f = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        Ok(BufWriter::new(f))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EPO_LOG", "warn")).init();
    let cli = Cli::parse();
    let mut ctx = Ctx {
        out: cli.out,
        seed: cli.seed,
        set: cli.set,
        inputs: Inputs::default(),
        scenario_name: None,
    };
    let res = match cli.command {
        Command::Validate { scenario, strategy } => {
            validate(&mut ctx, &scenario, strategy.as_deref())
        }
        Command::ExitTable(a) => exit_table(&mut ctx, &a),
        Command::Optimize { scenario, alg } => optimize(&mut ctx, &scenario, &alg),
        Command::Simulate(a) => simulate(&mut ctx, &a),
        Command::Experiment(a) => experiment(&mut ctx, &a),
        Command::Gradcheck { instances, step } => gradcheck(&mut ctx, instances, step),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn validate(ctx: &mut Ctx, path: &Path, strategy: Option<&Path>) -> Result<ExitCode> {
    let bytes = presets::read_scenario_source(path)
        .with_context(|| format!("reading {}", path.display()))?;
    ctx.inputs.add(&path.display().to_string(), &bytes);
    ctx.scenario_name = Some(path.display().to_string());
    let strategy_bytes = match strategy {
        Some(p) => {
            let b = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            ctx.inputs.add(&p.display().to_string(), &b);
            Some(b)
        }
        None => None,
    };
    ctx.manifest("validate")?;
    let doc = match ScenarioDoc::from_slice(&bytes) {
        Ok(d) => d,
        Err(e) => {
            println!("error: {e}");
            return Ok(ExitCode::FAILURE);
        }
    };
    let errors = epo_core::model::validate_doc(&doc);
    if errors.iter().any(|d| d.severity == Severity::Error) {
        for d in &errors {
            println!("{d}");
        }
        return Ok(ExitCode::FAILURE);
    }
    let s = Scenario::from_doc(doc)?;
    let surviving = match presets::resolve_exit_table(&s, path.parent()) {
        Ok(t) => {
            let c = dto::initial_thresholds(&s, &t)?;
            Some(t.surviving_by_layer(&c, s.depth())?)
        }
        Err(e) => {
            println!("warning: exit table: {e}");
            None
        }
    };
    let p = match strategy_bytes {
        Some(b) => Some(Strategy::from_doc(&s, &serde_json::from_slice(&b)?)?),
        None => None,
    };
    let diags = validate_scenario(&s, p.as_ref(), surviving.as_deref());
    for d in &diags {
        println!("{d}");
    }
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Ok(ExitCode::FAILURE);
    }
    println!("ok");
    Ok(ExitCode::SUCCESS)
}

fn exit_table(ctx: &mut Ctx, a: &ExitTableArgs) -> Result<ExitCode> {
    let grid = match (&a.grid, a.grid_step) {
        (Some(g), _) => {
            let vals: Vec<f64> = g
                .split(',')
                .filter(|x| !x.trim().is_empty())
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .context("--grid expects comma-separated numbers")?;
            if vals.is_empty() {
                eprintln!("error: --grid is empty");
                return Ok(ExitCode::from(2));
            }
            vals
        }
        (None, Some(step)) => {
            if !(step > 0.0 && step <= 1.0) {
                eprintln!("error: --grid-step must be in (0, 1]");
                return Ok(ExitCode::from(2));
            }
            default_grid(step)
        }
        (None, None) => default_grid(presets::GRID_STEP),
    };
    let recs = presets::load_records(&a.records)
        .with_context(|| format!("reading {}", a.records.display()))?;
    ctx.inputs.add(
        &a.records.display().to_string(),
        recs.to_csv_string().as_bytes(),
    );
    ctx.manifest("exit-table")?;
    let table = build_exit_table(&recs, &vec![grid; recs.branches.len()])?;
    let mut f = ctx.create(&a.output)?;
    serde_json::to_writer_pretty(&mut f, &table.to_doc())?;
    writeln!(f)?;
    let (lo, hi) = table.accuracy_bounds();
    println!("A_min={} A_max={}", sig6(lo), sig6(hi));
    Ok(ExitCode::SUCCESS)
}

fn thresholds_json(
    s: &Scenario,
    table: &ExitTable,
    c: &epo_core::model::ThresholdSetting,
) -> serde_json::Value {
    let vals = table.values(c);
    let map: serde_json::Map<String, serde_json::Value> = s
        .branch_layers()
        .iter()
        .zip(vals)
        .map(|(h, v)| (h.to_string(), serde_json::json!(v)))
        .collect();
    serde_json::Value::Object(map)
}

fn optimize(ctx: &mut Ctx, path: &Path, alg: &str) -> Result<ExitCode> {
    let alg: Algorithm = alg.parse()?;
    let s = ctx.load_scenario(path)?;
    let table = ctx.table(&s, path)?;
    ctx.manifest("optimize")?;
    let plan = planner::plan(&s, &table, alg, None, &BaselineConfig::default(), s.seed)?;
    let mut trace = plan.trace.clone();
    if trace.is_empty() {
        trace.push(dto::evaluate(
            &s,
            &table,
            &plan.strategy,
            &plan.thresholds,
            0,
        )?);
    }

    let mut f = ctx.create("strategy.json")?;
    serde_json::to_writer_pretty(&mut f, &plan.strategy.to_doc(&s))?;
    writeln!(f)?;
    let mut f = ctx.create("thresholds.json")?;
    serde_json::to_writer_pretty(&mut f, &thresholds_json(&s, &table, &plan.thresholds))?;
    writeln!(f)?;
    dto::write_trace_csv(&trace, s.branch_layers(), ctx.create("trace.csv")?)?;

    let last = trace.last().expect("trace has a row");
    let acc = table.accuracy(&plan.thresholds)?;
    println!(
        "alg={} R={} T_ms={} N={} U={} accuracy={}",
        alg,
        sig6(last.r),
        sig6(last.t * 1e3),
        sig6(last.n),
        sig6(last.u),
        sig6(acc)
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SimSummary {
    algorithm: String,
    duration: f64,
    mean_delay_ms: String,
    p95_delay_ms: String,
    analytic_delay_ms: String,
    accuracy: String,
    analytic_accuracy: String,
    tasks: usize,
    warmup_discarded: usize,
    unfinished: usize,
    util_max: String,
    saturated: bool,
}

fn simulate(ctx: &mut Ctx, a: &SimulateArgs) -> Result<ExitCode> {
    let alg: Algorithm = a.alg.parse()?;
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(a.duration > 0.0) {
        bail!("--duration must be positive");
    }
    let s = ctx.load_scenario(&a.scenario)?;
    let table = ctx.table(&s, &a.scenario)?;
    let exit_mode = if a.replay {
        let recs = match &s.exit_table {
            Some(epo_core::model::ExitTableSpec::Records { path, .. }) => {
                let base = a.scenario.parent().unwrap_or(Path::new("."));
                presets::load_records(&base.join(path))?
            }
            _ => bail!("--replay needs a scenario whose exit table comes from records"),
        };
        ExitMode::Replay(std::sync::Arc::new(recs))
    } else {
        ExitMode::Bernoulli
    };
    ctx.manifest("simulate")?;
    let plan = planner::plan(&s, &table, alg, None, &BaselineConfig::default(), s.seed)?;
    let opts = SimOptions {
        exit_mode,
        service: if a.exponential {
            ServiceDist::Exponential
        } else {
            ServiceDist::Deterministic
        },
        keep_trace: a.trace,
        ..SimOptions::default()
    };
    let rep = sim::run_simulation(
        &s,
        &plan.strategy,
        &plan.thresholds,
        &table,
        a.duration,
        s.seed,
        &opts,
    )?;
    let surviving = table.surviving_by_layer(&plan.thresholds, s.depth())?;
    let analytic = analytics::system_delay(&s, &plan.strategy, &surviving).ok();
    let summary = SimSummary {
        algorithm: alg.to_string(),
        duration: a.duration,
        mean_delay_ms: sig6(rep.mean_delay * 1e3),
        p95_delay_ms: sig6(rep.p95_delay * 1e3),
        analytic_delay_ms: analytic.map_or_else(|| "saturated".into(), |t| sig6(t * 1e3)),
        accuracy: sig6(rep.accuracy),
        analytic_accuracy: sig6(table.accuracy(&plan.thresholds)?),
        tasks: rep.tasks,
        warmup_discarded: rep.warmup_discarded,
        unfinished: rep.unfinished,
        util_max: sig6(rep.util_max),
        saturated: rep.saturated,
    };
    let mut f = ctx.create("simulation.json")?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f)?;
    let mut f = ctx.create("utilization.csv")?;
    writeln!(f, "node,layer,load,utilization")?;
    let topo = s.topology();
    for k in 0..topo.node_count() {
        writeln!(
            f,
            "{},{},{},{}",
            topo.id(k),
            topo.layer(k),
            sig6(rep.node_load[k]),
            sig6(rep.utilization[k])
        )?;
    }
    f.flush()?;
    if let Some(tr) = &rep.trace {
        sim::write_trace_csv(tr, ctx.create("tasks.csv")?)?;
    }
    println!(
        "alg={} mean_delay_ms={} analytic_delay_ms={} accuracy={} tasks={} util_max={}{}",
        summary.algorithm,
        summary.mean_delay_ms,
        summary.analytic_delay_ms,
        summary.accuracy,
        summary.tasks,
        summary.util_max,
        if rep.saturated { " SATURATED" } else { "" }
    );
    Ok(ExitCode::SUCCESS)
}

fn experiment(ctx: &mut Ctx, a: &ExperimentArgs) -> Result<ExitCode> {
    let algs = parse_algorithms(&a.algs)?;
    if algs.is_empty() {
        bail!("--algs is empty");
    }
    if a.slots == 0 || a.seeds == 0 {
        bail!("--slots and --seeds must be at least 1");
    }
    let s = ctx.load_scenario(&a.scenario)?;
    let table = ctx.table(&s, &a.scenario)?;
    ctx.manifest("experiment")?;
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let opts = DynamicOptions {
        slots: a.slots,
        exec,
        decision_latency: !a.no_decision_latency,
        ..DynamicOptions::default()
    };
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|k| s.seed + k).collect();
    let runs = exec.map(&seeds, |&seed| {
        sim::dynamic_experiment(&s, &table, &algs, &opts, seed)
    });
    let runs: Vec<_> = runs.into_iter().collect::<Result<_, _>>()?;

    let slot_rows: Vec<_> = seeds
        .iter()
        .zip(&runs)
        .flat_map(|(&sd, r)| r.slots.iter().map(move |x| (Some(sd), x)))
        .collect();
    sim::write_slots_csv(&slot_rows, ctx.create("slots.csv")?)?;
    let group_rows: Vec<_> = seeds
        .iter()
        .zip(&runs)
        .flat_map(|(&sd, r)| r.groups.iter().map(move |x| (Some(sd), x)))
        .collect();
    sim::write_groups_csv(&group_rows, ctx.create("groups.csv")?)?;
    let summary = sim::pooled_summary(&runs);
    sim::write_summary_csv(&summary, ctx.create("summary.csv")?)?;

    println!(
        "{:<14} {:>16} {:>14} {:>10}",
        "algorithm", "median_delay_ms", "mean_delay_ms", "accuracy"
    );
    for r in &summary {
        println!(
            "{:<14} {:>16} {:>14} {:>10}",
            r.algorithm,
            sig6(r.median_delay * 1e3),
            sig6(r.mean_delay * 1e3),
            sig6(r.accuracy)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(ctx: &mut Ctx, instances: usize, step: f64) -> Result<ExitCode> {
    ctx.manifest("gradcheck")?;
    let seed = ctx.seed.unwrap_or(0);
    let rep = analytics::gradient_check(seed, instances, step, Execution::default());
    let mut f = ctx.create("gradcheck.csv")?;
    writeln!(f, "instance,edges,max_rel_err")?;
    for (k, (n, e)) in rep.per_instance.iter().enumerate() {
        writeln!(f, "{},{},{}", k, n, sig6(*e))?;
    }
    f.flush()?;
    println!(
        "instances={} edges={} max_rel_err={}",
        instances,
        rep.edges,
        sig6(rep.max_rel_err)
    );
    Ok(ExitCode::SUCCESS)
}
