//! Discrete-event simulation of the offloading phase.
//!
//! Devices emit Poisson task streams. Each task hops layer by layer: the
//! current strategy picks the receiver, the input crosses the link in
//! `beta / r` seconds, and the receiver serves `alpha` GFLOP in a
//! processor-sharing queue. At exit-branch layers the task may leave early.
//!
//! Every random quantity a task will ever need (routing, exit, correctness)
//! is drawn when it arrives, from its device's own stream. Runs that differ
//! only in strategy therefore see the same arrivals and the same per-task
//! draws.

mod dynamic;
mod queue;

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};

use crate::error::Result;
use crate::exit_profile::{BranchRecordSet, ExitTable};
use crate::model::{Scenario, Strategy, ThresholdSetting};

pub use dynamic::{
    dynamic_experiment, median, pooled_summary, sample_environments, write_groups_csv,
    write_slots_csv, write_summary_csv, AlgorithmSummary, DynamicOptions, DynamicReport,
    Environment, GroupReport, SlotReport, GROUP_SLOTS, SLOT_HEADER,
};
pub use queue::{ps_departures, queue_oracle, OracleResult, PsQueue};

/// How tasks decide to leave at exit branches.
#[derive(Clone, Debug, Default)]
pub enum ExitMode {
    /// Independent exit with probability `1 - I_h`; correctness drawn from
    /// the table's per-stage accuracy.
    #[default]
    Bernoulli,
    /// Each task replays a uniformly drawn validation sample.
    Replay(Arc<BranchRecordSet>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ServiceDist {
    /// Each task needs exactly `alpha` GFLOP.
    #[default]
    Deterministic,
    /// Exponential work with mean `alpha`.
    Exponential,
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub exit_mode: ExitMode,
    pub service: ServiceDist,
    /// Fraction of completions (in completion order) discarded before
    /// computing statistics.
    pub warmup_fraction: f64,
    pub keep_trace: bool,
    /// Seconds after the last arrival during which in-flight tasks may still
    /// finish.
    pub drain_limit: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            exit_mode: ExitMode::Bernoulli,
            service: ServiceDist::Deterministic,
            warmup_fraction: 0.1,
            keep_trace: false,
            drain_limit: 120.0,
        }
    }
}

/// One completed task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRecord {
    pub id: u64,
    pub device: u32,
    pub born: f64,
    pub done: f64,
    /// Sum of link transfer times along the task's path.
    pub transfer: f64,
    /// Stage the task left from: branch position, or the branch count for
    /// the final layer.
    pub stage: usize,
    pub correct: bool,
    pub phase: usize,
}

impl TaskRecord {
    pub fn delay(&self) -> f64 {
        self.done - self.born
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BranchCount {
    pub reached: u64,
    pub exited: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimReport {
    pub mean_delay: f64,
    pub p95_delay: f64,
    pub accuracy: f64,
    pub tasks: usize,
    pub warmup_discarded: usize,
    /// Tasks still in flight when the drain limit was hit.
    pub unfinished: usize,
    /// Admitted compute per second per node (GFLOP/s).
    pub node_load: Vec<f64>,
    /// `node_load / mu` per node; zero on devices.
    pub utilization: Vec<f64>,
    pub util_max: f64,
    pub saturated: bool,
    pub exits: Vec<BranchCount>,
    pub trace: Option<Vec<TaskRecord>>,
}

/// Routing and exit configuration in force from `apply_at` on, under the
/// environment that starts at `start`.
#[derive(Clone, Debug)]
pub(crate) struct Phase {
    pub start: f64,
    pub arrival: Vec<f64>,
    pub mu: Vec<f64>,
    pub apply_at: f64,
    pub strategy: Strategy,
    pub surviving: Vec<f64>,
    pub stage_acc: Vec<f64>,
    pub c_values: Vec<f64>,
}

impl Phase {
    pub fn new(
        s: &Scenario,
        table: &ExitTable,
        start: f64,
        apply_at: f64,
        strategy: Strategy,
        c: &ThresholdSetting,
    ) -> Result<Self> {
        let topo = s.topology();
        Ok(Self {
            start,
            arrival: (0..topo.node_count()).map(|k| s.arrival_rate(k)).collect(),
            mu: (0..topo.node_count()).map(|k| s.mu(k)).collect(),
            apply_at,
            strategy,
            surviving: table.surviving_by_layer(c, s.depth())?,
            stage_acc: table.stage_accuracy(c)?,
            c_values: table.values(c),
        })
    }
}

pub(crate) struct RunOutput {
    pub tasks: Vec<TaskRecord>,
    /// Admitted work per phase (environment) per node.
    pub work: Vec<Vec<f64>>,
    pub exits: Vec<BranchCount>,
    pub unfinished: usize,
}

const PURPOSE_TASKS: u64 = 1;
pub(crate) const PURPOSE_ENV: u64 = 2;

/// Independent stream for `(seed, id, purpose)`.
pub(crate) fn substream(seed: u64, id: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((id << 8) | purpose);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    SlotBoundary(usize),
    ConfigApply(usize),
    Departure { node: usize, version: u64 },
    Transfer { node: usize },
    Arrival { device: usize },
}

impl Kind {
    fn rank(&self) -> u8 {
        match self {
            Kind::SlotBoundary(_) => 0,
            Kind::ConfigApply(_) => 1,
            Kind::Departure { .. } => 2,
            Kind::Transfer { .. } => 3,
            Kind::Arrival { .. } => 4,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    task: u64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then(self.task.cmp(&other.task))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Task {
    device: usize,
    born: f64,
    phase: usize,
    transfer: f64,
    route: Vec<f64>,
    exit: Vec<f64>,
    correct: f64,
    record: f64,
    work: Vec<f64>,
}

struct Engine<'a> {
    s: &'a Scenario,
    phases: &'a [Phase],
    opts: &'a SimOptions,
    horizon: f64,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    queues: Vec<Option<PsQueue>>,
    rngs: Vec<Option<ChaCha8Rng>>,
    tasks: HashMap<u64, Task>,
    next_id: u64,
    env: usize,
    plan: usize,
    out: RunOutput,
    branch_of_layer: Vec<Option<usize>>,
}

impl<'a> Engine<'a> {
    fn push(&mut self, time: f64, task: u64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Reverse(Event {
            time,
            task,
            seq: self.seq,
            kind,
        }));
    }

    fn phase_at(&self, t: f64) -> usize {
        self.phases
            .partition_point(|p| p.start <= t)
            .saturating_sub(1)
    }

    /// Next Poisson arrival of `device` strictly after `from`, honoring the
    /// per-phase rates; `None` past the horizon.
    fn next_arrival(&mut self, device: usize, mut from: f64) -> Option<f64> {
        loop {
            let k = self.phase_at(from);
            let end = self
                .phases
                .get(k + 1)
                .map_or(self.horizon, |p| p.start)
                .min(self.horizon);
            let rate = self.phases[k].arrival[device];
            if rate > 0.0 {
                let exp = Exp::new(rate).expect("positive rate");
                let t = from + exp.sample(self.rngs[device].as_mut().expect("device stream"));
                if t < end {
                    return Some(t);
                }
            }
            if end >= self.horizon {
                return None;
            }
            from = end;
        }
    }

    fn schedule_departure(&mut self, node: usize) {
        let q = self.queues[node].as_ref().expect("server queue");
        if let Some((t, task)) = q.next_departure() {
            let version = q.version;
            self.push(t, task, Kind::Departure { node, version });
        }
    }

    fn spawn(&mut self, device: usize, now: f64, fixed: bool) {
        let depth = self.s.depth();
        let branches = self.branch_of_layer.iter().flatten().count();
        let rng = self.rngs[device].as_mut().expect("device stream");
        let route: Vec<f64> = (0..depth).map(|_| rng.random()).collect();
        let exit: Vec<f64> = (0..branches).map(|_| rng.random()).collect();
        let correct: f64 = rng.random();
        let record: f64 = rng.random();
        let work: Vec<f64> = match self.opts.service {
            ServiceDist::Deterministic => vec![1.0; depth],
            ServiceDist::Exponential => (0..depth).map(|_| Exp1.sample(rng)).collect(),
        };
        let id = self.next_id;
        self.next_id += 1;
        self.tasks.insert(
            id,
            Task {
                device,
                born: now,
                phase: self.env,
                transfer: 0.0,
                route,
                exit,
                correct,
                record,
                work,
            },
        );
        self.forward(id, device, now);
        if !fixed {
            if let Some(t) = self.next_arrival(device, now) {
                self.push(t, 0, Kind::Arrival { device });
            }
        }
    }

    /// Sends task `id`, currently at `node`, to a successor.
    fn forward(&mut self, id: u64, node: usize, now: f64) {
        let topo = self.s.topology();
        let h = topo.layer(node);
        let task = self.tasks.get_mut(&id).expect("live task");
        let row = self.phases[self.plan].strategy.row(node);
        let u = task.route[h];
        let mut acc = 0.0;
        let mut pick = row.len() - 1;
        for (k, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = k;
                break;
            }
        }
        let e = topo.out_edges(node).start + pick;
        let dt = self.s.beta(h + 1) / self.s.rate(e);
        task.transfer += dt;
        self.push(
            now + dt,
            id,
            Kind::Transfer {
                node: topo.edge_to(e),
            },
        );
    }

    fn finish(&mut self, id: u64, now: f64, stage: usize) {
        let task = self.tasks.remove(&id).expect("live task");
        let correct = match &self.opts.exit_mode {
            ExitMode::Bernoulli => task.correct < self.phases[self.plan].stage_acc[stage],
            ExitMode::Replay(rs) => {
                let sample = &rs.samples[sample_index(task.record, rs.samples.len())];
                if stage < sample.branch_correct.len() {
                    sample.branch_correct[stage]
                } else {
                    sample.final_correct
                }
            }
        };
        self.out.tasks.push(TaskRecord {
            id,
            device: self.s.topology().id(task.device),
            born: task.born,
            done: now,
            transfer: task.transfer,
            stage,
            correct,
            phase: task.phase,
        });
    }

    fn served(&mut self, id: u64, node: usize, now: f64) {
        let h = self.s.topology().layer(node);
        if h == self.s.depth() {
            let stage = self.out.exits.len();
            self.finish(id, now, stage);
            return;
        }
        if let Some(b) = self.branch_of_layer[h] {
            self.out.exits[b].reached += 1;
            let plan = &self.phases[self.plan];
            let task = &self.tasks[&id];
            let leaves = match &self.opts.exit_mode {
                ExitMode::Bernoulli => task.exit[b] < 1.0 - plan.surviving[h],
                ExitMode::Replay(rs) => {
                    let sample = &rs.samples[sample_index(task.record, rs.samples.len())];
                    sample.confidence[b] >= plan.c_values[b]
                }
            };
            if leaves {
                self.out.exits[b].exited += 1;
                self.finish(id, now, b);
                return;
            }
        }
        self.forward(id, node, now);
    }

    fn run(&mut self, fixed: Option<&[(usize, f64)]>) {
        match fixed {
            Some(list) => {
                for &(device, t) in list {
                    self.push(t, 0, Kind::Arrival { device });
                }
            }
            None => {
                for d in self.s.topology().layer_nodes(0) {
                    if let Some(t) = self.next_arrival(d, 0.0) {
                        self.push(t, 0, Kind::Arrival { device: d });
                    }
                }
            }
        }
        for k in 1..self.phases.len() {
            self.push(self.phases[k].start, 0, Kind::SlotBoundary(k));
            self.push(self.phases[k].apply_at, 0, Kind::ConfigApply(k));
        }
        let limit = self.horizon + self.opts.drain_limit;
        while let Some(Reverse(ev)) = self.heap.pop() {
            let now = ev.time;
            if now > limit {
                break;
            }
            match ev.kind {
                Kind::SlotBoundary(k) => {
                    self.env = k;
                    for j in self.s.topology().layer_nodes(1).start..self.queues.len() {
                        let mu = self.phases[k].mu[j];
                        let q = self.queues[j].as_mut().expect("server queue");
                        if q.mu() != mu {
                            q.set_mu(now, mu);
                            self.schedule_departure(j);
                        }
                    }
                }
                Kind::ConfigApply(k) => self.plan = k,
                Kind::Arrival { device } => self.spawn(device, now, fixed.is_some()),
                Kind::Transfer { node } => {
                    let h = self.s.topology().layer(node);
                    let w = self.s.alpha(h) * self.tasks[&ev.task].work[h - 1];
                    self.out.work[self.env][node] += w;
                    self.queues[node]
                        .as_mut()
                        .expect("server queue")
                        .arrive(now, ev.task, w);
                    self.schedule_departure(node);
                }
                Kind::Departure { node, version } => {
                    let q = self.queues[node].as_mut().expect("server queue");
                    if q.version != version {
                        continue;
                    }
                    let id = q.depart(now);
                    self.schedule_departure(node);
                    self.served(id, node, now);
                }
            }
        }
        self.out.unfinished = self.tasks.len();
    }
}

fn sample_index(u: f64, n: usize) -> usize {
    ((u * n as f64) as usize).min(n - 1)
}

/// Runs the event loop over `phases`; arrivals stop at `horizon`.
pub(crate) fn simulate(
    s: &Scenario,
    phases: &[Phase],
    horizon: f64,
    seed: u64,
    opts: &SimOptions,
    fixed: Option<&[(usize, f64)]>,
) -> RunOutput {
    let topo = s.topology();
    let n = topo.node_count();
    let mut branch_of_layer = vec![None; s.depth() + 1];
    for (b, &h) in s.branch_layers().iter().enumerate() {
        branch_of_layer[h] = Some(b);
    }
    let devices = topo.layer_nodes(0);
    let mut engine = Engine {
        s,
        phases,
        opts,
        horizon,
        heap: BinaryHeap::new(),
        seq: 0,
        queues: (0..n)
            .map(|k| (!devices.contains(&k)).then(|| PsQueue::new(phases[0].mu[k])))
            .collect(),
        rngs: (0..n)
            .map(|k| {
                devices
                    .contains(&k)
                    .then(|| substream(seed, topo.id(k) as u64, PURPOSE_TASKS))
            })
            .collect(),
        tasks: HashMap::new(),
        next_id: 0,
        env: 0,
        plan: 0,
        out: RunOutput {
            tasks: Vec::new(),
            work: vec![vec![0.0; n]; phases.len()],
            exits: vec![BranchCount::default(); s.branch_layers().len()],
            unfinished: 0,
        },
        branch_of_layer,
    };
    engine.run(fixed);
    engine.out
}

fn check_alignment(s: &Scenario, table: &ExitTable) -> Result<()> {
    if table.branches() != s.branch_layers() {
        return Err(crate::Error::TableMismatch(format!(
            "table branches {:?}, scenario branches {:?}",
            table.branches(),
            s.branch_layers()
        )));
    }
    Ok(())
}

/// Static run of `duration` seconds under one strategy and threshold
/// setting.
pub fn run_simulation(
    s: &Scenario,
    p: &Strategy,
    c: &ThresholdSetting,
    table: &ExitTable,
    duration: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimReport> {
    check_alignment(s, table)?;
    let phases = [Phase::new(s, table, 0.0, 0.0, p.clone(), c)?];
    let out = simulate(s, &phases, duration, seed, opts, None);
    Ok(report(s, out, duration, opts))
}

/// Runs the given `(device node, time)` arrivals only.
pub fn run_arrivals(
    s: &Scenario,
    p: &Strategy,
    c: &ThresholdSetting,
    table: &ExitTable,
    arrivals: &[(usize, f64)],
    seed: u64,
    opts: &SimOptions,
) -> Result<SimReport> {
    check_alignment(s, table)?;
    let horizon = arrivals.iter().map(|a| a.1).fold(0.0, f64::max);
    let phases = [Phase::new(s, table, 0.0, 0.0, p.clone(), c)?];
    let out = simulate(s, &phases, horizon, seed, opts, Some(arrivals));
    Ok(report(s, out, horizon.max(f64::MIN_POSITIVE), opts))
}

pub(crate) struct Stats {
    pub mean: f64,
    pub p95: f64,
    pub accuracy: f64,
}

pub(crate) fn stats<'t>(tasks: impl Iterator<Item = &'t TaskRecord>) -> Stats {
    let mut delays = Vec::new();
    let mut correct = 0usize;
    for t in tasks {
        delays.push(t.delay());
        correct += usize::from(t.correct);
    }
    if delays.is_empty() {
        return Stats {
            mean: 0.0,
            p95: 0.0,
            accuracy: 0.0,
        };
    }
    let n = delays.len();
    let mean = delays.iter().sum::<f64>() / n as f64;
    delays.sort_by(f64::total_cmp);
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Stats {
        mean,
        p95: delays[rank - 1],
        accuracy: correct as f64 / n as f64,
    }
}

fn report(s: &Scenario, mut out: RunOutput, duration: f64, opts: &SimOptions) -> SimReport {
    out.tasks
        .sort_by(|a, b| a.done.total_cmp(&b.done).then(a.id.cmp(&b.id)));
    let skip = (out.tasks.len() as f64 * opts.warmup_fraction).floor() as usize;
    let kept = &out.tasks[skip..];
    let st = stats(kept.iter());
    let topo = s.topology();
    let node_load: Vec<f64> = out.work[0].iter().map(|w| w / duration).collect();
    let utilization: Vec<f64> = (0..topo.node_count())
        .map(|k| {
            if topo.layer(k) == 0 {
                0.0
            } else {
                node_load[k] / s.mu(k)
            }
        })
        .collect();
    let util_max = utilization.iter().copied().fold(0.0, f64::max);
    SimReport {
        mean_delay: st.mean,
        p95_delay: st.p95,
        accuracy: st.accuracy,
        tasks: kept.len(),
        warmup_discarded: skip,
        unfinished: out.unfinished,
        node_load,
        utilization,
        util_max,
        saturated: util_max > 1.0 || out.unfinished > 0,
        exits: out.exits,
        trace: opts.keep_trace.then(|| kept.to_vec()),
    }
}

/// Writes a per-task trace.
pub fn write_trace_csv<W: std::io::Write>(tasks: &[TaskRecord], mut w: W) -> std::io::Result<()> {
    use crate::fmt::sig6;
    writeln!(
        w,
        "task,device,born,done,delay_ms,transfer_ms,stage,correct"
    )?;
    for t in tasks {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            t.id,
            t.device,
            sig6(t.born),
            sig6(t.done),
            sig6(t.delay() * 1e3),
            sig6(t.transfer * 1e3),
            t.stage,
            u8::from(t.correct)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::tests::{link, node, scenario, sub};

    fn none() -> ThresholdSetting {
        ThresholdSetting::new(vec![])
    }

    #[test]
    fn lone_task_has_no_contention() {
        let s = scenario(
            vec![sub(1, 2.0, 0.5), sub(2, 1.0, 0.2)],
            vec![
                node(0, 0, 0.0, 1.0),
                node(1, 1, 10.0, 0.0),
                node(2, 2, 4.0, 0.0),
            ],
            vec![link(0, 1, 5.0), link(1, 2, 2.0)],
        );
        let opts = SimOptions {
            warmup_fraction: 0.0,
            keep_trace: true,
            ..SimOptions::default()
        };
        let r = run_arrivals(
            &s,
            &Strategy::uniform(&s),
            &none(),
            &ExitTable::branchless(1.0),
            &[(0, 1.0)],
            3,
            &opts,
        )
        .unwrap();
        let want = 0.5 / 5.0 + 0.2 / 2.0 + 2.0 / 10.0 + 1.0 / 4.0;
        assert_eq!(r.tasks, 1);
        assert!((r.mean_delay - want).abs() < 1e-12, "{}", r.mean_delay);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = scenario(
            vec![sub(1, 1.0, 0.1)],
            vec![
                node(0, 0, 0.0, 3.0),
                node(1, 1, 10.0, 0.0),
                node(2, 1, 10.0, 0.0),
            ],
            vec![link(0, 1, 2.0), link(0, 2, 2.0)],
        );
        let p = Strategy::uniform(&s);
        let t = ExitTable::branchless(1.0);
        let a = run_simulation(&s, &p, &none(), &t, 200.0, 5, &SimOptions::default()).unwrap();
        let b = run_simulation(&s, &p, &none(), &t, 200.0, 5, &SimOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.tasks > 400);
    }

    #[test]
    fn events_order_by_rank_on_ties() {
        let mk = |kind| Event {
            time: 1.0,
            task: 0,
            seq: 0,
            kind,
        };
        assert!(mk(Kind::SlotBoundary(1)) < mk(Kind::ConfigApply(1)));
        assert!(
            mk(Kind::Departure {
                node: 0,
                version: 0
            }) < mk(Kind::Transfer { node: 0 })
        );
        assert!(mk(Kind::Transfer { node: 0 }) < mk(Kind::Arrival { device: 0 }));
    }
}
