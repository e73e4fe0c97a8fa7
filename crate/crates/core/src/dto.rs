//! Synchronous message-passing optimizer for offloading probabilities and
//! exit thresholds.
//!
//! Each round, offloaders announce the compute they will push to each
//! receiver (request messages) and receivers answer with their load,
//! capacity, and downstream marginal cost (status messages). Each offloader
//! then shifts a fraction `tau_p` of its probability mass onto the successor
//! with the smallest repulsive factor. Every `m` rounds the nodes of one
//! layer evaluate moving that layer's exit threshold by one grid step and
//! apply the move if it lowers the utility.

use std::io::Write;

use log::warn;

use crate::analytics::{self, FlowState, GradientField};
use crate::error::Result;
use crate::exit_profile::ExitTable;
use crate::fmt::sig6;
use crate::model::{Scenario, Strategy, ThresholdSetting};

/// Offloader `from` -> receiver `to`: compute to be pushed (GFLOP/s).
#[derive(Clone, Debug, PartialEq)]
pub struct RurMessage {
    pub from: usize,
    pub to: usize,
    pub xi: f64,
    pub thresholds: ThresholdSetting,
}

/// Receiver `from` -> offloader `to`: load, capacity, downstream marginal.
#[derive(Clone, Debug, PartialEq)]
pub struct RusMessage {
    pub from: usize,
    pub to: usize,
    pub lambda: f64,
    pub mu: f64,
    pub omega: f64,
    pub thresholds: ThresholdSetting,
}

/// How one round orders message exchange.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Superstep {
    /// Requests sweep layer 0 to `H`, then status messages sweep back, so
    /// every offloader acts on loads and marginals of the current strategy.
    #[default]
    Cascade,
    /// All requests, then all status messages, each built from what the
    /// sender knew at the start of the round (one-hop staleness).
    Lockstep,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ThresholdMode {
    #[default]
    Adaptive,
    Frozen,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DtoOptions {
    pub superstep: Superstep,
    pub thresholds: ThresholdMode,
    /// Stop once no probability moves by more than this much in a round.
    pub early_stop: Option<f64>,
}

/// Receiver-side result of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverOutput {
    pub lambda: f64,
    pub phi: f64,
    pub thresholds: ThresholdSetting,
    pub rus: Vec<RusMessage>,
}

/// Sums inbound requests and answers every predecessor.
///
/// `inbound` must hold exactly one request per predecessor, in predecessor
/// order; anything else is a protocol fault.
pub fn receiver_round(
    s: &Scenario,
    j: usize,
    inbound: &[RurMessage],
    omega: f64,
) -> ReceiverOutput {
    let topo = s.topology();
    let preds = topo.in_edges(j);
    assert_eq!(
        inbound.len(),
        preds.len(),
        "node {} expected {} requests, got {}",
        topo.id(j),
        preds.len(),
        inbound.len()
    );
    let lambda: f64 = inbound.iter().map(|m| m.xi).sum();
    let thresholds = inbound[0].thresholds.clone();
    let mu = s.mu(j);
    let rus = preds
        .iter()
        .map(|&e| RusMessage {
            from: j,
            to: topo.edge_from(e),
            lambda,
            mu,
            omega,
            thresholds: thresholds.clone(),
        })
        .collect();
    ReceiverOutput {
        lambda,
        phi: lambda / s.alpha(topo.layer(j)),
        thresholds,
        rus,
    }
}

/// Offloader-side result of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct OffloaderOutput {
    pub row: Vec<f64>,
    pub delta: Vec<f64>,
    /// Marginal cost of one more task arriving at this node, under the row
    /// in force when the status messages were produced.
    pub omega: f64,
    pub rur: Vec<RurMessage>,
}

/// Computes repulsive factors from status messages (one per successor, in
/// successor order), updates the row, and emits next-round requests.
#[allow(clippy::too_many_arguments)]
pub fn offloader_round(
    s: &Scenario,
    i: usize,
    phi: f64,
    surviving: f64,
    row: &[f64],
    inbound: &[RusMessage],
    total: f64,
    thresholds: &ThresholdSetting,
) -> OffloaderOutput {
    let topo = s.topology();
    let edges = topo.out_edges(i);
    assert_eq!(
        inbound.len(),
        edges.len(),
        "node {} missing status messages",
        topo.id(i)
    );
    let h = topo.layer(i) + 1;
    let (alpha, beta) = (s.alpha(h), s.beta(h));
    let delta: Vec<f64> = edges
        .clone()
        .zip(inbound)
        .map(|(e, m)| {
            analytics::repulsive_factor(
                alpha,
                m.mu,
                m.lambda,
                beta,
                s.rate(e),
                m.omega,
                total,
                s.params.k,
                s.params.epsilon,
            )
        })
        .collect();
    let omega = row.iter().zip(&delta).map(|(p, d)| p * surviving * d).sum();
    let next = descent_step(row, &delta, s.params.tau_p);
    let rur = edges
        .zip(&next)
        .map(|(e, &p)| RurMessage {
            from: i,
            to: topo.edge_to(e),
            xi: p * phi * surviving * alpha,
            thresholds: thresholds.clone(),
        })
        .collect();
    OffloaderOutput {
        row: next,
        delta,
        omega,
        rur,
    }
}

/// Moves a fraction `tau` of every non-minimal entry onto the entry with the
/// smallest repulsive factor (lowest position on ties).
///
/// A row whose factors are all equal to within 1e-12 relative is stationary.
pub fn descent_step(row: &[f64], delta: &[f64], tau: f64) -> Vec<f64> {
    let (lo, hi) = delta
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| {
            (a.min(d), b.max(d))
        });
    let scale = lo.abs().max(hi.abs()).max(1.0);
    if hi - lo <= 1e-12 * scale {
        return row.to_vec();
    }
    let best = delta.iter().position(|&d| d == lo).expect("non-empty row");
    let mut out = row.to_vec();
    let mut freed = 0.0;
    for (k, p) in out.iter_mut().enumerate() {
        if k != best {
            let moved = tau * *p;
            *p -= moved;
            freed += moved;
        }
    }
    out[best] += freed;
    out
}

/// One row of the optimizer trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub r: f64,
    pub t: f64,
    pub n: f64,
    pub u: f64,
    /// Threshold value per exit branch (ascending layer).
    pub c: Vec<f64>,
}

pub fn write_trace_csv<W: Write>(
    rows: &[TraceRow],
    branch_layers: &[usize],
    mut w: W,
) -> std::io::Result<()> {
    write!(w, "round,R,T,N,U")?;
    for h in branch_layers {
        write!(w, ",c_{h}")?;
    }
    writeln!(w)?;
    for row in rows {
        write!(
            w,
            "{},{},{},{},{}",
            row.round,
            sig6(row.r),
            sig6(row.t),
            sig6(row.n),
            sig6(row.u)
        )?;
        for &c in &row.c {
            write!(w, ",{}", sig6(c))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Objective terms and utility of `(p, c)`, labelled as round `round`.
/// With flat accuracy bounds the utility falls back to `a * T`.
pub fn evaluate(
    s: &Scenario,
    table: &ExitTable,
    p: &Strategy,
    c: &ThresholdSetting,
    round: usize,
) -> Result<TraceRow> {
    let surviving = table.surviving_by_layer(c, s.depth())?;
    let o = analytics::objective(s, p, &surviving);
    let acc = table.accuracy(c)?;
    let (a_min, a_max) = table.accuracy_bounds();
    let a = s.params.a;
    let u = analytics::utility_u(o.t, acc, a_min, a_max, a).unwrap_or(a * o.t);
    Ok(TraceRow {
        round,
        r: o.r,
        t: o.t,
        n: o.n,
        u,
        c: table.values(c),
    })
}

/// Result of a configuration phase.
#[derive(Clone, Debug, PartialEq)]
pub struct DtoOutcome {
    pub strategy: Strategy,
    pub thresholds: ThresholdSetting,
    /// Entry `t` describes the state after `t` rounds.
    pub trace: Vec<TraceRow>,
}

/// Per-round protocol state.
pub struct RoundState<'a> {
    s: &'a Scenario,
    table: &'a ExitTable,
    opts: DtoOptions,
    pub t: usize,
    pub strategy: Strategy,
    pub thresholds: ThresholdSetting,
    surviving: Vec<f64>,
    /// Arrival rate each node currently believes it receives.
    phi: Vec<f64>,
    /// Load each receiver last computed from its requests.
    lambda: Vec<f64>,
    /// Marginal each node last computed as an offloader.
    omega: Vec<f64>,
    /// Requests delivered in the most recent round.
    pub last_requests: Vec<RurMessage>,
    pub trace: Vec<TraceRow>,
}

impl<'a> RoundState<'a> {
    pub fn new(
        s: &'a Scenario,
        table: &'a ExitTable,
        strategy: Strategy,
        thresholds: ThresholdSetting,
        opts: DtoOptions,
    ) -> Result<Self> {
        let surviving = table.surviving_by_layer(&thresholds, s.depth())?;
        let flow = analytics::propagate_flows(s, &strategy, &surviving);
        let g = analytics::compute_gradients_with(s, &strategy, &surviving, &flow);
        let mut st = Self {
            s,
            table,
            opts,
            t: 0,
            strategy,
            thresholds,
            surviving,
            phi: flow.phi,
            lambda: flow.lambda,
            omega: g.omega,
            last_requests: Vec::new(),
            trace: Vec::new(),
        };
        st.record()?;
        Ok(st)
    }

    fn record(&mut self) -> Result<()> {
        let row = evaluate(self.s, self.table, &self.strategy, &self.thresholds, self.t)?;
        self.trace.push(row);
        Ok(())
    }

    /// Executes one round; returns the largest probability change.
    pub fn round(&mut self) -> Result<f64> {
        let before = self.strategy.clone();
        match self.opts.superstep {
            Superstep::Cascade => self.cascade(),
            Superstep::Lockstep => self.lockstep(),
        }
        if self.opts.thresholds == ThresholdMode::Adaptive && self.t.is_multiple_of(self.s.params.m)
        {
            let h = (self.t / self.s.params.m) % self.s.depth();
            self.threshold_round(h)?;
        }
        self.t += 1;
        self.record()?;
        Ok(self.strategy.max_change(&before))
    }

    fn requests_from(&self, i: usize) -> Vec<RurMessage> {
        let topo = self.s.topology();
        let h = topo.layer(i);
        let alpha = self.s.alpha(h + 1);
        topo.out_edges(i)
            .map(|e| RurMessage {
                from: i,
                to: topo.edge_to(e),
                xi: self.strategy.get(e) * self.phi[i] * self.surviving[h] * alpha,
                thresholds: self.thresholds.clone(),
            })
            .collect()
    }

    fn deliver_requests(
        &mut self,
        senders: std::ops::Range<usize>,
        receivers: std::ops::Range<usize>,
    ) {
        let topo = self.s.topology();
        let mut inbox: Vec<Vec<RurMessage>> = vec![Vec::new(); topo.node_count()];
        for i in senders {
            for m in self.requests_from(i) {
                inbox[m.to].push(m);
            }
        }
        for j in receivers {
            let out = receiver_round(self.s, j, &inbox[j], self.omega[j]);
            self.lambda[j] = out.lambda;
            self.phi[j] = out.phi;
        }
        self.last_requests.extend(inbox.into_iter().flatten());
    }

    fn status_for(&self, i: usize) -> Vec<RusMessage> {
        let topo = self.s.topology();
        topo.successors(i)
            .map(|j| RusMessage {
                from: j,
                to: i,
                lambda: self.lambda[j],
                mu: self.s.mu(j),
                omega: self.omega[j],
                thresholds: self.thresholds.clone(),
            })
            .collect()
    }

    fn update_offloaders(&mut self, nodes: std::ops::Range<usize>) {
        let total = self.s.total_arrival();
        let topo = self.s.topology();
        let mut omegas = Vec::with_capacity(nodes.len());
        for i in nodes.clone() {
            let inbound = self.status_for(i);
            let h = topo.layer(i);
            let out = offloader_round(
                self.s,
                i,
                self.phi[i],
                self.surviving[h],
                self.strategy.row(i),
                &inbound,
                total,
                &self.thresholds,
            );
            self.strategy.row_mut(i).copy_from_slice(&out.row);
            omegas.push(out.omega);
        }
        for (i, om) in nodes.zip(omegas) {
            self.omega[i] = om;
        }
    }

    fn cascade(&mut self) {
        let topo = self.s.topology();
        let depth = self.s.depth();
        self.last_requests.clear();
        for h in 0..depth {
            self.deliver_requests(topo.layer_nodes(h), topo.layer_nodes(h + 1));
        }
        for h in (0..depth).rev() {
            self.update_offloaders(topo.layer_nodes(h));
        }
    }

    fn lockstep(&mut self) {
        let topo = self.s.topology();
        self.last_requests.clear();
        // every request is built from beliefs held at the start of the round
        let offloaders = self.s.offloaders();
        let receivers = topo.layer_nodes(1).start..topo.node_count();
        self.deliver_requests(offloaders.clone(), receivers);
        self.update_offloaders(offloaders);
    }

    /// Threshold step for layer `h` using the current round's loads and
    /// marginals.
    pub fn threshold_round(&mut self, h: usize) -> Result<()> {
        let flow = FlowState {
            phi: self.phi.clone(),
            lambda: self.lambda.clone(),
            edge_flow: Vec::new(),
            total: self.s.total_arrival(),
        };
        if let Some(c) =
            threshold_move(self.s, self.table, &self.thresholds, &flow, &self.omega, h)?
        {
            self.thresholds = c;
            self.surviving = self
                .table
                .surviving_by_layer(&self.thresholds, self.s.depth())?;
        }
        Ok(())
    }

    pub fn finish(self) -> DtoOutcome {
        DtoOutcome {
            strategy: self.strategy,
            thresholds: self.thresholds,
            trace: self.trace,
        }
    }
}

/// Evaluates moving the threshold at layer `h` one step either way and
/// returns the better setting if it lowers the utility. Decreases win ties.
/// Layers without a branch, or whose branch passes no flow, never move.
pub fn threshold_move(
    s: &Scenario,
    table: &ExitTable,
    current: &ThresholdSetting,
    flow: &FlowState,
    omega: &[f64],
    h: usize,
) -> Result<Option<ThresholdSetting>> {
    let Some(b) = table.branch_index(h) else {
        return Ok(None);
    };
    let surviving = table.surviving_by_layer(current, s.depth())?;
    if surviving[h] <= 0.0 {
        warn!("skipping threshold step at layer {h}: no surviving flow");
        return Ok(None);
    }
    let g = GradientField {
        delta: Vec::new(),
        omega: omega.to_vec(),
        grad: Vec::new(),
    };
    let (a_min, a_max) = table.accuracy_bounds();
    let span = a_max - a_min;
    let acc = table.accuracy(current)?;
    let k = current.idx[b];
    let top = table.grid(b).len() - 1;
    let tau = s.params.tau_c;
    let mut best: Option<(f64, ThresholdSetting)> = None;
    for k2 in [k.saturating_sub(tau), (k + tau).min(top)] {
        if k2 == k {
            continue;
        }
        let mut c = current.clone();
        c.idx[b] = k2;
        let (a2, i2) = table.query(&c)?;
        let d_acc = if span > 0.0 { (a2 - acc) / span } else { 0.0 };
        let imp =
            analytics::threshold_impact_with(s, &surviving, flow, &g, h, i2[b], d_acc, s.params.a)?;
        if best.as_ref().is_none_or(|(u, _)| imp.utility_change < *u) {
            best = Some((imp.utility_change, c));
        }
    }
    Ok(best.filter(|(du, _)| *du < 0.0).map(|(_, c)| c))
}

/// Runs the threshold schedule of an `n`-round phase against a strategy
/// produced by `plan`, re-planning whenever the thresholds move.
pub fn threshold_schedule(
    s: &Scenario,
    table: &ExitTable,
    init_c: ThresholdSetting,
    mut plan: impl FnMut(&ThresholdSetting) -> Result<Strategy>,
) -> Result<(Strategy, ThresholdSetting)> {
    let mut c = init_c;
    let mut p = plan(&c)?;
    for t in (0..s.params.n).step_by(s.params.m) {
        let h = (t / s.params.m) % s.depth();
        if table.branch_index(h).is_none() {
            continue;
        }
        let surviving = table.surviving_by_layer(&c, s.depth())?;
        let flow = analytics::propagate_flows(s, &p, &surviving);
        let g = analytics::compute_gradients_with(s, &p, &surviving, &flow);
        if let Some(next) = threshold_move(s, table, &c, &flow, &g.omega, h)? {
            c = next;
            p = plan(&c)?;
        }
    }
    Ok((p, c))
}

/// Thresholds a run starts from: `init_threshold` on every branch if set,
/// otherwise each grid maximum.
pub fn initial_thresholds(s: &Scenario, table: &ExitTable) -> Result<ThresholdSetting> {
    match s.params.init_threshold {
        Some(c) => table.uniform_setting(c),
        None => Ok(table.max_setting()),
    }
}

/// Runs `n` rounds from the given starting point.
pub fn run_config_phase(
    s: &Scenario,
    table: &ExitTable,
    init_p: Strategy,
    init_c: ThresholdSetting,
    opts: DtoOptions,
) -> Result<DtoOutcome> {
    let mut st = RoundState::new(s, table, init_p, init_c, opts)?;
    for _ in 0..s.params.n {
        let change = st.round()?;
        if opts.early_stop.is_some_and(|tol| change < tol) {
            break;
        }
    }
    Ok(st.finish())
}
