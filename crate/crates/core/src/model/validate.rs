use std::collections::{BTreeSet, HashMap};
use std::fmt;

use super::{Scenario, ScenarioDoc, Strategy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn error(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        }
    }

    fn warning(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.path, self.message)
    }
}

/// Structural checks on a raw document. Never fails; returns diagnostics.
pub fn validate_doc(doc: &ScenarioDoc) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let depth = doc.sub_models.len();
    if depth == 0 {
        out.push(Diagnostic::error(
            "sub_models",
            "at least one sub-model is required",
        ));
    }

    let indices: BTreeSet<usize> = doc.sub_models.iter().map(|s| s.index).collect();
    if indices.len() != depth || indices.iter().copied().ne(1..=depth) {
        out.push(Diagnostic::error(
            "sub_models",
            format!("indices must be exactly 1..={depth}"),
        ));
    }
    for (k, sm) in doc.sub_models.iter().enumerate() {
        if !(sm.alpha > 0.0 && sm.alpha.is_finite()) {
            out.push(Diagnostic::error(
                format!("sub_models[{k}].alpha"),
                "must be > 0",
            ));
        }
        if !(sm.beta_in > 0.0 && sm.beta_in.is_finite()) {
            out.push(Diagnostic::error(
                format!("sub_models[{k}].beta_in"),
                "must be > 0",
            ));
        }
        if sm.has_exit && sm.index == depth {
            out.push(Diagnostic::error(
                format!("sub_models[{k}].has_exit"),
                "the final sub-model cannot carry an exit branch",
            ));
        }
    }

    let mut layer_of: HashMap<u32, usize> = HashMap::new();
    for (k, n) in doc.nodes.iter().enumerate() {
        let path = format!("nodes[{k}]");
        if layer_of.insert(n.id, n.layer).is_some() {
            out.push(Diagnostic::error(
                &path,
                format!("duplicate node id {}", n.id),
            ));
        }
        if n.layer > depth {
            out.push(Diagnostic::error(
                format!("{path}.layer"),
                format!("layer {} exceeds depth {depth}", n.layer),
            ));
        }
        if n.layer == 0 {
            if !(n.arrival_rate >= 0.0 && n.arrival_rate.is_finite()) {
                out.push(Diagnostic::error(
                    format!("{path}.arrival_rate"),
                    "must be >= 0",
                ));
            }
            if n.mu != 0.0 {
                out.push(Diagnostic::error(
                    format!("{path}.mu"),
                    "end devices have no capacity",
                ));
            }
        } else {
            if !(n.mu > 0.0 && n.mu.is_finite()) {
                out.push(Diagnostic::error(format!("{path}.mu"), "must be > 0"));
            }
            if n.arrival_rate != 0.0 {
                out.push(Diagnostic::error(
                    format!("{path}.arrival_rate"),
                    "only end devices generate tasks",
                ));
            }
        }
        if n.modes.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            out.push(Diagnostic::error(
                format!("{path}.modes"),
                "modes must be > 0",
            ));
        }
    }
    for h in 0..=depth {
        if !doc.nodes.iter().any(|n| n.layer == h) {
            out.push(Diagnostic::error(
                "nodes",
                format!("layer {h} has no nodes"),
            ));
        }
    }

    let mut out_deg: HashMap<u32, usize> = HashMap::new();
    let mut in_deg: HashMap<u32, usize> = HashMap::new();
    let mut seen = BTreeSet::new();
    for (k, l) in doc.links.iter().enumerate() {
        let path = format!("links[{k}]");
        if !(l.rate > 0.0 && l.rate.is_finite()) {
            out.push(Diagnostic::error(format!("{path}.rate"), "must be > 0"));
        }
        if !seen.insert((l.from, l.to)) {
            out.push(Diagnostic::error(
                &path,
                format!("duplicate link {} -> {}", l.from, l.to),
            ));
        }
        match (layer_of.get(&l.from), layer_of.get(&l.to)) {
            (Some(&a), Some(&b)) => {
                if b != a + 1 {
                    out.push(Diagnostic::error(
                        &path,
                        format!(
                            "non-adjacent link {} -> {} (layer {a} -> layer {b})",
                            l.from, l.to
                        ),
                    ));
                }
            }
            (None, _) => out.push(Diagnostic::error(&path, format!("unknown node {}", l.from))),
            (_, None) => out.push(Diagnostic::error(&path, format!("unknown node {}", l.to))),
        }
        *out_deg.entry(l.from).or_default() += 1;
        *in_deg.entry(l.to).or_default() += 1;
    }
    for (k, n) in doc.nodes.iter().enumerate() {
        if n.layer < depth && out_deg.get(&n.id).copied().unwrap_or(0) == 0 {
            out.push(Diagnostic::error(
                format!("nodes[{k}]"),
                format!("node {} has no successor", n.id),
            ));
        }
        if n.layer >= 1 && in_deg.get(&n.id).copied().unwrap_or(0) == 0 {
            out.push(Diagnostic::error(
                format!("nodes[{k}]"),
                format!("node {} has no predecessor", n.id),
            ));
        }
    }

    let p = &doc.params;
    let range = |v: Option<f64>, ok: fn(f64) -> bool, name: &str, req: &str, out: &mut Vec<_>| {
        if let Some(x) = v {
            if !ok(x) {
                out.push(Diagnostic::error(
                    format!("params.{name}"),
                    format!("must be {req}"),
                ));
            }
        }
    };
    range(
        p.a,
        |x| (0.0..=1.0).contains(&x),
        "a",
        "in [0, 1]",
        &mut out,
    );
    range(p.k, |x| x > 0.0, "k", "> 0", &mut out);
    range(p.epsilon, |x| x > 0.0, "epsilon", "> 0", &mut out);
    range(
        p.tau_p,
        |x| x > 0.0 && x <= 1.0,
        "tau_p",
        "in (0, 1]",
        &mut out,
    );
    range(p.slot_seconds, |x| x > 0.0, "slot_seconds", "> 0", &mut out);
    range(
        p.config_phase_ms,
        |x| x >= 0.0,
        "config_phase_ms",
        ">= 0",
        &mut out,
    );
    range(
        p.comm_delay_ms,
        |x| x >= 0.0,
        "comm_delay_ms",
        ">= 0",
        &mut out,
    );
    range(
        p.init_threshold,
        |x| (0.0..=1.0).contains(&x),
        "init_threshold",
        "in [0, 1]",
        &mut out,
    );
    if p.m == Some(0) {
        out.push(Diagnostic::error("params.m", "must be >= 1"));
    }
    if p.n == Some(0) {
        out.push(Diagnostic::error("params.n", "must be >= 1"));
    }
    if p.tau_c == Some(0) {
        out.push(Diagnostic::error("params.tau_c", "must be >= 1"));
    }

    if doc.sub_models.iter().any(|s| s.has_exit) && doc.exit_table.is_none() {
        out.push(Diagnostic::error(
            "exit_table",
            "scenario has exit branches but no exit table",
        ));
    }
    out
}

/// Full diagnostics for a loaded scenario.
///
/// Adds non-fatal warnings for layers whose total inbound demand under the
/// given surviving ratios (`surviving[h]`, all ones if absent) exceeds the
/// layer's total capacity, the round budget check, and simplex violations in
/// `strategy` when one is supplied.
pub fn validate_scenario(
    s: &Scenario,
    strategy: Option<&Strategy>,
    surviving: Option<&[f64]>,
) -> Vec<Diagnostic> {
    let mut out = validate_doc(&s.to_doc());
    let topo = s.topology();
    let depth = s.depth();
    let ones = vec![1.0; depth + 1];
    let surviving = surviving.unwrap_or(&ones);
    let phi = s.total_arrival();
    let mut reach = 1.0;
    for h in 1..=depth {
        reach *= surviving[h - 1];
        let demand = phi * reach * s.alpha(h);
        let capacity: f64 = topo.layer_nodes(h).map(|j| s.mu(j)).sum();
        if demand > capacity {
            out.push(Diagnostic::warning(
                format!("layer {h}"),
                format!(
                    "layer {h} infeasible: demand {demand:.4} GFLOP/s exceeds capacity {capacity:.4} GFLOP/s"
                ),
            ));
        }
    }
    if !s.params.round_budget_ok() {
        out.push(Diagnostic::warning(
            "params.n",
            format!(
                "{} rounds x 2 hops x {} ms exceeds the {} ms configuration phase",
                s.params.n, s.params.comm_delay_ms, s.params.config_phase_ms
            ),
        ));
    }
    if let Some(p) = strategy {
        for (i, sum) in p.invalid_rows(1e-9) {
            out.push(Diagnostic::error(
                format!("strategy[{}]", topo.id(i)),
                format!("row sum ≠ 1 (got {sum})"),
            ));
        }
    }
    out
}
