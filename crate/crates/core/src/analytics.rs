//! Analytic delay model: flow propagation, queueing and transmission delays,
//! the penalized objective, the utility, and exact gradients.
//!
//! Surviving ratios are passed per layer as `surviving[h]` for `h` in
//! `0..=H`; layers without an exit branch carry 1.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{Scenario, Strategy};

/// Per-node arrival rates and loads for one strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    /// Task arrival rate `phi_j` per node (tasks/s); device rates at layer 0.
    pub phi: Vec<f64>,
    /// Compute load `lambda_j = phi_j * alpha_h` (GFLOP/s); zero on devices.
    pub lambda: Vec<f64>,
    /// Task flow on each edge `p * phi_i * I_h` (tasks/s).
    pub edge_flow: Vec<f64>,
    /// Total device arrival rate.
    pub total: f64,
}

impl FlowState {
    pub fn write_csv<W: Write>(&self, s: &Scenario, mut w: W) -> std::io::Result<()> {
        let topo = s.topology();
        writeln!(w, "node,layer,phi,lambda,mu")?;
        for k in 0..topo.node_count() {
            writeln!(
                w,
                "{},{},{},{},{}",
                topo.id(k),
                topo.layer(k),
                crate::fmt::sig6(self.phi[k]),
                crate::fmt::sig6(self.lambda[k]),
                crate::fmt::sig6(s.mu(k))
            )?;
        }
        Ok(())
    }
}

/// Forward pass from the devices to layer `H`.
pub fn propagate_flows(s: &Scenario, p: &Strategy, surviving: &[f64]) -> FlowState {
    let topo = s.topology();
    let n = topo.node_count();
    let mut phi = vec![0.0; n];
    let mut lambda = vec![0.0; n];
    let mut edge_flow = vec![0.0; topo.edge_count()];
    for i in topo.layer_nodes(0) {
        phi[i] = s.arrival_rate(i);
    }
    for h in 0..s.depth() {
        for i in topo.layer_nodes(h) {
            let out = phi[i] * surviving[h];
            for e in topo.out_edges(i) {
                let f = p.get(e) * out;
                edge_flow[e] = f;
                phi[topo.edge_to(e)] += f;
            }
        }
        let alpha = s.alpha(h + 1);
        for j in topo.layer_nodes(h + 1) {
            lambda[j] = phi[j] * alpha;
        }
    }
    FlowState {
        phi,
        lambda,
        edge_flow,
        total: topo.layer_nodes(0).map(|i| s.arrival_rate(i)).sum(),
    }
}

/// `(T_cm, T_cp)` for one subtask crossing edge `e`: transfer of the
/// receiver's input and its processor-sharing sojourn.
pub fn delay_terms(s: &Scenario, e: usize, flow: &FlowState) -> Result<(f64, f64)> {
    let topo = s.topology();
    let j = topo.edge_to(e);
    let h = topo.layer(j);
    let t_cm = s.beta(h) / s.rate(e);
    let (mu, lambda) = (s.mu(j), flow.lambda[j]);
    if lambda >= mu {
        return Err(Error::Saturated {
            node: topo.id(j),
            load: lambda,
            mu,
        });
    }
    Ok((t_cm, s.alpha(h) / (mu - lambda)))
}

fn transfer_sum(s: &Scenario, flow: &FlowState) -> f64 {
    let topo = s.topology();
    (0..topo.edge_count())
        .map(|e| flow.edge_flow[e] * s.beta(topo.layer(topo.edge_to(e))) / s.rate(e))
        .sum()
}

/// Mean response delay over all tasks (s). Fails if any server is saturated.
pub fn system_delay(s: &Scenario, p: &Strategy, surviving: &[f64]) -> Result<f64> {
    system_delay_of(s, &propagate_flows(s, p, surviving))
}

pub fn system_delay_of(s: &Scenario, flow: &FlowState) -> Result<f64> {
    if flow.total <= 0.0 {
        return Err(Error::NoArrivals);
    }
    let topo = s.topology();
    let mut queue = 0.0;
    for j in topo.layer_nodes(1).start..topo.node_count() {
        queue += queue_term(s, flow, j, true)?;
    }
    Ok((queue + transfer_sum(s, flow)) / flow.total)
}

fn queue_term(s: &Scenario, flow: &FlowState, j: usize, strict: bool) -> Result<f64> {
    let (mu, lambda) = (s.mu(j), flow.lambda[j]);
    if strict {
        if lambda >= mu {
            return Err(Error::Saturated {
                node: s.topology().id(j),
                load: lambda,
                mu,
            });
        }
        return Ok(lambda / (mu - lambda));
    }
    let cap = mu - s.params.epsilon;
    if lambda <= cap {
        Ok(lambda / (mu - lambda))
    } else {
        // tangent continuation past mu - epsilon
        let slope = mu / (s.params.epsilon * s.params.epsilon);
        Ok(cap / s.params.epsilon + slope * (lambda - cap))
    }
}

/// `K * sum_j max(0, lambda_j - mu_j + epsilon)^2` over edge servers.
pub fn penalty(s: &Scenario, flow: &FlowState) -> f64 {
    let topo = s.topology();
    let eps = s.params.epsilon;
    let sum: f64 = (topo.layer_nodes(1).start..topo.node_count())
        .map(|j| {
            let x = (flow.lambda[j] - s.mu(j) + eps).max(0.0);
            x * x
        })
        .sum();
    s.params.k * sum
}

/// Components of the penalized objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    /// Delay with queue terms continued linearly past `mu - epsilon`.
    pub t: f64,
    pub n: f64,
    pub r: f64,
}

/// `R = T + N`, finite for every strategy.
pub fn objective(s: &Scenario, p: &Strategy, surviving: &[f64]) -> Objective {
    objective_of(s, &propagate_flows(s, p, surviving))
}

pub fn objective_of(s: &Scenario, flow: &FlowState) -> Objective {
    let n = penalty(s, flow);
    if flow.total <= 0.0 {
        return Objective { t: 0.0, n, r: n };
    }
    let topo = s.topology();
    let queue: f64 = (topo.layer_nodes(1).start..topo.node_count())
        .map(|j| queue_term(s, flow, j, false).expect("non-strict"))
        .sum();
    let t = (queue + transfer_sum(s, flow)) / flow.total;
    Objective { t, n, r: t + n }
}

pub fn objective_r(s: &Scenario, p: &Strategy, surviving: &[f64]) -> f64 {
    objective(s, p, surviving).r
}

/// `a * T - (1 - a) * (A - A_min) / (A_max - A_min)`.
pub fn utility_u(t: f64, acc: f64, a_min: f64, a_max: f64, a: f64) -> Result<f64> {
    if a_max <= a_min {
        return Err(Error::FlatAccuracy);
    }
    Ok(a * t - (1.0 - a) * (acc - a_min) / (a_max - a_min))
}

/// Marginal costs from the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    /// Repulsive factor per edge.
    pub delta: Vec<f64>,
    /// Downstream marginal per node; zero on layer `H`.
    pub omega: Vec<f64>,
    /// `dR/dp` per edge, each coordinate treated as free.
    pub grad: Vec<f64>,
}

impl GradientField {
    pub fn write_csv<W: Write>(&self, s: &Scenario, mut w: W) -> std::io::Result<()> {
        let topo = s.topology();
        writeln!(w, "from,to,delta,grad,omega_to")?;
        for e in 0..topo.edge_count() {
            writeln!(
                w,
                "{},{},{},{},{}",
                topo.id(topo.edge_from(e)),
                topo.id(topo.edge_to(e)),
                crate::fmt::sig6(self.delta[e]),
                crate::fmt::sig6(self.grad[e]),
                crate::fmt::sig6(self.omega[topo.edge_to(e)])
            )?;
        }
        Ok(())
    }
}

/// Repulsive factor of one edge given the receiver's state.
///
/// The curvature term evaluates the load at `min(lambda, mu - epsilon)`,
/// which makes it the exact derivative of the continued queue term.
#[allow(clippy::too_many_arguments)]
pub fn repulsive_factor(
    alpha: f64,
    mu: f64,
    lambda: f64,
    beta: f64,
    rate: f64,
    omega: f64,
    total: f64,
    k: f64,
    eps: f64,
) -> f64 {
    let lc = lambda.min(mu - eps);
    let gap = mu - lc;
    mu * alpha / (gap * gap)
        + beta / rate
        + omega
        + 2.0 * k * total * (alpha * (lambda - mu + eps)).max(0.0)
}

pub fn compute_gradients(s: &Scenario, p: &Strategy, surviving: &[f64]) -> GradientField {
    compute_gradients_with(s, p, surviving, &propagate_flows(s, p, surviving))
}

pub fn compute_gradients_with(
    s: &Scenario,
    p: &Strategy,
    surviving: &[f64],
    flow: &FlowState,
) -> GradientField {
    let topo = s.topology();
    let mut delta = vec![0.0; topo.edge_count()];
    let mut omega = vec![0.0; topo.node_count()];
    let mut grad = vec![0.0; topo.edge_count()];
    let (k, eps) = (s.params.k, s.params.epsilon);
    for h in (0..s.depth()).rev() {
        let alpha = s.alpha(h + 1);
        let beta = s.beta(h + 1);
        for i in topo.layer_nodes(h) {
            let mut om = 0.0;
            for e in topo.out_edges(i) {
                let j = topo.edge_to(e);
                let d = repulsive_factor(
                    alpha,
                    s.mu(j),
                    flow.lambda[j],
                    beta,
                    s.rate(e),
                    omega[j],
                    flow.total,
                    k,
                    eps,
                );
                delta[e] = d;
                om += p.get(e) * surviving[h] * d;
                if flow.total > 0.0 {
                    grad[e] = flow.phi[i] * surviving[h] / flow.total * d;
                }
            }
            omega[i] = om;
        }
    }
    GradientField { delta, omega, grad }
}

/// Central difference of `R` in coordinate `edge`, without renormalizing
/// the row.
pub fn fd_gradient_oracle(
    s: &Scenario,
    p: &Strategy,
    surviving: &[f64],
    edge: usize,
    step: f64,
) -> Result<f64> {
    let x = p.get(edge);
    if step <= 0.0 || x - step < 0.0 || x + step > 1.0 {
        return Err(Error::StepOutOfRange { step, p: x });
    }
    let mut q = p.clone();
    q.set(edge, x + step);
    let up = objective_r(s, &q, surviving);
    q.set(edge, x - step);
    let down = objective_r(s, &q, surviving);
    Ok((up - down) / (2.0 * step))
}

/// First-order effect of moving the surviving ratio of layer `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdImpact {
    /// `(node, dD)` for every layer-`h` node.
    pub per_node: Vec<(usize, f64)>,
    pub delay_change: f64,
    pub utility_change: f64,
}

/// Estimated delay change per layer-`h` node when `I_h` becomes `i_prime`,
/// and the resulting utility change given the normalized accuracy change.
pub fn threshold_impact(
    s: &Scenario,
    p: &Strategy,
    surviving: &[f64],
    h: usize,
    i_prime: f64,
    d_acc_norm: f64,
    a: f64,
) -> Result<ThresholdImpact> {
    let flow = propagate_flows(s, p, surviving);
    let g = compute_gradients_with(s, p, surviving, &flow);
    threshold_impact_with(s, surviving, &flow, &g, h, i_prime, d_acc_norm, a)
}

#[allow(clippy::too_many_arguments)]
pub fn threshold_impact_with(
    s: &Scenario,
    surviving: &[f64],
    flow: &FlowState,
    g: &GradientField,
    h: usize,
    i_prime: f64,
    d_acc_norm: f64,
    a: f64,
) -> Result<ThresholdImpact> {
    let i_h = surviving[h];
    if i_h <= 0.0 {
        return Err(Error::DeadBranch { layer: h });
    }
    let ratio = (i_prime - i_h) / i_h;
    let per_node: Vec<(usize, f64)> = s
        .topology()
        .layer_nodes(h)
        .map(|i| {
            let d = if flow.total > 0.0 {
                flow.phi[i] / flow.total * ratio * g.omega[i]
            } else {
                0.0
            };
            (i, d)
        })
        .collect();
    let delay_change: f64 = per_node.iter().map(|x| x.1).sum();
    Ok(ThresholdImpact {
        per_node,
        delay_change,
        utility_change: a * delay_change - (1.0 - a) * d_acc_norm,
    })
}

/// Exact `R(I') - R(I)` with only layer `h` changed.
pub fn threshold_impact_exact(
    s: &Scenario,
    p: &Strategy,
    surviving: &[f64],
    h: usize,
    i_prime: f64,
) -> f64 {
    let mut moved = surviving.to_vec();
    moved[h] = i_prime;
    objective_r(s, p, &moved) - objective_r(s, p, surviving)
}

/// Outcome of [`gradient_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub edges: usize,
    /// `(edges checked, max relative error)` per instance.
    pub per_instance: Vec<(usize, f64)>,
}

/// Relative error with the denominator floored at `1e-9`.
pub fn rel_err(analytic: f64, reference: f64) -> f64 {
    (analytic - reference).abs() / reference.abs().max(analytic.abs()).max(1e-9)
}

/// Random strictly interior strategy that keeps every server below
/// capacity; falls back to uniform when the draw overloads a node.
pub fn random_feasible_strategy(s: &Scenario, seed: u64) -> Strategy {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let p = Strategy::from_rows(s, |i| {
        let k = s.topology().out_edges(i).len();
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let sum: f64 = w.iter().sum();
        w.into_iter().map(|x| x / sum).collect()
    });
    let flow = propagate_flows(s, &p, &vec![1.0; s.depth() + 1]);
    let topo = s.topology();
    let ok = (topo.layer_nodes(1).start..topo.node_count())
        .all(|j| flow.lambda[j] < s.mu(j) - s.params.epsilon);
    if ok {
        p
    } else {
        Strategy::uniform(s)
    }
}

/// Analytic gradients against central differences on `instances` random
/// feasible scenarios (instance `k` uses seed `seed + k`). Rows with a
/// single successor are skipped since a central step leaves the simplex.
pub fn gradient_check(
    seed: u64,
    instances: usize,
    step: f64,
    exec: crate::par::Execution,
) -> GradCheckReport {
    let per_instance = exec.map_range(instances, |k| {
        let sd = seed.wrapping_add(k as u64);
        let s = crate::presets::random_scenario(sd, &crate::presets::RandomConfig::default());
        let p = random_feasible_strategy(&s, sd ^ 0x9e37_79b9);
        let surviving = vec![1.0; s.depth() + 1];
        let g = compute_gradients(&s, &p, &surviving);
        let mut worst = 0.0f64;
        let mut n = 0;
        for i in s.offloaders() {
            let edges = s.topology().out_edges(i);
            if edges.len() < 2 {
                continue;
            }
            for e in edges {
                let fd = fd_gradient_oracle(&s, &p, &surviving, e, step).expect("interior point");
                worst = worst.max(rel_err(g.grad[e], fd));
                n += 1;
            }
        }
        (n, worst)
    });
    GradCheckReport {
        max_rel_err: per_instance.iter().map(|x| x.1).fold(0.0, f64::max),
        edges: per_instance.iter().map(|x| x.0).sum(),
        per_instance,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{load_scenario, LinkSpec, NodeSpec, ParamsDoc, ScenarioDoc, SubModelSpec};

    pub(crate) fn node(id: u32, layer: usize, mu: f64, phi: f64) -> NodeSpec {
        NodeSpec {
            id,
            layer,
            mu,
            arrival_rate: phi,
            modes: vec![],
        }
    }

    pub(crate) fn link(from: u32, to: u32, rate: f64) -> LinkSpec {
        LinkSpec { from, to, rate }
    }

    pub(crate) fn sub(index: usize, alpha: f64, beta: f64) -> SubModelSpec {
        SubModelSpec {
            index,
            alpha,
            beta_in: beta,
            has_exit: false,
        }
    }

    pub(crate) fn scenario(
        sub_models: Vec<SubModelSpec>,
        nodes: Vec<NodeSpec>,
        links: Vec<LinkSpec>,
    ) -> Scenario {
        let doc = ScenarioDoc {
            version: 1,
            sub_models,
            nodes,
            links,
            exit_table: None,
            params: ParamsDoc {
                epsilon: Some(0.01),
                ..ParamsDoc::default()
            },
            seed: 0,
        };
        load_scenario(doc.to_json().as_bytes()).unwrap()
    }

    fn chain() -> Scenario {
        scenario(
            vec![sub(1, 2.21, 0.14)],
            vec![node(0, 0, 0.0, 4.0), node(1, 1, 10.0, 0.0)],
            vec![link(0, 1, 1.4)],
        )
    }

    #[test]
    fn chain_flows_with_exit() {
        let s = scenario(
            vec![sub(1, 2.0, 0.1), sub(2, 1.0, 0.1)],
            vec![
                node(0, 0, 0.0, 4.0),
                node(1, 1, 10.0, 0.0),
                node(2, 2, 10.0, 0.0),
            ],
            vec![link(0, 1, 1.0), link(1, 2, 1.0)],
        );
        let f = propagate_flows(&s, &Strategy::uniform(&s), &[1.0, 0.5, 1.0]);
        assert_eq!(f.phi, vec![4.0, 4.0, 2.0]);
        assert_eq!(f.lambda, vec![0.0, 8.0, 2.0]);
    }

    #[test]
    fn split_load_with_resnet_alpha() {
        let s = scenario(
            vec![sub(1, 2.21, 0.14)],
            vec![
                node(0, 0, 0.0, 10.0),
                node(1, 1, 30.0, 0.0),
                node(2, 1, 30.0, 0.0),
            ],
            vec![link(0, 1, 5.0), link(0, 2, 5.0)],
        );
        let f = propagate_flows(&s, &Strategy::uniform(&s), &[1.0, 1.0]);
        assert!((f.lambda[1] - 11.05).abs() < 1e-12);
        assert!((f.lambda[2] - 11.05).abs() < 1e-12);
    }

    #[test]
    fn zero_arrivals() {
        let s = scenario(
            vec![sub(1, 2.21, 0.14)],
            vec![
                node(0, 0, 0.0, 0.0),
                node(1, 1, 10.0, 0.0),
                node(2, 1, 10.0, 0.0),
            ],
            vec![link(0, 1, 1.4), link(0, 2, 1.4)],
        );
        let p = Strategy::uniform(&s);
        let f = propagate_flows(&s, &p, &[1.0, 1.0]);
        assert!(f.phi.iter().chain(&f.lambda).all(|&x| x == 0.0));
        assert!(matches!(
            system_delay(&s, &p, &[1.0, 1.0]),
            Err(Error::NoArrivals)
        ));
        assert_eq!(
            fd_gradient_oracle(&s, &p, &[1.0, 1.0], 0, 0.1).unwrap(),
            0.0
        );
        assert!(matches!(
            fd_gradient_oracle(&s, &p, &[1.0, 1.0], 0, 0.6),
            Err(Error::StepOutOfRange { .. })
        ));
        assert_eq!(compute_gradients(&s, &p, &[1.0, 1.0]).grad, vec![0.0, 0.0]);
    }

    #[test]
    fn delay_terms_match_hand_values() {
        let s = scenario(
            vec![sub(1, 2.21, 0.77)],
            vec![node(0, 0, 0.0, 0.0), node(1, 1, 10.0, 0.0)],
            vec![link(0, 1, 7.7)],
        );
        let mut f = propagate_flows(&s, &Strategy::uniform(&s), &[1.0, 1.0]);
        let (cm, cp) = delay_terms(&s, 0, &f).unwrap();
        assert!((cm - 0.1).abs() < 1e-15);
        assert!((cp - 0.221).abs() < 1e-15);
        f.lambda[1] = 8.84;
        assert!((delay_terms(&s, 0, &f).unwrap().1 - 2.21 / 1.16).abs() < 1e-12);
        f.lambda[1] = 10.0;
        assert!(matches!(
            delay_terms(&s, 0, &f),
            Err(Error::Saturated { .. })
        ));
    }

    #[test]
    fn chain_system_delay() {
        let s = chain();
        let p = Strategy::uniform(&s);
        let expected = (8.84 / 1.16 + 4.0 * 0.1) / 4.0;
        let t = system_delay(&s, &p, &[1.0, 1.0]).unwrap();
        assert!((t - expected).abs() < 1e-12, "{t}");
        assert!((t - 2.005172).abs() < 1e-6);
        let o = objective(&s, &p, &[1.0, 1.0]);
        assert_eq!(o.n, 0.0);
        assert!((o.r - t).abs() < 1e-15);
    }

    #[test]
    fn penalty_hand_value() {
        let s = chain();
        let mut f = propagate_flows(&s, &Strategy::uniform(&s), &[1.0, 1.0]);
        f.lambda[1] = 10.5;
        assert!((penalty(&s, &f) - 260100.0).abs() < 1e-6);
        let o = objective_of(&s, &f);
        assert!(o.r >= o.n && o.r.is_finite());
    }

    #[test]
    fn utility_examples() {
        assert_eq!(utility_u(0.3, 0.5, 0.4, 0.6, 1.0).unwrap(), 0.3);
        assert_eq!(utility_u(0.3, 0.6, 0.4, 0.6, 0.0).unwrap(), -1.0);
        let u = utility_u(0.2, 0.6, 0.470, 0.681, 0.5).unwrap();
        assert!((u - (-0.20806)).abs() < 1e-5, "{u}");
        assert!(matches!(
            utility_u(0.2, 0.5, 0.5, 0.5, 0.5),
            Err(Error::FlatAccuracy)
        ));
    }

    #[test]
    fn repulsive_factor_hand_value() {
        let d = repulsive_factor(2.0, 10.0, 6.0, 0.5, 5.0, 0.0, 1.0, 1e6, 0.01);
        assert!((d - 1.35).abs() < 1e-12);
    }

    #[test]
    fn symmetric_split_beats_skewed() {
        let s = scenario(
            vec![sub(1, 1.0, 0.1)],
            vec![
                node(0, 0, 0.0, 5.0),
                node(1, 1, 10.0, 0.0),
                node(2, 1, 10.0, 0.0),
            ],
            vec![link(0, 1, 2.0), link(0, 2, 2.0)],
        );
        let sym = system_delay(&s, &Strategy::uniform(&s), &[1.0, 1.0]).unwrap();
        let skew = Strategy::from_probs(&s, vec![0.9, 0.1]);
        assert!(sym < system_delay(&s, &skew, &[1.0, 1.0]).unwrap());
    }

    #[test]
    fn impact_hand_values() {
        // one ED -> branch-layer node (phi = Phi = 4) -> terminal node
        let s = scenario(
            vec![sub(1, 1.0, 0.1), sub(2, 1.0, 0.1)],
            vec![
                node(0, 0, 0.0, 4.0),
                node(1, 1, 20.0, 0.0),
                node(2, 2, 20.0, 0.0),
            ],
            vec![link(0, 1, 1.0), link(1, 2, 1.0)],
        );
        let surviving = [1.0, 0.5, 1.0];
        let flow = propagate_flows(&s, &Strategy::uniform(&s), &surviving);
        let mut g = compute_gradients_with(&s, &Strategy::uniform(&s), &surviving, &flow);
        g.omega[1] = 0.675;
        let imp = threshold_impact_with(&s, &surviving, &flow, &g, 1, 0.4, -0.02, 0.5).unwrap();
        assert!((imp.delay_change + 0.135).abs() < 1e-12);
        assert!((imp.utility_change + 0.0575).abs() < 1e-12);
        let same = threshold_impact_with(&s, &surviving, &flow, &g, 1, 0.5, -0.02, 0.5).unwrap();
        assert_eq!(same.delay_change, 0.0);
        assert!((same.utility_change - 0.01).abs() < 1e-15);
        assert!(matches!(
            threshold_impact_with(&s, &[1.0, 0.0, 1.0], &flow, &g, 1, 0.1, 0.0, 0.5),
            Err(Error::DeadBranch { layer: 1 })
        ));
    }

    #[test]
    fn terminal_omega_is_zero() {
        let s = chain();
        let g = compute_gradients(&s, &Strategy::uniform(&s), &[1.0, 1.0]);
        assert_eq!(g.omega[1], 0.0);
    }
}
