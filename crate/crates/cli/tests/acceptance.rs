//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset.
//!
//! Every check compares the library against a reference computed here from
//! first principles (objective, flows, exit walk) or against closed-form
//! queueing results.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use epo_core::analytics;
use epo_core::baselines::BaselineConfig;
use epo_core::dto::{self, DtoOptions, RoundState, ThresholdMode};
use epo_core::exit_profile::{
    build_exit_table, default_grid, synthesize_records, DifficultyProfile, ExitTable,
};
use epo_core::model::{
    LinkSpec, NodeSpec, ParamsDoc, Scenario, ScenarioDoc, Strategy, SubModelSpec, ThresholdSetting,
    SCHEMA_VERSION,
};
use epo_core::par::Execution;
use epo_core::planner::{self, Algorithm};
use epo_core::presets::{self, GeneratorConfig, Preset, RandomConfig};
use epo_core::sim::{self, AlgorithmSummary, DynamicOptions, SimOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(u32, &str, Check, Option<f64>); 10] = [
        (1, "gradient oracle", c1_gradient, Some(30.0)),
        (2, "descent direction", c2_descent, Some(60.0)),
        (
            3,
            "convergence to grid optimum",
            c3_convergence,
            Some(300.0),
        ),
        (4, "queue fidelity", c4_queue, Some(120.0)),
        (5, "simulator vs analytic delay", c5_end_to_end, None),
        (6, "exit-table oracle", c6_exit_table, None),
        (7, "threshold impact first order", c7_threshold_impact, None),
        (8, "comparative dynamic run", c8_comparative, Some(600.0)),
        (9, "threshold ablation", c9_ablation, None),
        (10, "determinism", c10_determinism, None),
    ];
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, check, limit) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let mut o = check();
        let secs = t0.elapsed().as_secs_f64();
        if let Some(limit) = limit {
            if secs >= limit {
                o.pass = false;
                o.detail.push_str(&format!("; over the {limit:.0}s budget"));
            }
        }
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {}: {name}: {} ({secs:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Reference model, written independently of the library's analytics.

/// Per-node arrival rates, loads, and total transfer cost `sum flow * beta / r`.
fn reference_flows(s: &Scenario, p: &[f64], surviving: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let topo = s.topology();
    let n = topo.node_count();
    let mut phi = vec![0.0; n];
    let mut transfer = 0.0;
    // nodes are stored layer by layer, so predecessors come first
    for i in 0..n {
        let h = topo.layer(i);
        if h == 0 {
            phi[i] = s.arrival_rate(i);
        }
        if h == s.depth() {
            continue;
        }
        for e in topo.out_edges(i) {
            let f = p[e] * phi[i] * surviving[h];
            phi[topo.edge_to(e)] += f;
            transfer += f * s.beta(h + 1) / s.rate(e);
        }
    }
    let lambda = (0..n)
        .map(|j| match topo.layer(j) {
            0 => 0.0,
            h => phi[j] * s.alpha(h),
        })
        .collect();
    (phi, lambda, transfer)
}

/// Penalized objective: queue terms continued along their tangent past
/// `mu - eps`, plus `K * sum max(0, lambda - mu + eps)^2`.
fn reference_r(s: &Scenario, p: &[f64], surviving: &[f64]) -> f64 {
    let (_, lambda, transfer) = reference_flows(s, p, surviving);
    let topo = s.topology();
    let (k, eps) = (s.params.k, s.params.epsilon);
    let total: f64 = topo.layer_nodes(0).map(|i| s.arrival_rate(i)).sum();
    let mut queue = 0.0;
    let mut pen = 0.0;
    for j in topo.layer_nodes(1).start..topo.node_count() {
        let (mu, l) = (s.mu(j), lambda[j]);
        let cap = mu - eps;
        queue += if l <= cap {
            l / (mu - l)
        } else {
            cap / eps + mu / (eps * eps) * (l - cap)
        };
        pen += (l - cap).max(0.0).powi(2);
    }
    (queue + transfer) / total + k * pen
}

fn strictly_feasible(s: &Scenario, p: &[f64], surviving: &[f64]) -> bool {
    let (_, lambda, _) = reference_flows(s, p, surviving);
    let topo = s.topology();
    (topo.layer_nodes(1).start..topo.node_count()).all(|j| lambda[j] < s.mu(j) - s.params.epsilon)
}

fn rel_err(a: f64, r: f64) -> f64 {
    (a - r).abs() / r.abs().max(a.abs()).max(1e-9)
}

/// Surviving ratios with random values on the branch layers.
fn random_surviving(s: &Scenario, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = vec![1.0; s.depth() + 1];
    for &h in s.branch_layers() {
        out[h] = rng.random_range(lo..hi);
    }
    out
}

fn branchless() -> ExitTable {
    ExitTable::branchless(1.0)
}

// ---------------------------------------------------------------------------

fn c1_gradient() -> Outcome {
    let cfg = RandomConfig {
        exits: true,
        ..RandomConfig::default()
    };
    let step = 1e-6;
    let per = Execution::default().map_range(100, |k| {
        let seed = 10_000 + k as u64;
        let s = presets::random_scenario(seed, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let surviving = random_surviving(&s, &mut rng, 0.3, 1.0);
        let p = analytics::random_feasible_strategy(&s, seed);
        let g = analytics::compute_gradients(&s, &p, &surviving);
        let mut probs = p.probs().to_vec();
        let (mut worst, mut n) = (0.0f64, 0usize);
        for i in s.offloaders() {
            let edges = s.topology().out_edges(i);
            if edges.len() < 2 {
                continue;
            }
            for e in edges {
                let x = probs[e];
                probs[e] = x + step;
                let up = reference_r(&s, &probs, &surviving);
                probs[e] = x - step;
                let down = reference_r(&s, &probs, &surviving);
                probs[e] = x;
                worst = worst.max(rel_err(g.grad[e], (up - down) / (2.0 * step)));
                n += 1;
            }
        }
        (worst, n)
    });
    let worst = per.iter().map(|x| x.0).fold(0.0, f64::max);
    let edges: usize = per.iter().map(|x| x.1).sum();
    outcome(
        worst <= 1e-4 && edges > 0,
        format!("max relative error {worst:.2e} over {edges} edges in 100 instances (limit 1e-4)"),
    )
}

fn c2_descent() -> Outcome {
    let table = branchless();
    let per = Execution::default().map_range(50, |k| {
        let seed = 20_000 + k as u64;
        let s = presets::random_scenario(seed, &RandomConfig::default());
        let ones = vec![1.0; s.depth() + 1];
        let opts = DtoOptions {
            thresholds: ThresholdMode::Frozen,
            ..DtoOptions::default()
        };
        let mut st = RoundState::new(
            &s,
            &table,
            Strategy::uniform(&s),
            ThresholdSetting::new(vec![]),
            opts,
        )
        .expect("round state");
        let (mut checked, mut violations, mut fixed, mut infeasible) = (0, 0, 0, 0);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..200 {
            let before = st.strategy.clone();
            let feasible = strictly_feasible(&s, before.probs(), &ones);
            let g = analytics::compute_gradients(&s, &before, &ones);
            st.round().expect("round");
            if st.strategy == before {
                fixed += 1;
                continue;
            }
            if !feasible {
                infeasible += 1;
                continue;
            }
            let inner: f64 = (0..g.grad.len())
                .map(|e| g.grad[e] * (st.strategy.get(e) - before.get(e)))
                .sum();
            checked += 1;
            worst = worst.max(inner);
            if inner >= 0.0 {
                violations += 1;
            }
        }
        (checked, violations, fixed, infeasible, worst)
    });
    let checked: usize = per.iter().map(|x| x.0).sum();
    let violations: usize = per.iter().map(|x| x.1).sum();
    let fixed: usize = per.iter().map(|x| x.2).sum();
    let infeasible: usize = per.iter().map(|x| x.3).sum();
    let worst = per.iter().map(|x| x.4).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        violations == 0 && checked > 0,
        format!(
            "{checked} moving feasible rounds, {violations} non-negative inner products \
             (largest {worst:.3e}); {fixed} fixed-point and {infeasible} infeasible rounds skipped"
        ),
    )
}

/// Every point of `{0, 0.01, ..., 1}^k` summing to 1.
fn simplex_grid(k: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<f64>>) {
        if k == 1 {
            cur.push(left);
            out.push(cur.iter().map(|&x| x as f64 / 100.0).collect());
            cur.pop();
            return;
        }
        for x in 0..=left {
            cur.push(x);
            rec(k - 1, left - x, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, 100, &mut Vec::new(), &mut out);
    out
}

/// Smallest `R` over the product of per-row simplex grids.
fn brute_force(
    s: &Scenario,
    rows: &[(usize, Vec<Vec<f64>>)],
    probs: &mut Vec<f64>,
    depth: usize,
    ones: &[f64],
) -> f64 {
    if depth == rows.len() {
        return reference_r(s, probs, ones);
    }
    let (node, grid) = &rows[depth];
    let start = s.topology().out_edges(*node).start;
    let mut best = f64::INFINITY;
    for point in grid {
        probs[start..start + point.len()].copy_from_slice(point);
        best = best.min(brute_force(s, rows, probs, depth + 1, ones));
    }
    best
}

fn c3_convergence() -> Outcome {
    let cfg = RandomConfig {
        depth: (2, 2),
        width: (1, 3),
        ..RandomConfig::default()
    };
    // instances whose full grid stays small enough to enumerate
    let mut seeds = Vec::new();
    let mut seed = 30_000u64;
    while seeds.len() < 20 {
        let s = presets::random_scenario(seed, &cfg);
        let size: f64 = s
            .offloaders()
            .map(|i| simplex_grid(s.topology().out_edges(i).len()).len() as f64)
            .product();
        if size > 1.0 && size <= 6e5 {
            seeds.push(seed);
        }
        seed += 1;
    }
    let table = branchless();
    let per = Execution::default().map(&seeds, |&seed| {
        let mut s = presets::random_scenario(seed, &cfg);
        s.params.tau_p = 0.05;
        s.params.n = 1000;
        let ones = vec![1.0; s.depth() + 1];
        let rows: Vec<(usize, Vec<Vec<f64>>)> = s
            .offloaders()
            .filter(|&i| s.topology().out_edges(i).len() > 1)
            .map(|i| (i, simplex_grid(s.topology().out_edges(i).len())))
            .collect();
        let mut probs = Strategy::uniform(&s).probs().to_vec();
        let reference = brute_force(&s, &rows, &mut probs, 0, &ones);
        let opts = DtoOptions {
            thresholds: ThresholdMode::Frozen,
            ..DtoOptions::default()
        };
        let out = dto::run_config_phase(
            &s,
            &table,
            Strategy::uniform(&s),
            ThresholdSetting::new(vec![]),
            opts,
        )
        .expect("config phase");
        let r = reference_r(&s, out.strategy.probs(), &ones);
        (r - reference) / reference
    });
    let worst = per.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best = per.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        worst <= 0.02,
        format!(
            "R above grid optimum by at most {:.3}% over 20 instances (best {:.3}%, limit 2%)",
            worst * 100.0,
            best * 100.0
        ),
    )
}

fn single_queue(mu: f64, alpha: f64, rate: f64) -> Scenario {
    let doc = ScenarioDoc {
        version: SCHEMA_VERSION,
        sub_models: vec![SubModelSpec {
            index: 1,
            alpha,
            beta_in: 0.01,
            has_exit: false,
        }],
        nodes: vec![
            NodeSpec {
                id: 0,
                layer: 0,
                mu: 0.0,
                arrival_rate: rate,
                modes: vec![],
            },
            NodeSpec {
                id: 1,
                layer: 1,
                mu,
                arrival_rate: 0.0,
                modes: vec![],
            },
        ],
        links: vec![LinkSpec {
            from: 0,
            to: 1,
            rate: 100.0,
        }],
        exit_table: None,
        params: ParamsDoc::default(),
        seed: 1,
    };
    Scenario::from_doc(doc).expect("single queue scenario")
}

fn c4_queue() -> Outcome {
    let (mu, alpha) = (10.0, 1.0);
    let rhos = [0.3, 0.6, 0.8];
    let table = branchless();
    let points = Execution::default().map(&rhos, |&rho| {
        let rate = rho * mu / alpha;
        let s = single_queue(mu, alpha, rate);
        let p = Strategy::uniform(&s);
        let duration = 250_000.0 / rate;
        let rep = sim::run_simulation(
            &s,
            &p,
            &ThresholdSetting::new(vec![]),
            &table,
            duration,
            7,
            &SimOptions::default(),
        )
        .expect("simulation");
        let sojourn = rep.mean_delay - 0.01 / 100.0;
        let expected = alpha / (mu - rho * mu);
        (
            rho,
            rep.tasks,
            sojourn,
            expected,
            rel_err(sojourn, expected),
        )
    });
    let queue_ok = points.iter().all(|x| x.1 >= 200_000 && x.4 <= 0.05);

    let traces: Vec<u64> = (0..1000).collect();
    let diffs = Execution::default().map(&traces, |&k| {
        let mut rng = ChaCha8Rng::seed_from_u64(40_000 + k);
        let n = rng.random_range(1..300);
        let mu = rng.random_range(0.5..20.0);
        let rho = rng.random_range(0.1..1.2);
        let mean_work: f64 = rng.random_range(0.1..2.0);
        let exponential = rng.random_bool(0.5);
        let mut t = 0.0;
        let trace: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                t += -(1.0 - u).ln() * mean_work / (rho * mu);
                let v: f64 = rng.random();
                let w = if exponential {
                    -(1.0 - v).ln() * mean_work
                } else {
                    mean_work * (0.5 + v)
                };
                (t, w.max(1e-6))
            })
            .collect();
        let fast = sim::ps_departures(&trace, mu);
        let slow = sim::queue_oracle(&trace, mu).departures;
        fast.iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    let max_diff = diffs.iter().copied().fold(0.0, f64::max);
    let trace_ok = max_diff <= 1e-9;

    let pts: Vec<String> = points
        .iter()
        .map(|(rho, n, sim, exp, err)| {
            format!(
                "rho {rho}: {:.4}s vs {:.4}s ({:.2}%, {n} tasks)",
                sim,
                exp,
                err * 100.0
            )
        })
        .collect();
    outcome(
        queue_ok && trace_ok,
        format!(
            "{}; PS queue vs integrator max gap {max_diff:.1e}s on 1000 traces (limit 1e-9)",
            pts.join(", ")
        ),
    )
}

fn c5_end_to_end() -> Outcome {
    let cfg = RandomConfig {
        depth: (3, 3),
        ..RandomConfig::default()
    };
    let table = branchless();
    let seeds: Vec<u64> = (50_000..50_010).collect();
    let per = Execution::default().map(&seeds, |&seed| {
        let s = presets::random_scenario(seed, &cfg);
        let plan = planner::plan(
            &s,
            &table,
            Algorithm::DtoEe,
            None,
            &BaselineConfig::default(),
            seed,
        )
        .expect("plan");
        let ones = vec![1.0; s.depth() + 1];
        let analytic = analytics::system_delay(&s, &plan.strategy, &ones).expect("feasible plan");
        let duration = 100_000.0 / s.total_arrival();
        let rep = sim::run_simulation(
            &s,
            &plan.strategy,
            &plan.thresholds,
            &table,
            duration,
            seed,
            &SimOptions::default(),
        )
        .expect("simulation");
        rel_err(rep.mean_delay, analytic)
    });
    let worst = per.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 0.10,
        format!(
            "largest gap {:.2}% over 10 three-layer scenarios (limit 10%); gaps {}",
            worst * 100.0,
            per.iter()
                .map(|x| format!("{:.1}%", x * 100.0))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn c6_exit_table() -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let per = Execution::default().map(&seeds, |&seed| {
        // alternate two-branch tables on a fine grid and three-branch ones on a coarse grid
        let (branches, step) = if seed.is_multiple_of(2) {
            (vec![1, 2], 0.05)
        } else {
            (vec![1, 2, 3], 0.1)
        };
        let final_layer = branches.len() + 1;
        let recs = synthesize_records(
            60_000 + seed,
            1000,
            &DifficultyProfile::default_for(branches.len()),
            &branches,
            final_layer,
        );
        let grids = vec![default_grid(step); branches.len()];
        let table = build_exit_table(&recs, &grids).expect("table");
        let stages = branches.len() + 1;
        let mut mismatches = 0usize;
        for flat in 0..table.point_count() {
            let c = table.setting_at(flat);
            let values = table.values(&c);
            let mut reached = vec![0u32; stages];
            let mut exited = vec![0u32; stages];
            let mut correct = vec![0u32; stages];
            for smp in &recs.samples {
                let mut stage = branches.len();
                for b in 0..branches.len() {
                    reached[b] += 1;
                    if smp.confidence[b] >= values[b] {
                        stage = b;
                        break;
                    }
                }
                if stage == branches.len() {
                    reached[stage] += 1;
                }
                exited[stage] += 1;
                let ok = if stage < branches.len() {
                    smp.branch_correct[stage]
                } else {
                    smp.final_correct
                };
                correct[stage] += ok as u32;
            }
            let k = table.counts(&c).expect("counts");
            let acc = correct.iter().sum::<u32>() as f64 / recs.len() as f64;
            let surv: Vec<f64> = (0..branches.len())
                .map(|b| {
                    if reached[b] == 0 {
                        1.0
                    } else {
                        1.0 - exited[b] as f64 / reached[b] as f64
                    }
                })
                .collect();
            let (a, i) = table.query(&c).expect("query");
            if k.reached != reached
                || k.exited != exited
                || k.correct != correct
                || a != acc
                || i != surv
            {
                mismatches += 1;
            }
        }
        (table.point_count(), mismatches)
    });
    let points: usize = per.iter().map(|x| x.0).sum();
    let bad: usize = per.iter().map(|x| x.1).sum();
    outcome(
        bad == 0,
        format!("{bad} mismatching grid points out of {points} across 10 seeds of 1000 samples"),
    )
}

fn c7_threshold_impact() -> Outcome {
    let cfg = RandomConfig {
        depth: (2, 4),
        exits: true,
        ..RandomConfig::default()
    };
    let moves = [-0.05, -0.01, 0.01, 0.05];
    let per = Execution::default().map_range(50, |k| {
        let seed = 70_000 + k as u64;
        let s = presets::random_scenario(seed, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let surviving = random_surviving(&s, &mut rng, 0.3, 0.95);
        let p = analytics::random_feasible_strategy(&s, seed);
        let layers = s.branch_layers();
        let h = layers[rng.random_range(0..layers.len())];
        let base = reference_r(&s, p.probs(), &surviving);
        let mut worst = 0.0f64;
        for d in moves {
            let i_prime = surviving[h] * (1.0 + d);
            let est = analytics::threshold_impact(&s, &p, &surviving, h, i_prime, 0.0, 0.5)
                .expect("impact")
                .delay_change;
            let mut moved = surviving.clone();
            moved[h] = i_prime;
            let exact = reference_r(&s, p.probs(), &moved) - base;
            worst = worst.max((est - exact).abs() / exact.abs().max(1e-15));
        }
        worst
    });
    let worst = per.iter().copied().fold(0.0, f64::max);
    let over = per.iter().filter(|&&x| x > 0.10).count();
    outcome(
        worst <= 0.10,
        format!(
            "largest |estimate - exact| / |exact| = {:.2}% over 50 instances x 4 moves up to 5% \
             ({over} instances over the 10% limit)",
            worst * 100.0
        ),
    )
}

fn pooled(
    s: &Scenario,
    table: &ExitTable,
    algs: &[Algorithm],
    seeds: &[u64],
) -> Vec<AlgorithmSummary> {
    let opts = DynamicOptions {
        exec: Execution::Sequential,
        ..DynamicOptions::default()
    };
    let runs: Vec<_> = Execution::default().map(seeds, |&sd| {
        sim::dynamic_experiment(s, table, algs, &opts, sd).expect("experiment")
    });
    sim::pooled_summary(&runs)
}

fn find<'a>(rows: &'a [AlgorithmSummary], name: &str) -> &'a AlgorithmSummary {
    rows.iter()
        .find(|r| r.algorithm == name)
        .expect("algorithm row")
}

fn c8_comparative() -> Outcome {
    let algs = planner::parse_algorithms("dto-ee,cf,bf,ngto,ga").expect("algorithms");
    let seeds: Vec<u64> = (1..=20).collect();
    let opts = DynamicOptions {
        exec: Execution::Sequential,
        ..DynamicOptions::default()
    };
    let runs: Vec<_> = Execution::default().map(&seeds, |&k| {
        let cfg = GeneratorConfig {
            seed: k,
            ..GeneratorConfig::default()
        };
        let s = Scenario::from_doc(presets::generate(Preset::ResNet101, &cfg))
            .expect("generated scenario");
        let table = presets::resolve_exit_table(&s, None).expect("table");
        sim::dynamic_experiment(&s, &table, &algs, &opts, s.seed).expect("experiment")
    });
    let rows = sim::pooled_summary(&runs);
    let dto = find(&rows, "dto-ee");
    let heuristic = find(&rows, "cf")
        .median_delay
        .min(find(&rows, "bf").median_delay);
    let (ngto, ga) = (find(&rows, "ngto"), find(&rows, "ga"));
    let reduction = 1.0 - dto.median_delay / heuristic;
    let acc_ok = rows.iter().all(|r| dto.accuracy >= r.accuracy - 0.002);
    let pass = reduction >= 0.10
        && dto.median_delay <= ngto.median_delay
        && dto.median_delay <= ga.median_delay
        && acc_ok;
    let table: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{} {:.1}ms/{:.4}",
                r.algorithm,
                r.median_delay * 1e3,
                r.accuracy
            )
        })
        .collect();
    outcome(
        pass,
        format!(
            "median delay {:.1}% below best of cf/bf (limit 10%); {}",
            reduction * 100.0,
            table.join(", ")
        ),
    )
}

fn c9_ablation() -> Outcome {
    let s = Preset::ResNet101.load();
    let table = presets::resolve_exit_table(&s, None).expect("table");
    let algs = planner::parse_algorithms("dto-ee,dto-fixed:1.0,dto-fixed:0.7").expect("algorithms");
    let seeds: Vec<u64> = (0..3).map(|k| s.seed + k).collect();
    let rows = pooled(&s, &table, &algs, &seeds);
    let dto = find(&rows, "dto-ee");
    let full = find(&rows, "dto-fixed:1");
    let low = find(&rows, "dto-fixed:0.7");
    let reduction = 1.0 - dto.mean_delay / full.mean_delay;
    let loss = full.accuracy - dto.accuracy;
    outcome(
        reduction >= 0.10 && loss <= 0.01 && dto.accuracy > low.accuracy,
        format!(
            "delay {:.1}ms vs {:.1}ms at c=1 ({:.1}% lower, limit 10%); accuracy {:.4} vs {:.4} \
             (loss {:.4}, limit 0.01) and {:.4} at c=0.7",
            dto.mean_delay * 1e3,
            full.mean_delay * 1e3,
            reduction * 100.0,
            dto.accuracy,
            full.accuracy,
            loss,
            low.accuracy
        ),
    )
}

fn run_epo(dir: &Path, args: &[&str]) -> (bool, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_epo"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("running epo");
    let mut bytes = out.stdout;
    bytes.extend_from_slice(&out.stderr);
    (out.status.success(), bytes)
}

/// Every file under `dir`, sorted by name.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().is_file())
                .map(|e| {
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        std::fs::read(e.path()).unwrap_or_default(),
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn c10_determinism() -> Outcome {
    let work = tempfile::tempdir().expect("temp dir");
    let dir = work.path();
    std::fs::write(dir.join("resnet101.json"), presets::RESNET101_JSON).expect("write scenario");
    std::fs::write(
        dir.join("resnet101_records.csv"),
        presets::RESNET101_RECORDS_CSV,
    )
    .expect("write records");
    let commands: [&[&str]; 6] = [
        &["--out", "o", "validate", "resnet101.json"],
        &["--out", "o", "exit-table", "resnet101_records.csv"],
        &[
            "--out",
            "o",
            "--seed",
            "5",
            "optimize",
            "resnet101.json",
            "--alg",
            "dto-ee",
        ],
        &[
            "--out",
            "o",
            "--seed",
            "5",
            "simulate",
            "resnet101.json",
            "--duration",
            "30",
            "--trace",
        ],
        &[
            "--out",
            "o",
            "--seed",
            "5",
            "experiment",
            "resnet101.json",
            "--slots",
            "4",
            "--seeds",
            "2",
            "--algs",
            "dto-ee,cf,ngto,ga",
        ],
        &[
            "--out",
            "o",
            "--seed",
            "5",
            "gradcheck",
            "--instances",
            "10",
        ],
    ];
    let mut failures = Vec::new();
    let mut files = 0;
    for args in commands {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let _ = std::fs::remove_dir_all(dir.join("o"));
            let (ok, console) = run_epo(dir, args);
            runs.push((ok, console, snapshot(&dir.join("o"))));
        }
        let name = args[args
            .iter()
            .position(|a| !a.starts_with('-') && *a != "o" && *a != "5")
            .unwrap_or(0)];
        if !runs[0].0 {
            failures.push(format!(
                "{name} failed: {}",
                String::from_utf8_lossy(&runs[0].1)
            ));
        } else if runs[0] != runs[1] || runs[0].2.is_empty() {
            failures.push(format!("{name} differs between runs"));
        }
        files += runs[0].2.len();
    }

    // execution mode must not change the experiment outputs either
    let exp = [
        "--seed",
        "5",
        "experiment",
        "resnet101.json",
        "--slots",
        "4",
        "--seeds",
        "2",
        "--algs",
        "dto-ee,cf",
    ];
    let mut modes = Vec::new();
    for extra in [None, Some("--sequential")] {
        let _ = std::fs::remove_dir_all(dir.join("o"));
        let mut args = vec!["--out", "o"];
        args.extend(exp);
        args.extend(extra);
        run_epo(dir, &args);
        let snap: Vec<_> = snapshot(&dir.join("o"))
            .into_iter()
            .filter(|f| f.0.ends_with(".csv"))
            .collect();
        modes.push(snap);
    }
    if modes[0] != modes[1] || modes[0].is_empty() {
        failures.push("experiment CSVs differ between parallel and sequential runs".into());
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("6 commands run twice, {files} output files byte-identical; parallel and sequential experiments match")
        } else {
            failures.join("; ")
        },
    )
}
