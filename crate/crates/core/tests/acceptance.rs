//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use minpower::protocol::order_example;
use minpower::sim::{init_sim, ScenarioConfig, SimReport};
use minpower::topology::{build_reference_graph, compute_e2, compute_emin, has_min_energy_property, NetworkGraph};
use minpower::{
    mecn_node, run_protocol, EscalationSchedule, FlipOrder, NodeId, NodeRecord, PowerModel, Protocol, SamplingSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(number: u32, name: &str, started: Instant, outcome: &Outcome) {
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{} criterion {number:>2} {name}: {} [{:.1}s]",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        started.elapsed().as_secs_f64()
    )
    .unwrap();
}

fn random_nodes(rng: &mut ChaCha8Rng, count: usize, side: f64) -> Vec<NodeRecord> {
    (0..count).map(|i| NodeRecord::new(i as u32, rng.gen_range(0.0..side), rng.gen_range(0.0..side))).collect()
}

struct Instance {
    nodes: Vec<NodeRecord>,
    model: PowerModel,
}

/// 1000 instances of 20 nodes cycling through n ∈ {2, 4} and c ∈ {0, 0.1·t·range^n}.
fn oracle_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let range = 400.0;
    (0..1000)
        .map(|k| {
            let n = if k % 2 == 0 { 2.0 } else { 4.0 };
            let c = if (k / 2) % 2 == 0 { 0.0 } else { 0.1 * range_power(n, range) };
            let model = PowerModel::with_range(1.0, n, c, range).unwrap();
            Instance { nodes: random_nodes(&mut rng, 20, 1000.0), model }
        })
        .collect()
}

fn range_power(n: f64, range: f64) -> f64 {
    range.powf(n)
}

fn protocol_graph(inst: &Instance, spec: SamplingSpec, protocol: Protocol, order: FlipOrder) -> NetworkGraph {
    run_protocol(&inst.nodes, inst.model, EscalationSchedule::default_for(&inst.model), spec, protocol, order)
        .unwrap()
        .graph
}

struct OracleRuns {
    default_agree: usize,
    refined_agree: usize,
    min_energy: usize,
    subset: usize,
    total: usize,
}

fn oracle_runs(instances: &[Instance]) -> OracleRuns {
    let mut runs = OracleRuns { default_agree: 0, refined_agree: 0, min_energy: 0, subset: 0, total: instances.len() };
    let default = SamplingSpec::default();
    let refined = default.refined(4);
    for inst in instances {
        let reference = build_reference_graph(&inst.nodes, inst.model).unwrap();
        let e2 = compute_e2(&reference).edge_set();
        let smecn = protocol_graph(inst, default, Protocol::Smecn, FlipOrder::ById);
        runs.default_agree += (smecn.edge_set() == e2) as usize;
        let fine = protocol_graph(inst, refined, Protocol::Smecn, FlipOrder::ById);
        runs.refined_agree += (fine.edge_set() == e2) as usize;
        runs.min_energy += has_min_energy_property(&reference, &smecn).unwrap() as usize;
        let within_all = FlipOrder::ALL
            .iter()
            .all(|&order| smecn.is_subgraph_of(&protocol_graph(inst, default, Protocol::Mecn, order)));
        runs.subset += within_all as usize;
    }
    runs
}

fn criterion_1(runs: &OracleRuns) -> Outcome {
    let rate = runs.default_agree as f64 / runs.total as f64;
    Outcome {
        pass: rate >= 0.99 && runs.refined_agree == runs.total,
        detail: format!(
            "SMECN = E2 on {}/{} at default sampling, {}/{} at 4x refined",
            runs.default_agree, runs.total, runs.refined_agree, runs.total
        ),
    }
}

fn criterion_2(runs: &OracleRuns) -> Outcome {
    Outcome {
        pass: runs.min_energy == runs.total,
        detail: format!("minimum-energy property on {}/{}", runs.min_energy, runs.total),
    }
}

fn criterion_3(runs: &OracleRuns) -> Outcome {
    Outcome {
        pass: runs.subset == runs.total,
        detail: format!("SMECN within MECN for all orders on {}/{}", runs.subset, runs.total),
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut instances, mut edges, mut failures) = (0, 0, 0);
    while instances < 200 {
        let count = rng.gen_range(2..=12);
        let n = if rng.gen_bool(0.5) { 2.0 } else { 4.0 };
        let c = if rng.gen_bool(0.5) { 0.0 } else { 0.05 * 300f64.powf(n) };
        let model = PowerModel::with_range(1.0, n, c, 300.0).unwrap();
        let nodes = random_nodes(&mut rng, count, 600.0);
        let reference = build_reference_graph(&nodes, model).unwrap();
        let emin = compute_emin(&reference);
        if !has_min_energy_property(&reference, &emin).unwrap() {
            failures += 1;
        }
        for (a, b, _) in emin.edges() {
            edges += 1;
            if has_min_energy_property(&reference, &emin.without_edge(a, b)).unwrap() {
                failures += 1;
            }
        }
        instances += 1;
    }
    Outcome {
        pass: failures == 0,
        detail: format!("{instances} instances, {edges} E_min edges each essential, {failures} failures"),
    }
}

/// Every simple path from `src` to `dst` with its cost.
fn all_simple_paths(graph: &NetworkGraph, src: NodeId, dst: NodeId) -> Vec<(Vec<NodeId>, f64)> {
    fn walk(
        graph: &NetworkGraph,
        path: &mut Vec<NodeId>,
        cost: f64,
        dst: NodeId,
        out: &mut Vec<(Vec<NodeId>, f64)>,
    ) {
        let at = *path.last().unwrap();
        if at == dst {
            out.push((path.clone(), cost));
            return;
        }
        for next in graph.out_neighbors(at) {
            if !path.contains(&next) {
                let step = graph.cost(at, next).unwrap();
                path.push(next);
                walk(graph, path, cost + step, dst, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(graph, &mut vec![src], 0.0, dst, &mut out);
    out
}

fn criterion_5() -> Outcome {
    let nodes = vec![
        NodeRecord::new(0, 0.0, 0.0),
        NodeRecord::new(1, 1.0, 2.0),
        NodeRecord::new(2, 3.0, 2.0),
        NodeRecord::new(3, 4.0, 0.0),
    ];
    let model = PowerModel::new(1.0, 2.0, 0.5, 100.0).unwrap();
    let reference = build_reference_graph(&nodes, model).unwrap();
    let (u, v) = (NodeId(0), NodeId(3));
    let direct = reference.cost(u, v).unwrap();
    let paths = all_simple_paths(&reference, u, v);
    let beaten_by_two_hops = paths.iter().any(|(p, cost)| p.len() == 3 && *cost <= direct);
    let beaten_by_any = paths.iter().any(|(p, cost)| p.len() > 2 && *cost <= direct);
    let best = paths.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let in_e2 = compute_e2(&reference).has_edge(u, v);
    let in_emin = compute_emin(&reference).has_edge(u, v);
    let pass = !beaten_by_two_hops && beaten_by_any && in_e2 && !in_emin;
    Outcome {
        pass,
        detail: format!(
            "direct {direct}, best multi-hop {best} over {} simple paths; (u,v) in E2: {in_e2}, in E_min: {in_emin}",
            paths.len()
        ),
    }
}

fn criterion_6() -> Outcome {
    let nodes = order_example::nodes();
    let u = nodes.iter().find(|n| n.id == order_example::U).copied().unwrap();
    let mut seen = Vec::new();
    for order in FlipOrder::ALL {
        let outcome = mecn_node(
            &u,
            &nodes,
            order_example::model(),
            order_example::schedule(),
            SamplingSpec::default(),
            order,
        )
        .unwrap();
        seen.push((order, outcome.neighbors.into_iter().collect::<BTreeSet<_>>()));
    }
    let only_t: BTreeSet<_> = [order_example::T].into();
    let t_and_v: BTreeSet<_> = [order_example::T, order_example::V].into();
    let pass = seen.iter().any(|(_, n)| *n == only_t) && seen.iter().any(|(_, n)| *n == t_and_v);
    let detail = seen
        .iter()
        .map(|(o, n)| format!("{o:?} -> {:?}", n.iter().map(|x| x.0).collect::<Vec<_>>()))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome { pass, detail }
}

struct SeedRuns {
    seed: u64,
    smecn: SimReport,
    mecn: SimReport,
}

fn full_scale_runs(seeds: u64) -> Vec<SeedRuns> {
    (0..seeds)
        .map(|seed| {
            let run = |protocol| {
                init_sim(ScenarioConfig { seed, protocol, ..ScenarioConfig::default() }).unwrap().run().unwrap()
            };
            SeedRuns { seed, smecn: run(Protocol::Smecn), mecn: run(Protocol::Mecn) }
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_7(runs: &[SeedRuns]) -> Outcome {
    let s = mean(runs.iter().map(|r| r.smecn.summary.initial_mean_degree));
    let m = mean(runs.iter().map(|r| r.mecn.summary.initial_mean_degree));
    let ordered = runs
        .iter()
        .filter(|r| r.mecn.summary.initial_mean_degree > r.smecn.summary.initial_mean_degree)
        .count();
    Outcome {
        pass: (3.1..=4.2).contains(&m) && (2.3..=3.3).contains(&s) && ordered == runs.len(),
        detail: format!("mean degree MECN {m:.3}, SMECN {s:.3}; MECN > SMECN on {ordered}/{} seeds", runs.len()),
    }
}

fn criterion_8(runs: &[SeedRuns]) -> Outcome {
    let s = mean(runs.iter().map(|r| r.smecn.summary.initial_mean_power));
    let m = mean(runs.iter().map(|r| r.mecn.summary.initial_mean_power));
    let ratio = m / s;
    Outcome { pass: (1.2..=1.8).contains(&ratio), detail: format!("mean p(u) ratio MECN/SMECN {ratio:.3}") }
}

fn criterion_9(runs: &[SeedRuns]) -> Outcome {
    let ordered = runs
        .iter()
        .filter(|r| {
            let (s, m) = (&r.smecn.summary, &r.mecn.summary);
            s.final_alive >= m.final_alive && s.final_sink_connected >= m.final_sink_connected
        })
        .count();
    let cheaper = runs
        .iter()
        .filter(|r| r.smecn.summary.energy_consumed_mean < r.mecn.summary.energy_consumed_mean)
        .count();
    let dead = |f: fn(&SeedRuns) -> &SimReport| {
        mean(runs.iter().map(|r| 1.0 - f(r).summary.final_alive as f64 / f(r).summary.node_count as f64))
    };
    Outcome {
        pass: ordered as f64 >= 0.9 * runs.len() as f64 && cheaper == runs.len(),
        detail: format!(
            "alive and sink-connected ordering on {ordered}/{n} seeds, lower energy per node on {cheaper}/{n}; \
             mean dead fraction SMECN {:.2}, MECN {:.2}",
            dead(|r| &r.smecn),
            dead(|r| &r.mecn),
            n = runs.len()
        ),
    }
}

fn criterion_10(runs: &[SeedRuns]) -> Outcome {
    let worst = runs
        .iter()
        .flat_map(|r| [&r.smecn, &r.mecn])
        .map(|rep| {
            let s = &rep.summary;
            (s.energy_drawn - s.energy_debited).abs() / s.energy_debited.max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    let mut identical = true;
    for r in runs.iter().take(2) {
        for (protocol, first) in [(Protocol::Smecn, &r.smecn), (Protocol::Mecn, &r.mecn)] {
            let again =
                init_sim(ScenarioConfig { seed: r.seed, protocol, ..ScenarioConfig::default() }).unwrap().run().unwrap();
            identical &= again.metrics.to_csv_string().unwrap() == first.metrics.to_csv_string().unwrap();
        }
    }
    Outcome {
        pass: worst <= 1e-6 && identical,
        detail: format!(
            "worst conservation error {worst:.2e} over {} runs; reruns byte-identical: {identical}",
            2 * runs.len()
        ),
    }
}

fn main() {
    let mut all = true;
    let mut record = |number, name, started, outcome: Outcome| {
        report(number, name, started, &outcome);
        all &= outcome.pass;
    };

    let started = Instant::now();
    let instances = oracle_instances();
    let runs = oracle_runs(&instances);
    record(1, "SMECN matches E2", started, criterion_1(&runs));
    record(2, "SMECN has the minimum-energy property", started, criterion_2(&runs));
    record(3, "SMECN within MECN", started, criterion_3(&runs));

    let started = Instant::now();
    record(4, "E_min minimality", started, criterion_4());
    let started = Instant::now();
    record(5, "E2 differs from E_min", started, criterion_5());
    let started = Instant::now();
    record(6, "MECN order dependence", started, criterion_6());

    let started = Instant::now();
    let full = full_scale_runs(20);
    record(7, "degree statistics", started, criterion_7(&full));
    record(8, "power ratio", started, criterion_8(&full));
    record(9, "lifetime ordering", started, criterion_9(&full));
    let started = Instant::now();
    record(10, "conservation and determinism", started, criterion_10(&full));

    if !all {
        std::process::exit(1);
    }
}
