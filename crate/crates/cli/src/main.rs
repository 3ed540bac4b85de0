use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use minpower::doc::{compute_topology, to_json_string, write_json, GraphDocument, Method, ScenarioDocument, TopologyOptions};
use minpower::sim::{Placement, ScenarioConfig, SimReport, SimSummary, Simulation, SinkPlacement};
use minpower::topology::{build_reference_graph, compute_emin, has_min_energy_property, NetworkGraph, NodeRecord};
use minpower::{run_protocol, FlipOrder, PowerModel, Protocol, SamplingSpec};
use rayon::prelude::*;
use serde::Serialize;

const SAMPLING_ENV: &str = "MINPOWER_SAMPLING";

#[derive(Parser)]
#[command(name = "minpower-net", version, about = "Minimum-energy topology control for wireless networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Place nodes at random and write a scenario document.
    Generate(GenerateArgs),
    /// Compute edge sets for one or more methods.
    Topo(TopoArgs),
    /// Check the minimum-energy and containment properties.
    Verify(VerifyArgs),
    /// Run the lifetime simulation and write the metrics CSV.
    Simulate(SimulateArgs),
    /// Run both protocols on several seeds and tabulate the ratios.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SamplingArgs {
    /// Rays of the containment grid [default: $MINPOWER_SAMPLING or 1024].
    #[arg(long)]
    rays: Option<usize>,
    /// Radial samples per ray [default: $MINPOWER_SAMPLING or 128].
    #[arg(long)]
    radii: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 1500.0)]
    width: f64,
    #[arg(long, default_value_t = 1500.0)]
    height: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, default_value_t = 4.0)]
    n: f64,
    #[arg(long, default_value_t = 0.0)]
    c: f64,
    /// Maximum transmission range in meters; sets p_max = t * range^n.
    #[arg(long, conflicts_with = "p_max")]
    range: Option<f64>,
    #[arg(long)]
    p_max: Option<f64>,
    /// boundary-midpoint, corner, or an explicit `x,y`.
    #[arg(long, default_value = "boundary-midpoint", value_parser = parse_sink)]
    sink: SinkPlacement,
    /// Initial energy per node.
    #[arg(long)]
    energy: Option<f64>,
    #[arg(long)]
    protocol: Option<Protocol>,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Output path; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TopoArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated: reference, smecn, mecn, e2, emin.
    #[arg(long, value_delimiter = ',', default_value = "smecn,mecn")]
    methods: Vec<Method>,
    #[arg(long)]
    order: Option<FlipOrder>,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "smecn", conflicts_with = "graph")]
    method: Method,
    /// Verify an explicit graph document instead of a computed method.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    order: Option<FlipOrder>,
    /// Re-place nodes for this many consecutive seeds starting at the scenario seed.
    #[arg(long, conflicts_with = "graph")]
    seeds: Option<u64>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    protocol: Option<Protocol>,
    #[arg(long)]
    duration: Option<f64>,
    /// Re-place nodes from this seed instead of using listed positions.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    energy: Option<f64>,
    #[arg(long)]
    order: Option<FlipOrder>,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Metrics CSV; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Write the event trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the run summary as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Write a gnuplot script that plots the metrics CSV.
    #[arg(long, requires = "out")]
    gnuplot: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    duration: Option<f64>,
    /// Seeds as `a..b` (end exclusive) or a comma-separated list.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    #[arg(long)]
    energy: Option<f64>,
    #[arg(long)]
    order: Option<FlipOrder>,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    jobs: Option<usize>,
    /// Report CSV; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad seed range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad seed range end: {e}"))?;
        (a..b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|e| format!("bad seed '{x}': {e}"))).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("need at least one seed".into());
    }
    Ok(Seeds(seeds))
}

fn parse_sink(s: &str) -> Result<SinkPlacement, String> {
    match s {
        "boundary-midpoint" => Ok(SinkPlacement::BoundaryMidpoint),
        "corner" => Ok(SinkPlacement::Corner),
        other => {
            let (x, y) = other.split_once(',').ok_or_else(|| format!("unknown sink rule '{other}'"))?;
            let x: f64 = x.trim().parse().map_err(|e| format!("bad sink x: {e}"))?;
            let y: f64 = y.trim().parse().map_err(|e| format!("bad sink y: {e}"))?;
            Ok(SinkPlacement::Explicit { x, y })
        }
    }
}

/// Signals a failed property check (exit code 1).
#[derive(Debug)]
struct PropertyFailure;

impl std::fmt::Display for PropertyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("property check failed")
    }
}

impl std::error::Error for PropertyFailure {}

fn env_sampling() -> anyhow::Result<Option<SamplingSpec>> {
    let Ok(value) = std::env::var(SAMPLING_ENV) else {
        return Ok(None);
    };
    let (rays, radii) =
        value.split_once(',').with_context(|| format!("{SAMPLING_ENV} must look like `rays,radii`, got `{value}`"))?;
    let spec = SamplingSpec::new(
        rays.trim().parse().with_context(|| format!("bad ray count in {SAMPLING_ENV}"))?,
        radii.trim().parse().with_context(|| format!("bad radial count in {SAMPLING_ENV}"))?,
    )?;
    Ok(Some(spec))
}

/// Flags win over the document, which wins over the environment default.
fn resolve_sampling(flags: &SamplingArgs, document: Option<SamplingSpec>) -> anyhow::Result<SamplingSpec> {
    let base = match document {
        Some(spec) => spec,
        None if flags.rays.is_some() && flags.radii.is_some() => SamplingSpec::default(),
        None => env_sampling()?.unwrap_or_default(),
    };
    let spec = SamplingSpec { rays: flags.rays.unwrap_or(base.rays), radial_samples: flags.radii.unwrap_or(base.radial_samples) };
    spec.validate()?;
    Ok(spec)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_scenario(path: &Path) -> anyhow::Result<ScenarioDocument> {
    ScenarioDocument::load(path).with_context(|| format!("reading scenario {}", path.display()))
}

fn generate(args: GenerateArgs) -> anyhow::Result<()> {
    let p_max = match (args.range, args.p_max) {
        (_, Some(p)) => p,
        (range, None) => args.t * range.unwrap_or(500.0).powf(args.n),
    };
    let model = PowerModel::new(args.t, args.n, args.c, p_max)?;
    let defaults = ScenarioConfig::default();
    let cfg = ScenarioConfig {
        node_count: args.count,
        width: args.width,
        height: args.height,
        seed: args.seed,
        model,
        protocol: args.protocol.unwrap_or(defaults.protocol),
        sink: args.sink,
        initial_energy: args.energy.or(defaults.initial_energy),
        sampling: if args.sampling.rays.is_some() || args.sampling.radii.is_some() {
            Some(resolve_sampling(&args.sampling, None)?)
        } else {
            None
        },
        ..defaults
    };
    let (doc, placement) = ScenarioDocument::generate(cfg)?;
    if placement.resamples > 0 {
        eprintln!("placement resampled {} time(s) to reach a connected network", placement.resamples);
    }
    emit(args.out.as_deref(), &to_json_string(&doc)?)
}

fn topo(args: TopoArgs) -> anyhow::Result<()> {
    let doc = load_scenario(&args.scenario)?;
    let cfg = &doc.scenario;
    let options = TopologyOptions {
        schedule: cfg.schedule(),
        sampling: resolve_sampling(&args.sampling, cfg.sampling)?,
        flip_order: args.order.unwrap_or(cfg.flip_order),
    };
    let nodes = doc.network_nodes()?;
    let topology = compute_topology(cfg.model, &nodes, &args.methods, options)?;
    for (method, summary) in &topology.summary {
        eprintln!(
            "{method}: {} edges, mean out-degree {:.3}, mean power {:.4e}",
            summary.edge_count, summary.mean_out_degree, summary.mean_power
        );
    }
    emit(args.out.as_deref(), &to_json_string(&topology)?)
}

fn check(label: &str, name: &str, ok: bool, all: &mut bool) {
    println!("{} {label}{name}", if ok { "PASS" } else { "FAIL" });
    *all &= ok;
}

struct VerifyContext {
    order: FlipOrder,
    sampling: SamplingSpec,
}

fn protocol_graph(cfg: &ScenarioConfig, nodes: &[NodeRecord], protocol: Protocol, ctx: &VerifyContext) -> anyhow::Result<NetworkGraph> {
    Ok(run_protocol(nodes, cfg.model, cfg.schedule(), ctx.sampling, protocol, ctx.order)?.graph)
}

fn verify_instance(
    label: &str,
    reference: &NetworkGraph,
    graph: &NetworkGraph,
    pair: Option<(&NetworkGraph, &NetworkGraph)>,
    all: &mut bool,
) -> anyhow::Result<()> {
    let spans = graph.node_count() == reference.node_count();
    let inside = spans && graph.is_subgraph_of(reference);
    check(label, "subgraph of reference", inside, all);
    let min_energy = inside && has_min_energy_property(reference, graph)?;
    check(label, "minimum-energy property", min_energy, all);
    check(label, "contains emin", compute_emin(reference).is_subgraph_of(graph), all);
    if let Some((smecn, mecn)) = pair {
        check(label, "smecn within mecn", smecn.is_subgraph_of(mecn), all);
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> anyhow::Result<()> {
    let mut all = true;
    if let Some(path) = &args.graph {
        let doc: GraphDocument = minpower::doc::read_json(path).with_context(|| format!("reading graph {}", path.display()))?;
        let graph = doc.to_graph()?;
        let reference = build_reference_graph(graph.nodes(), doc.model)?;
        verify_instance("", &reference, &graph, None, &mut all)?;
    } else {
        let Some(path) = &args.scenario else {
            bail!(clap_usage("verify needs --scenario or --graph"));
        };
        let doc = load_scenario(path)?;
        let ctx = VerifyContext {
            order: args.order.unwrap_or(doc.scenario.flip_order),
            sampling: resolve_sampling(&args.sampling, doc.scenario.sampling)?,
        };
        let instances: Vec<(String, Vec<NodeRecord>)> = match args.seeds {
            None => vec![(String::new(), doc.network_nodes()?)],
            Some(count) => (0..count)
                .map(|k| {
                    let cfg = ScenarioConfig { seed: doc.scenario.seed + k, ..doc.scenario.clone() };
                    Ok((format!("seed {}: ", cfg.seed), Placement::random(&cfg)?.nodes))
                })
                .collect::<anyhow::Result<_>>()?,
        };
        for (label, nodes) in instances {
            let cfg = &doc.scenario;
            let reference = build_reference_graph(&nodes, cfg.model)?;
            let graph = match args.method {
                Method::Smecn => protocol_graph(cfg, &nodes, Protocol::Smecn, &ctx)?,
                Method::Mecn => protocol_graph(cfg, &nodes, Protocol::Mecn, &ctx)?,
                Method::E2 => minpower::compute_e2(&reference),
                Method::Emin => compute_emin(&reference),
                Method::Reference => reference.clone(),
            };
            if matches!(args.method, Method::Smecn | Method::Mecn) {
                let other = if args.method == Method::Smecn { Protocol::Mecn } else { Protocol::Smecn };
                let other = protocol_graph(cfg, &nodes, other, &ctx)?;
                let (smecn, mecn) = if args.method == Method::Smecn { (&graph, &other) } else { (&other, &graph) };
                verify_instance(&label, &reference, &graph, Some((smecn, mecn)), &mut all)?;
            } else {
                verify_instance(&label, &reference, &graph, None, &mut all)?;
            }
        }
    }
    if all {
        Ok(())
    } else {
        Err(PropertyFailure.into())
    }
}

/// Config for a run with flag overrides applied.
fn run_config(
    doc: &ScenarioDocument,
    sampling: &SamplingArgs,
    duration: Option<f64>,
    energy: Option<f64>,
    order: Option<FlipOrder>,
) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = doc.scenario.clone();
    cfg.sampling = Some(resolve_sampling(sampling, cfg.sampling)?);
    if let Some(d) = duration {
        cfg.duration = d;
    }
    if let Some(e) = energy {
        cfg.initial_energy = Some(e);
    }
    if let Some(o) = order {
        cfg.flip_order = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gnuplot_script(csv: &Path) -> String {
    let file = csv.display();
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 'time (s)'\n\
         set ylabel 'nodes'\n\
         plot '{file}' using 1:2 with lines title 'alive', \\\n     '{file}' using 1:3 with lines title 'connected to sink'\n\
         pause -1\n\
         set ylabel 'average number of neighbors'\n\
         plot '{file}' using 1:4 with lines title 'mean degree'\n\
         pause -1\n"
    )
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let doc = load_scenario(&args.scenario)?;
    let mut cfg = run_config(&doc, &args.sampling, args.duration, args.energy, args.order)?;
    if let Some(p) = args.protocol {
        cfg.protocol = p;
    }
    let placement = match args.seed {
        Some(seed) => {
            cfg.seed = seed;
            Placement::random(&cfg)?
        }
        None => doc.placement()?,
    };
    let mut sim = Simulation::with_placement(cfg, placement)?;
    if args.trace.is_some() {
        sim.enable_trace();
    }
    let report = sim.run()?;
    emit(args.out.as_deref(), &report.metrics.to_csv_string()?)?;
    if let Some(path) = &args.trace {
        let file = std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        report.write_trace(std::io::BufWriter::new(file))?;
    }
    if let Some(path) = &args.summary {
        write_json(path, &report.summary)?;
    }
    if let (Some(path), Some(csv)) = (&args.gnuplot, &args.out) {
        std::fs::write(path, gnuplot_script(csv))?;
    }
    let s = &report.summary;
    eprintln!(
        "{}: {} of {} alive, {} connected to sink, {} packets delivered",
        s.protocol, s.final_alive, s.node_count, s.final_sink_connected, s.packets_delivered
    );
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    seed: String,
    smecn_mean_degree: f64,
    mecn_mean_degree: f64,
    degree_ratio: f64,
    smecn_mean_power: f64,
    mecn_mean_power: f64,
    power_ratio: f64,
    smecn_energy_per_node: f64,
    mecn_energy_per_node: f64,
    energy_ratio: f64,
    smecn_alive_fraction: f64,
    mecn_alive_fraction: f64,
    smecn_sink_connected_fraction: f64,
    mecn_sink_connected_fraction: f64,
    smecn_delivered: f64,
    mecn_delivered: f64,
}

impl CompareRow {
    fn from_pair(seed: u64, s: &SimSummary, m: &SimSummary) -> Self {
        let frac = |k: usize, s: &SimSummary| if s.node_count == 0 { 0.0 } else { k as f64 / s.node_count as f64 };
        Self {
            seed: seed.to_string(),
            smecn_mean_degree: s.initial_mean_degree,
            mecn_mean_degree: m.initial_mean_degree,
            degree_ratio: m.initial_mean_degree / s.initial_mean_degree,
            smecn_mean_power: s.initial_mean_power,
            mecn_mean_power: m.initial_mean_power,
            power_ratio: m.initial_mean_power / s.initial_mean_power,
            smecn_energy_per_node: s.energy_consumed_mean,
            mecn_energy_per_node: m.energy_consumed_mean,
            energy_ratio: m.energy_consumed_mean / s.energy_consumed_mean,
            smecn_alive_fraction: frac(s.final_alive, s),
            mecn_alive_fraction: frac(m.final_alive, m),
            smecn_sink_connected_fraction: frac(s.final_sink_connected, s),
            mecn_sink_connected_fraction: frac(m.final_sink_connected, m),
            smecn_delivered: s.packets_delivered as f64,
            mecn_delivered: m.packets_delivered as f64,
        }
    }

    fn values(&self) -> [f64; 15] {
        [
            self.smecn_mean_degree,
            self.mecn_mean_degree,
            self.degree_ratio,
            self.smecn_mean_power,
            self.mecn_mean_power,
            self.power_ratio,
            self.smecn_energy_per_node,
            self.mecn_energy_per_node,
            self.energy_ratio,
            self.smecn_alive_fraction,
            self.mecn_alive_fraction,
            self.smecn_sink_connected_fraction,
            self.mecn_sink_connected_fraction,
            self.smecn_delivered,
            self.mecn_delivered,
        ]
    }

    fn from_values(seed: &str, v: [f64; 15]) -> Self {
        Self {
            seed: seed.to_string(),
            smecn_mean_degree: v[0],
            mecn_mean_degree: v[1],
            degree_ratio: v[2],
            smecn_mean_power: v[3],
            mecn_mean_power: v[4],
            power_ratio: v[5],
            smecn_energy_per_node: v[6],
            mecn_energy_per_node: v[7],
            energy_ratio: v[8],
            smecn_alive_fraction: v[9],
            mecn_alive_fraction: v[10],
            smecn_sink_connected_fraction: v[11],
            mecn_sink_connected_fraction: v[12],
            smecn_delivered: v[13],
            mecn_delivered: v[14],
        }
    }
}

/// Mean and sample standard deviation (zero for a single row) per column.
fn aggregate(rows: &[CompareRow]) -> (CompareRow, CompareRow) {
    let count = rows.len() as f64;
    let mut mean = [0.0; 15];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row.values()) {
            *m += v / count;
        }
    }
    let mut std = [0.0; 15];
    if rows.len() > 1 {
        for row in rows {
            for ((s, v), m) in std.iter_mut().zip(row.values()).zip(mean) {
                *s += (v - m).powi(2) / (count - 1.0);
            }
        }
        std.iter_mut().for_each(|s| *s = s.sqrt());
    }
    (CompareRow::from_values("mean", mean), CompareRow::from_values("std", std))
}

fn compare(args: CompareArgs) -> anyhow::Result<()> {
    let doc = load_scenario(&args.scenario)?;
    let cfg = run_config(&doc, &args.sampling, args.duration, args.energy, args.order)?;
    let seeds = args.seeds.map(|s| s.0);
    let jobs: Vec<(u64, Protocol)> = seeds
        .clone()
        .unwrap_or_else(|| vec![cfg.seed])
        .into_iter()
        .flat_map(|seed| [(seed, Protocol::Smecn), (seed, Protocol::Mecn)])
        .collect();
    let run_one = |&(seed, protocol): &(u64, Protocol)| -> anyhow::Result<((u64, Protocol), SimReport)> {
        let cfg = ScenarioConfig { seed, protocol, ..cfg.clone() };
        let placement = if seeds.is_some() { Placement::random(&cfg)? } else { doc.placement()? };
        Ok(((seed, protocol), Simulation::with_placement(cfg, placement)?.run()?))
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs.unwrap_or(0)).build()?;
    let results: BTreeMap<(u64, Protocol), SimReport> =
        pool.install(|| jobs.par_iter().map(run_one).collect::<anyhow::Result<_>>())?;

    let mut rows = Vec::new();
    let mut seen: Vec<u64> = jobs.iter().map(|j| j.0).collect();
    seen.dedup();
    for seed in seen {
        let s = &results[&(seed, Protocol::Smecn)].summary;
        let m = &results[&(seed, Protocol::Mecn)].summary;
        rows.push(CompareRow::from_pair(seed, s, m));
    }
    let (mean, std) = aggregate(&rows);
    eprintln!(
        "mean over {} seed(s): degree ratio {:.3}, power ratio {:.3}, energy ratio {:.3}, alive smecn {:.3} mecn {:.3}",
        rows.len(),
        mean.degree_ratio,
        mean.power_ratio,
        mean.energy_ratio,
        mean.smecn_alive_fraction,
        mean.mecn_alive_fraction
    );
    rows.push(mean);
    rows.push(std);
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        writer.serialize(row)?;
    }
    let text = String::from_utf8(writer.into_inner()?)?;
    emit(args.out.as_deref(), &text)
}

fn clap_usage(msg: &str) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.to_string()))
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<PropertyFailure>().is_some() {
        return 1;
    }
    let infeasible = err.chain().any(|cause| {
        matches!(cause.downcast_ref::<minpower::Error>(), Some(minpower::Error::Unconnectable { .. }))
    });
    if infeasible {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => generate(args),
        Command::Topo(args) => topo(args),
        Command::Verify(args) => verify(args),
        Command::Simulate(args) => simulate(args),
        Command::Compare(args) => compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if err.downcast_ref::<PropertyFailure>().is_none() {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
