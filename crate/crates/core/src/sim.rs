//! Discrete-event lifetime simulation.
//!
//! Every node sends constant-rate traffic to a boundary sink along the
//! cheapest path in the protocol graph, beacons at its protocol power, and
//! dies when its energy runs out. A death triggers a fresh neighbor search at
//! every node that had discovered the dead node.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::{Location, PowerModel};
use crate::protocol::{
    union_graph, EscalationSchedule, FlipOrder, NeighborSearch, NodeOutcome, Protocol,
};
use crate::region::SamplingSpec;
use crate::topology::{build_reference_graph, validate_nodes, NetworkGraph, NodeId, NodeRecord};

const NANOS: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SinkPlacement {
    /// Midpoint of the bottom edge.
    BoundaryMidpoint,
    /// The origin corner.
    Corner,
    Explicit { x: f64, y: f64 },
}

impl SinkPlacement {
    pub fn location(&self, width: f64, height: f64) -> Location {
        let _ = height;
        match *self {
            SinkPlacement::BoundaryMidpoint => Location::new(width / 2.0, 0.0),
            SinkPlacement::Corner => Location::new(0.0, 0.0),
            SinkPlacement::Explicit { x, y } => Location::new(x, y),
        }
    }
}

/// Everything needed to reproduce a run. Defaults follow the 200-node,
/// 1500 m × 1500 m, 500 m range, `n = 4`, `c = 0` setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub node_count: usize,
    pub width: f64,
    pub height: f64,
    pub seed: u64,
    pub model: PowerModel,
    /// `None` means `p_max / 2^10`, doubling.
    pub schedule: Option<EscalationSchedule>,
    pub protocol: Protocol,
    pub flip_order: FlipOrder,
    /// `None` means [`SamplingSpec::default`].
    pub sampling: Option<SamplingSpec>,
    /// Packets per second per node.
    pub traffic_rate: f64,
    pub packet_bytes: u32,
    pub beacon_bytes: u32,
    pub bandwidth_bps: f64,
    /// Seconds.
    pub duration: f64,
    /// Power-unit seconds per node; `None` never runs out.
    pub initial_energy: Option<f64>,
    pub beacon_interval: f64,
    pub sample_interval: f64,
    /// Per-hop processing delay in seconds, used for the delay estimate.
    pub processing_delay: f64,
    pub sink: SinkPlacement,
    pub max_resamples: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            node_count: 200,
            width: 1500.0,
            height: 1500.0,
            seed: 0,
            model: PowerModel { t: 1.0, n: 4.0, c: 0.0, p_max: 500f64.powi(4) },
            schedule: None,
            protocol: Protocol::Smecn,
            flip_order: FlipOrder::ById,
            sampling: None,
            traffic_rate: 0.5,
            packet_bytes: 512,
            beacon_bytes: 64,
            bandwidth_bps: 2.0e6,
            duration: 1200.0,
            initial_energy: Some(DEFAULT_ENERGY_BUDGET),
            beacon_interval: 1.0,
            sample_interval: 10.0,
            processing_delay: 1e-3,
            sink: SinkPlacement::BoundaryMidpoint,
            max_resamples: 64,
        }
    }
}

/// Default per-node budget in power-unit seconds for `t = 1, n = 4`.
pub const DEFAULT_ENERGY_BUDGET: f64 = 1.5e10;

impl ScenarioConfig {
    pub fn schedule(&self) -> EscalationSchedule {
        self.schedule.unwrap_or_else(|| EscalationSchedule::default_for(&self.model))
    }

    pub fn sampling(&self) -> SamplingSpec {
        self.sampling.unwrap_or_default()
    }

    /// Airtime of one data packet in seconds.
    pub fn packet_airtime(&self) -> f64 {
        self.packet_bytes as f64 * 8.0 / self.bandwidth_bps
    }

    pub fn beacon_airtime(&self) -> f64 {
        self.beacon_bytes as f64 * 8.0 / self.bandwidth_bps
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule().validate(&self.model)?;
        self.sampling().validate()?;
        let positive = [
            ("width", self.width),
            ("height", self.height),
            ("traffic_rate", self.traffic_rate),
            ("bandwidth_bps", self.bandwidth_bps),
            ("beacon_interval", self.beacon_interval),
            ("sample_interval", self.sample_interval),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidScenario(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::InvalidScenario(format!("duration must be >= 0, got {}", self.duration)));
        }
        if !(self.processing_delay.is_finite() && self.processing_delay >= 0.0) {
            return Err(Error::InvalidScenario("processing_delay must be >= 0".into()));
        }
        if let Some(e) = self.initial_energy {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidScenario(format!("initial_energy must be positive, got {e}")));
            }
        }
        if self.packet_bytes == 0 || self.beacon_bytes == 0 {
            return Err(Error::InvalidScenario("packet and beacon sizes must be positive".into()));
        }
        if let SinkPlacement::Explicit { x, y } = self.sink {
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::InvalidScenario("sink location must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Node positions plus the sink, which always takes the next free id.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub nodes: Vec<NodeRecord>,
    pub sink: NodeRecord,
    pub resamples: u32,
}

impl Placement {
    pub fn world(&self) -> Vec<NodeRecord> {
        let mut all = self.nodes.clone();
        all.push(self.sink);
        all
    }

    /// Uses the given nodes and places the sink per `cfg`; fails if the
    /// reference graph (sink included) is not connected.
    pub fn explicit(cfg: &ScenarioConfig, nodes: Vec<NodeRecord>) -> Result<Self> {
        let next = nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0);
        let sink = NodeRecord { id: NodeId(next), loc: cfg.sink.location(cfg.width, cfg.height) };
        let placement = Placement { nodes, sink, resamples: 0 };
        let world = placement.world();
        validate_nodes(&world)?;
        if !build_reference_graph(&world, cfg.model)?.is_strongly_connected() {
            return Err(Error::Unconnectable { attempts: 1 });
        }
        Ok(placement)
    }

    /// Uniform random placement, resampled on derived streams until the
    /// reference graph including the sink is connected.
    pub fn random(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let sink_loc = cfg.sink.location(cfg.width, cfg.height);
        for attempt in 0..=cfg.max_resamples {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(attempt as u64);
            let nodes: Vec<NodeRecord> = (0..cfg.node_count)
                .map(|i| NodeRecord {
                    id: NodeId(i as u32),
                    loc: Location::new(rng.gen_range(0.0..cfg.width), rng.gen_range(0.0..cfg.height)),
                })
                .collect();
            let placement = Placement {
                sink: NodeRecord { id: NodeId(cfg.node_count as u32), loc: sink_loc },
                nodes,
                resamples: attempt,
            };
            let world = placement.world();
            if validate_nodes(&world).is_err() {
                continue;
            }
            if build_reference_graph(&world, cfg.model)?.is_strongly_connected() {
                return Ok(placement);
            }
        }
        Err(Error::Unconnectable { attempts: cfg.max_resamples + 1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub time: f64,
    pub alive: usize,
    pub sink_connected: usize,
    pub mean_degree: f64,
    pub mean_power: f64,
    pub packets_delivered: u64,
    pub energy_consumed_mean: f64,
    pub mean_hops: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub rows: Vec<MetricsRow>,
}

impl MetricsSeries {
    pub const HEADER: [&'static str; 8] = [
        "time",
        "alive",
        "sink_connected",
        "mean_degree",
        "mean_power",
        "packets_delivered",
        "energy_consumed_mean",
        "mean_hops",
    ];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.rows {
            writer.serialize(row)?;
        }
        if self.rows.is_empty() {
            writer.write_record(Self::HEADER)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    Death,
    Reconfiguration,
    Undeliverable,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: TraceKind,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub protocol: Protocol,
    pub seed: u64,
    pub resamples: u32,
    pub node_count: usize,
    pub initial_mean_degree: f64,
    pub initial_mean_power: f64,
    pub final_alive: usize,
    pub final_sink_connected: usize,
    pub packets_generated: u64,
    pub packets_delivered: u64,
    pub packets_undeliverable: u64,
    pub packets_dropped: u64,
    pub energy_debited: f64,
    /// `Σ (initial − remaining)` over non-sink nodes.
    pub energy_drawn: f64,
    pub energy_consumed_mean: f64,
    pub mean_delay: f64,
    pub deaths: usize,
    pub reconfigurations: usize,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub metrics: MetricsSeries,
    pub summary: SimSummary,
    pub trace: Vec<TraceRecord>,
}

impl SimReport {
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        for record in &self.trace {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Sample,
    Beacon(usize),
    Packet(usize),
}

/// Energy charged for a packet, hop by hop.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub delivered: bool,
    pub hops_completed: usize,
    /// `(node, amount)` in the order charged.
    pub debits: Vec<(NodeId, f64)>,
    pub deaths: Vec<NodeId>,
}

/// Mutable simulation state.
pub struct Simulation {
    cfg: ScenarioConfig,
    schedule: EscalationSchedule,
    nodes: Vec<NodeRecord>,
    index: HashMap<NodeId, usize>,
    sink: usize,
    resamples: u32,
    initial: Vec<f64>,
    energy: Vec<f64>,
    consumed: Vec<f64>,
    alive: Vec<bool>,
    outcomes: Vec<NodeOutcome>,
    graph: NetworkGraph,
    to_sink: Option<Vec<f64>>,
    queue: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
    clock: u64,
    packet_period: u64,
    beacon_period: u64,
    sample_period: u64,
    packets_generated: u64,
    packets_delivered: u64,
    packets_undeliverable: u64,
    packets_dropped: u64,
    hops_delivered: u64,
    energy_debited: f64,
    deaths: usize,
    reconfigurations: usize,
    initial_mean_degree: f64,
    initial_mean_power: f64,
    metrics: MetricsSeries,
    trace: Option<Vec<TraceRecord>>,
}

fn to_nanos(seconds: f64) -> u64 {
    (seconds * NANOS).round() as u64
}

impl Simulation {
    /// Random placement from `cfg.seed`.
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        let placement = Placement::random(&cfg)?;
        Self::with_placement(cfg, placement)
    }

    pub fn with_placement(cfg: ScenarioConfig, placement: Placement) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule();
        let mut nodes = placement.world();
        nodes.sort_by_key(|n| n.id);
        validate_nodes(&nodes)?;
        let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let sink = index[&placement.sink.id];
        let budget = cfg.initial_energy.unwrap_or(f64::INFINITY);
        let count = nodes.len();
        let initial: Vec<f64> = (0..count).map(|i| if i == sink { f64::INFINITY } else { budget }).collect();

        let mut outcomes = Vec::with_capacity(count);
        for node in &nodes {
            outcomes.push(
                NeighborSearch::new(node, &nodes, cfg.model, schedule, cfg.sampling(), cfg.protocol, cfg.flip_order)?
                    .run()?,
            );
        }
        let by_id: BTreeMap<NodeId, NodeOutcome> = outcomes.iter().map(|o| (o.id, o.clone())).collect();
        let graph = union_graph(cfg.model, &nodes, &by_id)?;

        let mut sim = Self {
            packet_period: to_nanos(1.0 / cfg.traffic_rate).max(1),
            beacon_period: to_nanos(cfg.beacon_interval).max(1),
            sample_period: to_nanos(cfg.sample_interval).max(1),
            schedule,
            index,
            sink,
            resamples: placement.resamples,
            energy: initial.clone(),
            initial,
            consumed: vec![0.0; count],
            alive: vec![true; count],
            outcomes,
            graph,
            to_sink: None,
            queue: BinaryHeap::new(),
            seq: 0,
            clock: 0,
            packets_generated: 0,
            packets_delivered: 0,
            packets_undeliverable: 0,
            packets_dropped: 0,
            hops_delivered: 0,
            energy_debited: 0.0,
            deaths: 0,
            reconfigurations: 0,
            initial_mean_degree: 0.0,
            initial_mean_power: 0.0,
            metrics: MetricsSeries::default(),
            trace: None,
            nodes,
            cfg,
        };
        sim.initial_mean_degree = sim.mean_degree();
        sim.initial_mean_power = sim.mean_power();

        sim.push(0, Event::Sample);
        let mut phases = ChaCha8Rng::seed_from_u64(sim.cfg.seed);
        phases.set_stream(u64::MAX);
        for i in 0..count {
            if i == sim.sink {
                continue;
            }
            let packet_at = phases.gen_range(0..sim.packet_period);
            let beacon_at = phases.gen_range(0..sim.beacon_period);
            sim.push(packet_at, Event::Packet(i));
            sim.push(beacon_at, Event::Beacon(i));
        }
        Ok(sim)
    }

    /// Records deaths, reconfigurations and lost packets.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    fn push(&mut self, at: u64, event: Event) {
        self.queue.push(Reverse((at, self.seq, event)));
        self.seq += 1;
    }

    fn record(&mut self, kind: TraceKind, nodes: Vec<NodeId>) {
        let time = self.clock as f64 / NANOS;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord { time, kind, nodes });
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn clock(&self) -> f64 {
        self.clock as f64 / NANOS
    }

    pub fn sink(&self) -> NodeId {
        self.nodes[self.sink].id
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.index.get(&id).is_some_and(|&i| self.alive[i])
    }

    pub fn energy(&self, id: NodeId) -> Option<f64> {
        self.index.get(&id).map(|&i| self.energy[i])
    }

    pub fn outcome(&self, id: NodeId) -> Option<&NodeOutcome> {
        self.index.get(&id).map(|&i| &self.outcomes[i])
    }

    /// Current protocol graph over every node; dead nodes are isolated.
    pub fn protocol_graph(&self) -> &NetworkGraph {
        &self.graph
    }

    /// Reference and protocol graphs restricted to the alive nodes.
    pub fn alive_graphs(&self) -> Result<(NetworkGraph, NetworkGraph)> {
        let world = self.alive_world();
        let reference = build_reference_graph(&world, self.cfg.model)?;
        let protocol = NetworkGraph::from_edges(
            self.cfg.model,
            &world,
            self.graph.edges().map(|(a, b, _)| (a, b)),
        )?;
        Ok((reference, protocol))
    }

    fn alive_world(&self) -> Vec<NodeRecord> {
        self.nodes.iter().zip(&self.alive).filter(|(_, a)| **a).map(|(n, _)| *n).collect()
    }

    fn regular(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| i != self.sink)
    }

    pub fn alive_count(&self) -> usize {
        self.regular().filter(|&i| self.alive[i]).count()
    }

    fn costs_to_sink(&mut self) -> &[f64] {
        if self.to_sink.is_none() {
            let sink_id = self.nodes[self.sink].id;
            self.to_sink = Some(self.graph.costs_to(sink_id).expect("sink present"));
        }
        self.to_sink.as_deref().expect("just computed")
    }

    pub fn sink_connected_count(&mut self) -> usize {
        let sink = self.sink;
        let alive = self.alive.clone();
        let costs = self.costs_to_sink();
        (0..costs.len()).filter(|&i| i != sink && alive[i] && costs[i].is_finite()).count()
    }

    pub fn mean_degree(&self) -> f64 {
        let alive: Vec<usize> = self.regular().filter(|&i| self.alive[i]).collect();
        if alive.is_empty() {
            return 0.0;
        }
        alive.iter().map(|&i| self.outcomes[i].neighbors.len()).sum::<usize>() as f64 / alive.len() as f64
    }

    pub fn mean_power(&self) -> f64 {
        let alive: Vec<usize> = self.regular().filter(|&i| self.alive[i]).collect();
        if alive.is_empty() {
            return 0.0;
        }
        alive.iter().map(|&i| self.outcomes[i].power).sum::<f64>() / alive.len() as f64
    }

    /// Mean energy consumed so far per non-sink node.
    pub fn energy_consumed_mean(&self) -> f64 {
        let count = self.nodes.len() - 1;
        if count == 0 {
            return 0.0;
        }
        self.regular().map(|i| self.consumed[i]).sum::<f64>() / count as f64
    }

    pub fn energy_debited(&self) -> f64 {
        self.energy_debited
    }

    /// `Σ (initial − remaining)` over non-sink nodes; with unlimited energy
    /// this falls back to the consumed totals.
    pub fn energy_drawn_from_batteries(&self) -> f64 {
        self.regular()
            .map(|i| if self.initial[i].is_finite() { self.initial[i] - self.energy[i] } else { self.consumed[i] })
            .sum()
    }

    /// Cheapest path to the sink over alive protocol edges, or `None`.
    pub fn route(&mut self, src: NodeId, dst: NodeId) -> Result<Option<Vec<NodeId>>> {
        let &s = self.index.get(&src).ok_or(Error::UnknownNode(src))?;
        if !self.alive[s] {
            return Err(Error::InvalidArgument(format!("node {src} is dead")));
        }
        if dst == self.nodes[self.sink].id {
            let costs = self.costs_to_sink().to_vec();
            return Ok(self.graph.trace_path(src, dst, &costs)?.map(|p| p.nodes));
        }
        Ok(self.graph.min_energy_path(src, dst)?.map(|p| p.nodes))
    }

    /// Returns the amount charged and whether the node could pay in full
    /// and stays alive.
    fn debit(&mut self, i: usize, amount: f64) -> (f64, bool) {
        if i == self.sink || amount <= 0.0 {
            return (0.0, true);
        }
        let before = self.energy[i];
        let charged = amount.min(before);
        self.energy[i] = if before > amount { before - charged } else { 0.0 };
        self.consumed[i] += charged;
        self.energy_debited += charged;
        (charged, before > amount)
    }

    /// Charges every hop of `path`: the sender pays `p(a, b) · T_pkt`, the
    /// receiver `c · T_pkt`. Stops at the first node that cannot pay; that
    /// node is drained to zero and reported dead.
    pub fn deliver_packet(&mut self, path: &[NodeId]) -> Result<Delivery> {
        let idx: Vec<usize> =
            path.iter().map(|id| self.index.get(id).copied().ok_or(Error::UnknownNode(*id))).collect::<Result<_>>()?;
        if let Some(&dead) = idx.iter().find(|&&i| !self.alive[i]) {
            return Err(Error::InvalidArgument(format!("node {} on the path is dead", self.nodes[dead].id)));
        }
        let airtime = self.cfg.packet_airtime();
        let model = self.cfg.model;
        let mut delivery = Delivery { delivered: true, hops_completed: 0, debits: Vec::new(), deaths: Vec::new() };
        for hop in idx.windows(2) {
            let (a, b) = (hop[0], hop[1]);
            let tx = model.transmit_power(&self.nodes[a].loc, &self.nodes[b].loc) * airtime;
            let (charged, sent) = self.debit(a, tx);
            delivery.debits.push((self.nodes[a].id, charged));
            if self.energy[a] <= 0.0 {
                delivery.deaths.push(self.nodes[a].id);
            }
            if !sent {
                delivery.delivered = false;
                break;
            }
            let rx = model.c * airtime;
            if rx > 0.0 && b != self.sink {
                let (charged, received) = self.debit(b, rx);
                delivery.debits.push((self.nodes[b].id, charged));
                if self.energy[b] <= 0.0 {
                    delivery.deaths.push(self.nodes[b].id);
                }
                if !received {
                    delivery.delivered = false;
                    break;
                }
            }
            delivery.hops_completed += 1;
        }
        Ok(delivery)
    }

    /// Charges one beacon at the node's protocol power.
    pub fn beacon_tick(&mut self, id: NodeId) -> Result<f64> {
        let &i = self.index.get(&id).ok_or(Error::UnknownNode(id))?;
        if !self.alive[i] {
            return Err(Error::InvalidArgument(format!("node {id} is dead")));
        }
        let amount = self.outcomes[i].power * self.cfg.beacon_airtime();
        let (charged, alive) = self.debit(i, amount);
        if !alive {
            self.on_node_death(id)?;
        }
        Ok(charged)
    }

    /// Removes a node and re-runs the neighbor search at every alive node that
    /// had discovered it.
    pub fn on_node_death(&mut self, id: NodeId) -> Result<()> {
        let &dead = self.index.get(&id).ok_or(Error::UnknownNode(id))?;
        if !self.alive[dead] {
            return Ok(());
        }
        self.alive[dead] = false;
        self.energy[dead] = 0.0;
        self.deaths += 1;
        self.record(TraceKind::Death, vec![id]);
        self.outcomes[dead].neighbors.clear();
        self.outcomes[dead].discovered.clear();
        self.outcomes[dead].power = 0.0;

        let world = self.alive_world();
        let affected: Vec<usize> =
            (0..self.nodes.len()).filter(|&i| self.alive[i] && self.outcomes[i].discovered.contains(&id)).collect();
        for &i in &affected {
            self.outcomes[i] = NeighborSearch::new(
                &self.nodes[i],
                &world,
                self.cfg.model,
                self.schedule,
                self.cfg.sampling(),
                self.cfg.protocol,
                self.cfg.flip_order,
            )?
            .run()?;
        }
        if !affected.is_empty() {
            self.reconfigurations += 1;
            let ids = affected.iter().map(|&i| self.nodes[i].id).collect();
            self.record(TraceKind::Reconfiguration, ids);
        }
        let by_id: BTreeMap<NodeId, NodeOutcome> = self.outcomes.iter().map(|o| (o.id, o.clone())).collect();
        self.graph = union_graph(self.cfg.model, &self.nodes, &by_id)?;
        self.to_sink = None;
        Ok(())
    }

    fn sample(&mut self) {
        let sink_connected = self.sink_connected_count();
        let row = MetricsRow {
            time: self.clock as f64 / NANOS,
            alive: self.alive_count(),
            sink_connected,
            mean_degree: self.mean_degree(),
            mean_power: self.mean_power(),
            packets_delivered: self.packets_delivered,
            energy_consumed_mean: self.energy_consumed_mean(),
            mean_hops: if self.packets_delivered == 0 {
                0.0
            } else {
                self.hops_delivered as f64 / self.packets_delivered as f64
            },
        };
        self.metrics.rows.push(row);
    }

    fn send_packet(&mut self, i: usize) -> Result<()> {
        self.packets_generated += 1;
        let src = self.nodes[i].id;
        let sink = self.nodes[self.sink].id;
        let Some(path) = self.route(src, sink)? else {
            self.packets_undeliverable += 1;
            self.record(TraceKind::Undeliverable, vec![src]);
            return Ok(());
        };
        let delivery = self.deliver_packet(&path)?;
        if delivery.delivered {
            self.packets_delivered += 1;
            self.hops_delivered += delivery.hops_completed as u64;
        } else {
            self.packets_dropped += 1;
            self.record(TraceKind::Dropped, vec![src]);
        }
        let mut deaths = delivery.deaths;
        deaths.sort();
        deaths.dedup();
        for dead in deaths {
            self.on_node_death(dead)?;
        }
        Ok(())
    }

    /// Processes every event up to and including `until` seconds.
    pub fn advance_to(&mut self, until: f64) -> Result<()> {
        let limit = to_nanos(until);
        while let Some(&Reverse((at, _, event))) = self.queue.peek() {
            if at > limit {
                break;
            }
            self.queue.pop();
            self.clock = at;
            match event {
                Event::Sample => {
                    self.sample();
                    self.push(at + self.sample_period, Event::Sample);
                }
                Event::Beacon(i) => {
                    if self.alive[i] {
                        self.beacon_tick(self.nodes[i].id)?;
                        if self.alive[i] {
                            self.push(at + self.beacon_period, Event::Beacon(i));
                        }
                    }
                }
                Event::Packet(i) => {
                    if self.alive[i] {
                        self.send_packet(i)?;
                        if self.alive[i] {
                            self.push(at + self.packet_period, Event::Packet(i));
                        }
                    }
                }
            }
        }
        self.clock = self.clock.max(limit.min(self.queue.peek().map_or(limit, |e| e.0 .0)));
        Ok(())
    }

    /// Runs to the configured duration.
    pub fn run(mut self) -> Result<SimReport> {
        let duration = self.cfg.duration;
        self.advance_to(duration)?;
        Ok(self.finish())
    }

    pub fn finish(mut self) -> SimReport {
        let sink_connected = self.sink_connected_count();
        let delay_per_hop = self.cfg.packet_airtime() + self.cfg.processing_delay;
        let summary = SimSummary {
            protocol: self.cfg.protocol,
            seed: self.cfg.seed,
            resamples: self.resamples,
            node_count: self.nodes.len() - 1,
            initial_mean_degree: self.initial_mean_degree,
            initial_mean_power: self.initial_mean_power,
            final_alive: self.alive_count(),
            final_sink_connected: sink_connected,
            packets_generated: self.packets_generated,
            packets_delivered: self.packets_delivered,
            packets_undeliverable: self.packets_undeliverable,
            packets_dropped: self.packets_dropped,
            energy_debited: self.energy_debited,
            energy_drawn: self.energy_drawn_from_batteries(),
            energy_consumed_mean: self.energy_consumed_mean(),
            mean_delay: if self.packets_delivered == 0 {
                0.0
            } else {
                self.hops_delivered as f64 / self.packets_delivered as f64 * delay_per_hop
            },
            deaths: self.deaths,
            reconfigurations: self.reconfigurations,
        };
        SimReport { metrics: self.metrics, summary, trace: self.trace.unwrap_or_default() }
    }
}

/// Places nodes, runs the protocol once and returns the ready simulation.
pub fn init_sim(cfg: ScenarioConfig) -> Result<Simulation> {
    Simulation::new(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::has_min_energy_property;

    fn tiny(energy: Option<f64>) -> ScenarioConfig {
        ScenarioConfig {
            node_count: 2,
            width: 10.0,
            height: 10.0,
            model: PowerModel::with_range(1.0, 2.0, 0.0, 100.0).unwrap(),
            initial_energy: energy,
            duration: 30.0,
            ..ScenarioConfig::default()
        }
    }

    fn line_cfg(c: f64, energy: Option<f64>) -> (ScenarioConfig, Vec<NodeRecord>) {
        let cfg = ScenarioConfig {
            node_count: 3,
            width: 2.0,
            height: 2.0,
            model: PowerModel::new(1.0, 2.0, c, 2.25).unwrap(),
            sink: SinkPlacement::Explicit { x: 3.0, y: 0.0 },
            initial_energy: energy,
            ..ScenarioConfig::default()
        };
        let nodes = vec![NodeRecord::new(0, 0.0, 0.0), NodeRecord::new(1, 1.0, 0.0), NodeRecord::new(2, 2.0, 0.0)];
        (cfg, nodes)
    }

    #[test]
    fn defaults_match_scenario_constants() {
        let cfg = ScenarioConfig::default();
        assert!((cfg.packet_airtime() - 2.048e-3).abs() < 1e-15);
        assert!((cfg.beacon_airtime() - 0.256e-3).abs() < 1e-15);
        assert!((cfg.model.max_range() - 500.0).abs() < 1e-9);
        assert_eq!(cfg.schedule().p0, cfg.model.p_max / 1024.0);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn tiny_world_is_fully_connected() {
        let sim = init_sim(tiny(Some(1.0))).unwrap();
        let sink = sim.sink();
        for id in [NodeId(0), NodeId(1)] {
            assert!(sim.is_alive(id));
            let n = &sim.outcome(id).unwrap().neighbors;
            assert!(!n.is_empty() && n.iter().all(|x| *x != id));
            assert!(n.contains(&sink) || n.contains(&NodeId(1 - id.0)));
        }
    }

    #[test]
    fn same_seed_same_state() {
        let cfg = ScenarioConfig { node_count: 30, width: 800.0, height: 800.0, duration: 60.0, ..Default::default() };
        let a = init_sim(cfg.clone()).unwrap();
        let b = init_sim(cfg).unwrap();
        assert_eq!(a.nodes(), b.nodes());
        assert_eq!(a.protocol_graph().edge_set(), b.protocol_graph().edge_set());
        let ra = a.run().unwrap().metrics.to_csv_string().unwrap();
        let rb = b.run().unwrap().metrics.to_csv_string().unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn unconnectable_scenario_fails() {
        let cfg = ScenarioConfig {
            node_count: 5,
            width: 10_000.0,
            height: 10_000.0,
            max_resamples: 3,
            ..ScenarioConfig::default()
        };
        assert!(matches!(init_sim(cfg), Err(Error::Unconnectable { attempts: 4 })));
    }

    #[test]
    fn route_examples() {
        let (cfg, nodes) = line_cfg(0.0, Some(1e6));
        let mut sim = Simulation::with_placement(cfg.clone(), Placement::explicit(&cfg, nodes).unwrap()).unwrap();
        let sink = sim.sink();
        assert_eq!(sim.route(sink, sink).unwrap(), Some(vec![sink]));
        assert_eq!(sim.route(NodeId(0), NodeId(2)).unwrap(), Some(vec![NodeId(0), NodeId(1), NodeId(2)]));
        assert_eq!(sim.route(NodeId(0), sink).unwrap(), Some(vec![NodeId(0), NodeId(1), NodeId(2), sink]));
        // cut the line by killing node 2 and 1
        sim.on_node_death(NodeId(2)).unwrap();
        sim.on_node_death(NodeId(1)).unwrap();
        assert_eq!(sim.route(NodeId(0), sink).unwrap(), None);
    }

    #[test]
    fn delivery_debits() {
        let (mut cfg, nodes) = line_cfg(0.0, Some(1e6));
        cfg.model = PowerModel::new(1000.0, 2.0, 0.0, 16_000.0).unwrap();
        let mut sim = Simulation::with_placement(cfg.clone(), Placement::explicit(&cfg, nodes).unwrap()).unwrap();
        let d = sim.deliver_packet(&[NodeId(0), NodeId(1)]).unwrap();
        assert!(d.delivered);
        assert_eq!(d.debits.len(), 1, "c = 0 charges receivers nothing");
        assert!((d.debits[0].1 - 2.048).abs() < 1e-12);
        let two = sim.deliver_packet(&[NodeId(0), NodeId(1), NodeId(2)]).unwrap();
        let total: f64 = two.debits.iter().map(|x| x.1).sum();
        assert!((total - 2.0 * 2.048).abs() < 1e-12);
        assert!((sim.energy_debited() - 3.0 * 2.048).abs() < 1e-12);
    }

    #[test]
    fn reception_cost_charged_and_mid_path_death() {
        let (mut cfg, nodes) = line_cfg(500.0, Some(1.5));
        cfg.model = PowerModel::new(1000.0, 2.0, 500.0, 16_000.0).unwrap();
        let mut sim = Simulation::with_placement(cfg.clone(), Placement::explicit(&cfg, nodes).unwrap()).unwrap();
        // node 0 pays 2.048 > 1.5 and dies before finishing the first hop
        let d = sim.deliver_packet(&[NodeId(0), NodeId(1), NodeId(2)]).unwrap();
        assert!(!d.delivered);
        assert_eq!(d.hops_completed, 0);
        assert_eq!(d.deaths, vec![NodeId(0)]);
        assert_eq!(sim.energy(NodeId(0)), Some(0.0));
        assert_eq!(sim.energy(NodeId(1)), Some(1.5));
        // receiver side: node 1 pays c · T = 1.024 for reception
        let (mut cfg, nodes) = line_cfg(500.0, Some(10.0));
        cfg.model = PowerModel::new(1000.0, 2.0, 500.0, 16_000.0).unwrap();
        let mut sim = Simulation::with_placement(cfg.clone(), Placement::explicit(&cfg, nodes).unwrap()).unwrap();
        let d = sim.deliver_packet(&[NodeId(0), NodeId(1)]).unwrap();
        assert!(d.delivered);
        assert!((d.debits[1].1 - 1.024).abs() < 1e-12);
    }

    #[test]
    fn beacon_debit() {
        let (cfg, nodes) = line_cfg(0.0, Some(1e6));
        let mut sim = Simulation::with_placement(cfg.clone(), Placement::explicit(&cfg, nodes).unwrap()).unwrap();
        let p = sim.outcome(NodeId(1)).unwrap().power;
        let charged = sim.beacon_tick(NodeId(1)).unwrap();
        assert!((charged - p * 0.256e-3).abs() <= 1e-15 * p.max(1.0));
        assert_eq!(sim.beacon_tick(sim.sink()).unwrap(), 0.0);
    }

    #[test]
    fn middle_death_reconnects_endpoints() {
        let (mut cfg, nodes) = line_cfg(0.0, Some(1e6));
        cfg.model = PowerModel::new(1.0, 2.0, 0.0, 16.0).unwrap();
        cfg.sink = SinkPlacement::Explicit { x: 1.0, y: 3.0 };
        let mut sim = Simulation::with_placement(cfg.clone(), Placement::explicit(&cfg, nodes).unwrap()).unwrap();
        assert!(!sim.outcome(NodeId(0)).unwrap().neighbors.contains(&NodeId(2)));
        sim.on_node_death(NodeId(1)).unwrap();
        assert!(sim.outcome(NodeId(0)).unwrap().neighbors.contains(&NodeId(2)));
        assert!(sim.outcome(NodeId(2)).unwrap().neighbors.contains(&NodeId(0)));
        let (reference, protocol) = sim.alive_graphs().unwrap();
        assert!(has_min_energy_property(&reference, &protocol).unwrap());
        assert!(sim.protocol_graph().edges().all(|(a, b, _)| a != NodeId(1) && b != NodeId(1)));
    }

    #[test]
    fn isolated_death_changes_nothing() {
        // node 3 is only within range of node 2
        let cfg = ScenarioConfig {
            node_count: 4,
            width: 10.0,
            height: 10.0,
            model: PowerModel::new(1.0, 2.0, 0.0, 4.0).unwrap(),
            sink: SinkPlacement::Explicit { x: 0.0, y: 0.0 },
            initial_energy: Some(1e6),
            ..ScenarioConfig::default()
        };
        let nodes = vec![
            NodeRecord::new(0, 1.0, 0.0),
            NodeRecord::new(1, 2.0, 0.0),
            NodeRecord::new(2, 3.0, 0.0),
            NodeRecord::new(3, 3.0, 1.9),
        ];
        let mut sim = Simulation::with_placement(cfg.clone(), Placement::explicit(&cfg, nodes).unwrap()).unwrap();
        assert!(sim.outcome(NodeId(2)).unwrap().discovered.contains(&NodeId(3)));
        let before: Vec<_> = [0, 1].iter().map(|&i| sim.outcome(NodeId(i)).unwrap().clone()).collect();
        assert!(!before.iter().any(|o| o.discovered.contains(&NodeId(3))));
        sim.on_node_death(NodeId(3)).unwrap();
        for (i, o) in [0, 1].iter().zip(&before) {
            assert_eq!(sim.outcome(NodeId(*i)).unwrap(), o);
        }
    }

    #[test]
    fn cut_vertex_death_drops_component() {
        // sink - 0 - 1 - 2 on a line; killing 0 strands 1 and 2
        let cfg = ScenarioConfig {
            node_count: 3,
            width: 10.0,
            height: 10.0,
            model: PowerModel::new(1.0, 2.0, 0.0, 1.0).unwrap(),
            sink: SinkPlacement::Explicit { x: 0.0, y: 0.0 },
            initial_energy: Some(1e6),
            ..ScenarioConfig::default()
        };
        let nodes = vec![NodeRecord::new(0, 1.0, 0.0), NodeRecord::new(1, 2.0, 0.0), NodeRecord::new(2, 3.0, 0.0)];
        let mut sim = Simulation::with_placement(cfg.clone(), Placement::explicit(&cfg, nodes).unwrap()).unwrap();
        assert_eq!(sim.sink_connected_count(), 3);
        sim.on_node_death(NodeId(0)).unwrap();
        assert_eq!(sim.sink_connected_count(), 0);
        assert_eq!(sim.alive_count(), 2);
    }

    #[test]
    fn zero_duration_is_one_snapshot() {
        let cfg = ScenarioConfig { duration: 0.0, node_count: 20, width: 600.0, height: 600.0, ..Default::default() };
        let report = init_sim(cfg).unwrap().run().unwrap();
        assert_eq!(report.metrics.rows.len(), 1);
        assert_eq!(report.metrics.rows[0].time, 0.0);
        assert_eq!(report.metrics.rows[0].alive, 20);
    }

    #[test]
    fn unlimited_energy_keeps_everyone() {
        let cfg = ScenarioConfig {
            node_count: 25,
            width: 700.0,
            height: 700.0,
            duration: 120.0,
            initial_energy: None,
            ..Default::default()
        };
        let report = init_sim(cfg).unwrap().run().unwrap();
        assert!(report.metrics.rows.iter().all(|r| r.alive == 25));
        assert_eq!(report.metrics.rows.len(), 13);
        assert!(report.summary.packets_delivered > 0);
    }

    #[test]
    fn conservation_and_monotone_metrics() {
        let cfg = ScenarioConfig {
            node_count: 40,
            width: 1000.0,
            height: 1000.0,
            duration: 400.0,
            initial_energy: Some(2e7),
            ..Default::default()
        };
        let mut sim = init_sim(cfg).unwrap();
        sim.enable_trace();
        // step in small increments and check the protocol graph after each death
        let mut deaths = 0;
        for step in 1..=40 {
            sim.advance_to(step as f64 * 10.0).unwrap();
            let now = sim.deaths;
            if now != deaths {
                deaths = now;
                let (reference, protocol) = sim.alive_graphs().unwrap();
                assert!(has_min_energy_property(&reference, &protocol).unwrap());
            }
            for n in sim.nodes() {
                assert!(sim.energy(n.id).unwrap() >= 0.0);
            }
        }
        let drawn = sim.energy_drawn_from_batteries();
        let debited = sim.energy_debited();
        assert!((drawn - debited).abs() <= 1e-9 * debited.max(1.0));
        let report = sim.finish();
        assert!(report.summary.deaths > 0, "budget should cause some deaths");
        for pair in report.metrics.rows.windows(2) {
            assert!(pair[1].alive <= pair[0].alive);
            assert!(pair[1].packets_delivered >= pair[0].packets_delivered);
            assert!(pair[1].energy_consumed_mean >= pair[0].energy_consumed_mean);
        }
        assert!(report.trace.iter().any(|r| r.kind == TraceKind::Death));
    }

    #[test]
    fn empty_series_still_has_header() {
        let csv = MetricsSeries::default().to_csv_string().unwrap();
        assert_eq!(csv.trim(), MetricsSeries::HEADER.join(","));
    }
}
