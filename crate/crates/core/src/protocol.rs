//! Per-node neighbor search: SMECN and MECN.
//!
//! Both searches broadcast at escalating power, collect the nodes inside the
//! current disc and stop once the disc covers η. They differ in how the
//! non-neighbor set evolves: SMECN only ever adds to it, while MECN runs the
//! recursive `Flip` procedure, which can also take nodes back out.
//!
//! A node is never treated as lying in its own relay region. With `c = 0`
//! the geometric region `R_{u→v}` contains `v` itself, which would otherwise
//! make every discovered node its own obstructor.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::{Location, PowerModel};
use crate::region::{EtaRegion, EtaSampler, SamplingSpec};
use crate::topology::{validate_nodes, NetworkGraph, NodeId, NodeRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Increase {
    Geometric { factor: f64 },
    Linear { step: f64 },
}

/// Initial power plus the rule that raises it each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscalationSchedule {
    pub p0: f64,
    pub increase: Increase,
}

impl EscalationSchedule {
    pub fn doubling(p0: f64) -> Self {
        Self { p0, increase: Increase::Geometric { factor: 2.0 } }
    }

    /// `p_max / 2^10`, doubling.
    pub fn default_for(model: &PowerModel) -> Self {
        Self::doubling(model.p_max / 1024.0)
    }

    pub fn validate(&self, model: &PowerModel) -> Result<()> {
        if !(self.p0.is_finite() && self.p0 > 0.0) {
            return Err(Error::InvalidSchedule(format!("p0 must be positive, got {}", self.p0)));
        }
        if self.p0 >= model.p_max {
            return Err(Error::InvalidSchedule(format!(
                "p0 = {} must be below p_max = {} or the search never broadcasts",
                self.p0, model.p_max
            )));
        }
        match self.increase {
            Increase::Geometric { factor } if !(factor.is_finite() && factor > 1.0) => {
                Err(Error::InvalidSchedule(format!("geometric factor must exceed 1, got {factor}")))
            }
            Increase::Linear { step } if !(step.is_finite() && step > 0.0) => {
                Err(Error::InvalidSchedule(format!("linear step must be positive, got {step}")))
            }
            _ => Ok(()),
        }
    }

    /// The next power, clamped to `p_max`.
    pub fn next(&self, p: f64, p_max: f64) -> f64 {
        let raised = match self.increase {
            Increase::Geometric { factor } => p * factor,
            Increase::Linear { step } => p + step,
        };
        raised.min(p_max)
    }

    /// Number of raises needed to get from `p0` to `p_max`.
    pub fn steps_to_max(&self, p_max: f64) -> usize {
        let mut p = self.p0;
        let mut steps = 0;
        while p < p_max {
            p = self.next(p, p_max);
            steps += 1;
        }
        steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Smecn,
    Mecn,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smecn" => Ok(Protocol::Smecn),
            "mecn" => Ok(Protocol::Mecn),
            other => Err(Error::InvalidArgument(format!("unknown protocol '{other}'"))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Smecn => "smecn",
            Protocol::Mecn => "mecn",
        })
    }
}

/// Order in which MECN visits discovered nodes, both in its main loop and
/// inside `Flip`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipOrder {
    #[default]
    ById,
    ByDistance,
    ReverseByDistance,
}

impl std::str::FromStr for FlipOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by-id" => Ok(FlipOrder::ById),
            "by-distance" => Ok(FlipOrder::ByDistance),
            "reverse-by-distance" => Ok(FlipOrder::ReverseByDistance),
            other => Err(Error::InvalidArgument(format!("unknown flip order '{other}'"))),
        }
    }
}

impl FlipOrder {
    pub const ALL: [FlipOrder; 3] = [FlipOrder::ById, FlipOrder::ByDistance, FlipOrder::ReverseByDistance];
}

/// Snapshot of a node's search after some number of rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub node: NodeRecord,
    pub power: f64,
    /// Discovered nodes (`A`) in discovery order.
    pub discovered: Vec<NodeId>,
    pub non_neighbors: BTreeSet<NodeId>,
    pub eta: EtaRegion,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeOutcome {
    pub id: NodeId,
    pub neighbors: BTreeSet<NodeId>,
    pub power: f64,
    pub iterations: usize,
    pub discovered: BTreeSet<NodeId>,
}

struct Candidate {
    id: NodeId,
    loc: Location,
    power: f64,
}

/// One node's neighbor search, advanced a round at a time.
pub struct NeighborSearch {
    node: NodeRecord,
    model: PowerModel,
    schedule: EscalationSchedule,
    spec: SamplingSpec,
    protocol: Protocol,
    order: FlipOrder,
    // everyone except the node itself, sorted by (power to reach, id)
    candidates: Vec<Candidate>,
    next_candidate: usize,
    non_neighbor: Vec<bool>,
    power: f64,
    iteration: usize,
    sampler: EtaSampler,
}

impl NeighborSearch {
    pub fn new(
        node: &NodeRecord,
        world: &[NodeRecord],
        model: PowerModel,
        schedule: EscalationSchedule,
        spec: SamplingSpec,
        protocol: Protocol,
        order: FlipOrder,
    ) -> Result<Self> {
        model.validate()?;
        schedule.validate(&model)?;
        spec.validate()?;
        if !world.iter().any(|n| n.id == node.id) {
            return Err(Error::UnknownNode(node.id));
        }
        let mut candidates: Vec<Candidate> = world
            .iter()
            .filter(|n| n.id != node.id)
            .map(|n| Candidate { id: n.id, loc: n.loc, power: model.transmit_power(&node.loc, &n.loc) })
            .collect();
        candidates.sort_by(|a, b| a.power.total_cmp(&b.power).then(a.id.cmp(&b.id)));
        let non_neighbor = vec![false; candidates.len()];
        Ok(Self {
            node: *node,
            model,
            schedule,
            spec,
            protocol,
            order,
            candidates,
            next_candidate: 0,
            non_neighbor,
            power: schedule.p0,
            iteration: 0,
            sampler: EtaSampler::new(node.loc, model, spec),
        })
    }

    /// Loop guard: the current disc covers η.
    pub fn is_done(&self) -> bool {
        self.sampler.covered_by(self.power)
    }

    #[inline]
    fn in_relay(&self, target: usize, via: usize) -> bool {
        target != via
            && self.model.relay_beats_direct(&self.node.loc, &self.candidates[via].loc, &self.candidates[target].loc)
    }

    fn ordered(&self, mut members: Vec<usize>) -> Vec<usize> {
        match self.order {
            FlipOrder::ById => members.sort_by_key(|&i| self.candidates[i].id),
            FlipOrder::ByDistance => members.sort_by(|&a, &b| {
                let (ca, cb) = (&self.candidates[a], &self.candidates[b]);
                ca.power.total_cmp(&cb.power).then(ca.id.cmp(&cb.id))
            }),
            FlipOrder::ReverseByDistance => members.sort_by(|&a, &b| {
                let (ca, cb) = (&self.candidates[a], &self.candidates[b]);
                cb.power.total_cmp(&ca.power).then(ca.id.cmp(&cb.id))
            }),
        }
        members
    }

    /// Runs one round of the search loop.
    pub fn step(&mut self) -> Result<()> {
        self.power = self.schedule.next(self.power, self.model.p_max);
        self.iteration += 1;
        let first_new = self.next_candidate;
        while self.next_candidate < self.candidates.len() && self.candidates[self.next_candidate].power <= self.power {
            self.next_candidate += 1;
        }
        let fresh: Vec<usize> = (first_new..self.next_candidate).collect();
        match self.protocol {
            Protocol::Smecn => self.smecn_round(&fresh),
            Protocol::Mecn => self.mecn_round(&fresh)?,
        }
        Ok(())
    }

    fn smecn_round(&mut self, fresh: &[usize]) {
        for &v in fresh {
            for w in 0..self.next_candidate {
                if w == v {
                    continue;
                }
                if self.in_relay(v, w) {
                    self.non_neighbor[v] = true;
                } else if self.in_relay(w, v) {
                    self.non_neighbor[w] = true;
                }
            }
        }
        for &v in fresh {
            self.sampler.add_obstructor(self.candidates[v].loc);
        }
    }

    fn mecn_round(&mut self, fresh: &[usize]) -> Result<()> {
        for &v in fresh {
            self.non_neighbor[v] = true;
        }
        let everyone = self.ordered((0..self.next_candidate).collect());
        // Flip recurses into w for every w in A with Loc(w) in R_{u→v}
        let children: Vec<Vec<usize>> = (0..self.next_candidate)
            .map(|v| everyone.iter().copied().filter(|&w| self.in_relay(w, v)).collect())
            .collect();
        let limit = 2 * self.next_candidate * self.next_candidate;
        let mut toggles = 0usize;
        for v in self.ordered(fresh.to_vec()) {
            self.flip(v, &children, &mut toggles, limit)?;
        }
        let mut sampler = EtaSampler::new(self.node.loc, self.model, self.spec);
        for i in 0..self.next_candidate {
            if !self.non_neighbor[i] {
                sampler.add_obstructor(self.candidates[i].loc);
            }
        }
        self.sampler = sampler;
        Ok(())
    }

    /// `Flip` with an explicit stack of (node, next child) frames, visiting
    /// children in the same order the recursive procedure would.
    fn flip(&mut self, root: usize, children: &[Vec<usize>], toggles: &mut usize, limit: usize) -> Result<()> {
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut enter = |this: &mut Self, v: usize, stack: &mut Vec<(usize, usize)>| -> Result<()> {
            let toggled = if !this.non_neighbor[v] {
                this.non_neighbor[v] = true;
                true
            } else if !(0..this.next_candidate).any(|w| !this.non_neighbor[w] && this.in_relay(v, w)) {
                this.non_neighbor[v] = false;
                true
            } else {
                false
            };
            if toggled {
                *toggles += 1;
                if *toggles > limit {
                    return Err(Error::FlipDiverged { node: this.node.id, limit });
                }
                stack.push((v, 0));
            }
            Ok(())
        };
        enter(self, root, &mut stack)?;
        while let Some(frame) = stack.last_mut() {
            let (v, pos) = *frame;
            if pos >= children[v].len() {
                stack.pop();
                continue;
            }
            frame.1 += 1;
            enter(self, children[v][pos], &mut stack)?;
        }
        Ok(())
    }

    /// Runs rounds until the loop guard holds.
    pub fn run(mut self) -> Result<NodeOutcome> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.outcome())
    }

    pub fn state(&self) -> SearchState {
        let discovered: Vec<NodeId> = self.candidates[..self.next_candidate].iter().map(|c| c.id).collect();
        let non_neighbors =
            (0..self.next_candidate).filter(|&i| self.non_neighbor[i]).map(|i| self.candidates[i].id).collect();
        SearchState {
            node: self.node,
            power: self.power,
            discovered,
            non_neighbors,
            eta: EtaRegion::new(self.node.loc, self.sampler.obstructors().to_vec(), self.model),
            iteration: self.iteration,
        }
    }

    /// Neighbor set `A - NonNbrs` and the final power.
    ///
    /// The power is the smallest that covers η, raised if needed so that
    /// every neighbor is inside the disc.
    pub fn outcome(&self) -> NodeOutcome {
        let mut neighbors = BTreeSet::new();
        let mut reach: f64 = 0.0;
        for (i, c) in self.candidates[..self.next_candidate].iter().enumerate() {
            if !self.non_neighbor[i] {
                neighbors.insert(c.id);
                reach = reach.max(c.power);
            }
        }
        NodeOutcome {
            id: self.node.id,
            neighbors,
            power: self.sampler.covering_power().max(reach).min(self.model.p_max),
            iterations: self.iteration,
            discovered: self.candidates[..self.next_candidate].iter().map(|c| c.id).collect(),
        }
    }
}

pub fn smecn_node(
    node: &NodeRecord,
    world: &[NodeRecord],
    model: PowerModel,
    schedule: EscalationSchedule,
    spec: SamplingSpec,
) -> Result<NodeOutcome> {
    NeighborSearch::new(node, world, model, schedule, spec, Protocol::Smecn, FlipOrder::ById)?.run()
}

pub fn mecn_node(
    node: &NodeRecord,
    world: &[NodeRecord],
    model: PowerModel,
    schedule: EscalationSchedule,
    spec: SamplingSpec,
    order: FlipOrder,
) -> Result<NodeOutcome> {
    NeighborSearch::new(node, world, model, schedule, spec, Protocol::Mecn, order)?.run()
}

/// Per-node outcomes of a whole-network run plus the union graph
/// (`(u, v)` present iff `v ∈ N(u)`).
#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub protocol: Protocol,
    pub outcomes: BTreeMap<NodeId, NodeOutcome>,
    pub graph: NetworkGraph,
}

impl ProtocolResult {
    pub fn mean_power(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.outcomes.values().map(|o| o.power).sum::<f64>() / self.outcomes.len() as f64
    }

    pub fn mean_degree(&self) -> f64 {
        self.graph.mean_out_degree()
    }
}

/// Builds the union graph from per-node neighbor sets.
pub fn union_graph(model: PowerModel, world: &[NodeRecord], outcomes: &BTreeMap<NodeId, NodeOutcome>) -> Result<NetworkGraph> {
    let edges = outcomes.values().flat_map(|o| o.neighbors.iter().map(move |&v| (o.id, v)));
    NetworkGraph::from_edges(model, world, edges)
}

pub fn run_protocol(
    world: &[NodeRecord],
    model: PowerModel,
    schedule: EscalationSchedule,
    spec: SamplingSpec,
    protocol: Protocol,
    order: FlipOrder,
) -> Result<ProtocolResult> {
    validate_nodes(world)?;
    let mut outcomes = BTreeMap::new();
    for node in world {
        let outcome = NeighborSearch::new(node, world, model, schedule, spec, protocol, order)?.run()?;
        outcomes.insert(node.id, outcome);
    }
    let graph = union_graph(model, world, &outcomes)?;
    Ok(ProtocolResult { protocol, outcomes, graph })
}

/// The four-node configuration where MECN's result depends on visit order.
///
/// `u` sits at the origin with `t`, `w`, `v` placed so that
/// `Loc(v) ∈ R_{u→w}`, `Loc(w) ∈ R_{u→t}` and `Loc(v) ∉ R_{u→t}` under
/// `t = 1, n = 2, c = 1`. The schedule jumps from below `d(u, t)^2` straight
/// past `d(u, v)^2`, so all three are discovered in the same round. Ids put
/// `w` before `t` before `v`.
pub mod order_example {
    use super::*;

    pub const U: NodeId = NodeId(0);
    pub const W: NodeId = NodeId(1);
    pub const T: NodeId = NodeId(2);
    pub const V: NodeId = NodeId(3);

    pub fn nodes() -> Vec<NodeRecord> {
        vec![
            NodeRecord { id: U, loc: Location::new(0.0, 0.0) },
            NodeRecord { id: W, loc: Location::new(3.0, 2.0) },
            NodeRecord { id: T, loc: Location::new(2.0, 0.0) },
            NodeRecord { id: V, loc: Location::new(2.0, 5.0) },
        ]
    }

    pub fn model() -> PowerModel {
        PowerModel::new(1.0, 2.0, 1.0, 100.0).expect("valid model")
    }

    pub fn schedule() -> EscalationSchedule {
        EscalationSchedule { p0: 3.125, increase: Increase::Geometric { factor: 10.0 } }
    }
}
