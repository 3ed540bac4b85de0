//! Directed link graphs over placed nodes, minimum-energy paths, and the
//! brute-force edge-set oracles (`E'`, `E_2`, `E_min`).

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::{Location, PowerModel};

/// Relative tolerance for comparing path costs.
pub const COST_REL_EPS: f64 = 1e-9;
/// Absolute floor for [`COST_REL_EPS`].
pub const COST_ABS_EPS: f64 = 1e-12;

pub fn costs_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= (COST_REL_EPS * a.abs().max(b.abs())).max(COST_ABS_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    #[serde(flatten)]
    pub loc: Location,
}

impl NodeRecord {
    pub fn new(id: u32, x: f64, y: f64) -> Self {
        Self { id: NodeId(id), loc: Location::new(x, y) }
    }
}

/// Checks ids are unique, locations are finite and pairwise distinct.
pub fn validate_nodes(nodes: &[NodeRecord]) -> Result<()> {
    let mut ids = HashSet::with_capacity(nodes.len());
    let mut spots: HashMap<(u64, u64), NodeId> = HashMap::with_capacity(nodes.len());
    for node in nodes {
        if !node.loc.is_finite() {
            return Err(Error::InvalidArgument(format!("node {} has a non-finite location", node.id)));
        }
        if !ids.insert(node.id) {
            return Err(Error::DuplicateId(node.id));
        }
        // +0.0 folds negative zero into positive zero
        let key = ((node.loc.x + 0.0).to_bits(), (node.loc.y + 0.0).to_bits());
        if let Some(other) = spots.insert(key, node.id) {
            return Err(Error::DuplicateLocation(other, node.id));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Arc {
    to: usize,
    cost: f64,
}

/// Directed graph over a fixed node set with cached link costs.
///
/// Nodes are stored in id order and adjacency lists are sorted by target id,
/// so every traversal is deterministic.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    model: PowerModel,
    nodes: Vec<NodeRecord>,
    index: HashMap<NodeId, usize>,
    out: Vec<Vec<Arc>>,
    inc: Vec<Vec<Arc>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinPath {
    pub nodes: Vec<NodeId>,
    pub cost: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct Queued(f64, usize);

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NetworkGraph {
    /// Builds a graph over `nodes` with the given directed edges.
    pub fn from_edges<I>(model: PowerModel, nodes: &[NodeRecord], edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        model.validate()?;
        validate_nodes(nodes)?;
        let mut sorted = nodes.to_vec();
        sorted.sort_by_key(|n| n.id);
        let index: HashMap<NodeId, usize> = sorted.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut pairs = BTreeSet::new();
        for (from, to) in edges {
            let a = *index.get(&from).ok_or(Error::UnknownNode(from))?;
            let b = *index.get(&to).ok_or(Error::UnknownNode(to))?;
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {from}")));
            }
            pairs.insert((a, b));
        }
        let mut out = vec![Vec::new(); sorted.len()];
        let mut inc = vec![Vec::new(); sorted.len()];
        for (a, b) in pairs {
            let cost = model.link_cost(&sorted[a].loc, &sorted[b].loc);
            out[a].push(Arc { to: b, cost });
            inc[b].push(Arc { to: a, cost });
        }
        for list in inc.iter_mut() {
            list.sort_by_key(|arc| arc.to);
        }
        Ok(Self { model, nodes: sorted, index, out, inc })
    }

    pub fn model(&self) -> &PowerModel {
        &self.model
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn location(&self, id: NodeId) -> Option<Location> {
        self.index.get(&id).map(|&i| self.nodes[i].loc)
    }

    fn idx(&self, id: NodeId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    /// `(from, to, cost)` in (from, to) id order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.out.iter().enumerate().flat_map(move |(a, arcs)| {
            arcs.iter().map(move |arc| (self.nodes[a].id, self.nodes[arc.to].id, arc.cost))
        })
    }

    pub fn edge_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.edges().map(|(a, b, _)| (a, b)).collect()
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        match (self.index.get(&from), self.index.get(&to)) {
            (Some(&a), Some(&b)) => self.out[a].binary_search_by_key(&b, |arc| arc.to).is_ok(),
            _ => false,
        }
    }

    pub fn cost(&self, from: NodeId, to: NodeId) -> Option<f64> {
        let a = *self.index.get(&from)?;
        let b = *self.index.get(&to)?;
        self.out[a].binary_search_by_key(&b, |arc| arc.to).ok().map(|k| self.out[a][k].cost)
    }

    pub fn out_neighbors(&self, id: NodeId) -> Vec<NodeId> {
        self.index
            .get(&id)
            .map(|&a| self.out[a].iter().map(|arc| self.nodes[arc.to].id).collect())
            .unwrap_or_default()
    }

    pub fn out_degree(&self, id: NodeId) -> usize {
        self.index.get(&id).map(|&a| self.out[a].len()).unwrap_or(0)
    }

    pub fn mean_out_degree(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        self.edge_count() as f64 / self.nodes.len() as f64
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(a, b, _)| self.has_edge(b, a))
    }

    /// Same nodes, keeping only the edges for which `keep` returns true.
    pub fn filter_edges<F>(&self, mut keep: F) -> NetworkGraph
    where
        F: FnMut(NodeId, NodeId) -> bool,
    {
        let mut out = vec![Vec::new(); self.nodes.len()];
        let mut inc = vec![Vec::new(); self.nodes.len()];
        for (a, arcs) in self.out.iter().enumerate() {
            for arc in arcs {
                if keep(self.nodes[a].id, self.nodes[arc.to].id) {
                    out[a].push(*arc);
                    inc[arc.to].push(Arc { to: a, cost: arc.cost });
                }
            }
        }
        NetworkGraph { model: self.model, nodes: self.nodes.clone(), index: self.index.clone(), out, inc }
    }

    pub fn without_edge(&self, from: NodeId, to: NodeId) -> NetworkGraph {
        self.filter_edges(|a, b| (a, b) != (from, to))
    }

    pub fn is_subgraph_of(&self, other: &NetworkGraph) -> bool {
        self.nodes.iter().all(|n| other.contains_node(n.id)) && self.edges().all(|(a, b, _)| other.has_edge(a, b))
    }

    fn dijkstra(&self, start: usize, adjacency: &[Vec<Arc>]) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[start] = 0.0;
        heap.push(Queued(0.0, start));
        while let Some(Queued(d, at)) = heap.pop() {
            if d > dist[at] {
                continue;
            }
            for arc in &adjacency[at] {
                let next = d + arc.cost;
                if next < dist[arc.to] {
                    dist[arc.to] = next;
                    heap.push(Queued(next, arc.to));
                }
            }
        }
        dist
    }

    /// Minimum path cost from `src` to every node, indexed like [`Self::nodes`].
    pub fn costs_from(&self, src: NodeId) -> Result<Vec<f64>> {
        Ok(self.dijkstra(self.idx(src)?, &self.out))
    }

    /// Minimum path cost from every node to `dst`, indexed like [`Self::nodes`].
    pub fn costs_to(&self, dst: NodeId) -> Result<Vec<f64>> {
        Ok(self.dijkstra(self.idx(dst)?, &self.inc))
    }

    /// Lexicographically smallest minimum-cost path given costs-to-destination.
    pub(crate) fn trace_path(&self, src: NodeId, dst: NodeId, to_dst: &[f64]) -> Result<Option<MinPath>> {
        let mut at = self.idx(src)?;
        let goal = self.idx(dst)?;
        if !to_dst[at].is_finite() {
            return Ok(None);
        }
        let mut nodes = vec![src];
        let mut visited = vec![false; self.nodes.len()];
        visited[at] = true;
        let mut cost = 0.0;
        while at != goal {
            let remaining = to_dst[at];
            // Tolerant ties could otherwise bounce between nodes joined by a
            // hop that is negligible next to `remaining`.
            let step = self.out[at]
                .iter()
                .find(|arc| {
                    let via = arc.cost + to_dst[arc.to];
                    let progress = to_dst[arc.to] < remaining || (to_dst[arc.to] == remaining && !visited[arc.to]);
                    via.is_finite() && progress && (via <= remaining || costs_close(via, remaining))
                })
                .copied();
            let Some(arc) = step else {
                return Ok(None);
            };
            cost += arc.cost;
            at = arc.to;
            visited[at] = true;
            nodes.push(self.nodes[at].id);
            if nodes.len() > self.nodes.len() {
                return Err(Error::InvalidArgument("path tracing did not converge".into()));
            }
        }
        Ok(Some(MinPath { nodes, cost }))
    }

    /// Minimum-energy path; ties resolve to the lexicographically smallest id sequence.
    pub fn min_energy_path(&self, src: NodeId, dst: NodeId) -> Result<Option<MinPath>> {
        let to_dst = self.costs_to(dst)?;
        self.trace_path(src, dst, &to_dst)
    }

    /// Whether every node can reach every other node.
    pub fn is_strongly_connected(&self) -> bool {
        if self.nodes.len() <= 1 {
            return true;
        }
        let spans = |adjacency: &[Vec<Arc>]| {
            let mut seen = vec![false; self.nodes.len()];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(at) = stack.pop() {
                for arc in &adjacency[at] {
                    if !seen[arc.to] {
                        seen[arc.to] = true;
                        stack.push(arc.to);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        spans(&self.out) && spans(&self.inc)
    }
}

/// `G'`: every ordered pair within transmit range at maximum power.
pub fn build_reference_graph(nodes: &[NodeRecord], model: PowerModel) -> Result<NetworkGraph> {
    validate_nodes(nodes)?;
    let mut edges = Vec::new();
    for a in nodes {
        for b in nodes {
            if a.id != b.id && model.in_range(&a.loc, &b.loc) {
                edges.push((a.id, b.id));
            }
        }
    }
    NetworkGraph::from_edges(model, nodes, edges)
}

/// Convenience wrapper over [`NetworkGraph::min_energy_path`].
pub fn min_energy_path(graph: &NetworkGraph, src: NodeId, dst: NodeId) -> Result<Option<MinPath>> {
    graph.min_energy_path(src, dst)
}

/// `E_2`: edges of `G'` not beaten (`<=`) by any two-hop path.
pub fn compute_e2(reference: &NetworkGraph) -> NetworkGraph {
    let model = *reference.model();
    reference.filter_edges(|u, v| {
        let lu = reference.location(u).expect("edge endpoint");
        let lv = reference.location(v).expect("edge endpoint");
        !reference
            .out_neighbors(u)
            .into_iter()
            .filter(|&w| w != v && reference.has_edge(w, v))
            .any(|w| model.relay_beats_direct(&lu, &reference.location(w).expect("neighbor"), &lv))
    })
}

/// `E_min`: edges of `G'` not beaten (`<=`) by any path of two or more hops.
///
/// A multi-hop path from `u` to `v` starts with some first hop `(u, w)` with
/// `w != v` and continues along a cheapest `w → v` path, so comparing
/// `min_w [C(u, w) + dist(w, v)]` against `C(u, v)` covers every candidate.
/// A continuation that revisits `u` only adds cost, and a walk that uses the
/// direct edge and then cycles back can never tie it when hops cost more than
/// zero, so walks and simple paths give the same answer.
pub fn compute_emin(reference: &NetworkGraph) -> NetworkGraph {
    let to_each: Vec<Vec<f64>> = reference
        .nodes()
        .iter()
        .map(|n| reference.costs_to(n.id).expect("node present"))
        .collect();
    let nodes = reference.nodes();
    reference.filter_edges(|u, v| {
        let ui = reference.index[&u];
        let vi = reference.index[&v];
        let direct = reference.out[ui].iter().find(|arc| arc.to == vi).expect("edge").cost;
        let best = reference.out[ui]
            .iter()
            .filter(|arc| arc.to != vi)
            .map(|arc| arc.cost + to_each[vi][arc.to])
            .fold(f64::INFINITY, f64::min);
        debug_assert_eq!(nodes[vi].id, v);
        best > direct
    })
}

/// Whether `sub` preserves the minimum path cost of every connected pair of `reference`.
pub fn has_min_energy_property(reference: &NetworkGraph, sub: &NetworkGraph) -> Result<bool> {
    if reference.node_count() != sub.node_count() || !sub.nodes().iter().all(|n| reference.contains_node(n.id)) {
        return Err(Error::InvalidArgument("subgraph must span the reference node set".into()));
    }
    if let Some((a, b, _)) = sub.edges().find(|&(a, b, _)| !reference.has_edge(a, b)) {
        return Err(Error::EdgeNotInReference(a, b));
    }
    for node in reference.nodes() {
        let full = reference.costs_from(node.id)?;
        let kept = sub.costs_from(node.id)?;
        for (f, k) in full.iter().zip(&kept) {
            if f.is_finite() && !(k.is_finite() && (k <= f || costs_close(*k, *f))) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Whether some walk of exactly `k` hops in `reference` costs no more than the edge itself.
pub fn is_k_redundant(reference: &NetworkGraph, edge: (NodeId, NodeId), k: usize) -> Result<bool> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    let (u, v) = edge;
    let direct = reference.cost(u, v).ok_or(Error::EdgeNotInReference(u, v))?;
    let start = reference.idx(u)?;
    let goal = reference.idx(v)?;
    if k <= 4 {
        fn walk(g: &NetworkGraph, at: usize, goal: usize, hops_left: usize, spent: f64, budget: f64) -> bool {
            if hops_left == 0 {
                return at == goal && spent <= budget;
            }
            g.out[at].iter().any(|arc| {
                let next = spent + arc.cost;
                next <= budget && walk(g, arc.to, goal, hops_left - 1, next, budget)
            })
        }
        return Ok(walk(reference, start, goal, k, 0.0, direct));
    }
    let mut best = vec![f64::INFINITY; reference.node_count()];
    best[start] = 0.0;
    for _ in 0..k {
        let mut next = vec![f64::INFINITY; reference.node_count()];
        for (at, &cost) in best.iter().enumerate() {
            if !cost.is_finite() {
                continue;
            }
            for arc in &reference.out[at] {
                let c = cost + arc.cost;
                if c < next[arc.to] {
                    next[arc.to] = c;
                }
            }
        }
        best = next;
    }
    Ok(best[goal] <= direct)
}
