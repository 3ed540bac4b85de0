//! Versioned JSON documents for scenarios, graphs, protocol runs and
//! topology comparisons.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::PowerModel;
use crate::protocol::{run_protocol, ProtocolResult};
use crate::sim::{Placement, ScenarioConfig};
use crate::topology::{build_reference_graph, compute_e2, compute_emin, NetworkGraph, NodeId, NodeRecord};

pub const DOCUMENT_VERSION: u32 = 1;

fn check_version(version: u32) -> Result<()> {
    if version == DOCUMENT_VERSION {
        Ok(())
    } else {
        Err(Error::UnsupportedVersion(version))
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(to_json_string(value)?.as_bytes())?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    Ok(serde_json::from_str(&text)?)
}

/// A scenario plus, optionally, the exact node positions to use instead of
/// random placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub version: u32,
    pub scenario: ScenarioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<NodeRecord>>,
}

impl ScenarioDocument {
    pub fn new(scenario: ScenarioConfig, nodes: Option<Vec<NodeRecord>>) -> Self {
        Self { version: DOCUMENT_VERSION, scenario, nodes }
    }

    /// Places nodes from the config and records them in the document.
    pub fn generate(scenario: ScenarioConfig) -> Result<(Self, Placement)> {
        let placement = Placement::random(&scenario)?;
        Ok((Self::new(scenario, Some(placement.nodes.clone())), placement))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: Self = read_json(path)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        self.scenario.validate()
    }

    /// Explicit nodes win over random placement.
    pub fn placement(&self) -> Result<Placement> {
        match &self.nodes {
            Some(nodes) => Placement::explicit(&self.scenario, nodes.clone()),
            None => Placement::random(&self.scenario),
        }
    }

    /// The regular nodes only, without the sink.
    pub fn network_nodes(&self) -> Result<Vec<NodeRecord>> {
        Ok(self.placement()?.nodes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: NodeId,
    pub to: NodeId,
    pub cost: f64,
}

fn edge_records(graph: &NetworkGraph) -> Vec<EdgeRecord> {
    graph.edges().map(|(from, to, cost)| EdgeRecord { from, to, cost }).collect()
}

/// A directed graph with its power model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub version: u32,
    pub model: PowerModel,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

impl GraphDocument {
    pub fn from_graph(graph: &NetworkGraph) -> Self {
        Self {
            version: DOCUMENT_VERSION,
            model: *graph.model(),
            nodes: graph.nodes().to_vec(),
            edges: edge_records(graph),
        }
    }

    /// Rebuilds the graph; costs are recomputed from the model and locations.
    pub fn to_graph(&self) -> Result<NetworkGraph> {
        check_version(self.version)?;
        self.model.validate()?;
        NetworkGraph::from_edges(self.model, &self.nodes, self.edges.iter().map(|e| (e.from, e.to)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSettings {
    pub id: NodeId,
    pub neighbors: Vec<NodeId>,
    pub power: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolDocument {
    pub version: u32,
    pub protocol: crate::protocol::Protocol,
    pub nodes: Vec<NodeSettings>,
    pub edges: Vec<EdgeRecord>,
}

impl ProtocolDocument {
    pub fn from_result(result: &ProtocolResult) -> Self {
        Self {
            version: DOCUMENT_VERSION,
            protocol: result.protocol,
            nodes: result
                .outcomes
                .values()
                .map(|o| NodeSettings {
                    id: o.id,
                    neighbors: o.neighbors.iter().copied().collect(),
                    power: o.power,
                    iterations: o.iterations,
                })
                .collect(),
            edges: edge_records(&result.graph),
        }
    }
}

/// Which edge set to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Reference,
    Smecn,
    Mecn,
    E2,
    Emin,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Reference, Method::Smecn, Method::Mecn, Method::E2, Method::Emin];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Reference => "reference",
            Method::Smecn => "smecn",
            Method::Mecn => "mecn",
            Method::E2 => "e2",
            Method::Emin => "emin",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub edge_count: usize,
    pub mean_out_degree: f64,
    pub mean_power: f64,
}

/// Edge sets of several methods over the same nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub version: u32,
    pub model: PowerModel,
    pub nodes: Vec<NodeRecord>,
    pub edges: BTreeMap<Method, Vec<EdgeRecord>>,
    /// Per-node power settings for the protocol methods.
    pub powers: BTreeMap<Method, BTreeMap<NodeId, f64>>,
    pub summary: BTreeMap<Method, MethodSummary>,
}

/// Power a node needs to reach its farthest out-neighbor.
fn reach_powers(graph: &NetworkGraph) -> BTreeMap<NodeId, f64> {
    graph
        .nodes()
        .iter()
        .map(|n| {
            let reach = graph
                .out_neighbors(n.id)
                .into_iter()
                .map(|v| graph.model().transmit_power(&n.loc, &graph.location(v).expect("edge endpoint")))
                .fold(0.0, f64::max);
            (n.id, reach)
        })
        .collect()
}

/// Inputs that control the protocol runs in [`compute_topology`].
#[derive(Debug, Clone, Copy)]
pub struct TopologyOptions {
    pub schedule: crate::protocol::EscalationSchedule,
    pub sampling: crate::region::SamplingSpec,
    pub flip_order: crate::protocol::FlipOrder,
}

pub fn compute_topology(
    model: PowerModel,
    nodes: &[NodeRecord],
    methods: &[Method],
    options: TopologyOptions,
) -> Result<TopologyDocument> {
    let reference = build_reference_graph(nodes, model)?;
    let mut doc = TopologyDocument {
        version: DOCUMENT_VERSION,
        model,
        nodes: reference.nodes().to_vec(),
        edges: BTreeMap::new(),
        powers: BTreeMap::new(),
        summary: BTreeMap::new(),
    };
    for &method in methods {
        let (graph, powers) = match method {
            Method::Reference => (reference.clone(), reach_powers(&reference)),
            Method::E2 => {
                let g = compute_e2(&reference);
                let p = reach_powers(&g);
                (g, p)
            }
            Method::Emin => {
                let g = compute_emin(&reference);
                let p = reach_powers(&g);
                (g, p)
            }
            Method::Smecn | Method::Mecn => {
                let protocol =
                    if method == Method::Smecn { crate::protocol::Protocol::Smecn } else { crate::protocol::Protocol::Mecn };
                let result =
                    run_protocol(nodes, model, options.schedule, options.sampling, protocol, options.flip_order)?;
                let powers = result.outcomes.iter().map(|(id, o)| (*id, o.power)).collect();
                (result.graph, powers)
            }
        };
        let mean_power =
            if powers.is_empty() { 0.0 } else { powers.values().sum::<f64>() / powers.len() as f64 };
        doc.summary.insert(
            method,
            MethodSummary { edge_count: graph.edge_count(), mean_out_degree: graph.mean_out_degree(), mean_power },
        );
        doc.edges.insert(method, edge_records(&graph));
        doc.powers.insert(method, powers);
    }
    Ok(doc)
}

impl TopologyDocument {
    pub fn graph(&self, method: Method) -> Result<Option<NetworkGraph>> {
        self.edges
            .get(&method)
            .map(|edges| NetworkGraph::from_edges(self.model, &self.nodes, edges.iter().map(|e| (e.from, e.to))))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{EscalationSchedule, FlipOrder};
    use crate::region::SamplingSpec;
    use crate::topology::fixtures;

    fn small_scenario() -> ScenarioConfig {
        ScenarioConfig { node_count: 15, width: 600.0, height: 600.0, seed: 3, ..Default::default() }
    }

    #[test]
    fn scenario_round_trip() {
        let (doc, placement) = ScenarioDocument::generate(small_scenario()).unwrap();
        let text = to_json_string(&doc).unwrap();
        let back = ScenarioDocument::from_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.placement().unwrap(), Placement { resamples: 0, ..placement });
        assert_eq!(to_json_string(&back).unwrap(), text);
    }

    #[test]
    fn node_records_are_flat() {
        let json = serde_json::to_value(NodeRecord::new(4, 1.5, -2.0)).unwrap();
        assert_eq!(json, serde_json::json!({"id": 4, "x": 1.5, "y": -2.0}));
    }

    #[test]
    fn missing_fields_take_defaults() {
        let doc = ScenarioDocument::from_json(r#"{"version": 1, "scenario": {"node_count": 12, "seed": 9}}"#).unwrap();
        assert_eq!(doc.scenario.node_count, 12);
        assert_eq!(doc.scenario.width, 1500.0);
        assert!(doc.nodes.is_none());
    }

    #[test]
    fn wrong_version_rejected() {
        let err = ScenarioDocument::from_json(r#"{"version": 2, "scenario": {}}"#).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion(2)));
    }

    #[test]
    fn graph_round_trip() {
        let (nodes, model) = fixtures::e2_not_emin();
        let g = build_reference_graph(&nodes, model).unwrap();
        let doc = GraphDocument::from_graph(&g);
        let text = to_json_string(&doc).unwrap();
        let back: GraphDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_graph().unwrap().edge_set(), g.edge_set());
    }

    #[test]
    fn topology_fixture_counts() {
        let (nodes, model) = fixtures::e2_not_emin();
        let opts = TopologyOptions {
            schedule: EscalationSchedule::default_for(&model),
            sampling: SamplingSpec::default(),
            flip_order: FlipOrder::ById,
        };
        let doc = compute_topology(model, &nodes, &[Method::Emin, Method::E2, Method::Smecn], opts).unwrap();
        assert_eq!(doc.summary[&Method::Emin].edge_count + 2, doc.summary[&Method::E2].edge_count);
        assert_eq!(doc.edges[&Method::E2], doc.edges[&Method::Smecn]);
        let text = to_json_string(&doc).unwrap();
        let back: TopologyDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        assert!(text.contains("\"emin\""));
    }

    #[test]
    fn protocol_export_lists_each_node() {
        let nodes = fixtures::collinear();
        let model = PowerModel::new(1.0, 2.0, 0.01, 16.0).unwrap();
        let result = run_protocol(
            &nodes,
            model,
            EscalationSchedule::default_for(&model),
            SamplingSpec::default(),
            crate::protocol::Protocol::Smecn,
            FlipOrder::ById,
        )
        .unwrap();
        let doc = ProtocolDocument::from_result(&result);
        assert_eq!(doc.nodes.len(), nodes.len());
        assert_eq!(doc.edges.len(), result.graph.edge_count());
        let json = serde_json::to_value(&doc).unwrap();
        assert!(json["nodes"][0]["neighbors"].is_array());
    }
}
