//! Minimum-energy topology control for multihop wireless networks.
//!
//! Computes communication subgraphs that keep a minimum-energy path between
//! every pair of nodes, using local neighbor searches (SMECN and MECN), checks
//! them against brute-force oracles, and simulates network lifetime under
//! periodic traffic.

pub mod doc;
pub mod error;
pub mod power;
pub mod protocol;
pub mod region;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
pub use power::{Location, PowerModel};
pub use protocol::{
    mecn_node, run_protocol, smecn_node, EscalationSchedule, FlipOrder, Increase, NeighborSearch, NodeOutcome,
    Protocol, ProtocolResult, SearchState,
};
pub use doc::{
    compute_topology, GraphDocument, Method, MethodSummary, ProtocolDocument, ScenarioDocument, TopologyDocument,
    TopologyOptions,
};
pub use region::{min_covering_power, region_covers_eta, BroadcastRegion, EtaRegion, EtaSampler, SamplingSpec};
pub use sim::{init_sim, MetricsRow, MetricsSeries, Placement, ScenarioConfig, SimReport, SimSummary, Simulation, SinkPlacement};
pub use topology::{
    build_reference_graph, compute_e2, compute_emin, has_min_energy_property, is_k_redundant, min_energy_path,
    MinPath, NetworkGraph, NodeId, NodeRecord,
};
