use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid power model: {0}")]
    InvalidModel(String),
    #[error("invalid escalation schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid sampling spec: {0}")]
    InvalidSampling(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("path must contain at least one location")]
    EmptyPath,
    #[error("nodes {0} and {1} share a location")]
    DuplicateLocation(NodeId, NodeId),
    #[error("node id {0} appears more than once")]
    DuplicateId(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("edge ({0}, {1}) is not in the reference graph")]
    EdgeNotInReference(NodeId, NodeId),
    #[error("Flip at node {node} exceeded {limit} toggles in one iteration")]
    FlipDiverged { node: NodeId, limit: usize },
    #[error("no connected placement found after {attempts} attempts")]
    Unconnectable { attempts: u32 },
    #[error("unsupported document version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
