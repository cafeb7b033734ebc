use std::path::PathBuf;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("graph is disconnected: node {0} is unreachable from node 0")]
    Disconnected(NodeId),
    #[error("duplicate edge between {0} and {1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("edge references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("graph has no {0} node")]
    MissingKind(&'static str),
    #[error("edge ({0}, {1}) has non-positive resistance {2}")]
    BadResistance(NodeId, NodeId, f64),
    #[error("node {0} has non-positive capacitance {1}")]
    BadCapacitance(NodeId, f64),

    #[error(
        "explicit Euler step is unstable at node {node}: dt * degree / capacitance = {ratio} (must be < 1)"
    )]
    Unstable { node: NodeId, ratio: f64 },
    #[error("epsilon {epsilon} outside the stable range (0, {bound})")]
    EpsilonOutOfBound { epsilon: f64, bound: f64 },
    #[error("evaluation needs at least one neighbor")]
    NoNeighbors,

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("t_end = {t_end} s is outside the trace range [0, {available}] s")]
    TimeOutOfRange { t_end: f64, available: f64 },
    #[error("empty series")]
    EmptySeries,

    #[error("malformed trace file {path}: {reason}")]
    Trace { path: PathBuf, reason: String },
    #[error("scenario {key}: {reason}")]
    Scenario { key: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
