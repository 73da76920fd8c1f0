//! Error types shared across the crate.

use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GraphError {
    #[error("task {id} has empty text")]
    EmptyTaskText { id: String },
    #[error("duplicate node id {id}")]
    DuplicateNodeId { id: NodeId },
    #[error("unknown node {id}")]
    UnknownNode { id: NodeId },
    #[error("graph is cyclic (cycle through {})", nodes.join(","))]
    CyclicGraph { nodes: Vec<NodeId> },
    #[error("unknown membership term: {token:?}")]
    UnknownMembershipTerm { token: String },
    #[error("domain rule for {domain} graded Low; rules at Low are never materialized")]
    RuleAtLowMembership { domain: String },
}
