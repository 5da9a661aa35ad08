use thiserror::Error;

use crate::graph::{EdgeId, NodeId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("coverage violation on {entity}: {detail}")]
    CoverageViolation { entity: Entity, detail: String },

    #[error("LSG has {nodes} nodes but the state dimension is {m}")]
    StateOverflow { nodes: usize, m: usize },

    #[error("illegal action ({0}, {1}): zero adjacency entry")]
    IllegalAction(usize, usize),

    #[error("training diverged at episode {episode}: {detail}")]
    TrainingDivergence { episode: usize, detail: String },

    #[error("structure cannot be solved: {detail} (unsupported nodes: {unsupported:?})")]
    Structural {
        detail: String,
        unsupported: Vec<NodeId>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at {location}: {detail}")]
    Parse { location: String, detail: String },

    #[error("planning failed: {detail} ({} uncovered)", uncovered.len())]
    PlanningFailure {
        detail: String,
        uncovered: Vec<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The graph entity a coverage violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entity {
    Edge(EdgeId),
    Node(NodeId),
}

impl std::fmt::Display for Entity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Entity::Edge(e) => write!(f, "edge {e}"),
            Entity::Node(v) => write!(f, "node {v}"),
        }
    }
}

impl Error {
    pub fn parse(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
