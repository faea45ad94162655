use thiserror::Error;

use crate::tree::VertexId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("no solution tree: the marked set is empty")]
    NoSolutionTree,

    #[error("vertex {0} is marked; its diffusion operator is the identity")]
    MarkedVertex(VertexId),

    #[error("vertex {0} is not a shallowest marked vertex")]
    NotInMarkedSet(VertexId),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
