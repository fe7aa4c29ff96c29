use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::DistillError;
use crate::gateway::GatewayError;
use crate::graph::GraphError;
use crate::import::ImportError;
use crate::insight::InsightError;
use crate::reflection::ReflectionError;
use crate::transcript::TranscriptError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Import(#[from] ImportError),
    #[error(transparent)]
    Insight(#[from] InsightError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Reflection(#[from] ReflectionError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0} already exists")]
    AlreadyExists(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("a previous write failed after mutating state; restart to recover from the log")]
    Poisoned,
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("role {role} may not {action}")]
    Forbidden { role: String, action: String },
    #[error("{0}")]
    BadRequest(String),
}

/// Broad class of a failure; decides HTTP status and CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Invariant,
    NotFound,
    Conflict,
    Unauthorized,
    Forbidden,
    BadRequest,
    Upstream,
    Internal,
}

impl ServiceError {
    pub fn invariant(&self) -> &'static str {
        match self {
            ServiceError::Graph(e) => e.invariant(),
            ServiceError::Import(e) => e.invariant(),
            ServiceError::Insight(e) => e.invariant(),
            ServiceError::Distill(e) => e.invariant(),
            ServiceError::Reflection(e) => e.invariant(),
            ServiceError::Transcript(_) => "transcript.format",
            ServiceError::Gateway(_) => "gateway.available",
            ServiceError::NotFound(_) => "exists",
            ServiceError::AlreadyExists(_) => "id.unique",
            ServiceError::Storage(_) | ServiceError::Poisoned => "store.writable",
            ServiceError::CorruptLog(_) => "log.integrity",
            ServiceError::Config(_) => "config.valid",
            ServiceError::Unauthorized | ServiceError::Forbidden { .. } => "access.matrix",
            ServiceError::BadRequest(_) => "request.wellformed",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            ServiceError::Unauthorized => ErrorClass::Unauthorized,
            ServiceError::Forbidden { .. } => ErrorClass::Forbidden,
            ServiceError::NotFound(_) => ErrorClass::NotFound,
            ServiceError::AlreadyExists(_) => ErrorClass::Conflict,
            ServiceError::BadRequest(_) | ServiceError::Config(_) => ErrorClass::BadRequest,
            ServiceError::Gateway(_) => ErrorClass::Upstream,
            ServiceError::Storage(_) | ServiceError::CorruptLog(_) | ServiceError::Poisoned => ErrorClass::Internal,
            _ if self.invariant() == "exists" => ErrorClass::NotFound,
            _ => ErrorClass::Invariant,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { error: self.class(), invariant: self.invariant().into(), message: self.to_string() }
    }
}

/// Machine-readable error payload for HTTP responses and CLI stderr.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub error: ErrorClass,
    pub invariant: String,
    pub message: String,
}
