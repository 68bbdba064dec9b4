//! Request and response bodies of the HTTP service that are not domain types
//! themselves.

use serde::{Deserialize, Serialize};

use crate::artifacts::SessionSpec;
use crate::augment::Action;
use crate::corpus::IntentLabel;
use crate::session::Phase;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiSessionHandle {
    pub id: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub config: SessionSpec,
    /// The model's intent inventory, in id order.
    pub intents: Vec<IntentLabel>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecideRequest {
    pub example_id: String,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecideResponse {
    pub phase: Phase,
    pub sim_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendQuery {
    pub word: String,
    pub session: String,
    pub example: String,
    pub position: usize,
}

/// Body of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    /// Machine-readable kind, e.g. `conflict` or `missing_artifact`.
    pub error: String,
    pub message: String,
    /// Session phase or event kind that made the request invalid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
}
