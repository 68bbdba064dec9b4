//! Async client for the teaching service.

use mt_core::api::{ApiErrorBody, ApiSessionHandle, DecideRequest, DecideResponse, Health, RecommendQuery};
use mt_core::artifacts::SessionSpec;
use mt_core::augment::{Action, FeedbackRecord};
use mt_core::knowledge::ReplacementRecommendation;
use mt_core::session::{ErrorCurve, EventKind, InteractionEvent, MachineStateView, SessionReport, TeachStepResult};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),

    #[error("service returned {status}: {}", .body.message)]
    Api { status: u16, body: ApiErrorBody },

    #[error("replay diverged: {0}")]
    Diverged(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn is_conflict(&self) -> bool {
        self.status() == Some(409)
    }

    pub fn is_pool_exhausted(&self) -> bool {
        self.status() == Some(410)
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct MtClient {
    base: String,
    http: reqwest::Client,
}

impl MtClient {
    /// `base_url` such as `http://127.0.0.1:8080`.
    pub fn new(base_url: &str) -> Self {
        MtClient {
            base: base_url.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn finish<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or_else(|_| ApiErrorBody {
            error: "http".into(),
            message: text,
            event: None,
            path: None,
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::finish(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::finish(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/healthz").await
    }

    /// Paths in `spec` are relative to the service's artifacts directory.
    pub async fn create_session(&self, spec: &SessionSpec) -> Result<ApiSessionHandle> {
        self.post("/sessions", spec).await
    }

    pub async fn session(&self, id: &str) -> Result<ApiSessionHandle> {
        self.get(&format!("/sessions/{id}")).await
    }

    pub async fn next_candidate(&self, id: &str) -> Result<MachineStateView> {
        self.get(&format!("/sessions/{id}/next")).await
    }

    pub async fn decide(&self, id: &str, example_id: &str, action: Action) -> Result<DecideResponse> {
        let body = DecideRequest {
            example_id: example_id.to_string(),
            action,
        };
        self.post(&format!("/sessions/{id}/decide"), &body).await
    }

    pub async fn submit_feedback(&self, id: &str, fb: &FeedbackRecord) -> Result<TeachStepResult> {
        self.post(&format!("/sessions/{id}/feedback"), fb).await
    }

    pub async fn report(&self, id: &str) -> Result<SessionReport> {
        self.get(&format!("/sessions/{id}/report")).await
    }

    pub async fn curve(&self, id: &str) -> Result<ErrorCurve> {
        self.get(&format!("/sessions/{id}/curve")).await
    }

    pub async fn events(&self, id: &str) -> Result<Vec<InteractionEvent>> {
        self.get(&format!("/sessions/{id}/events")).await
    }

    pub async fn recommend(&self, q: &RecommendQuery) -> Result<Vec<ReplacementRecommendation>> {
        let resp = self
            .http
            .get(format!("{}/kb/recommend", self.base))
            .query(&[
                ("word", q.word.as_str()),
                ("session", q.session.as_str()),
                ("example", q.example.as_str()),
                ("position", &q.position.to_string()),
            ])
            .send()
            .await?;
        Self::finish(resp).await
    }

    /// Re-issues a logged event sequence against session `id`, checking that
    /// every offer matches the log.
    pub async fn replay(&self, id: &str, events: &[InteractionEvent]) -> Result<()> {
        for ev in events {
            match ev.kind {
                EventKind::Offered => {
                    let view = self.next_candidate(id).await?;
                    if view.example_id != ev.example_id {
                        return Err(ClientError::Diverged(format!(
                            "offered `{}` but the log has `{}`",
                            view.example_id, ev.example_id
                        )));
                    }
                }
                EventKind::Skipped => {
                    self.decide(id, &ev.example_id, Action::Skip).await?;
                }
                EventKind::Accepted => {
                    self.decide(id, &ev.example_id, Action::Accept).await?;
                }
                EventKind::FeedbackApplied => {
                    let fb = ev
                        .payload
                        .as_ref()
                        .and_then(|p| p.feedback.as_ref())
                        .ok_or_else(|| ClientError::Diverged("feedback_applied event without feedback".into()))?;
                    self.submit_feedback(id, fb).await?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn api(status: u16) -> ClientError {
        ClientError::Api {
            status,
            body: ApiErrorBody {
                error: "x".into(),
                message: "m".into(),
                event: None,
                path: None,
            },
        }
    }

    #[test]
    fn status_helpers() {
        assert!(api(409).is_conflict());
        assert!(api(410).is_pool_exhausted());
        assert!(!api(404).is_conflict());
        assert_eq!(ClientError::Diverged("d".into()).status(), None);
    }

    #[test]
    fn base_url_is_trimmed() {
        assert_eq!(MtClient::new("http://h:1//").base_url(), "http://h:1");
    }
}
