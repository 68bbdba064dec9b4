use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mt_core::api::ApiErrorBody;
use mt_core::Error;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ApiErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ApiErrorBody {
                error: kind.into(),
                message: message.into(),
                event: None,
                path: None,
            },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Conflict { event, .. } => {
                let mut err = ApiError::new(StatusCode::CONFLICT, "conflict", message);
                err.body.event = Some(event.to_string());
                err
            }
            Error::PoolExhausted => ApiError::new(StatusCode::GONE, "pool_exhausted", message),
            Error::MissingArtifact(path) => {
                let mut err = ApiError::new(StatusCode::NOT_FOUND, "missing_artifact", message);
                err.body.path = Some(path.display().to_string());
                err
            }
            Error::Io { .. } | Error::Csv(_) => ApiError::internal(message),
            _ => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
