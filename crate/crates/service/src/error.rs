use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};

/// An error response: status plus `{"error": name, ...detail}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, name: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": name, "detail": detail.into() }),
        }
    }

    pub fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", detail)
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", detail)
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", detail)
    }
}

impl From<regionstyle::Error> for ApiError {
    fn from(e: regionstyle::Error) -> Self {
        use regionstyle::Error as E;
        let status = match &e {
            E::BadImage(_) => StatusCode::BAD_REQUEST,
            E::Transport(_) | E::Protocol(_) => StatusCode::BAD_GATEWAY,
            E::Timeout => StatusCode::GATEWAY_TIMEOUT,
            E::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let mut body = json!({ "error": e.name(), "detail": e.to_string() });
        if let Some(pair) = e.pair() {
            body["pair"] = json!(pair);
        }
        Self { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
