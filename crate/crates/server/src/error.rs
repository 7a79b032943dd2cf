use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use provnr_core::evidence::EvidenceError;
use provnr_core::notary::NotaryError;
use provnr_core::prov::ProvError;
use provnr_core::service::ServiceError;
use provnr_core::template::TemplateError;

/// Error body of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.to_string(),
                message: message.into(),
            },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn template_kind(e: &TemplateError) -> &'static str {
    match e {
        TemplateError::InvalidTemplate(_) => "InvalidTemplate",
        TemplateError::UnboundVariable(_) => "UnboundVariable",
        TemplateError::ExtraneousBinding(_) => "ExtraneousBinding",
        TemplateError::TypeMismatch { .. } => "TypeMismatch",
        TemplateError::ZonedTemplate => "ZonedTemplate",
        TemplateError::NoZones => "NoZones",
        TemplateError::UnknownZone(_) => "UnknownZone",
        TemplateError::SessionClosed => "SessionClosed",
        TemplateError::ValidationFailure(_) => "ValidationFailure",
        TemplateError::Prov(p) => prov_kind(p),
    }
}

fn prov_kind(e: &ProvError) -> &'static str {
    match e {
        ProvError::NamespaceClash { .. } => "NamespaceClash",
        ProvError::SchemaViolation { .. } => "SchemaViolation",
        _ => "InvalidProvenance",
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        use StatusCode as S;
        let message = e.to_string();
        let (status, kind) = match &e {
            ServiceError::UnknownDocument(_) => (S::NOT_FOUND, "UnknownDocument"),
            ServiceError::UnknownTemplate(_) => (S::NOT_FOUND, "UnknownTemplate"),
            ServiceError::UnknownSession(_) => (S::NOT_FOUND, "UnknownSession"),
            ServiceError::UnknownToken(_) => (S::NOT_FOUND, "UnknownToken"),
            ServiceError::MetaProvenanceDisabled => (S::NOT_FOUND, "MetaProvenanceDisabled"),
            ServiceError::TemplateNotRegistered(_) => (S::CONFLICT, "TemplateNotRegistered"),
            ServiceError::Prov(p @ ProvError::NamespaceClash { .. }) => (S::CONFLICT, prov_kind(p)),
            ServiceError::Prov(p) => (S::UNPROCESSABLE_ENTITY, prov_kind(p)),
            ServiceError::Template(TemplateError::SessionClosed) => (S::CONFLICT, "SessionClosed"),
            ServiceError::Template(t) => (S::UNPROCESSABLE_ENTITY, template_kind(t)),
            ServiceError::Evidence(EvidenceError::NotaryUnavailable(_)) => {
                (S::SERVICE_UNAVAILABLE, "NotaryUnavailable")
            }
            ServiceError::Evidence(EvidenceError::DuplicateTokenId(_)) => (S::CONFLICT, "DuplicateTokenId"),
            ServiceError::Evidence(_) => (S::INTERNAL_SERVER_ERROR, "EvidenceFailure"),
            ServiceError::Meta(_) => (S::INTERNAL_SERVER_ERROR, "MetaProvenanceFailure"),
            ServiceError::Config(_) => (S::INTERNAL_SERVER_ERROR, "Config"),
            ServiceError::Storage(_) => (S::INTERNAL_SERVER_ERROR, "StorageFailure"),
        };
        ApiError::new(status, kind, message)
    }
}

impl From<TemplateError> for ApiError {
    fn from(e: TemplateError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, template_kind(&e), e.to_string())
    }
}

impl From<NotaryError> for ApiError {
    fn from(e: NotaryError) -> Self {
        use StatusCode as S;
        let (status, kind) = match &e {
            NotaryError::DuplicateTokenId(_) => (S::CONFLICT, "DuplicateTokenId"),
            NotaryError::InvalidSignature => (S::BAD_REQUEST, "InvalidSignature"),
            NotaryError::BadRequest(_) => (S::BAD_REQUEST, "BadRequest"),
            NotaryError::StorageFailure(_) => (S::INTERNAL_SERVER_ERROR, "StorageFailure"),
            NotaryError::Unavailable(_) => (S::SERVICE_UNAVAILABLE, "Unavailable"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

/// Runs blocking service work off the async workers.
pub async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}
