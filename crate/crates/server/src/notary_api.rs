//! `POST /notary/records`, `GET /notary/records/{tokenId}?hash=`,
//! `GET /notary/audit`, `GET /notary`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::{blocking, parse, ApiError};
use provnr_core::crypto::Digest;
use provnr_core::notary::{AuditReport, Notary, NotaryKind, NotaryReceipt, NotarySubmission, PresenceReport};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NotaryInfo {
    pub notary_id: String,
    pub kind: NotaryKind,
}

#[derive(Deserialize)]
struct HashQuery {
    hash: Option<String>,
}

pub fn notary_router(notary: Arc<Notary>) -> Router {
    Router::new()
        .route("/notary", get(info))
        .route("/notary/records", post(add))
        .route("/notary/records/:token_id", get(presence))
        .route("/notary/audit", get(audit))
        .with_state(notary)
}

async fn info(State(n): State<Arc<Notary>>) -> Json<NotaryInfo> {
    Json(NotaryInfo {
        notary_id: provnr_core::notary::NotaryClient::notary_id(n.as_ref()).to_string(),
        kind: n.kind(),
    })
}

async fn add(State(n): State<Arc<Notary>>, body: Bytes) -> Result<(StatusCode, Json<NotaryReceipt>), ApiError> {
    let submission: NotarySubmission = parse(&body)?;
    let receipt = blocking(move || n.add(&submission).map_err(ApiError::from)).await?;
    Ok((StatusCode::CREATED, Json(receipt)))
}

async fn presence(
    State(n): State<Arc<Notary>>,
    Path(token_id): Path<String>,
    Query(q): Query<HashQuery>,
) -> Result<Json<PresenceReport>, ApiError> {
    let hash = match q.hash {
        Some(h) => Some(
            h.parse::<Digest>()
                .map_err(|e| ApiError::bad_request(format!("hash: {e}")))?,
        ),
        None => None,
    };
    Ok(Json(n.presence(&token_id, hash.as_ref())))
}

async fn audit(State(n): State<Arc<Notary>>) -> Result<Json<AuditReport>, ApiError> {
    blocking(move || Ok(Json(n.audit()))).await
}
