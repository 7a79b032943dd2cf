//! REST front end of [`DocumentService`]. Mutating calls read the caller
//! from the `X-Client-Id` and `X-User-Id` headers and answer with
//! `{"result": .., "token": ..}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{blocking, parse, ApiError};
use provnr_core::meta::ReplaySource;
use provnr_core::prov::encode_document;
use provnr_core::service::{CallContext, DocumentService, Response as Envelope};
use provnr_core::template::{bindings_from_json, Substitution, Template};

pub const CLIENT_HEADER: &str = "x-client-id";
pub const USER_HEADER: &str = "x-user-id";

type Svc = Arc<DocumentService>;

pub fn provenance_router(service: Svc) -> Router {
    Router::new()
        .route("/templates", post(new_template).get(list_templates))
        .route("/templates/:id", get(get_template))
        .route("/documents", post(new_document).get(list_documents))
        .route("/documents/:id", get(get_document))
        .route("/documents/:id/namespaces", post(add_namespace))
        .route("/documents/:id/registrations", post(register_template))
        .route("/documents/:id/generate", post(generate))
        .route("/documents/:id/fragments", post(generate_initialise))
        .route("/documents/:id/history", get(get_history))
        .route("/documents/:id/tokens", get(list_tokens))
        .route("/documents/:id/evidence/:token", get(get_evidence))
        .route("/fragments/:sid/zones", post(generate_zone))
        .route("/fragments/:sid/finalise", post(generate_finalise))
        .route("/substitutions/:id", get(get_substitution))
        .with_state(service)
}

fn context(headers: &HeaderMap) -> Result<CallContext, ApiError> {
    let get = |name: &str| -> Result<String, ApiError> {
        let v = headers
            .get(name)
            .ok_or_else(|| ApiError::bad_request(format!("missing header {name}")))?
            .to_str()
            .map_err(|_| ApiError::bad_request(format!("header {name} is not text")))?
            .trim()
            .to_string();
        if v.is_empty() {
            return Err(ApiError::bad_request(format!("empty header {name}")));
        }
        Ok(v)
    };
    Ok(CallContext::new(get(CLIENT_HEADER)?, get(USER_HEADER)?))
}

fn envelope<T: serde::Serialize>(r: Envelope<T>) -> Response {
    Json(r).into_response()
}

fn created<T: serde::Serialize>(r: Envelope<T>) -> Response {
    (StatusCode::CREATED, Json(r)).into_response()
}

fn raw_json(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn substitution(v: &Value) -> Result<Substitution, ApiError> {
    Substitution::from_json(v).map_err(|e| ApiError::bad_request(format!("substitution: {e}")))
}

async fn new_template(State(s): State<Svc>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let ctx = context(&headers)?;
    let value: Value = parse(&body)?;
    let template = Template::from_json(&value)?;
    let r = blocking(move || s.new_template(&ctx, template).map_err(ApiError::from)).await?;
    Ok(created(r))
}

async fn list_templates(State(s): State<Svc>) -> Json<Vec<String>> {
    Json(s.template_ids())
}

async fn get_template(State(s): State<Svc>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let t = s
        .template(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownTemplate", format!("unknown template {id}")))?;
    Ok(raw_json(t.encode()))
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct NewDocumentBody {
    #[serde(default)]
    default_url: Option<String>,
}

async fn new_document(State(s): State<Svc>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let ctx = context(&headers)?;
    let b: NewDocumentBody = if body.is_empty() { NewDocumentBody::default() } else { parse(&body)? };
    let r = blocking(move || s.new_document(&ctx, b.default_url).map_err(ApiError::from)).await?;
    Ok(created(r))
}

async fn list_documents(State(s): State<Svc>) -> Json<Vec<String>> {
    Json(s.document_ids())
}

async fn get_document(State(s): State<Svc>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(raw_json(s.export_document(&id)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NamespaceBody {
    prefix: String,
    uri: String,
}

async fn add_namespace(
    State(s): State<Svc>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ctx = context(&headers)?;
    let b: NamespaceBody = parse(&body)?;
    let r = blocking(move || s.add_namespace(&ctx, &id, &b.prefix, &b.uri).map_err(ApiError::from)).await?;
    Ok(envelope(r))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RegisterBody {
    template_id: String,
}

async fn register_template(
    State(s): State<Svc>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ctx = context(&headers)?;
    let b: RegisterBody = parse(&body)?;
    let r = blocking(move || s.register_template(&ctx, &id, &b.template_id).map_err(ApiError::from)).await?;
    Ok(envelope(r))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct GenerateBody {
    template_id: String,
    substitution: Value,
}

async fn generate(
    State(s): State<Svc>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ctx = context(&headers)?;
    let b: GenerateBody = parse(&body)?;
    let sub = substitution(&b.substitution)?;
    let r = blocking(move || s.generate(&ctx, &id, &b.template_id, sub).map_err(ApiError::from)).await?;
    Ok(envelope(r))
}

async fn generate_initialise(
    State(s): State<Svc>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ctx = context(&headers)?;
    let b: GenerateBody = parse(&body)?;
    let sub = substitution(&b.substitution)?;
    let r = blocking(move || s.generate_initialise(&ctx, &id, &b.template_id, sub).map_err(ApiError::from)).await?;
    Ok(created(r))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ZoneBody {
    zone: String,
    bindings: Value,
}

async fn generate_zone(
    State(s): State<Svc>,
    Path(sid): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ctx = context(&headers)?;
    let b: ZoneBody = parse(&body)?;
    let bindings = bindings_from_json(&b.bindings, "bindings").map_err(|e| ApiError::bad_request(e.to_string()))?;
    let r = blocking(move || s.generate_zone(&ctx, &sid, &b.zone, bindings).map_err(ApiError::from)).await?;
    Ok(envelope(r))
}

async fn generate_finalise(
    State(s): State<Svc>,
    Path(sid): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let ctx = context(&headers)?;
    let r = blocking(move || s.generate_finalise(&ctx, &sid).map_err(ApiError::from)).await?;
    Ok(envelope(r))
}

async fn get_history(State(s): State<Svc>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(raw_json(s.export_history(&id)?))
}

async fn list_tokens(State(s): State<Svc>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let tokens = s.tokens(&id)?;
    Ok(Json(json!({ "documentId": id, "tokens": tokens })).into_response())
}

async fn get_evidence(
    State(s): State<Svc>,
    Path((id, token)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    Ok(Json(s.evidence(&id, &token)?).into_response())
}

async fn get_substitution(State(s): State<Svc>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let doc = s.substitution_document(&id).ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "UnknownSubstitution", format!("unknown substitution {id}"))
    })?;
    Ok(raw_json(encode_document(&doc)))
}
